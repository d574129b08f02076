"""Fixed hyperparameters of the hierarchical model."""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist

import config
from errors import InvalidInputError


@dataclass(frozen=True)
class PriorConfig:
    """
    Every fixed hyperparameter used by the sampler.

    ``phi_bounds`` are on the range scale (not log). ``rw_sd`` is derived
    from the bounds as rw_frac * (log phi_max - log phi_min).
    """

    mu_logphi: float
    phi_bounds: Tuple[float, float]
    Q: int = config.DEFAULT_Q
    var_alpha: float = config.VAR_ALPHA
    var_beta: float = config.VAR_BETA
    ig_shape_sigma2: float = config.IG_SHAPE_SIGMA2
    ig_rate_sigma2: float = config.IG_RATE_SIGMA2
    ig_shape_eta: float = config.IG_SHAPE_ETA
    ig_rate_eta: float = config.IG_RATE_ETA
    var_logphi: float = config.VAR_LOGPHI
    slice_w0: float = config.SLICE_W0
    slice_max_stepout: int = config.SLICE_MAX_STEPOUT
    rw_frac: float = config.RW_FRAC
    eta_kernel: str = config.ETA_KERNEL
    factor_kernel: str = config.FACTOR_KERNEL

    def __post_init__(self):
        positives = {
            "var_alpha": self.var_alpha,
            "var_beta": self.var_beta,
            "ig_shape_sigma2": self.ig_shape_sigma2,
            "ig_rate_sigma2": self.ig_rate_sigma2,
            "ig_shape_eta": self.ig_shape_eta,
            "ig_rate_eta": self.ig_rate_eta,
            "var_logphi": self.var_logphi,
            "slice_w0": self.slice_w0,
            "rw_frac": self.rw_frac,
        }
        for name, value in positives.items():
            if not value > 0:
                raise InvalidInputError(f"prior '{name}' must be > 0, got {value}")
        if self.Q < 1:
            raise InvalidInputError(f"Q must be >= 1, got {self.Q}")
        lo, hi = self.phi_bounds
        if not (0 < lo < hi and np.isfinite(hi)):
            raise InvalidInputError(f"invalid phi bounds {self.phi_bounds}")
        if self.slice_max_stepout < 1:
            raise InvalidInputError("slice_max_stepout must be >= 1")

    @property
    def log_bounds(self) -> Tuple[float, float]:
        return float(np.log(self.phi_bounds[0])), float(np.log(self.phi_bounds[1]))

    @property
    def rw_sd(self) -> float:
        lo, hi = self.log_bounds
        return self.rw_frac * (hi - lo)

    @property
    def sd_logphi(self) -> float:
        return float(np.sqrt(self.var_logphi))

    def log_prior_logphi(self, logphi: float) -> float:
        """Normal log density of log(phi), up to a constant."""
        return -0.5 * (logphi - self.mu_logphi) ** 2 / self.var_logphi


def make_prior(coords: np.ndarray, Q: int = config.DEFAULT_Q,
               var_logphi: float = config.VAR_LOGPHI,
               overrides: Optional[dict] = None) -> PriorConfig:
    """
    Builds the informed prior from the observed node layout.

    mu_logphi is the log median pairwise distance; the range bounds are the
    observed distance range intersected with the mu +/- 3 sd window.

    Args:
        coords: n x 2 node coordinates
        Q: Number of latent factors
        var_logphi: Prior variance of log(phi)
        overrides: Extra PriorConfig fields

    Returns:
        PriorConfig
    """
    d = pdist(np.asarray(coords, dtype=float).reshape(-1, 2))
    d = d[d > 0]
    if d.size == 0:
        raise InvalidInputError("need at least two distinct node locations")
    mu = float(np.log(np.median(d)))
    sd = float(np.sqrt(var_logphi))
    lo = max(float(np.log(d.min())), mu - 3.0 * sd)
    hi = min(float(np.log(d.max())), mu + 3.0 * sd)
    if not lo < hi:
        lo, hi = mu - 3.0 * sd, mu + 3.0 * sd
    fields = dict(mu_logphi=mu, phi_bounds=(float(np.exp(lo)), float(np.exp(hi))),
                  Q=Q, var_logphi=var_logphi)
    fields.update(overrides or {})
    return PriorConfig(**fields)
