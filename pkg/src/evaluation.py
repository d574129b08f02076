"""Scoring: CRPS, convergence diagnostics, interval coverage and kinship residuals."""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.fft import irfft, next_fast_len, rfft
from scipy.special import expit
from scipy.stats import norm

import config
from errors import InvalidInputError

logger = logging.getLogger(__name__)


@dataclass
class ResidualSummary:
    """Per-dyad kinship residuals and their all-pairs / near-clonal summaries."""

    table: pd.DataFrame
    summary: Dict[str, float] = field(default_factory=dict)


@dataclass
class ScoreReport:
    crps: np.ndarray
    mean_crps: float
    diagnostics: pd.DataFrame
    coverage: Optional[pd.DataFrame] = None
    residuals: Optional[ResidualSummary] = None

    def to_dict(self) -> Dict:
        out = {
            "mean_crps": self.mean_crps,
            "n_scored": int(np.sum(np.isfinite(self.crps))),
            "max_rhat": _nan_to_none(self.diagnostics["rhat"].max()) if len(self.diagnostics) else None,
            "min_ess": _nan_to_none(self.diagnostics["ess"].min()) if len(self.diagnostics) else None,
        }
        if self.coverage is not None and len(self.coverage):
            out["coverage_rate"] = float(self.coverage["covered"].mean())
        if self.residuals is not None:
            out["kinship_residuals"] = self.residuals.summary
        return out


def _nan_to_none(value):
    value = float(value)
    return None if np.isnan(value) else value


def crps_empirical(samples, y):
    """
    Empirical CRPS of predictive draws against an observation.

    (1/m) sum_k |x_k - y| - (1/(2 m^2)) sum_k sum_l |x_k - x_l|, with the
    double sum evaluated on sorted draws in O(m log m).

    Args:
        samples: m draws, or an m x N array (one column per observation)
        y: Observation, or length-N observations

    Returns:
        Scalar, or length-N array
    """
    x = np.asarray(samples, dtype=float)
    if x.shape[0] == 0:
        raise InvalidInputError("crps needs at least one sample")
    obs = np.asarray(y, dtype=float)
    m = x.shape[0]
    spread_to_obs = np.mean(np.abs(x - obs), axis=0)
    xs = np.sort(x, axis=0)
    k = np.arange(1, m + 1, dtype=float)
    weights = (2.0 * k - m - 1.0).reshape((m,) + (1,) * (x.ndim - 1))
    spread = np.sum(weights * xs, axis=0) / m ** 2
    out = spread_to_obs - spread
    return float(out) if np.ndim(out) == 0 else out


def crps_gaussian(mu, sd, y):
    """Closed-form CRPS of N(mu, sd^2) at y."""
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd <= 0):
        raise InvalidInputError("sd must be > 0")
    z = (np.asarray(y, dtype=float) - mu) / sd
    out = sd * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / np.sqrt(np.pi))
    return float(out) if np.ndim(out) == 0 else out


def posterior_predictive(mu_draws: np.ndarray, sigma2_draws: np.ndarray,
                         rng: np.random.Generator) -> np.ndarray:
    """Predictive draws y* = mu + N(0, sigma2) per retained draw (m x N)."""
    mu = np.asarray(mu_draws, dtype=float)
    sd = np.sqrt(np.asarray(sigma2_draws, dtype=float))[:, None]
    return mu + sd * rng.standard_normal(mu.shape)


def _as_chains(chains) -> np.ndarray:
    ary = np.atleast_2d(np.asarray(chains, dtype=float))
    if ary.shape[1] < 4:
        raise InvalidInputError(f"each chain needs >= 4 draws, got {ary.shape[1]}")
    return ary


def _split_chains(ary: np.ndarray) -> np.ndarray:
    half = ary.shape[1] // 2
    return np.vstack((ary[:, :half], ary[:, -half:]))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    m = next_fast_len(2 * n)
    f = rfft(x - x.mean(), m)
    return irfft(f * np.conjugate(f), m)[:n] / n


def split_rhat(chains) -> float:
    """
    Split potential scale reduction factor.

    Each chain is cut in half; R = sqrt(((n-1)/n W + B/n) / W). Returns NaN
    with a warning when the within-chain variance is zero.
    """
    ary = _split_chains(_as_chains(chains))
    n = ary.shape[1]
    chain_mean = ary.mean(axis=1)
    within = float(np.mean(ary.var(axis=1, ddof=1)))
    if not within > 0:
        warnings.warn("zero within-chain variance; rhat undefined")
        logger.warning("rhat: zero within-chain variance")
        return float("nan")
    between = n * float(np.var(chain_mean, ddof=1))
    return float(np.sqrt(((n - 1.0) / n * within + between / n) / within))


def effective_sample_size(chains) -> float:
    """ESS from the autocorrelation sum truncated by Geyer's initial positive sequence."""
    ary = _split_chains(_as_chains(chains))
    n_chain, n_draw = ary.shape
    acov = np.asarray([_autocov(ary[c]) for c in range(n_chain)])
    chain_mean = ary.mean(axis=1)
    mean_var = np.mean(acov[:, 0]) * n_draw / (n_draw - 1.0)
    var_plus = mean_var * (n_draw - 1.0) / n_draw
    if n_chain > 1:
        var_plus += np.var(chain_mean, ddof=1)
    if not var_plus > 0:
        return float("nan")

    rho = np.zeros(n_draw)
    rho_even = 1.0
    rho[0] = rho_even
    rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n_draw - 2 and rho_even + rho_odd >= 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        rho[t + 1] = rho_even
        if rho_even + rho_odd >= 0:
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = 0.5 * (rho[t - 1] + rho[t])
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * np.sum(rho[:max_t]) + np.sum(rho[max_t + 1:max_t + 2])
    return float(n_chain * n_draw / tau)


def convergence_diagnostics(chains):
    """
    Split-Rhat and ESS of one parameter.

    Args:
        chains: c x m draws (a 1-D array is one chain)

    Returns:
        Tuple of (rhat, ess)
    """
    return split_rhat(chains), effective_sample_size(chains)


def mcse_mean(chains) -> float:
    """Monte-Carlo standard error of the posterior mean, sd / sqrt(ESS)."""
    ary = _as_chains(chains)
    ess = effective_sample_size(ary)
    if not ess > 0:
        return float("nan")
    return float(np.std(ary, ddof=1) / np.sqrt(ess))


def interval_coverage(draws: Dict[str, np.ndarray], truth: Dict[str, float],
                      level: float = config.CREDIBLE_LEVEL) -> pd.DataFrame:
    """
    Equal-tailed credible intervals and whether each truth falls inside.

    Parameters present in ``draws`` but not in ``truth`` are skipped.

    Returns:
        DataFrame with columns parameter, truth, lower, upper, covered
    """
    tail = 0.5 * (1.0 - level)
    rows = []
    for name, values in draws.items():
        if name not in truth:
            continue
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            raise InvalidInputError(f"no draws for '{name}'")
        lower, upper = np.quantile(values, [tail, 1.0 - tail])
        t = float(truth[name])
        rows.append({"parameter": name, "truth": t, "lower": float(lower),
                     "upper": float(upper), "covered": bool(lower <= t <= upper)})
    return pd.DataFrame(rows, columns=["parameter", "truth", "lower", "upper", "covered"])


def kinship_residuals(predictive: np.ndarray, observed: np.ndarray,
                      mismatches: Optional[np.ndarray] = None,
                      near_clonal_threshold: int = config.NEAR_CLONAL_THRESHOLD,
                      labels: Optional[Sequence[str]] = None) -> ResidualSummary:
    """
    Residuals against posterior predictive draws.

    Per dyad: posterior mean of k - k* on the kinship scale k = 1 - logistic(y),
    and mean and sd over draws of log1p(|y - y*|) on the response scale.
    Near-clonal dyads (fewer than ``near_clonal_threshold`` discordant loci)
    are summarized separately when counts are given.

    Args:
        predictive: m x N predictive draws of the logit response
        observed: Length-N observed responses
        mismatches: Length-N discordant counts, optional
        near_clonal_threshold: Discordant-count cut-off
        labels: Dyad labels for the table

    Returns:
        ResidualSummary
    """
    draws = np.atleast_2d(np.asarray(predictive, dtype=float))
    y = np.asarray(observed, dtype=float)
    k = 1.0 - expit(y)
    residual = k[None, :] - (1.0 - expit(draws))
    tiles = np.log1p(np.abs(y[None, :] - draws))
    table = pd.DataFrame({
        "dyad": list(labels) if labels is not None else np.arange(y.shape[0]),
        "mean_residual": residual.mean(axis=0),
        "mean_log1p_residual": tiles.mean(axis=0),
        "sd": tiles.std(axis=0, ddof=1) if draws.shape[0] > 1 else np.zeros(y.shape[0]),
    })
    summary = {"all_pairs": float(table["mean_log1p_residual"].mean())}
    if mismatches is None:
        warnings.warn("no mismatch counts; near-clonal subset omitted")
        logger.warning("kinship residuals: near-clonal subset omitted")
    else:
        near = np.asarray(mismatches) < near_clonal_threshold
        table["near_clonal"] = near
        summary["near_clonal"] = float(table.loc[near, "mean_log1p_residual"].mean()) if near.any() else None
        summary["n_near_clonal"] = int(near.sum())
    return ResidualSummary(table=table, summary=summary)


def scalar_draws(draws: Dict[str, np.ndarray], beta_names: Sequence[str]) -> Dict[str, np.ndarray]:
    """Flattens block draws into named scalar series (alpha, beta[...], phi_q[k], ...)."""
    out = {}
    for key in ("alpha", "sigma2", "sigma2_eta", "phi_eta"):
        if key in draws:
            out[key] = np.asarray(draws[key])
    if "beta" in draws:
        for k, name in enumerate(beta_names):
            out[f"beta[{name}]"] = np.asarray(draws["beta"])[:, k]
    for key in ("phi_q", "xi"):
        if key in draws:
            block = np.asarray(draws[key])
            for q in range(block.shape[1]):
                out[f"{key}[{q + 1}]"] = block[:, q]
    return out


def score_chains(chain_draws: List[Dict[str, np.ndarray]], beta_names: Sequence[str],
                 response: np.ndarray, observed: np.ndarray, rng: np.random.Generator,
                 truth: Optional[Dict[str, float]] = None,
                 mismatches: Optional[np.ndarray] = None,
                 near_clonal_threshold: int = config.NEAR_CLONAL_THRESHOLD,
                 level: float = config.CREDIBLE_LEVEL,
                 labels: Optional[Sequence[str]] = None) -> ScoreReport:
    """
    Scores one or more chains of the same model.

    Args:
        chain_draws: Draw dictionaries, one per chain (must hold mu and sigma2)
        beta_names: Design column names
        response: Length-N responses
        observed: Length-N mask of scored dyads
        rng: Generator for predictive noise
        truth: Simulation truth keyed like ``scalar_draws``
        mismatches: Discordant counts for the near-clonal split
        near_clonal_threshold: Discordant-count cut-off
        level: Credible level for coverage
        labels: Dyad labels

    Returns:
        ScoreReport
    """
    if not chain_draws:
        raise InvalidInputError("no chains to score")
    observed = np.asarray(observed, dtype=bool)
    mu = np.concatenate([np.asarray(d["mu"]) for d in chain_draws], axis=0)
    sigma2 = np.concatenate([np.asarray(d["sigma2"]) for d in chain_draws], axis=0)
    predictive = posterior_predictive(mu, sigma2, rng)

    crps = np.full(observed.shape[0], np.nan)
    if observed.any():
        crps[observed] = crps_empirical(predictive[:, observed], np.asarray(response)[observed])
    mean_crps = float(np.nanmean(crps)) if observed.any() else float("nan")

    per_chain = [scalar_draws(d, beta_names) for d in chain_draws]
    rows = []
    for name in per_chain[0]:
        stacked = np.vstack([series[name] for series in per_chain])
        if stacked.shape[1] < 4:
            continue
        rhat, ess = convergence_diagnostics(stacked)
        rows.append({"parameter": name, "mean": float(stacked.mean()), "sd": float(stacked.std(ddof=1)),
                     "rhat": rhat, "ess": ess, "mcse": mcse_mean(stacked)})
    diagnostics = pd.DataFrame(rows, columns=["parameter", "mean", "sd", "rhat", "ess", "mcse"])

    coverage = None
    if truth is not None:
        pooled = {name: np.concatenate([series[name] for series in per_chain]) for name in per_chain[0]}
        coverage = interval_coverage(pooled, truth, level)

    residuals = None
    if observed.any():
        sub_labels = [labels[k] for k in np.flatnonzero(observed)] if labels is not None else None
        residuals = kinship_residuals(
            predictive[:, observed], np.asarray(response)[observed],
            mismatches=np.asarray(mismatches)[observed] if mismatches is not None else None,
            near_clonal_threshold=near_clonal_threshold, labels=sub_labels,
        )
    return ScoreReport(crps=crps, mean_crps=mean_crps, diagnostics=diagnostics,
                       coverage=coverage, residuals=residuals)
