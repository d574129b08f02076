"""Blocked Gibbs-Metropolis sampler for the dyadic flow model with DSVCs."""

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.linalg import null_space
from scipy.stats import norm
from tqdm import tqdm

import config
from covariance import (
    KernelSpec,
    cholesky_psd,
    dyadic_covariance,
    gaussian_logpdf_chol,
    kernel_value,
)
from design import DyadicData, select_variant
from dyads import node_distances
from errors import DyadflowError, InvalidInputError, SamplerError
from priors import PriorConfig
from slice_sampler import slice_sample_log_range

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator, None]


@dataclass
class ModelState:
    """All sampled quantities at one iteration.

    W is N x Q, C_load is P x Q with P = p + C. ``lam`` and ``xi`` are the
    half-Cauchy local and global scales; ``aux_lam`` and ``aux_xi`` are their
    inverse-gamma augmentation latents. Q may be 0 (no factors).
    """

    alpha: float
    beta: np.ndarray
    sigma2: float
    gamma: np.ndarray
    eta: np.ndarray
    sigma2_eta: float
    phi_eta: float
    W: np.ndarray
    C_load: np.ndarray
    phi_q: np.ndarray
    lam: np.ndarray
    xi: np.ndarray
    aux_lam: np.ndarray
    aux_xi: np.ndarray

    @property
    def delta(self) -> np.ndarray:
        return self.W @ self.C_load.T

    @property
    def Q(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "ModelState":
        return replace(
            self,
            beta=self.beta.copy(), gamma=self.gamma.copy(), eta=self.eta.copy(),
            W=self.W.copy(), C_load=self.C_load.copy(), phi_q=self.phi_q.copy(),
            lam=self.lam.copy(), xi=self.xi.copy(),
            aux_lam=self.aux_lam.copy(), aux_xi=self.aux_xi.copy(),
        )


@dataclass
class Schedule:
    iterations: int
    burnin: int
    thin: int = 1
    seed: int = 0
    model_variant: str = "full"
    save_factor_draws: bool = True
    factor_slice: bool = True
    progress: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        if not 0 <= self.burnin <= self.iterations:
            raise InvalidInputError("burnin must lie in [0, iterations]")
        if self.thin < 1:
            raise InvalidInputError("thin must be >= 1")
        if self.model_variant not in config.MODEL_VARIANTS:
            raise InvalidInputError(f"unknown model variant '{self.model_variant}'")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burnin) // self.thin


@dataclass
class ChainOutput:
    """Retained draws and run metadata of one chain.

    ``draws`` maps block names to arrays whose first axis is the draw.
    """

    draws: Dict[str, np.ndarray]
    meta: Dict
    delta_mean: np.ndarray
    delta_sd: np.ndarray

    @property
    def n_draws(self) -> int:
        return int(self.draws["alpha"].shape[0])


@dataclass
class FactorCache:
    phi: float
    L: np.ndarray
    Sigma_inv: Optional[np.ndarray] = None


@dataclass
class Workspace:
    """Per-chain precomputations, factor caches and diagnostics."""

    data: DyadicData
    prior: PriorConfig
    y: np.ndarray
    Z: np.ndarray
    weights: np.ndarray
    n_obs: float
    U: np.ndarray
    MU: np.ndarray
    MU_gram: np.ndarray
    dist: np.ndarray
    iteration: int = 0
    factor_caches: Dict[int, FactorCache] = field(default_factory=dict)
    eta_cache: Optional[Tuple[float, np.ndarray]] = None
    jitter_events: List[Dict] = field(default_factory=list)
    joint_attempts: Optional[np.ndarray] = None
    joint_accepts: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.data.idx.n

    @property
    def P(self) -> int:
        return self.Z.shape[1]

    def chol(self, S: np.ndarray, block: str) -> np.ndarray:
        L, jitter = cholesky_psd(S)
        if jitter:
            self.jitter_events.append({"iteration": self.iteration, "block": block, "jitter": jitter})
        return L

    def eta_chol(self, phi: float) -> np.ndarray:
        """Cholesky factor of U' R(phi) U, cached on phi."""
        if self.eta_cache is not None and self.eta_cache[0] == phi:
            return self.eta_cache[1]
        R = kernel_value(self.dist, KernelSpec(self.prior.eta_kernel, phi))
        np.fill_diagonal(R, 1.0)
        L = self.chol(self.U.T @ R @ self.U, "eta")
        self.eta_cache = (phi, L)
        return L

    def factor_sigma(self, phi: float) -> np.ndarray:
        K = kernel_value(self.dist, KernelSpec(self.prior.factor_kernel, phi))
        np.fill_diagonal(K, 1.0)
        return dyadic_covariance(K, self.data.idx).matrix

    def factor_cache(self, q: int, phi: float, L: Optional[np.ndarray] = None) -> FactorCache:
        cache = self.factor_caches.get(q)
        if cache is None or cache.phi != phi:
            if L is None:
                L = self.chol(self.factor_sigma(phi), f"factor{q + 1}")
            cache = FactorCache(phi=phi, L=L)
            self.factor_caches[q] = cache
        if cache.Sigma_inv is None:
            eye = np.eye(cache.L.shape[0])
            cache.Sigma_inv = linalg.cho_solve((cache.L, True), eye, check_finite=False)
        return cache


def build_workspace(data: DyadicData, prior: PriorConfig) -> Workspace:
    """Precomputes the U basis, the dyadic map of eta and node distances."""
    idx = data.idx
    U = null_space(np.ones((1, idx.n)))
    MU = np.asarray(idx.incidence @ U)
    w = data.weights
    return Workspace(
        data=data,
        prior=prior,
        y=data.y,
        Z=data.Z,
        weights=w,
        n_obs=float(np.sum(w)),
        U=U,
        MU=MU,
        MU_gram=MU.T @ (w[:, None] * MU),
        dist=node_distances(data.nodes.coords),
    )


def _inv_gamma(rng: np.random.Generator, shape: float, rate: float) -> float:
    return float(rate / max(rng.gamma(shape), 1e-300))


def _draw_from_precision(mean: np.ndarray, L_prec: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(mean.shape[0])
    return mean + linalg.solve_triangular(L_prec.T, z, lower=False, check_finite=False)


def dsvc_term(state: ModelState, ws: Workspace) -> np.ndarray:
    """Row sums of Z o Delta, i.e. sum_q (Z c_q) o w_q."""
    if state.Q == 0:
        return np.zeros(ws.N)
    return np.sum((ws.Z @ state.C_load) * state.W, axis=1)


def fitted_mean(state: ModelState, ws: Workspace) -> np.ndarray:
    """mu_ij = alpha + z'(beta + delta_ij) + (eta_j - eta_i)."""
    return state.alpha + ws.Z @ state.beta + dsvc_term(state, ws) + ws.MU @ state.gamma


def log_likelihood(state: ModelState, ws: Workspace) -> float:
    r = ws.y - fitted_mean(state, ws)
    return float(-0.5 * np.sum(ws.weights * r ** 2) / state.sigma2
                 - 0.5 * ws.n_obs * np.log(2 * np.pi * state.sigma2))


def init_state(data: DyadicData, prior: PriorConfig, seed: SeedLike = 0,
               use_factors: bool = True) -> ModelState:
    """
    Starting values for a chain.

    alpha is the mean response, beta a ridge fit, sigma2 the residual
    variance (floored); latent effects start at zero and the loadings at
    small noise.

    Args:
        data: Assembled dyadic data
        prior: Hyperparameters
        seed: Seed or generator for the loading noise
        use_factors: Allocate Q latent factors (False gives Q = 0)

    Returns:
        ModelState
    """
    rng = np.random.default_rng(seed)
    Z = data.Z
    N, P = Z.shape
    if N < P + 2:
        raise InvalidInputError(f"need N >= p + C + 2 dyads, got N={N}, p+C={P}")
    if P and np.any(np.std(Z, axis=0) == 0):
        bad = np.flatnonzero(np.std(Z, axis=0) == 0).tolist()
        raise InvalidInputError(f"design column(s) {bad} have zero variance")
    w = data.weights
    y = data.y
    n_obs = np.sum(w)
    alpha = float(np.sum(w * y) / n_obs) if n_obs > 0 else 0.0
    Zc = Z - Z.mean(axis=0)
    ridge = config.RIDGE_PENALTY * max(n_obs, 1.0)
    beta = np.linalg.solve(Zc.T @ (w[:, None] * Zc) + ridge * np.eye(P), Zc.T @ (w * (y - alpha)))
    resid = y - alpha - Zc @ beta
    sigma2 = float(np.sum(w * resid ** 2) / n_obs) if n_obs > 1 else 1.0
    sigma2 = max(sigma2, config.SIGMA2_FLOOR)

    lo, hi = prior.phi_bounds
    phi0 = float(np.clip(np.exp(prior.mu_logphi), lo, hi))
    Q = prior.Q if use_factors else 0
    n = data.idx.n
    return ModelState(
        alpha=alpha,
        beta=beta,
        sigma2=sigma2,
        gamma=np.zeros(n - 1),
        eta=np.zeros(n),
        sigma2_eta=1.0,
        phi_eta=phi0,
        W=np.zeros((N, Q)),
        C_load=0.01 * rng.standard_normal((P, Q)),
        phi_q=np.full(Q, phi0),
        lam=np.ones((P, Q)),
        xi=np.ones(Q),
        aux_lam=np.ones((P, Q)),
        aux_xi=np.ones(Q),
    )


def coefficient_conditional(state: ModelState, ws: Workspace, prior: PriorConfig):
    """
    Gaussian full conditional of (alpha, beta) given everything else.

    Returns:
        Tuple of (mean, precision Cholesky factor, design X = [1 Z], residual)
    """
    r = ws.y - dsvc_term(state, ws) - ws.MU @ state.gamma
    X = np.column_stack([np.ones(ws.N), ws.Z])
    Xw = X * ws.weights[:, None]
    prior_prec = np.concatenate([[1.0 / prior.var_alpha], np.full(ws.P, 1.0 / prior.var_beta)])
    prec = X.T @ Xw / state.sigma2 + np.diag(prior_prec)
    L = ws.chol(prec, "regression")
    mean = linalg.cho_solve((L, True), Xw.T @ r / state.sigma2, check_finite=False)
    return mean, L, X, r


def draw_coefficients(state: ModelState, ws: Workspace, prior: PriorConfig,
                      rng: np.random.Generator) -> ModelState:
    mean, L, _, _ = coefficient_conditional(state, ws, prior)
    theta = _draw_from_precision(mean, L, rng)
    state.alpha = float(theta[0])
    state.beta = theta[1:].copy()
    return state


def draw_sigma2(state: ModelState, ws: Workspace, prior: PriorConfig,
                rng: np.random.Generator) -> ModelState:
    resid = ws.y - fitted_mean(state, ws)
    sse = float(np.sum(ws.weights * resid ** 2))
    state.sigma2 = _inv_gamma(rng, prior.ig_shape_sigma2 + 0.5 * ws.n_obs, prior.ig_rate_sigma2 + 0.5 * sse)
    return state


def update_regression_block(state: ModelState, ws: Workspace, prior: PriorConfig,
                            rng: np.random.Generator) -> ModelState:
    """
    Joint Gaussian draw of (alpha, beta), then sigma2 from its inverse gamma.

    Updates ``state`` in place and returns it.
    """
    draw_coefficients(state, ws, prior, rng)
    return draw_sigma2(state, ws, prior, rng)


def eta_conditional(state: ModelState, ws: Workspace, prior: PriorConfig):
    """
    Full conditional of gamma (eta = U gamma) given everything else.

    Sigma_gamma = ((MU)' W (MU) / sigma2 + (U' R U)^{-1} / sigma2_eta)^{-1}
    mu_gamma = Sigma_gamma (MU)' W r / sigma2, r the residual without eta.

    Returns:
        Tuple of (mean, precision Cholesky factor)
    """
    r = ws.y - state.alpha - ws.Z @ state.beta - dsvc_term(state, ws)
    L_B = ws.eta_chol(state.phi_eta)
    B_inv = linalg.cho_solve((L_B, True), np.eye(L_B.shape[0]), check_finite=False)
    prec = ws.MU_gram / state.sigma2 + B_inv / state.sigma2_eta
    L = ws.chol(prec, "eta")
    mean = linalg.cho_solve((L, True), ws.MU.T @ (ws.weights * r) / state.sigma2, check_finite=False)
    return mean, L


def _eta_logphi_target(state: ModelState, ws: Workspace, prior: PriorConfig) -> Callable[[float], float]:
    m = state.gamma.shape[0]

    def target(logphi: float) -> float:
        L = ws.eta_chol(float(np.exp(logphi)))
        z = linalg.solve_triangular(L, state.gamma, lower=True, check_finite=False)
        return float(-0.5 * z @ z / state.sigma2_eta - np.sum(np.log(np.diag(L)))
                     - 0.5 * m * np.log(state.sigma2_eta) + prior.log_prior_logphi(logphi))

    return target


def stepout_budget(ws: Workspace, prior: PriorConfig) -> int:
    if ws.iteration < config.SLICE_FULL_BUDGET_AFTER:
        return min(config.SLICE_BURNIN_STEPOUT, prior.slice_max_stepout)
    return prior.slice_max_stepout


def update_eta_block(state: ModelState, ws: Workspace, prior: PriorConfig,
                     rng: np.random.Generator, update_phi: bool = True) -> ModelState:
    """
    Draws gamma in the U-subspace, then sigma2_eta, then log(phi_eta) by slice sampling.

    Updates ``state`` in place and returns it.
    """
    mean, L = eta_conditional(state, ws, prior)
    state.gamma = _draw_from_precision(mean, L, rng)
    state.eta = ws.U @ state.gamma

    L_B = ws.eta_chol(state.phi_eta)
    z = linalg.solve_triangular(L_B, state.gamma, lower=True, check_finite=False)
    state.sigma2_eta = _inv_gamma(
        rng, prior.ig_shape_eta + 0.5 * state.gamma.shape[0], prior.ig_rate_eta + 0.5 * float(z @ z)
    )
    if update_phi:
        logphi = slice_sample_log_range(
            float(np.log(state.phi_eta)), _eta_logphi_target(state, ws, prior), prior, rng,
            max_stepout=stepout_budget(ws, prior),
        )
        state.phi_eta = float(np.exp(logphi))
    return state


def factor_partial_residual(state: ModelState, ws: Workspace, q: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns (s_q, r_{-q}) with s_q = Z c_q and r_{-q} the residual with the
    q-th factor's contribution added back.
    """
    s = ws.Z @ state.C_load[:, q]
    r = ws.y - fitted_mean(state, ws) + s * state.W[:, q]
    return s, r


def factor_conditional(Sigma_inv: np.ndarray, s: np.ndarray, r: np.ndarray,
                       sigma2: float, weights: np.ndarray, chol=cholesky_psd):
    """
    Gaussian full conditional of w_q given phi_q.

    Sigma* = (Sigma^{-1} + diag(weights * s^2) / sigma2)^{-1},
    mu = Sigma* diag(s) (weights * r) / sigma2.

    Returns:
        Tuple of (mean, precision Cholesky factor)
    """
    prec = Sigma_inv + np.diag(weights * s ** 2 / sigma2)
    L = chol(prec)
    L = L[0] if isinstance(L, tuple) else L
    mean = linalg.cho_solve((L, True), weights * s * r / sigma2, check_finite=False)
    return mean, L


def _truncation_logmass(x: float, lo: float, hi: float, sd: float) -> float:
    return float(np.log(max(norm.cdf((hi - x) / sd) - norm.cdf((lo - x) / sd), 1e-300)))


def _factor_loglik(w: np.ndarray, s: np.ndarray, r: np.ndarray, sigma2: float, weights: np.ndarray) -> float:
    return float(-0.5 * np.sum(weights * (r - s * w) ** 2) / sigma2)


def whitened_joint_move(state: ModelState, ws: Workspace, prior: PriorConfig, q: int,
                        rng: np.random.Generator) -> bool:
    """
    Joint random-walk move on (log phi_q, w_q) in whitened coordinates.

    The proposal is resampled until it falls inside the log bounds; the
    ratio of truncation masses keeps the move reversible. Returns whether
    the proposal was accepted.
    """
    s, r = factor_partial_residual(state, ws, q)
    phi = float(state.phi_q[q])
    cache = ws.factor_cache(q, phi)
    w = state.W[:, q]
    v = linalg.solve_triangular(cache.L, w, lower=True, check_finite=False)

    lo, hi = prior.log_bounds
    sd = prior.rw_sd
    logphi = float(np.log(phi))
    while True:
        prop = logphi + sd * rng.standard_normal()
        if lo <= prop <= hi:
            break
    L_new = ws.chol(ws.factor_sigma(float(np.exp(prop))), f"factor{q + 1}")
    w_new = L_new @ v

    log_ratio = (
        _factor_loglik(w_new, s, r, state.sigma2, ws.weights)
        - _factor_loglik(w, s, r, state.sigma2, ws.weights)
        + prior.log_prior_logphi(prop) - prior.log_prior_logphi(logphi)
        + _truncation_logmass(logphi, lo, hi, sd) - _truncation_logmass(prop, lo, hi, sd)
    )
    ws.joint_attempts[q] += 1
    if np.log(rng.uniform()) < log_ratio:
        ws.joint_accepts[q] += 1
        state.W[:, q] = w_new
        state.phi_q[q] = float(np.exp(prop))
        ws.factor_cache(q, state.phi_q[q], L=L_new)
        return True
    return False


def _factor_logphi_target(state: ModelState, ws: Workspace, prior: PriorConfig, q: int,
                          memo: Dict[float, np.ndarray]) -> Callable[[float], float]:
    w = state.W[:, q]

    def target(logphi: float) -> float:
        L = memo.get(logphi)
        if L is None:
            L = ws.chol(ws.factor_sigma(float(np.exp(logphi))), f"factor{q + 1}")
            memo[logphi] = L
        return gaussian_logpdf_chol(w, L) + prior.log_prior_logphi(logphi)

    return target


def update_factor_block(state: ModelState, ws: Workspace, prior: PriorConfig, q: int,
                        rng: np.random.Generator, joint: bool = False,
                        slice_phi: bool = False) -> ModelState:
    """
    Updates factor q: optional whitened joint move, the exact conditional
    draw of w_q, then an optional slice update of phi_q given w_q.

    The joint move is skipped when the loading column or its signal is
    negligible. Updates ``state`` in place and returns it.

    Args:
        state: Current state
        ws: Workspace of the chain
        prior: Hyperparameters
        q: Factor index, 0-based
        rng: Random generator
        joint: Attempt the whitened joint move
        slice_phi: Run the slice update of phi_q
    """
    if not 0 <= q < state.Q:
        raise InvalidInputError(f"factor index {q} out of range for Q={state.Q}")
    if ws.joint_attempts is None or ws.joint_attempts.shape[0] != state.Q:
        ws.joint_attempts = np.zeros(state.Q, dtype=int)
        ws.joint_accepts = np.zeros(state.Q, dtype=int)

    if joint:
        c = state.C_load[:, q]
        s = ws.Z @ c
        if np.linalg.norm(c) > config.JOINT_MIN_LOADING_NORM and np.var(s) > config.JOINT_MIN_SIGNAL_VAR:
            whitened_joint_move(state, ws, prior, q, rng)

    s, r = factor_partial_residual(state, ws, q)
    cache = ws.factor_cache(q, float(state.phi_q[q]))
    mean, L = factor_conditional(
        cache.Sigma_inv, s, r, state.sigma2, ws.weights,
        chol=lambda S: ws.chol(S, f"factor{q + 1}"),
    )
    state.W[:, q] = _draw_from_precision(mean, L, rng)

    if slice_phi:
        memo: Dict[float, np.ndarray] = {}
        logphi = float(np.log(state.phi_q[q]))
        new = slice_sample_log_range(
            logphi, _factor_logphi_target(state, ws, prior, q, memo), prior, rng,
            max_stepout=stepout_budget(ws, prior),
        )
        state.phi_q[q] = float(np.exp(new))
        ws.factor_cache(q, state.phi_q[q], L=memo.get(new))
    return state


def _clamp_scale(values: np.ndarray, what: str) -> np.ndarray:
    low = values < config.SCALE_FLOOR
    if np.any(low):
        warnings.warn(f"{what}: {int(low.sum())} scale(s) clamped at {config.SCALE_FLOOR}")
        logger.warning("%s: clamped %d scale(s)", what, int(low.sum()))
        values = np.maximum(values, config.SCALE_FLOOR)
    return values


def update_loadings_block(state: ModelState, ws: Workspace, prior: PriorConfig,
                          rng: np.random.Generator) -> ModelState:
    """
    Gaussian draws of each loading column, then the horseshoe scales.

    Half-Cauchy scales use the inverse-gamma augmentation:
    lambda^2 | nu ~ IG(1, 1/nu + c^2 / (2 xi^2)), nu | lambda^2 ~ IG(1, 1 + 1/lambda^2),
    xi^2 | zeta ~ IG((P + 1)/2, 1/zeta + sum_l c_l^2 / (2 lambda_l^2)),
    zeta | xi^2 ~ IG(1, 1 + 1/xi^2). Updates ``state`` in place.
    """
    P = ws.P
    for q in range(state.Q):
        w = state.W[:, q]
        s = ws.Z @ state.C_load[:, q]
        r = ws.y - fitted_mean(state, ws) + s * w
        X = ws.Z * w[:, None]
        prior_var = (state.lam[:, q] * state.xi[q]) ** 2
        prec = X.T @ (ws.weights[:, None] * X) / state.sigma2 + np.diag(1.0 / prior_var)
        L = ws.chol(prec, "loadings")
        mean = linalg.cho_solve((L, True), X.T @ (ws.weights * r) / state.sigma2, check_finite=False)
        state.C_load[:, q] = _draw_from_precision(mean, L, rng)

    for q in range(state.Q):
        c2 = state.C_load[:, q] ** 2
        xi2 = state.xi[q] ** 2
        lam2 = np.array([
            _inv_gamma(rng, 1.0, 1.0 / state.aux_lam[l, q] + c2[l] / (2.0 * xi2)) for l in range(P)
        ])
        lam2 = _clamp_scale(lam2, "local scale")
        state.aux_lam[:, q] = [_inv_gamma(rng, 1.0, 1.0 + 1.0 / v) for v in lam2]
        xi2 = _inv_gamma(rng, 0.5 * (P + 1), 1.0 / state.aux_xi[q] + float(np.sum(c2 / (2.0 * lam2))))
        xi2 = float(_clamp_scale(np.array([xi2]), "global scale")[0])
        state.aux_xi[q] = _inv_gamma(rng, 1.0, 1.0 + 1.0 / xi2)
        state.lam[:, q] = np.sqrt(lam2)
        state.xi[q] = np.sqrt(xi2)
    return state


def recenter_rescale(state: ModelState) -> ModelState:
    """
    Column-centers W and moves the removed constant into beta.

    beta <- beta + C w_bar keeps every fitted mean unchanged. Columns whose
    sample sd leaves the configured window are scaled to unit sd with the
    inverse scale applied to the loading column.

    Returns:
        New ModelState
    """
    new = state.copy()
    if new.Q == 0:
        return new
    w_bar = new.W.mean(axis=0)
    new.W = new.W - w_bar
    new.beta = new.beta + new.C_load @ w_bar
    if new.W.shape[0] > 1:
        sd = new.W.std(axis=0, ddof=1)
        lo, hi = config.RESCALE_SD_WINDOW
        for q in np.flatnonzero((sd > 0) & ((sd < lo) | (sd > hi))):
            new.W[:, q] /= sd[q]
            new.C_load[:, q] *= sd[q]
    return new


class _DeltaMoments:
    """Running mean and variance of Delta over retained draws."""

    def __init__(self, shape):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def push(self, value: np.ndarray):
        self.count += 1
        d = value - self.mean
        self.mean += d / self.count
        self.m2 += d * (value - self.mean)

    @property
    def sd(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / (self.count - 1))


def _run_block(name: str, iteration: int, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (DyadflowError, linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        raise SamplerError(iteration, name, exc) from exc


def run_chain(data: DyadicData, prior: PriorConfig, schedule: Schedule) -> ChainOutput:
    """
    Runs one chain of the blocked sampler.

    Each sweep updates: regression block, eta block, each factor block,
    loadings block, then recenters. Variants without factors skip the
    factor and loadings blocks; variants without connectivity drop those
    design columns.

    Args:
        data: Dataset built with every connectivity class
        prior: Hyperparameters
        schedule: Iterations, burn-in, thinning, seed and variant

    Returns:
        ChainOutput with retained draws and metadata
    """
    data, use_factors = select_variant(data, schedule.model_variant)
    rng = np.random.default_rng(schedule.seed)
    ws = build_workspace(data, prior)
    state = init_state(data, prior, rng, use_factors=use_factors)
    Q = state.Q
    ws.joint_attempts = np.zeros(Q, dtype=int)
    ws.joint_accepts = np.zeros(Q, dtype=int)

    m = schedule.n_draws
    N, P, n = ws.N, ws.P, ws.n
    keep_factors = schedule.save_factor_draws and Q > 0
    draws = {
        "alpha": np.empty(m),
        "beta": np.empty((m, P)),
        "sigma2": np.empty(m),
        "sigma2_eta": np.empty(m),
        "phi_eta": np.empty(m),
        "eta": np.empty((m, n)),
        "phi_q": np.empty((m, Q)),
        "xi": np.empty((m, Q)),
        "mu": np.empty((m, N)),
    }
    if keep_factors:
        draws["W"] = np.empty((m, N, Q))
        draws["C"] = np.empty((m, P, Q))
    moments = _DeltaMoments((N, P))

    logger.info("chain seed=%d variant=%s: %d iterations, %d retained draws",
                schedule.seed, schedule.model_variant, schedule.iterations, m)
    k = 0
    iterator = range(1, schedule.iterations + 1)
    for it in tqdm(iterator, disable=not schedule.progress, desc=f"chain {schedule.seed}", leave=False):
        ws.iteration = it
        _run_block("regression", it, update_regression_block, state, ws, prior, rng)
        _run_block("eta", it, update_eta_block, state, ws, prior, rng)
        for q in range(Q):
            _run_block(f"factor{q + 1}", it, update_factor_block, state, ws, prior, q, rng,
                       joint=(it % 2 == 1), slice_phi=schedule.factor_slice)
        if Q:
            _run_block("loadings", it, update_loadings_block, state, ws, prior, rng)
            state = _run_block("recenter", it, recenter_rescale, state)

        if it > schedule.burnin and (it - schedule.burnin) % schedule.thin == 0 and k < m:
            draws["alpha"][k] = state.alpha
            draws["beta"][k] = state.beta
            draws["sigma2"][k] = state.sigma2
            draws["sigma2_eta"][k] = state.sigma2_eta
            draws["phi_eta"][k] = state.phi_eta
            draws["eta"][k] = state.eta
            draws["phi_q"][k] = state.phi_q
            draws["xi"][k] = state.xi
            draws["mu"][k] = fitted_mean(state, ws)
            if keep_factors:
                draws["W"][k] = state.W
                draws["C"][k] = state.C_load
            moments.push(state.delta if Q else np.zeros((N, P)))
            k += 1

    attempts = ws.joint_attempts
    acceptance = {
        f"factor{q + 1}_joint": float(ws.joint_accepts[q] / attempts[q]) if attempts[q] else 0.0
        for q in range(Q)
    }
    idx = data.idx
    meta = {
        "schema_version": config.SCHEMA_VERSION,
        "seed": schedule.seed,
        "iterations": schedule.iterations,
        "burnin": schedule.burnin,
        "thin": schedule.thin,
        "model_variant": schedule.model_variant,
        "n_draws": m,
        "Q": Q,
        "acceptance": acceptance,
        "joint_attempts": {f"factor{q + 1}_joint": int(attempts[q]) for q in range(Q)},
        "jitter_events": ws.jitter_events,
        "beta_names": data.design.names,
        "node_ids": list(data.nodes.ids),
        "dyad_i": idx.i.tolist(),
        "dyad_j": idx.j.tolist(),
        "eta_kernel": prior.eta_kernel,
        "factor_kernel": prior.factor_kernel,
    }
    return ChainOutput(draws=draws, meta=meta, delta_mean=moments.mean, delta_sd=moments.sd)
