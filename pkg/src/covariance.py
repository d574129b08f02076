"""Spatial kernels, dyadic covariance, jittered Cholesky and GP conditioning."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

import config
from dyads import DyadIndex
from errors import InvalidInputError, NotPositiveDefiniteError

logger = logging.getLogger(__name__)

SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class KernelSpec:
    """Correlation kernel family and range (coordinate units)."""

    family: str
    range: float

    def __post_init__(self):
        if self.family not in config.KERNELS:
            raise InvalidInputError(f"unknown kernel family '{self.family}'")
        if not np.isfinite(self.range) or self.range <= 0:
            raise InvalidInputError(f"kernel range must be positive, got {self.range}")


@dataclass
class DyadicCovariance:
    matrix: np.ndarray
    source_kernel: Optional[KernelSpec]
    idx: DyadIndex


def kernel_value(d, spec: KernelSpec):
    """
    Evaluates the correlation kernel at distance(s) d.

    Args:
        d: Scalar or array of non-negative distances
        spec: Kernel family and range

    Returns:
        Correlation(s) in (0, 1], same shape as ``d``
    """
    dist = np.asarray(d, dtype=float)
    if np.any(dist < 0):
        raise InvalidInputError("distances must be non-negative")
    if spec.family == "matern32":
        a = SQRT3 * dist / spec.range
        out = (1.0 + a) * np.exp(-a)
    else:
        out = np.exp(-dist / spec.range)
    return float(out) if out.ndim == 0 else out


def node_correlation_matrix(coords: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """
    Node-level correlation matrix K with unit diagonal.

    Args:
        coords: n x 2 coordinates
        spec: Kernel family and range

    Returns:
        Symmetric n x n matrix
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    if coords.shape[0] < 1:
        raise InvalidInputError("need at least one coordinate")
    K = kernel_value(cdist(coords, coords), spec)
    K = np.atleast_2d(K)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return K


def cross_correlation(coords_a: np.ndarray, coords_b: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Kernel between two coordinate sets (rows: a, columns: b)."""
    a = np.asarray(coords_a, dtype=float).reshape(-1, 2)
    b = np.asarray(coords_b, dtype=float).reshape(-1, 2)
    return np.atleast_2d(kernel_value(cdist(a, b), spec))


def dyadic_covariance_from_blocks(K_ss: np.ndarray, K_dd: np.ndarray,
                                  K_sd: np.ndarray, K_ds: np.ndarray) -> np.ndarray:
    """
    Symmetrized product covariance between two dyad sets.

    For dyads a=(s, d) and b=(s', d') the entry is K(s,s')K(d,d') + K(s,d')K(d,s').
    Each block holds the kernel between the indicated endpoints of the row
    dyads (first letter) and the column dyads (second letter).
    """
    return K_ss * K_dd + K_sd * K_ds


def dyadic_covariance(K: np.ndarray, idx: DyadIndex,
                      spec: Optional[KernelSpec] = None) -> DyadicCovariance:
    """
    Covariance between all dyads from the node correlation matrix.

    [Sigma]_{(i,j),(i',j')} = K_ii' K_jj' + K_ij' K_ji'

    Args:
        K: n x n node correlation matrix
        idx: Dyad index
        spec: Kernel that produced K, kept for reference

    Returns:
        DyadicCovariance with an N x N matrix in dyad order
    """
    K = np.asarray(K, dtype=float)
    if K.shape != (idx.n, idx.n):
        raise InvalidInputError(f"K has shape {K.shape}, expected ({idx.n}, {idx.n})")
    I, J = idx.i, idx.j
    S = dyadic_covariance_from_blocks(
        K[np.ix_(I, I)], K[np.ix_(J, J)], K[np.ix_(I, J)], K[np.ix_(J, I)]
    )
    return DyadicCovariance(matrix=S, source_kernel=spec, idx=idx)


def commutation_matrix(n: int) -> np.ndarray:
    """
    Dense n^2 x n^2 commutation matrix H with H vec(A) = vec(A').

    vec stacks columns, so entry (a, b) of A sits at position a + n*b.
    Only meant for small n (brute-force checks).
    """
    H = np.zeros((n * n, n * n))
    for a in range(n):
        for b in range(n):
            H[a + n * b, b + n * a] = 1.0
    return H


def dyad_selector(idx: DyadIndex) -> np.ndarray:
    """Dense N x n^2 matrix selecting vec position of entry (i, j) per dyad."""
    E = np.zeros((idx.N, idx.n * idx.n))
    E[np.arange(idx.N), idx.i + idx.n * idx.j] = 1.0
    return E


def dyadic_covariance_kronecker(K: np.ndarray, idx: DyadIndex) -> np.ndarray:
    """
    Dyadic covariance via the symmetrized Kronecker route.

    E (I + H)(K kron K)(I + H)' E' equals twice the closed form; the result
    is halved so both routes agree. Small n only.
    """
    n = idx.n
    H = commutation_matrix(n)
    P = np.eye(n * n) + H
    E = dyad_selector(idx)
    return 0.5 * E @ P @ np.kron(K, K) @ P.T @ E.T


def jitter_ladder(S: np.ndarray, jitter_start: float = config.JITTER_START):
    """Jitter levels tried by ``cholesky_psd``, scaled by the mean diagonal."""
    scale = float(np.mean(np.diag(S))) if S.size else 1.0
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    return [0.0] + [jitter_start * scale * 10.0 ** k for k in range(config.JITTER_STEPS + 1)]


def cholesky_psd(S: np.ndarray, jitter_start: float = config.JITTER_START) -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor of S + jI with the smallest working jitter j.

    Args:
        S: Symmetric matrix
        jitter_start: First non-zero jitter, relative to the mean diagonal

    Returns:
        Tuple of (L, j) with L L' = S + jI
    """
    S = np.asarray(S, dtype=float)
    ladder = jitter_ladder(S, jitter_start)
    eye = np.eye(S.shape[0])
    for jitter in ladder:
        try:
            L = linalg.cholesky(S + jitter * eye if jitter else S, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            if jitter:
                logger.debug("cholesky needed jitter %.3g (size %d)", jitter, S.shape[0])
            return L, jitter
    try:
        _, D, _ = linalg.ldl(S)
        min_pivot = float(np.min(np.diag(D)))
    except (linalg.LinAlgError, ValueError):
        min_pivot = float(np.min(np.diag(S)))
    raise NotPositiveDefiniteError(min_pivot, ladder)


def gp_conditional(S_oo: np.ndarray, S_po: np.ndarray, S_pp: Optional[np.ndarray],
                   observed: np.ndarray, jitter_start: float = config.JITTER_START):
    """
    Conditional Gaussian at prediction points given observed values.

    Args:
        S_oo: Covariance among observed points
        S_po: Covariance between prediction (rows) and observed (columns) points
        S_pp: Covariance among prediction points, or None to skip the covariance
        observed: Observed vector (or matrix with one column per field)

    Returns:
        Tuple of (mean, cov); cov is None when S_pp is None
    """
    L, _ = cholesky_psd(S_oo, jitter_start)
    A = linalg.solve_triangular(L, np.asarray(S_po, dtype=float).T, lower=True)
    b = linalg.solve_triangular(L, np.asarray(observed, dtype=float), lower=True)
    mean = A.T @ b
    cov = None
    if S_pp is not None:
        cov = np.asarray(S_pp, dtype=float) - A.T @ A
    return mean, cov


def gaussian_logpdf_chol(x: np.ndarray, L: np.ndarray) -> float:
    """Log density of N(0, L L') at x."""
    z = linalg.solve_triangular(L, x, lower=True)
    return float(-0.5 * z @ z - np.sum(np.log(np.diag(L))) - 0.5 * x.shape[0] * np.log(2 * np.pi))
