"""Grid map products: mean dissimilarity surfaces, vector fields, DSVC z-scores, node slopes."""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg
from tqdm import tqdm

import config
from covariance import (
    KernelSpec,
    cholesky_psd,
    cross_correlation,
    dyadic_covariance_from_blocks,
    node_correlation_matrix,
)
from design import DesignTransform
from dyads import DyadIndex
from errors import InvalidInputError, SizeLimitError

logger = logging.getLogger(__name__)

# direction -> (dx, dy) in lattice steps
DIRECTIONS = {"E": (1, 0), "W": (-1, 0), "N": (0, 1), "S": (0, -1)}


@dataclass
class GridSpec:
    """Regular lattice; node g sits at column ix, row iy with g = iy * nx + ix."""

    bbox: Tuple[float, float, float, float]
    nx: int
    ny: int
    coords: np.ndarray
    covariates: Optional[np.ndarray]
    sx: float
    sy: float
    neighbors: List[Dict[str, int]]

    @property
    def G(self) -> int:
        return self.nx * self.ny

    def degree(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors])

    def interior(self) -> np.ndarray:
        return np.array([g for g, nb in enumerate(self.neighbors) if len(nb) == 4], dtype=int)


@dataclass
class GridDyads:
    """Directed grid dyads (g, g') with g' a cardinal neighbor of g."""

    src: np.ndarray
    dst: np.ndarray
    direction: List[str]
    lookup: Dict[Tuple[int, str], int]

    @property
    def D(self) -> int:
        return self.src.shape[0]


@dataclass
class GridFields:
    """Kriged latent fields for the mapped draws."""

    draw_index: np.ndarray
    eta: np.ndarray
    W: np.ndarray
    delta: np.ndarray


@dataclass
class MeanSurface:
    """mu per draw and grid dyad, with the alpha-free part kept separately."""

    alpha_free: np.ndarray
    mu: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.mu.mean(axis=0)

    @property
    def alpha_free_mean(self) -> np.ndarray:
        return self.alpha_free.mean(axis=0)


@dataclass
class MapProducts:
    mu: pd.DataFrame
    vectors: pd.DataFrame
    zbar: pd.DataFrame
    theta: Dict[str, pd.DataFrame] = field(default_factory=dict)
    theta_global: Dict[str, Dict[str, float]] = field(default_factory=dict)


def build_grid(bbox: Tuple[float, float, float, float], nx: int, ny: int,
               covariates: Optional[np.ndarray] = None,
               require_covariates: bool = False) -> GridSpec:
    """
    Regular nx x ny lattice over a bounding box with cardinal neighbor sets.

    Args:
        bbox: (xmin, xmax, ymin, ymax)
        nx: Columns, >= 3
        ny: Rows, >= 3
        covariates: G x p raw covariates in lattice order
        require_covariates: Fail when covariates are absent or incomplete

    Returns:
        GridSpec
    """
    x0, x1, y0, y1 = (float(b) for b in bbox)
    if not (x1 > x0 and y1 > y0):
        raise InvalidInputError(f"degenerate bounding box {bbox}")
    if nx < 3 or ny < 3:
        raise InvalidInputError(f"grid needs nx, ny >= 3, got {nx} x {ny}")
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    gx, gy = np.meshgrid(xs, ys)
    coords = np.column_stack([gx.ravel(), gy.ravel()])
    G = nx * ny
    if covariates is not None:
        covariates = np.asarray(covariates, dtype=float).reshape(G, -1)
        if not np.all(np.isfinite(covariates)):
            raise InvalidInputError("grid covariates contain missing values")
    elif require_covariates:
        raise InvalidInputError("grid covariates are required to map environmental effects")

    neighbors = []
    for g in range(G):
        iy, ix = divmod(g, nx)
        nb = {}
        for name, (dx, dy) in DIRECTIONS.items():
            jx, jy = ix + dx, iy + dy
            if 0 <= jx < nx and 0 <= jy < ny:
                nb[name] = jy * nx + jx
        neighbors.append(nb)
    return GridSpec(bbox=(x0, x1, y0, y1), nx=nx, ny=ny, coords=coords, covariates=covariates,
                    sx=(x1 - x0) / (nx - 1), sy=(y1 - y0) / (ny - 1), neighbors=neighbors)


def grid_dyads(grid: GridSpec) -> GridDyads:
    src, dst, direction, lookup = [], [], [], {}
    for g, nb in enumerate(grid.neighbors):
        for name, h in nb.items():
            lookup[(g, name)] = len(src)
            src.append(g)
            dst.append(h)
            direction.append(name)
    return GridDyads(src=np.array(src, dtype=int), dst=np.array(dst, dtype=int),
                     direction=direction, lookup=lookup)


def map_draw_indices(n_draws: int, max_draws: int = config.MAP_MAX_DRAWS) -> np.ndarray:
    """Evenly spaced retained-draw indices, at most ``max_draws`` of them."""
    if n_draws < 1:
        raise InvalidInputError("chain has no retained draws")
    k = min(n_draws, max_draws)
    return np.unique(np.round(np.linspace(0, n_draws - 1, k)).astype(int))


def krige_eta(node_coords: np.ndarray, grid_coords: np.ndarray, eta: np.ndarray,
              spec: KernelSpec) -> np.ndarray:
    """GP conditional mean of eta at grid nodes (the variance scale cancels)."""
    K = node_correlation_matrix(node_coords, spec)
    L, _ = cholesky_psd(K)
    A = cross_correlation(grid_coords, node_coords, spec)
    return A @ linalg.cho_solve((L, True), eta, check_finite=False)


def dyad_cross_covariance(node_coords: np.ndarray, grid_coords: np.ndarray, idx: DyadIndex,
                          dyads: GridDyads, spec: KernelSpec) -> np.ndarray:
    """Dyadic covariance between grid dyads (rows) and observed dyads (columns)."""
    Kgn = cross_correlation(grid_coords, node_coords, spec)
    return dyadic_covariance_from_blocks(
        Kgn[np.ix_(dyads.src, idx.i)],
        Kgn[np.ix_(dyads.dst, idx.j)],
        Kgn[np.ix_(dyads.src, idx.j)],
        Kgn[np.ix_(dyads.dst, idx.i)],
    )


class ObservedCholeskyCache:
    """Cholesky factors of the observed dyad covariance, keyed by kernel and range.

    Oldest entries are dropped beyond ``max_entries``; safe to share between
    kriging threads.
    """

    def __init__(self, node_coords: np.ndarray, idx: DyadIndex, max_entries: int = config.MAP_CHOL_CACHE):
        self.node_coords = node_coords
        self.idx = idx
        self.max_entries = max_entries
        self.hits = 0
        self.misses = 0
        self._entries: Dict[Tuple[str, float], np.ndarray] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def factor(self, spec: KernelSpec) -> np.ndarray:
        key = (spec.family, float(spec.range))
        with self._lock:
            L = self._entries.get(key)
            if L is not None:
                self.hits += 1
                return L
            self.misses += 1
        L = observed_dyad_cholesky(self.node_coords, self.idx, spec)
        with self._lock:
            if len(self._entries) >= self.max_entries:
                self._entries.pop(next(iter(self._entries)))
            self._entries[key] = L
        return L


def observed_dyad_cholesky(node_coords: np.ndarray, idx: DyadIndex, spec: KernelSpec) -> np.ndarray:
    K = node_correlation_matrix(node_coords, spec)
    I, J = idx.i, idx.j
    S_oo = dyadic_covariance_from_blocks(K[np.ix_(I, I)], K[np.ix_(J, J)], K[np.ix_(I, J)], K[np.ix_(J, I)])
    L, _ = cholesky_psd(S_oo)
    return L


def krige_factor(node_coords: np.ndarray, grid_coords: np.ndarray, idx: DyadIndex,
                 dyads: GridDyads, w: np.ndarray, spec: KernelSpec,
                 cache: Optional[ObservedCholeskyCache] = None) -> np.ndarray:
    """GP conditional mean of one factor at the grid dyads."""
    if cache is not None:
        L = cache.factor(spec)
    else:
        L = observed_dyad_cholesky(node_coords, idx, spec)
    S_go = dyad_cross_covariance(node_coords, grid_coords, idx, dyads, spec)
    return S_go @ linalg.cho_solve((L, True), w, check_finite=False)


def predict_latent_fields(draws: Dict[str, np.ndarray], meta: Dict, node_coords: np.ndarray,
                          idx: DyadIndex, grid: GridSpec,
                          max_draws: int = config.MAP_MAX_DRAWS,
                          max_grid_dyads: int = config.MAP_MAX_GRID_DYADS,
                          max_workers: int = config.MAX_WORKERS,
                          progress: bool = False) -> GridFields:
    """
    Kriges eta at grid nodes and each factor at the grid dyads, per mapped draw.

    Grid Delta rows are the predicted w rows times the loading draw C'.

    Args:
        draws: Chain draws (eta, phi_eta, and W, C, phi_q when factors exist)
        meta: Chain metadata (kernel names, Q)
        node_coords: n x 2 observed node coordinates
        idx: Observed dyad index
        grid: Target grid
        max_draws: Cap on mapped draws
        max_grid_dyads: Cap on grid dyads for the dense solves
        max_workers: Thread pool size
        progress: Show a progress bar over mapped draws

    Returns:
        GridFields
    """
    dyads = grid_dyads(grid)
    if dyads.D > max_grid_dyads:
        raise SizeLimitError(dyads.D, max_grid_dyads, "grid dyads")
    Q = int(meta.get("Q", 0))
    if Q and ("W" not in draws or "C" not in draws):
        raise InvalidInputError("chain was saved without factor draws; refit with save_factor_draws")
    m_total = np.asarray(draws["alpha"]).shape[0]
    keep = map_draw_indices(m_total, max_draws)
    eta_kernel = meta.get("eta_kernel", config.ETA_KERNEL)
    factor_kernel = meta.get("factor_kernel", config.FACTOR_KERNEL)
    P = np.asarray(draws["beta"]).shape[1]
    cache = ObservedCholeskyCache(node_coords, idx)

    def one_draw(k: int):
        eta_g = krige_eta(node_coords, grid.coords, np.asarray(draws["eta"])[k],
                          KernelSpec(eta_kernel, float(draws["phi_eta"][k])))
        W_g = np.zeros((dyads.D, Q))
        for q in range(Q):
            spec = KernelSpec(factor_kernel, float(draws["phi_q"][k, q]))
            W_g[:, q] = krige_factor(node_coords, grid.coords, idx, dyads, draws["W"][k, :, q], spec, cache)
        delta_g = W_g @ draws["C"][k].T if Q else np.zeros((dyads.D, P))
        return eta_g, W_g, delta_g

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        results = list(tqdm(executor.map(one_draw, keep), total=len(keep), disable=not progress,
                            desc="kriging", leave=False))
    logger.info("kriged %d draws onto %d grid nodes / %d grid dyads (%d factorizations reused)",
                len(keep), grid.G, dyads.D, cache.hits)
    return GridFields(
        draw_index=keep,
        eta=np.array([r[0] for r in results]),
        W=np.array([r[1] for r in results]),
        delta=np.array([r[2] for r in results]),
    )


def grid_design(grid: GridSpec, dyads: GridDyads, transform: DesignTransform) -> np.ndarray:
    """Design rows z = [h(x_g' - x_g), kappa] for every grid dyad, as in the fit."""
    n_env = transform.node_means.shape[0]
    if n_env:
        if grid.covariates is None:
            raise InvalidInputError("grid covariates are required to map environmental effects")
        if grid.covariates.shape[1] != n_env:
            raise InvalidInputError(
                f"grid has {grid.covariates.shape[1]} covariates, fit used {n_env}"
            )
        env = transform.env_rows(grid.covariates[dyads.src], grid.covariates[dyads.dst])
    else:
        env = np.zeros((dyads.D, 0))
    conn = transform.conn_rows(grid.coords[dyads.src], grid.coords[dyads.dst])
    return np.hstack([env, conn])


def dyadic_mean_surface(fields: GridFields, alpha: np.ndarray, beta: np.ndarray,
                        grid: GridSpec, transform: DesignTransform) -> MeanSurface:
    """
    Posterior mean dissimilarity with each grid neighbor.

    mu_(g,g') = alpha + z'(beta + Delta_(g,g')) + (eta_g' - eta_g).

    Args:
        fields: Kriged fields for the mapped draws
        alpha: Intercept draws (all retained draws; the mapped ones are picked)
        beta: m x P coefficient draws
        grid: Grid
        transform: Design transform of the fit

    Returns:
        MeanSurface
    """
    dyads = grid_dyads(grid)
    Zg = grid_design(grid, dyads, transform)
    b = np.asarray(beta)[fields.draw_index]
    if Zg.shape[1] != b.shape[1]:
        raise InvalidInputError(
            f"grid design has {Zg.shape[1]} columns, coefficients have {b.shape[1]}; "
            "the fit's RBF or connectivity spec is missing"
        )
    a = np.asarray(alpha)[fields.draw_index]
    alpha_free = (
        b @ Zg.T
        + np.einsum("dp,mdp->md", Zg, fields.delta)
        + (fields.eta[:, dyads.dst] - fields.eta[:, dyads.src])
    )
    return MeanSurface(alpha_free=alpha_free, mu=a[:, None] + alpha_free)


def vector_field(surface: np.ndarray, grid: GridSpec) -> pd.DataFrame:
    """
    Directional gradients at interior nodes.

    u = (mu_(g,E) - mu_(g,W)) / sx, v = (mu_(g,N) - mu_(g,S)) / sy and
    log_grad = log sqrt(u^2 + v^2), floored for flat fields.

    Args:
        surface: Length-D mean surface in grid-dyad order (alpha-free part)
        grid: Grid

    Returns:
        DataFrame with columns g, x, y, u, v, log_grad
    """
    dyads = grid_dyads(grid)
    mu = np.asarray(surface, dtype=float)
    interior = grid.interior()
    east = np.array([dyads.lookup[(g, "E")] for g in interior], dtype=int)
    west = np.array([dyads.lookup[(g, "W")] for g in interior], dtype=int)
    north = np.array([dyads.lookup[(g, "N")] for g in interior], dtype=int)
    south = np.array([dyads.lookup[(g, "S")] for g in interior], dtype=int)
    u = (mu[east] - mu[west]) / grid.sx
    v = (mu[north] - mu[south]) / grid.sy
    log_grad = np.log(np.maximum(np.sqrt(u ** 2 + v ** 2), config.LOG_GRAD_FLOOR))
    return pd.DataFrame({"g": interior, "x": grid.coords[interior, 0], "y": grid.coords[interior, 1],
                         "u": u, "v": v, "log_grad": log_grad})


def zscore_from_moments(mean: np.ndarray, sd: np.ndarray, grid: GridSpec) -> np.ndarray:
    """z_g = sum over neighbors and columns of |mean / sd|, over deg(g) * P."""
    dyads = grid_dyads(grid)
    mean = np.asarray(mean, dtype=float).reshape(dyads.D, -1)
    sd = np.maximum(np.asarray(sd, dtype=float).reshape(dyads.D, -1), config.SD_FLOOR)
    per_dyad = np.sum(np.abs(mean / sd), axis=1)
    totals = np.bincount(dyads.src, weights=per_dyad, minlength=grid.G)
    return totals / (grid.degree() * mean.shape[1])


def dsvc_zscore_map(delta_draws: np.ndarray, grid: GridSpec) -> pd.DataFrame:
    """
    Averaged absolute DSVC z-score per grid node.

    Args:
        delta_draws: m x D x P grid Delta draws

    Returns:
        DataFrame with columns g, x, y, zbar
    """
    d = np.asarray(delta_draws, dtype=float)
    sd = d.std(axis=0, ddof=1) if d.shape[0] > 1 else np.zeros(d.shape[1:])
    zbar = zscore_from_moments(d.mean(axis=0), sd, grid)
    return pd.DataFrame({"g": np.arange(grid.G), "x": grid.coords[:, 0], "y": grid.coords[:, 1], "zbar": zbar})


def node_level_slope_map(beta_draws: np.ndarray, delta_draws: np.ndarray, grid: GridSpec,
                         column: int, level: float = config.CREDIBLE_LEVEL):
    """
    Node-level slope of one connectivity column.

    theta_g = gamma_c + mean over neighbors of Delta_(g,g'),c per draw.
    Positive values indicate a barrier, negative a corridor.

    Args:
        beta_draws: m x P coefficient draws (already restricted to mapped draws)
        delta_draws: m x D x P grid Delta draws
        grid: Grid
        column: Design column of the class (p + c)
        level: Credible level

    Returns:
        Tuple of (per-node DataFrame, global summary dict)
    """
    b = np.asarray(beta_draws, dtype=float)
    if not 0 <= column < b.shape[1]:
        raise InvalidInputError(f"column {column} out of range for {b.shape[1]} coefficients")
    dyads = grid_dyads(grid)
    d = np.asarray(delta_draws, dtype=float)[:, :, column]
    deg = grid.degree()
    sums = np.zeros((d.shape[0], grid.G))
    np.add.at(sums, (slice(None), dyads.src), d)
    theta = b[:, column][:, None] + sums / deg
    tail = 0.5 * (1.0 - level)
    lower, upper = np.quantile(theta, [tail, 1.0 - tail], axis=0)
    table = pd.DataFrame({"g": np.arange(grid.G), "x": grid.coords[:, 0], "y": grid.coords[:, 1],
                          "mean": theta.mean(axis=0), "lower": lower, "upper": upper})
    global_theta = theta.mean(axis=1)
    summary = {
        "mean": float(global_theta.mean()),
        "prob_positive": float(np.mean(global_theta > 0)),
        "prob_negative": float(np.mean(global_theta < 0)),
    }
    return table, summary


def make_map(draws: Dict[str, np.ndarray], meta: Dict, node_coords: np.ndarray, idx: DyadIndex,
             grid: GridSpec, transform: DesignTransform, class_names: Sequence[str],
             max_draws: int = config.MAP_MAX_DRAWS,
             max_grid_dyads: int = config.MAP_MAX_GRID_DYADS,
             progress: bool = False) -> MapProducts:
    """
    Every map product for one chain.

    Args:
        draws: Chain draws
        meta: Chain metadata
        node_coords: Observed node coordinates
        idx: Observed dyad index
        grid: Target grid
        transform: Design transform of the fit
        class_names: Connectivity class names present in the fit, in design order

    Returns:
        MapProducts
    """
    fields = predict_latent_fields(draws, meta, node_coords, idx, grid, max_draws, max_grid_dyads,
                                   progress=progress)
    surface = dyadic_mean_surface(fields, draws["alpha"], draws["beta"], grid, transform)
    dyads = grid_dyads(grid)
    mu = pd.DataFrame({
        "g": dyads.src, "g_neighbor": dyads.dst, "direction": dyads.direction,
        "mu": surface.mean,
    })
    vectors = vector_field(surface.alpha_free_mean, grid)
    zbar = dsvc_zscore_map(fields.delta, grid)

    beta = np.asarray(draws["beta"])[fields.draw_index]
    p = beta.shape[1] - len(class_names)
    theta, theta_global = {}, {}
    for c, name in enumerate(class_names):
        table, summary = node_level_slope_map(beta, fields.delta, grid, p + c)
        theta[name] = table
        theta_global[name] = summary
    return MapProducts(mu=mu, vectors=vectors, zbar=zbar, theta=theta, theta_global=theta_global)
