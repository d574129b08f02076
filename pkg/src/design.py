"""Dyadic design: environmental differences, RBF basis, connectivity covariates."""

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.cluster import KMeans

import config
from dyads import DyadIndex, DyadicResponse, NodeSet, pairwise_difference
from errors import DegenerateCentersError, InvalidInputError

logger = logging.getLogger(__name__)


@dataclass
class PathwayClass:
    """A class of linear landscape features (roads, rivers, ...).

    Attributes:
        name: Class label
        features: Polylines, each an m x 2 array of vertices (m >= 1)
        tau: Exponential decay scale for closeness, in coordinate units
    """

    name: str
    features: List[np.ndarray]
    tau: float = config.DEFAULT_TAU

    def __post_init__(self):
        self.features = [np.asarray(f, dtype=float).reshape(-1, 2) for f in self.features]
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise InvalidInputError(f"pathway class '{self.name}': tau must be > 0")
        for f in self.features:
            if f.shape[0] < 1:
                raise InvalidInputError(f"pathway class '{self.name}' has an empty feature")

    @property
    def n_features(self) -> int:
        return len(self.features)


@dataclass(frozen=True)
class RbfSpec:
    centers: np.ndarray
    bandwidth: float

    def __post_init__(self):
        if np.asarray(self.centers).ndim != 2 or np.asarray(self.centers).shape[0] < 1:
            raise InvalidInputError("RBF spec needs at least one center")
        if not self.bandwidth > 0:
            raise InvalidInputError(f"RBF bandwidth must be > 0, got {self.bandwidth}")


@dataclass
class DesignMatrix:
    """Assembled dyadic design rows z_ij = [env | conn].

    ``standardization`` holds the per-column means and scales applied to
    the connectivity block (empty when it was left raw).
    """

    env_block: np.ndarray
    conn_block: np.ndarray
    combined: np.ndarray
    standardization: Dict[str, np.ndarray] = field(default_factory=dict)
    env_names: List[str] = field(default_factory=list)
    conn_names: List[str] = field(default_factory=list)

    @property
    def names(self) -> List[str]:
        return list(self.env_names) + list(self.conn_names)

    @property
    def p(self) -> int:
        return self.env_block.shape[1]

    @property
    def C(self) -> int:
        return self.conn_block.shape[1]


@dataclass
class DesignTransform:
    """Everything needed to rebuild design rows for new node pairs.

    Used to map fitted coefficients onto grid dyads with the same covariate
    standardization, RBF basis and connectivity scaling as the fit.
    """

    node_means: np.ndarray
    node_scales: np.ndarray
    rbf: Optional[RbfSpec]
    pathways: List[PathwayClass]
    conn_means: Optional[np.ndarray] = None
    conn_scales: Optional[np.ndarray] = None

    def env_rows(self, x_src: np.ndarray, x_dst: np.ndarray) -> np.ndarray:
        """Environmental design rows for directed pairs of raw covariate rows."""
        zs = (np.asarray(x_src, dtype=float) - self.node_means) / self.node_scales
        zd = (np.asarray(x_dst, dtype=float) - self.node_means) / self.node_scales
        diffs = zd - zs
        return rbf_basis(diffs, self.rbf) if self.rbf is not None else diffs

    def conn_rows(self, coords_src: np.ndarray, coords_dst: np.ndarray) -> np.ndarray:
        """Connectivity design rows for directed pairs of coordinates."""
        cols = []
        for pathway in self.pathways:
            v_src = closeness_scores(coords_src, pathway)
            v_dst = closeness_scores(coords_dst, pathway)
            cols.append(np.sum(v_src * v_dst, axis=1) / pathway.n_features)
        if not cols:
            return np.zeros((np.asarray(coords_src).shape[0], 0))
        kappa = np.column_stack(cols)
        if self.conn_means is not None:
            kappa = (kappa - self.conn_means) / self.conn_scales
        return kappa


@dataclass
class DyadicData:
    """Responses and design for one fit, in dyad order.

    ``weights`` is 1 for dyads entering the likelihood and 0 otherwise; an
    all-zero vector gives a prior-only run.
    """

    idx: DyadIndex
    nodes: NodeSet
    response: DyadicResponse
    design: DesignMatrix
    transform: Optional[DesignTransform] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.weights is None:
            self.weights = self.response.observed.astype(float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.design.combined.shape[0] != self.idx.N:
            raise InvalidInputError("design rows do not match dyad count")
        if self.response.values.shape[0] != self.idx.N:
            raise InvalidInputError("response length does not match dyad count")

    @property
    def y(self) -> np.ndarray:
        # unobserved entries are zeroed; their weight is zero
        return np.where(self.weights > 0, self.response.values, 0.0)

    @property
    def Z(self) -> np.ndarray:
        return self.design.combined


def standardize_columns(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Centers each column and scales it to unit sample standard deviation.

    Constant columns become all-zero with scale 1 (a warning is issued).

    Args:
        X: n x p matrix

    Returns:
        Tuple of (standardized X, column means, column scales)
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    means = X.mean(axis=0) if X.shape[0] else np.zeros(X.shape[1])
    scales = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
    constant = ~(scales > 0)
    if np.any(constant):
        warnings.warn(f"constant column(s) {np.flatnonzero(constant).tolist()} set to zero")
        logger.warning("standardize: %d constant column(s)", int(constant.sum()))
        scales = np.where(constant, 1.0, scales)
    return (X - means) / scales, means, scales


def point_polyline_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """
    Minimum Euclidean distance from each point to a polyline.

    Args:
        points: n x 2 coordinates
        polyline: m x 2 vertices; a single vertex is treated as a point feature

    Returns:
        Length-n distances
    """
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    V = np.asarray(polyline, dtype=float).reshape(-1, 2)
    if V.shape[0] == 1:
        return cdist(P, V)[:, 0]
    A = V[:-1]
    seg = V[1:] - A
    seg_len2 = np.sum(seg ** 2, axis=1)
    rel = P[:, None, :] - A[None, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.sum(rel * seg[None, :, :], axis=2) / seg_len2[None, :]
    t = np.where(seg_len2[None, :] > 0, np.clip(t, 0.0, 1.0), 0.0)
    foot = A[None, :, :] + t[:, :, None] * seg[None, :, :]
    d = np.sqrt(np.sum((P[:, None, :] - foot) ** 2, axis=2))
    return d.min(axis=1)


def closeness_scores(coords: np.ndarray, pathway: PathwayClass) -> np.ndarray:
    """
    Exponential-decay closeness of each node to each feature of a class.

    Args:
        coords: n x 2 node coordinates
        pathway: Pathway class

    Returns:
        n x n_c matrix with entries exp(-distance / tau) in (0, 1]
    """
    if pathway.n_features == 0:
        raise InvalidInputError(f"pathway class '{pathway.name}' has no features")
    d = np.column_stack([point_polyline_distance(coords, f) for f in pathway.features])
    return np.exp(-d / pathway.tau)


def shared_segment_covariates(V: np.ndarray, idx: DyadIndex) -> np.ndarray:
    """
    Normalized shared-segment scores (V V')_ij / n_c in dyad order.

    Args:
        V: n x n_c closeness scores
        idx: Dyad index

    Returns:
        Length-N connectivity covariate
    """
    V = np.asarray(V, dtype=float)
    return np.sum(V[idx.i] * V[idx.j], axis=1) / V.shape[1]


def rbf_basis(diffs: np.ndarray, spec: RbfSpec) -> np.ndarray:
    """
    Gaussian radial basis expansion of difference rows.

    Args:
        diffs: N x p_raw matrix
        spec: Centers (k x p_raw) and bandwidth

    Returns:
        N x k matrix exp(-||diff - center||^2 / (2 bandwidth^2))
    """
    if not spec.bandwidth > 0:
        raise InvalidInputError("RBF bandwidth must be > 0")
    D = np.atleast_2d(np.asarray(diffs, dtype=float))
    sq = cdist(D, np.asarray(spec.centers, dtype=float), metric="sqeuclidean")
    return np.exp(-sq / (2.0 * spec.bandwidth ** 2))


def _sort_rows(A: np.ndarray) -> np.ndarray:
    order = np.lexsort(A.T[::-1])
    return A[order]


def fit_rbf_spec(diffs: np.ndarray, k: int, seed: int = 0) -> RbfSpec:
    """
    Chooses RBF centers by k-means and sets the bandwidth.

    Rows are sorted before clustering so the result does not depend on row
    order; centers come back in lexicographic order. The bandwidth is the
    median inter-center distance (k > 1) or the sd of distances to the single
    center (k = 1).

    Args:
        diffs: N x p_raw difference rows
        k: Number of centers
        seed: k-means++ seed

    Returns:
        RbfSpec
    """
    X = np.atleast_2d(np.asarray(diffs, dtype=float))
    if k < 1 or k > X.shape[0]:
        raise InvalidInputError(f"need 1 <= k <= N, got k={k}, N={X.shape[0]}")
    if np.all(np.ptp(X, axis=0) == 0):
        raise DegenerateCentersError("all difference rows are identical")
    X = _sort_rows(X)
    if k == 1:
        center = X.mean(axis=0, keepdims=True)
        bandwidth = float(np.std(np.linalg.norm(X - center, axis=1), ddof=1))
        if not bandwidth > 0:
            raise DegenerateCentersError("single-center bandwidth is zero")
        return RbfSpec(centers=center, bandwidth=bandwidth)
    km = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=1,
        max_iter=config.KMEANS_MAX_ITER,
        tol=config.KMEANS_TOL,
        random_state=seed,
    ).fit(X)
    centers = _sort_rows(km.cluster_centers_)
    bandwidth = float(np.median(pdist(centers)))
    if not bandwidth > 0:
        raise DegenerateCentersError("k-means returned coincident centers")
    return RbfSpec(centers=centers, bandwidth=bandwidth)


def assemble_design(env: np.ndarray, conn: np.ndarray,
                    standardize_connectivity: bool = True,
                    env_names: Optional[Sequence[str]] = None,
                    conn_names: Optional[Sequence[str]] = None) -> DesignMatrix:
    """
    Concatenates environmental and connectivity blocks into z_ij rows.

    Args:
        env: N x p environmental block
        conn: N x C connectivity block
        standardize_connectivity: Standardize the connectivity columns

    Returns:
        DesignMatrix
    """
    env = np.asarray(env, dtype=float)
    conn = np.asarray(conn, dtype=float)
    if env.ndim == 1:
        env = env[:, None]
    if conn.ndim == 1:
        conn = conn[:, None]
    if env.shape[0] != conn.shape[0]:
        raise InvalidInputError(f"row mismatch: env {env.shape[0]} vs conn {conn.shape[0]}")
    standardization = {}
    if standardize_connectivity and conn.shape[1]:
        conn, means, scales = standardize_columns(conn)
        standardization = {"conn_means": means, "conn_scales": scales}
    combined = np.hstack([env, conn])
    if not np.all(np.isfinite(combined)):
        raise InvalidInputError("design contains non-finite entries")
    return DesignMatrix(
        env_block=env,
        conn_block=conn,
        combined=combined,
        standardization=standardization,
        env_names=list(env_names) if env_names is not None else [f"env{k + 1}" for k in range(env.shape[1])],
        conn_names=list(conn_names) if conn_names is not None else [f"conn{k + 1}" for k in range(conn.shape[1])],
    )


def build_dyadic_data(nodes: NodeSet, idx: DyadIndex, response: DyadicResponse,
                      pathways: Sequence[PathwayClass] = (),
                      rbf_centers: int = 0, rbf_seed: int = 0,
                      standardize_connectivity: bool = True) -> DyadicData:
    """
    Full design pipeline from nodes and pathways.

    Node covariates are standardized, differenced over dyads and optionally
    RBF-expanded; each pathway class contributes one shared-segment column.

    Args:
        nodes: Node set with raw covariates
        idx: Dyad index over the nodes
        response: Dyadic responses
        pathways: Pathway classes (may be empty)
        rbf_centers: Number of RBF centers, 0 keeps raw differences
        rbf_seed: Seed for center selection
        standardize_connectivity: Standardize connectivity columns

    Returns:
        DyadicData with a DesignTransform for mapping
    """
    x_std, node_means, node_scales = standardize_columns(nodes.covariates)
    diffs = pairwise_difference(x_std, idx)
    rbf = None
    if rbf_centers and diffs.shape[1]:
        rbf = fit_rbf_spec(diffs, rbf_centers, rbf_seed)
        env = rbf_basis(diffs, rbf)
        env_names = [f"rbf{k + 1}" for k in range(env.shape[1])]
    else:
        env = diffs
        env_names = list(nodes.covariate_names)

    conn_cols = [shared_segment_covariates(closeness_scores(nodes.coords, pw), idx) for pw in pathways]
    conn = np.column_stack(conn_cols) if conn_cols else np.zeros((idx.N, 0))
    design = assemble_design(
        env, conn, standardize_connectivity,
        env_names=env_names, conn_names=[pw.name for pw in pathways],
    )
    transform = DesignTransform(
        node_means=node_means,
        node_scales=node_scales,
        rbf=rbf,
        pathways=list(pathways),
        conn_means=design.standardization.get("conn_means"),
        conn_scales=design.standardization.get("conn_scales"),
    )
    return DyadicData(idx=idx, nodes=nodes, response=response, design=design, transform=transform)


def select_variant(data: DyadicData, variant: str) -> Tuple[DyadicData, bool]:
    """
    Restricts a full-design dataset to one model variant.

    Args:
        data: Dataset built with every connectivity class
        variant: One of config.MODEL_VARIANTS

    Returns:
        Tuple of (dataset for the variant, whether latent factors are used)
    """
    if variant not in config.MODEL_VARIANTS:
        raise InvalidInputError(f"unknown model variant '{variant}'")
    use_conn, use_factors = config.MODEL_VARIANTS[variant]
    if use_conn:
        return data, use_factors
    d = data.design
    design = DesignMatrix(
        env_block=d.env_block,
        conn_block=np.zeros((d.env_block.shape[0], 0)),
        combined=d.env_block.copy(),
        standardization={},
        env_names=list(d.env_names),
        conn_names=[],
    )
    transform = None
    if data.transform is not None:
        transform = replace(data.transform, pathways=[], conn_means=None, conn_scales=None)
    return replace(data, design=design, transform=transform), use_factors
