"""Node and dyad bookkeeping, dyadic responses, node-to-dyad maps."""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from errors import InvalidInputError


@dataclass
class NodeSet:
    """Spatially referenced nodes with their covariates.

    Attributes:
        ids: Node identifiers as they appear in input files
        coords: n x 2 planar coordinates
        covariates: n x p_raw covariate matrix (may have zero columns)
        covariate_names: Column names for ``covariates``
    """

    ids: List[str]
    coords: np.ndarray
    covariates: np.ndarray
    covariate_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        n = self.coords.shape[0]
        cov = np.asarray(self.covariates, dtype=float)
        self.covariates = cov.reshape(n, -1) if cov.size else np.zeros((n, 0))
        self.ids = [str(i) for i in self.ids]
        if len(self.ids) != n:
            raise InvalidInputError(f"{len(self.ids)} ids for {n} coordinates")
        if len(set(self.ids)) != n:
            raise InvalidInputError("node ids must be unique")
        if not np.all(np.isfinite(self.coords)):
            raise InvalidInputError("node coordinates must be finite")
        if not self.covariate_names:
            self.covariate_names = [f"x{k + 1}" for k in range(self.covariates.shape[1])]

    @property
    def n(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class DyadIndex:
    """Ordered i<j dyad enumeration with its signed incidence matrix.

    Attributes:
        n: Node count
        i: Source (lower) node index per dyad, 0-based
        j: Destination (higher) node index per dyad, 0-based
        incidence: Sparse N x n matrix, row (i, j) has -1 at i and +1 at j
    """

    n: int
    i: np.ndarray
    j: np.ndarray
    incidence: sp.csr_matrix

    @property
    def N(self) -> int:
        return self.i.shape[0]

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return list(zip(self.i.tolist(), self.j.tolist()))

    def labels(self, ids: Optional[List[str]] = None) -> List[str]:
        """Dyad labels ``"<id_i>-<id_j>"`` in dyad order."""
        if ids is None:
            ids = [str(k + 1) for k in range(self.n)]
        return [f"{ids[a]}-{ids[b]}" for a, b in zip(self.i, self.j)]


@dataclass
class DyadicResponse:
    """Logit-scale dyadic responses in dyad order.

    ``observed`` marks dyads that enter the likelihood; dyads with no
    comparable loci are kept in the index but excluded.
    """

    values: np.ndarray
    mismatches: Optional[np.ndarray] = None
    comparable: Optional[np.ndarray] = None
    observed: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.observed is None:
            self.observed = np.isfinite(self.values)
        self.observed = np.asarray(self.observed, dtype=bool)
        if not np.all(np.isfinite(self.values[self.observed])):
            raise InvalidInputError("observed dyadic responses must be finite")


def build_dyad_index(n: int) -> DyadIndex:
    """
    Enumerates every unordered node pair once, oriented i<j.

    Args:
        n: Number of nodes

    Returns:
        DyadIndex with pairs in lexicographic order
    """
    if int(n) != n or n < 2:
        raise InvalidInputError(f"need at least 2 nodes, got {n}")
    n = int(n)
    i, j = np.triu_indices(n, k=1)
    N = i.shape[0]
    rows = np.repeat(np.arange(N), 2)
    cols = np.column_stack([i, j]).ravel()
    vals = np.tile([-1.0, 1.0], N)
    incidence = sp.csr_matrix((vals, (rows, cols)), shape=(N, n))
    return DyadIndex(n=n, i=i, j=j, incidence=incidence)


def dyadic_response(d, M):
    """
    Logit of the continuity-corrected mismatch proportion (d + 0.5) / (M + 1).

    Computed as log(d + 0.5) - log(M - d + 0.5) so that the value for
    (M - d, M) is the exact negation of the value for (d, M).

    Args:
        d: Discordant locus count(s)
        M: Comparable locus count(s)

    Returns:
        Float or array of logit values
    """
    d_arr = np.asarray(d, dtype=float)
    M_arr = np.asarray(M, dtype=float)
    if np.any(M_arr < 1):
        raise InvalidInputError("comparable count M must be >= 1")
    if np.any(d_arr < 0) or np.any(d_arr > M_arr):
        raise InvalidInputError("mismatch count d must satisfy 0 <= d <= M")
    out = np.log(d_arr + 0.5) - np.log(M_arr - d_arr + 0.5)
    return float(out) if out.ndim == 0 else out


def pairwise_difference(node_values: np.ndarray, idx: DyadIndex) -> np.ndarray:
    """
    Signed dyad differences value_j - value_i.

    Args:
        node_values: Length-n vector or n x p matrix
        idx: Dyad index

    Returns:
        Length-N vector or N x p matrix in dyad order
    """
    values = np.asarray(node_values, dtype=float)
    if values.shape[0] != idx.n:
        raise InvalidInputError(
            f"expected {idx.n} node values, got {values.shape[0]}"
        )
    return values[idx.j] - values[idx.i]


def node_distances(coords: np.ndarray) -> np.ndarray:
    """Dense Euclidean distance matrix between nodes."""
    coords = np.asarray(coords, dtype=float)
    return cdist(coords, coords)


def response_from_counts(d: np.ndarray, M: np.ndarray) -> DyadicResponse:
    """Builds responses from per-dyad counts; dyads with M = 0 are unobserved."""
    d = np.asarray(d)
    M = np.asarray(M)
    observed = M >= 1
    values = np.full(d.shape, np.nan)
    values[observed] = dyadic_response(d[observed], M[observed])
    return DyadicResponse(values=values, mismatches=d, comparable=M, observed=observed)
