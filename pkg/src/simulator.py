"""Synthetic datasets with known truth for the dyadic flow model."""

import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

import config
from covariance import KernelSpec, cholesky_psd, dyadic_covariance, node_correlation_matrix
from design import DesignMatrix, PathwayClass, build_dyadic_data
from dyads import DyadicResponse, DyadIndex, NodeSet, build_dyad_index
from errors import InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_BETA = (2.88, 3.64, 3.76, 4.35, 2.00, -1.30)
PATHWAY_KINDS = ("horizontal_barrier", "vertical_corridor")


@dataclass
class SimConfig:
    """Generating parameters. Defaults give 100 nodes, four covariates and both pathway classes.

    ``phi_eta=None`` uses max node distance / 5. ``active_factors`` keeps
    only the first k loading columns non-zero (None keeps all Q).
    """

    n: int = 100
    p: int = 4
    covariate_sd: float = 5.0
    alpha: float = 10.0
    beta: Tuple[float, ...] = DEFAULT_BETA
    sigma2: float = 5.0
    sigma2_eta: float = 5.0
    phi_eta: Optional[float] = None
    Q: int = 6
    tau: float = config.DEFAULT_TAU
    var_logphi: float = config.VAR_LOGPHI
    pathways: Tuple[str, ...] = PATHWAY_KINDS
    domain: Tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    active_factors: Optional[int] = None
    zero_eta: bool = False
    zero_factors: bool = False
    standardize_connectivity: bool = True

    def __post_init__(self):
        self.beta = tuple(float(b) for b in self.beta)
        if self.n < 4:
            raise InvalidInputError(f"n must be >= 4, got {self.n}")
        if self.Q < 1:
            raise InvalidInputError(f"Q must be >= 1, got {self.Q}")
        if self.p < 1:
            raise InvalidInputError(f"p must be >= 1, got {self.p}")
        if len(self.beta) != self.p + len(self.pathways):
            raise InvalidInputError(
                f"beta has {len(self.beta)} entries, expected p + classes = {self.p + len(self.pathways)}"
            )
        if self.sigma2 < 0 or self.sigma2_eta < 0:
            raise InvalidInputError("variances must be >= 0")
        if self.phi_eta is not None and not self.phi_eta > 0:
            raise InvalidInputError("phi_eta must be > 0")
        if self.active_factors is not None and not 0 <= self.active_factors <= self.Q:
            raise InvalidInputError("active_factors must lie in [0, Q]")
        for kind in self.pathways:
            if kind not in PATHWAY_KINDS:
                raise InvalidInputError(f"unknown pathway kind '{kind}'")
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise InvalidInputError(f"degenerate domain {self.domain}")


@dataclass
class SimTruth:
    """Every generating quantity plus the realized design and response."""

    config: SimConfig
    seed: int
    nodes: NodeSet
    idx: DyadIndex
    pathways: List[PathwayClass]
    design: DesignMatrix
    response: DyadicResponse
    alpha: float
    beta: np.ndarray
    sigma2: float
    sigma2_eta: float
    phi_eta: float
    eta: np.ndarray
    W: np.ndarray
    C_load: np.ndarray
    phi_q: np.ndarray
    delta: np.ndarray
    noise: np.ndarray
    extras: Dict = field(default_factory=dict)


def make_pathways(kind: str, domain: Tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0),
                  tau: float = config.DEFAULT_TAU) -> PathwayClass:
    """
    One straight feature spanning the domain through its center line.

    Args:
        kind: 'horizontal_barrier' or 'vertical_corridor'
        domain: (xmin, xmax, ymin, ymax)
        tau: Closeness decay scale

    Returns:
        PathwayClass with a single two-vertex polyline
    """
    x0, x1, y0, y1 = domain
    if kind == "horizontal_barrier":
        ym = 0.5 * (y0 + y1)
        line = np.array([[x0, ym], [x1, ym]])
    elif kind == "vertical_corridor":
        xm = 0.5 * (x0 + x1)
        line = np.array([[xm, y0], [xm, y1]])
    else:
        raise InvalidInputError(f"unknown pathway kind '{kind}'")
    return PathwayClass(name=kind, features=[line], tau=tau)


def _mvn(cov: np.ndarray, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    L, _ = cholesky_psd(cov)
    return np.sqrt(scale) * (L @ rng.standard_normal(cov.shape[0]))


def _half_cauchy(rng: np.random.Generator, size) -> np.ndarray:
    return np.abs(rng.standard_cauchy(size))


def simulate_dataset(cfg: SimConfig, seed: int = 0) -> SimTruth:
    """
    Generates one dataset from the dyadic model.

    Nodes are uniform over the domain, covariates N(0, covariate_sd^2 I)
    standardized and differenced, connectivity from the configured classes.
    eta uses the exponential kernel, factors the Matern 3/2 kernel on the
    dyadic covariance, loadings are horseshoe draws and Delta = W C' is
    column-centered.

    Args:
        cfg: Generating parameters
        seed: RNG seed

    Returns:
        SimTruth
    """
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = cfg.domain
    coords = np.column_stack([rng.uniform(x0, x1, cfg.n), rng.uniform(y0, y1, cfg.n)])
    X = rng.normal(0.0, cfg.covariate_sd, size=(cfg.n, cfg.p))
    ids = [f"n{k + 1:03d}" for k in range(cfg.n)]
    nodes = NodeSet(ids=ids, coords=coords, covariates=X,
                    covariate_names=[f"x{k + 1}" for k in range(cfg.p)])
    idx = build_dyad_index(cfg.n)
    pathways = [make_pathways(kind, cfg.domain, cfg.tau) for kind in cfg.pathways]

    placeholder = DyadicResponse(values=np.zeros(idx.N))
    data = build_dyadic_data(nodes, idx, placeholder, pathways,
                             standardize_connectivity=cfg.standardize_connectivity)
    Z = data.Z
    beta = np.asarray(cfg.beta)

    dist = pdist(coords)
    phi_eta = cfg.phi_eta if cfg.phi_eta is not None else float(dist.max() / 5.0)
    if cfg.zero_eta or cfg.sigma2_eta == 0:
        eta = np.zeros(cfg.n)
    else:
        R = node_correlation_matrix(coords, KernelSpec("exponential", phi_eta))
        eta = _mvn(R, rng, cfg.sigma2_eta)

    mu_log = float(np.log(np.median(dist)))
    log_lo, log_hi = float(np.log(dist[dist > 0].min())), float(np.log(dist.max()))
    phi_q = np.exp(np.clip(rng.normal(mu_log, np.sqrt(cfg.var_logphi), cfg.Q), log_lo, log_hi))

    P = Z.shape[1]
    W = np.zeros((idx.N, cfg.Q))
    C_load = np.zeros((P, cfg.Q))
    if not cfg.zero_factors:
        for q in range(cfg.Q):
            K = node_correlation_matrix(coords, KernelSpec("matern32", float(phi_q[q])))
            W[:, q] = _mvn(dyadic_covariance(K, idx).matrix, rng)
        lam = _half_cauchy(rng, (P, cfg.Q))
        xi = _half_cauchy(rng, cfg.Q)
        C_load = rng.standard_normal((P, cfg.Q)) * lam * xi
        active = cfg.Q if cfg.active_factors is None else cfg.active_factors
        C_load[:, active:] = 0.0
        W = W - W.mean(axis=0)
    delta = W @ C_load.T
    delta = delta - delta.mean(axis=0)

    noise = rng.normal(0.0, np.sqrt(cfg.sigma2), idx.N) if cfg.sigma2 > 0 else np.zeros(idx.N)
    y = response_from_truth(cfg.alpha, beta, Z, delta, eta, idx, noise)
    logger.info("simulated n=%d (N=%d), seed=%d", cfg.n, idx.N, seed)
    return SimTruth(
        config=cfg, seed=seed, nodes=nodes, idx=idx, pathways=pathways, design=data.design,
        response=DyadicResponse(values=y), alpha=cfg.alpha, beta=beta, sigma2=cfg.sigma2,
        sigma2_eta=cfg.sigma2_eta, phi_eta=phi_eta, eta=eta, W=W, C_load=C_load,
        phi_q=phi_q, delta=delta, noise=noise,
    )


def response_from_truth(alpha: float, beta: np.ndarray, Z: np.ndarray, delta: np.ndarray,
                        eta: np.ndarray, idx: DyadIndex, noise: np.ndarray) -> np.ndarray:
    """y = alpha + z'(beta + delta) + (eta_j - eta_i) + noise, in dyad order."""
    return alpha + Z @ beta + np.sum(Z * delta, axis=1) + (eta[idx.j] - eta[idx.i]) + noise


def regenerate_response(truth: SimTruth) -> np.ndarray:
    return response_from_truth(truth.alpha, truth.beta, truth.design.combined, truth.delta,
                               truth.eta, truth.idx, truth.noise)


def simulate_replicates(cfg: SimConfig, seeds: Sequence[int],
                        max_workers: int = config.MAX_WORKERS) -> Dict[int, SimTruth]:
    """Simulates independent replicates in a thread pool, keyed by seed."""
    results = {}
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = {executor.submit(simulate_dataset, cfg, s): s for s in seeds}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return {s: results[s] for s in seeds}


def truth_summary(truth: SimTruth) -> Dict:
    """Scalar and vector truths keyed the way the scorer looks them up."""
    out = {
        "seed": truth.seed,
        "alpha": truth.alpha,
        "sigma2": truth.sigma2,
        "sigma2_eta": truth.sigma2_eta,
        "phi_eta": truth.phi_eta,
        "beta_names": truth.design.names,
        "phi_q": truth.phi_q.tolist(),
        "eta": truth.eta.tolist(),
    }
    for name, b in zip(truth.design.names, truth.beta):
        out[f"beta[{name}]"] = float(b)
    out["beta"] = truth.beta.tolist()
    return out


def write_dataset(truth: SimTruth, out_dir) -> List[Path]:
    """
    Writes nodes.csv, pathways.json, responses.csv and truth.json.

    Returns:
        Written paths
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nodes = truth.nodes
    df = pd.DataFrame({"id": nodes.ids, "x": nodes.coords[:, 0], "y": nodes.coords[:, 1]})
    for k, name in enumerate(nodes.covariate_names):
        df[name] = nodes.covariates[:, k]
    nodes_path = out / config.NODES_FILE
    df.to_csv(nodes_path, index=False, float_format=config.FLOAT_FORMAT)

    pathways_path = out / config.PATHWAYS_FILE
    pathways_path.write_text(json.dumps({
        "classes": [
            {"name": pw.name, "tau": pw.tau, "features": [f.tolist() for f in pw.features]}
            for pw in truth.pathways
        ]
    }, indent=2))

    responses_path = out / config.RESPONSES_FILE
    ids = np.asarray(nodes.ids)
    pd.DataFrame({
        "id_i": ids[truth.idx.i],
        "id_j": ids[truth.idx.j],
        "y": truth.response.values,
    }).to_csv(responses_path, index=False, float_format=config.FLOAT_FORMAT)

    truth_path = out / config.TRUTH_FILE
    truth_path.write_text(json.dumps(truth_summary(truth), indent=2))
    return [nodes_path, pathways_path, responses_path, truth_path]
