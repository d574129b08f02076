"""Module for loading node, pathway, response and grid files."""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

import config
from design import PathwayClass
from dyads import DyadIndex, DyadicResponse, NodeSet, response_from_counts
from errors import InvalidInputError, ParseError

logger = logging.getLogger(__name__)


def _read_csv(path, **kwargs) -> pd.DataFrame:
    path = Path(path)
    try:
        return pd.read_csv(path, **kwargs)
    except FileNotFoundError:
        raise
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(path, str(e)) from e


def _numeric_block(df: pd.DataFrame, columns: List[str], path) -> np.ndarray:
    values = df[columns].apply(pd.to_numeric, errors="coerce")
    bad = values.isna().any(axis=1).to_numpy()
    if bad.any():
        # header is row 1
        raise ParseError(path, f"missing or non-numeric value in {columns}", row=int(np.flatnonzero(bad)[0]) + 2)
    return values.to_numpy(dtype=float)


def load_nodes(path) -> NodeSet:
    """
    Reads nodes.csv: id, x, y, then any number of covariate columns.

    Args:
        path: CSV path

    Returns:
        NodeSet in file order
    """
    df = _read_csv(path, dtype={"id": str})
    for col in ("id", "x", "y"):
        if col not in df.columns:
            raise ParseError(path, f"missing column '{col}'")
    cov_names = [c for c in df.columns if c not in ("id", "x", "y")]
    coords = _numeric_block(df, ["x", "y"], path)
    covariates = _numeric_block(df, cov_names, path) if cov_names else np.zeros((len(df), 0))
    return NodeSet(ids=df["id"].tolist(), coords=coords, covariates=covariates, covariate_names=cov_names)


def load_pathways(path, tau_overrides: Optional[Dict[str, float]] = None) -> List[PathwayClass]:
    """
    Reads pathways.json: {"classes": [{"name", "tau", "features": [[[x, y], ...], ...]}]}.

    Args:
        path: JSON path
        tau_overrides: Per-class tau replacing the file value

    Returns:
        Pathway classes in file order
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(path, str(e), row=e.lineno) from e
    tau_overrides = tau_overrides or {}
    classes = []
    for entry in payload.get("classes", []):
        name = str(entry["name"])
        tau = float(tau_overrides.get(name, entry.get("tau", config.DEFAULT_TAU)))
        classes.append(PathwayClass(name=name, features=entry["features"], tau=tau))
    return classes


def _pair_positions(ids_i, ids_j, nodes: NodeSet, idx: DyadIndex, path) -> np.ndarray:
    pos = {node_id: k for k, node_id in enumerate(nodes.ids)}
    rows = []
    for r, (a, b) in enumerate(zip(ids_i, ids_j)):
        if a not in pos or b not in pos:
            raise ParseError(path, f"unknown node id in pair ({a}, {b})", row=r + 2)
        i, j = sorted((pos[a], pos[b]))
        if i == j:
            raise ParseError(path, f"self pair ({a}, {b})", row=r + 2)
        # index of (i, j) in triu order
        rows.append(i * idx.n - i * (i + 1) // 2 + (j - i - 1))
    return np.asarray(rows, dtype=int)


def load_responses(path, nodes: NodeSet, idx: DyadIndex) -> DyadicResponse:
    """
    Reads responses.csv (id_i, id_j, y). Pairs absent from the file are unobserved.

    The response is antisymmetric in the pair order; a row given as (j, i)
    is negated onto the i<j orientation.
    """
    df = _read_csv(path, dtype={"id_i": str, "id_j": str})
    for col in ("id_i", "id_j", "y"):
        if col not in df.columns:
            raise ParseError(path, f"missing column '{col}'")
    y = _numeric_block(df, ["y"], path)[:, 0]
    rows = _pair_positions(df["id_i"], df["id_j"], nodes, idx, path)
    pos = {node_id: k for k, node_id in enumerate(nodes.ids)}
    flip = np.array([pos[a] > pos[b] for a, b in zip(df["id_i"], df["id_j"])], dtype=bool)
    values = np.full(idx.N, np.nan)
    values[rows] = np.where(flip, -y, y)
    return DyadicResponse(values=values)


def _square_matrix(path, nodes: NodeSet) -> np.ndarray:
    df = _read_csv(path, dtype={"id": str})
    if "id" not in df.columns:
        raise ParseError(path, "missing column 'id'")
    df = df.set_index("id")
    df.columns = [str(c) for c in df.columns]
    missing = [i for i in nodes.ids if i not in df.index or i not in df.columns]
    if missing:
        raise ParseError(path, f"node id(s) {missing[:5]} absent from matrix")
    block = df.loc[nodes.ids, nodes.ids].apply(pd.to_numeric, errors="coerce")
    bad = block.isna().any(axis=1).to_numpy()
    if bad.any():
        row = int(df.index.get_loc(nodes.ids[int(np.flatnonzero(bad)[0])])) + 2
        raise ParseError(path, "missing or non-numeric entry", row=row)
    return block.to_numpy(dtype=float)


def load_gdm(path, nodes: NodeSet, idx: DyadIndex, comparable_path=None,
             comparable_loci: int = config.DEFAULT_COMPARABLE_LOCI) -> DyadicResponse:
    """
    Builds responses from a mismatch-count matrix (gdm.csv).

    Comparable counts come from comparable.csv when given, else the constant
    ``comparable_loci``. Pairs with no comparable locus are unobserved.
    """
    d = _square_matrix(path, nodes)
    if not np.allclose(d, d.T):
        raise ParseError(path, "mismatch matrix is not symmetric")
    if comparable_path is not None and Path(comparable_path).exists():
        M = _square_matrix(comparable_path, nodes)
    else:
        M = np.full_like(d, float(comparable_loci))
    if np.any(d > M):
        raise InvalidInputError("mismatch count exceeds comparable count")
    return response_from_counts(d[idx.i, idx.j], M[idx.i, idx.j])


def load_grid_nodes(path, covariate_names: Optional[List[str]] = None):
    """
    Reads grid_nodes.csv (id, x, y, covariates) laid out on a regular lattice.

    Rows are reordered to lattice order g = iy * nx + ix.

    Returns:
        Tuple of (bbox, nx, ny, covariates or None)
    """
    df = _read_csv(path, dtype={"id": str})
    coords = _numeric_block(df, ["x", "y"], path)
    xs = np.unique(coords[:, 0])
    ys = np.unique(coords[:, 1])
    nx, ny = xs.size, ys.size
    if nx * ny != len(df):
        raise ParseError(path, f"{len(df)} rows do not form a {nx} x {ny} lattice")
    ix = np.searchsorted(xs, coords[:, 0])
    iy = np.searchsorted(ys, coords[:, 1])
    order = np.argsort(iy * nx + ix, kind="stable")
    names = covariate_names if covariate_names is not None else [c for c in df.columns if c not in ("id", "x", "y")]
    missing = [c for c in names if c not in df.columns]
    if missing:
        raise InvalidInputError(f"grid nodes lack covariate column(s) {missing}")
    covariates = _numeric_block(df, names, path)[order] if names else None
    bbox = (float(xs[0]), float(xs[-1]), float(ys[0]), float(ys[-1]))
    return bbox, nx, ny, covariates


def load_truth(path) -> Dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(path, str(e), row=e.lineno) from e
