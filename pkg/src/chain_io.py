"""Chain directories: CSV draws plus meta.json, lossless at 17 significant digits."""

import json
import logging
from pathlib import Path
from typing import Callable, Dict

import numpy as np
import pandas as pd

import config
from errors import ParseError, SchemaVersionError
from sampler import ChainOutput

logger = logging.getLogger(__name__)

DELTA_FILE = "delta_summary.csv"

# schema version -> function upgrading a meta dict by one version
MIGRATIONS: Dict[int, Callable[[Dict], Dict]] = {}


def _draw_file(key: str) -> str:
    return f"draws_{key}.csv"


def _columns(key: str, shape) -> list:
    if len(shape) == 1:
        return [key]
    flat = int(np.prod(shape[1:]))
    return [f"{key}_{k}" for k in range(flat)]


def save_chain(chain: ChainOutput, out_dir) -> Path:
    """
    Writes every draw block, the Delta summary and meta.json.

    Args:
        chain: Chain to persist
        out_dir: Target directory (created)

    Returns:
        The directory
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for key, values in chain.draws.items():
        arr = np.asarray(values, dtype=float)
        shapes[key] = list(arr.shape)
        flat = arr.reshape(arr.shape[0], int(np.prod(arr.shape[1:]))) if arr.ndim > 1 else arr[:, None]
        if flat.shape[1] == 0:
            continue
        pd.DataFrame(flat, columns=_columns(key, arr.shape)).to_csv(
            out / _draw_file(key), index=False, float_format=config.FLOAT_FORMAT
        )
    N, P = chain.delta_mean.shape
    summary = pd.DataFrame(
        np.hstack([chain.delta_mean, chain.delta_sd]),
        columns=[f"mean_{k}" for k in range(P)] + [f"sd_{k}" for k in range(P)],
    )
    if P:
        summary.to_csv(out / DELTA_FILE, index=False, float_format=config.FLOAT_FORMAT)
    meta = dict(chain.meta)
    meta["schema_version"] = config.SCHEMA_VERSION
    meta["version"] = config.VERSION
    meta["arrays"] = shapes
    meta["delta_shape"] = [N, P]
    (out / config.META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True))
    logger.info("saved chain (%d draws) to %s", chain.n_draws, out)
    return out


def _migrate(meta: Dict) -> Dict:
    found = int(meta.get("schema_version", -1))
    while found != config.SCHEMA_VERSION:
        step = MIGRATIONS.get(found)
        if step is None:
            raise SchemaVersionError(found, config.SCHEMA_VERSION)
        meta = step(meta)
        found = int(meta["schema_version"])
    return meta


def _read_block(path: Path, n_rows: int, n_cols: int) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(path, str(e)) from e
    if df.shape[1] != n_cols:
        raise ParseError(path, f"expected {n_cols} columns, found {df.shape[1]}")
    if df.shape[0] == 0:
        if n_rows:
            raise ParseError(path, f"expected {n_rows} rows, found 0", row=2)
        return np.zeros((0, n_cols))
    values = df.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = np.isnan(values).any(axis=1)
    if bad.any():
        raise ParseError(path, "short or non-numeric row", row=int(np.flatnonzero(bad)[0]) + 2)
    if values.shape[0] != n_rows:
        raise ParseError(path, f"expected {n_rows} rows, found {values.shape[0]}", row=values.shape[0] + 2)
    return values


def load_chain(chain_dir) -> ChainOutput:
    """
    Reads a directory written by ``save_chain``.

    Raises:
        SchemaVersionError: The stored schema cannot be migrated
        ParseError: A draw file is truncated or malformed
    """
    d = Path(chain_dir)
    meta_path = d / config.META_FILE
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(meta_path, str(e), row=e.lineno) from e
    meta = _migrate(meta)
    draws = {}
    for key, shape in meta["arrays"].items():
        flat_cols = int(np.prod(shape[1:])) if len(shape) > 1 else 1
        if flat_cols == 0:
            draws[key] = np.zeros(shape)
            continue
        values = _read_block(d / _draw_file(key), shape[0], flat_cols)
        draws[key] = values.reshape(shape) if len(shape) > 1 else values[:, 0]
    N, P = meta["delta_shape"]
    summary = _read_block(d / DELTA_FILE, N, 2 * P) if P else np.zeros((N, 0))
    return ChainOutput(draws=draws, meta=meta, delta_mean=summary[:, :P], delta_sd=summary[:, P:])
