"""Command-line entry point: simulate, ingest, fit, score and map."""

import argparse
import hashlib
import json
import logging
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor, as_completed
from importlib import metadata
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

import config
from chain_io import load_chain, save_chain
from data_loader import load_gdm, load_grid_nodes, load_nodes, load_pathways, load_responses, load_truth
from design import DyadicData, build_dyadic_data, select_variant
from dyads import DyadicResponse, build_dyad_index
from errors import ConfigError, SamplerError, exit_code_for
from evaluation import score_chains
from genotypes import ingest_genotypes, load_genotypes, write_dissimilarity
from mapping import build_grid, make_map
from priors import make_prior
from sampler import ChainOutput, Schedule, run_chain
from settings import RunConfig, load_config
from simulator import SimConfig, simulate_dataset, write_dataset

logger = logging.getLogger("dyadflow")

SUBCOMMANDS = ("simulate", "ingest", "fit", "score", "map")
VERSIONED_PACKAGES = ("numpy", "scipy", "pandas", "scikit-learn", "pydantic", "PyYAML")


def _banner(title: str):
    print(f"\n{'='*70}")
    print(title)
    print(f"{'='*70}")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _package_versions() -> Dict[str, str]:
    versions = {"dyadflow": config.VERSION}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def build_manifest(cfg: RunConfig, subcommand: str) -> Dict:
    """Inputs hashes, seed, resolved config and versions. No timestamps."""
    inputs = {}
    p = cfg.paths
    for label in ("nodes", "gdm", "comparable", "responses", "pathways", "genotypes", "grid_nodes", "truth"):
        value = getattr(p, label)
        if value and Path(value).is_file():
            inputs[label] = _sha256(value)
    for k, chain in enumerate(p.chains):
        meta = Path(chain) / config.META_FILE
        if meta.is_file():
            inputs[f"chains[{k}]"] = _sha256(meta)
    resolved = cfg.model_dump(mode="json")
    resolved["paths"].pop("out", None)
    return {
        "subcommand": subcommand,
        "seed": cfg.seed,
        "inputs": inputs,
        "config": resolved,
        "versions": _package_versions(),
        "schema_version": config.SCHEMA_VERSION,
    }


class StagedOutput:
    """Writes into a sibling temp dir and moves results into place only on success."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.stage: Optional[Path] = None

    def __enter__(self) -> Path:
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out.parent))
        return self.stage

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.out.mkdir(parents=True, exist_ok=True)
                for item in sorted(self.stage.iterdir()):
                    target = self.out / item.name
                    if target.is_dir():
                        shutil.rmtree(target)
                    elif target.exists():
                        target.unlink()
                    shutil.move(str(item), str(target))
        finally:
            shutil.rmtree(self.stage, ignore_errors=True)
        return False


def _write_manifest(stage: Path, cfg: RunConfig, subcommand: str):
    (stage / config.MANIFEST_FILE).write_text(json.dumps(build_manifest(cfg, subcommand), indent=2, sort_keys=True))


def load_dataset(cfg: RunConfig) -> DyadicData:
    """Nodes, responses and pathways into a full-design dataset."""
    p = cfg.paths
    nodes = load_nodes(p.nodes)
    idx = build_dyad_index(nodes.n)
    if p.responses:
        response = load_responses(p.responses, nodes, idx)
    else:
        response = load_gdm(p.gdm, nodes, idx, comparable_path=p.comparable,
                            comparable_loci=cfg.design.comparable_loci)
    pathways = load_pathways(p.pathways, cfg.design.tau) if p.pathways else []
    return build_dyadic_data(
        nodes, idx, response, pathways,
        rbf_centers=cfg.design.rbf_centers, rbf_seed=cfg.design.rbf_seed,
        standardize_connectivity=cfg.design.standardize_connectivity,
    )


def run_simulate(cfg: RunConfig) -> int:
    s = cfg.simulate
    sim_cfg = SimConfig(n=s.n, p=s.p, Q=s.Q, alpha=s.alpha, beta=tuple(s.beta), sigma2=s.sigma2,
                        sigma2_eta=s.sigma2_eta, phi_eta=s.phi_eta, tau=s.tau,
                        active_factors=s.active_factors,
                        standardize_connectivity=s.standardize_connectivity)
    truth = simulate_dataset(sim_cfg, cfg.seed)
    with StagedOutput(cfg.paths.out) as stage:
        write_dataset(truth, stage)
        _write_manifest(stage, cfg, "simulate")
    _banner("Simulation complete")
    print(f"Nodes: {truth.nodes.n}   Dyads: {truth.idx.N}   Design columns: {truth.design.combined.shape[1]}")
    print(f"Output: {cfg.paths.out}")
    return 0


def run_ingest(cfg: RunConfig) -> int:
    table = load_genotypes(cfg.paths.genotypes)
    result = ingest_genotypes(table, cfg.ingest.per_chromosome, cfg.seed, cfg.ingest.allele_distance)
    with StagedOutput(cfg.paths.out) as stage:
        write_dissimilarity(result, stage)
        _write_manifest(stage, cfg, "ingest")
    _banner("Genotype ingestion complete")
    print(f"Individuals: {len(result.individuals)}   Loci retained: {len(result.loci)}")
    print(f"Pairs without comparable loci: {len(result.flagged)}")
    return 0


def fit_chain_task(data: DyadicData, cfg: RunConfig, chain_index: int) -> Tuple[int, ChainOutput]:
    prior = make_prior(data.nodes.coords, cfg.prior.Q, cfg.prior.var_logphi, cfg.prior.overrides())
    schedule = Schedule(
        iterations=cfg.schedule.iterations,
        burnin=cfg.schedule.burnin,
        thin=cfg.schedule.thin,
        seed=cfg.seed + chain_index,
        model_variant=cfg.model.variant,
        save_factor_draws=cfg.schedule.save_factor_draws,
        factor_slice=cfg.schedule.factor_slice,
        progress=cfg.schedule.progress and sys.stderr.isatty(),
    )
    return chain_index, run_chain(data, prior, schedule)


def run_chains(data: DyadicData, cfg: RunConfig) -> List[ChainOutput]:
    """
    Runs the configured number of chains in a thread pool.

    Raises:
        SamplerError: The first failed chain, after every chain finished
    """
    chains: Dict[int, ChainOutput] = {}
    errors = []
    with ThreadPoolExecutor(max_workers=min(cfg.workers, cfg.schedule.chains)) as executor:
        futures = {executor.submit(fit_chain_task, data, cfg, k): k for k in range(cfg.schedule.chains)}
        for future in as_completed(futures):
            k = futures[future]
            try:
                _, chain = future.result()
                chains[k] = chain
            except Exception as e:
                errors.append((k, e))
                logger.error("chain %d failed: %s", k + 1, e)
    if errors:
        k, first = sorted(errors, key=lambda item: item[0])[0]
        if isinstance(first, SamplerError):
            raise first
        raise SamplerError(0, f"chain{k + 1}", first) from first
    return [chains[k] for k in range(cfg.schedule.chains)]


def run_fit(cfg: RunConfig) -> int:
    data = load_dataset(cfg)
    chains = run_chains(data, cfg)
    with StagedOutput(cfg.paths.out) as stage:
        for k, chain in enumerate(chains):
            save_chain(chain, stage / f"chain_{k + 1}")
        _write_manifest(stage, cfg, "fit")
    _banner(f"Fit complete: variant '{cfg.model.variant}'")
    for k, chain in enumerate(chains):
        acc = ", ".join(f"{name}={rate:.2f}" for name, rate in chain.meta["acceptance"].items()) or "n/a"
        print(f"  chain {k + 1}: {chain.n_draws} draws, jitter events {len(chain.meta['jitter_events'])}, "
              f"joint acceptance {acc}")
    print(f"Output: {cfg.paths.out}")
    return 0


def _chain_dirs(paths: List[str]) -> List[Path]:
    """Expands fit output directories into their chain_* subdirectories."""
    dirs = []
    for p in map(Path, paths):
        if (p / config.META_FILE).is_file():
            dirs.append(p)
        else:
            dirs.extend(sorted(d for d in p.glob("chain_*") if (d / config.META_FILE).is_file()))
    if not dirs:
        raise ConfigError(f"no chain directories found under {paths}")
    return dirs


def run_score(cfg: RunConfig) -> int:
    data = load_dataset(cfg)
    chains = [load_chain(d) for d in _chain_dirs(cfg.paths.chains)]
    truth = load_truth(cfg.paths.truth) if cfg.paths.truth else None
    truth_scalars = {k: v for k, v in (truth or {}).items() if isinstance(v, (int, float))} or None

    by_variant: Dict[str, List[ChainOutput]] = {}
    for chain in chains:
        by_variant.setdefault(chain.meta["model_variant"], []).append(chain)

    rng = np.random.default_rng(cfg.seed)
    labels = data.idx.labels(data.nodes.ids)
    scores, coverage_tables, diag_tables, residual_tables, comparison = {}, [], [], [], []
    for variant in sorted(by_variant):
        group = by_variant[variant]
        report = score_chains(
            [c.draws for c in group], group[0].meta["beta_names"], data.response.values,
            data.weights > 0, rng, truth=truth_scalars, mismatches=data.response.mismatches,
            near_clonal_threshold=cfg.scoring.near_clonal_threshold,
            level=cfg.scoring.credible_level, labels=labels,
        )
        scores[variant] = report.to_dict()
        comparison.append({"variant": variant, "mean_crps": report.mean_crps, "chains": len(group)})
        diag_tables.append(report.diagnostics.assign(variant=variant))
        if report.coverage is not None:
            coverage_tables.append(report.coverage.assign(variant=variant))
        if report.residuals is not None:
            residual_tables.append(report.residuals.table.assign(variant=variant))

    with StagedOutput(cfg.paths.out) as stage:
        (stage / config.SCORE_FILE).write_text(json.dumps({"variants": scores}, indent=2, sort_keys=True))
        pd.concat(diag_tables).to_csv(stage / config.DIAGNOSTICS_FILE, index=False)
        if coverage_tables:
            pd.concat(coverage_tables).to_csv(stage / config.COVERAGE_FILE, index=False)
        if residual_tables:
            pd.concat(residual_tables).to_csv(stage / config.RESIDUALS_FILE, index=False)
        if len(comparison) > 1:
            pd.DataFrame(comparison).to_csv(stage / config.COMPARISON_FILE, index=False)
        _write_manifest(stage, cfg, "score")

    _banner("Scoring complete")
    for row in comparison:
        print(f"  {row['variant']:<12} mean CRPS {row['mean_crps']:.4f}  ({row['chains']} chain(s))")
    return 0


def run_map(cfg: RunConfig) -> int:
    chain_dir = _chain_dirs(cfg.paths.chains)[0]
    chain = load_chain(chain_dir)
    p = cfg.paths
    nodes = load_nodes(p.nodes)
    idx = build_dyad_index(nodes.n)
    if p.responses or p.gdm:
        full = load_dataset(cfg)
    else:
        pathways = load_pathways(p.pathways, cfg.design.tau) if p.pathways else []
        full = build_dyadic_data(nodes, idx, DyadicResponse(values=np.zeros(idx.N)), pathways,
                                 rbf_centers=cfg.design.rbf_centers, rbf_seed=cfg.design.rbf_seed,
                                 standardize_connectivity=cfg.design.standardize_connectivity)
    data, _ = select_variant(full, chain.meta["model_variant"])
    env_names = list(nodes.covariate_names) if data.transform.node_means.shape[0] else []
    bbox, nx, ny, covariates = load_grid_nodes(p.grid_nodes, env_names)
    grid = build_grid(bbox, nx, ny, covariates, require_covariates=bool(env_names))
    class_names = [pw.name for pw in data.transform.pathways]
    products = make_map(chain.draws, chain.meta, nodes.coords, idx, grid, data.transform, class_names,
                        max_draws=cfg.mapping.max_draws, max_grid_dyads=cfg.mapping.max_grid_dyads,
                        progress=cfg.schedule.progress and sys.stderr.isatty())

    with StagedOutput(p.out) as stage:
        products.vectors.to_csv(stage / config.VECTORS_FILE, index=False, float_format=config.FLOAT_FORMAT)
        products.zbar.to_csv(stage / config.ZBAR_FILE, index=False, float_format=config.FLOAT_FORMAT)
        products.mu.to_csv(stage / "grid_mu.csv", index=False, float_format=config.FLOAT_FORMAT)
        for name, table in products.theta.items():
            table.to_csv(stage / f"theta_{name}.csv", index=False, float_format=config.FLOAT_FORMAT)
        (stage / "theta_summary.json").write_text(json.dumps(products.theta_global, indent=2, sort_keys=True))
        _write_manifest(stage, cfg, "map")

    _banner(f"Map complete: {nx} x {ny} grid")
    for name, summary in products.theta_global.items():
        role = "barrier" if summary["mean"] > 0 else "corridor"
        print(f"  {name:<20} mean theta {summary['mean']:+.3f}  ({role}, P(>0)={summary['prob_positive']:.2f})")
    return 0


def summarize_run(run_dir) -> Tuple[str, Optional[Dict], Optional[str]]:
    """Reads the manifest and headline outputs of one run directory for the results browser."""
    run = Path(run_dir)
    try:
        manifest = json.loads((run / config.MANIFEST_FILE).read_text())
        summary = {"subcommand": manifest["subcommand"], "seed": manifest["seed"], "chains": []}
        for chain_dir in sorted(run.glob("chain_*")):
            meta = json.loads((chain_dir / config.META_FILE).read_text())
            summary["chains"].append({
                "chain": chain_dir.name,
                "variant": meta["model_variant"],
                "draws": meta["n_draws"],
                "jitter_events": len(meta["jitter_events"]),
                **meta["acceptance"],
            })
        if (run / config.SCORE_FILE).is_file():
            summary["score"] = json.loads((run / config.SCORE_FILE).read_text())["variants"]
        for key, name in (("coverage", config.COVERAGE_FILE), ("diagnostics", config.DIAGNOSTICS_FILE),
                          ("comparison", config.COMPARISON_FILE), ("vectors", config.VECTORS_FILE)):
            if (run / name).is_file():
                summary[key] = pd.read_csv(run / name)
        return run.name, summary, None
    except Exception as e:
        return run.name, None, str(e)


RUNNERS = {
    "simulate": run_simulate,
    "ingest": run_ingest,
    "fit": run_fit,
    "score": run_score,
    "map": run_map,
}


def run_subcommand(cfg: RunConfig, subcommand: str) -> int:
    """Validates inputs, then runs one subcommand. Returns the exit code."""
    try:
        cfg.require_paths(subcommand)
        return RUNNERS[subcommand](cfg)
    except Exception as e:
        code = exit_code_for(e)
        logger.error("%s failed (exit %d): %s", subcommand, code, e)
        if code == 1:
            logger.debug("traceback", exc_info=True)
        return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyadflow", description=__doc__)
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="YAML run configuration")
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--out")
        if name == "fit":
            cmd.add_argument("--iterations", type=int)
            cmd.add_argument("--chains", type=int)
            cmd.add_argument("--variant")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    overrides = {
        "seed": args.seed,
        "paths.out": args.out,
        "schedule.iterations": getattr(args, "iterations", None),
        "schedule.chains": getattr(args, "chains", None),
        "model.variant": getattr(args, "variant", None),
    }
    try:
        cfg = load_config(args.config, overrides)
    except Exception as e:
        logger.error("invalid configuration: %s", e)
        return exit_code_for(e)
    return run_subcommand(cfg, args.subcommand)


if __name__ == "__main__":
    sys.exit(main())
