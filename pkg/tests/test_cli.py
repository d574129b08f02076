import json

import numpy as np
import pandas as pd
import pytest
import yaml

from cli import StagedOutput, build_manifest, main, summarize_run
from settings import RunConfig


def write_config(path, payload):
    path.write_text(yaml.safe_dump(payload))
    return str(path)


def simulate_payload(out):
    return {
        "seed": 5,
        "paths": {"out": str(out)},
        "simulate": {"n": 12, "p": 2, "Q": 2, "beta": [1.0, -1.0, 0.5, 0.5], "active_factors": 0},
    }


def fit_payload(data_dir, out, **schedule):
    sched = {"iterations": 40, "burnin_fraction": 0.25, "thin": 1, "chains": 2, "progress": False}
    sched.update(schedule)
    return {
        "seed": 1,
        "workers": 2,
        "paths": {
            "nodes": str(data_dir / "nodes.csv"),
            "responses": str(data_dir / "responses.csv"),
            "pathways": str(data_dir / "pathways.json"),
            "truth": str(data_dir / "truth.json"),
            "out": str(out),
        },
        "prior": {"Q": 2},
        "schedule": sched,
    }


def write_grid_nodes(path):
    rows = []
    r = np.random.default_rng(0)
    for y in np.linspace(0.0, 1.0, 4):
        for x in np.linspace(0.0, 1.0, 4):
            x1, x2 = r.normal(size=2)
            rows.append({"id": f"g{len(rows)}", "x": x, "y": y, "x1": x1, "x2": x2})
    pd.DataFrame(rows).to_csv(path, index=False)
    return str(path)


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    data_dir = root / "data"
    cfg = write_config(root / "simulate.yaml", simulate_payload(data_dir))
    assert main(["simulate", "--config", cfg]) == 0
    return root, data_dir


def test_simulate_writes_dataset(simulated):
    _, data_dir = simulated
    for name in ("nodes.csv", "responses.csv", "pathways.json", "truth.json", "manifest.json"):
        assert (data_dir / name).is_file()
    assert len(pd.read_csv(data_dir / "responses.csv")) == 66
    assert not list(data_dir.parent.glob(".staging-*"))


def test_fit_score_map_pipeline(simulated):
    root, data_dir = simulated
    fit_out = root / "fit"
    fit_cfg = fit_payload(data_dir, fit_out)
    assert main(["fit", "--config", write_config(root / "fit.yaml", fit_cfg)]) == 0
    assert (fit_out / "chain_1" / "meta.json").is_file()
    assert (fit_out / "chain_2" / "draws_beta.csv").is_file()
    meta = json.loads((fit_out / "chain_1" / "meta.json").read_text())
    assert meta["n_draws"] == 30

    score_cfg = dict(fit_cfg, paths=dict(fit_cfg["paths"], chains=[str(fit_out)], out=str(root / "score")))
    assert main(["score", "--config", write_config(root / "score.yaml", score_cfg)]) == 0
    score = json.loads((root / "score" / "score.json").read_text())
    assert np.isfinite(score["variants"]["full"]["mean_crps"])
    coverage = pd.read_csv(root / "score" / "coverage.csv")
    assert "alpha" in set(coverage["parameter"])

    map_paths = dict(fit_cfg["paths"], chains=[str(fit_out / "chain_1")], out=str(root / "map"),
                     grid_nodes=write_grid_nodes(root / "grid_nodes.csv"))
    map_cfg = dict(fit_cfg, paths=map_paths)
    assert main(["map", "--config", write_config(root / "map.yaml", map_cfg)]) == 0
    vectors = pd.read_csv(root / "map" / "vectors.csv")
    assert len(vectors) == 4
    assert (root / "map" / "theta_horizontal_barrier.csv").is_file()
    theta = json.loads((root / "map" / "theta_summary.json").read_text())
    assert set(theta) == {"horizontal_barrier", "vertical_corridor"}

    name, summary, error = summarize_run(fit_out)
    assert error is None
    assert name == "fit"
    assert [c["chain"] for c in summary["chains"]] == ["chain_1", "chain_2"]
    _, summary, _ = summarize_run(root / "score")
    assert "full" in summary["score"]


def test_fit_is_deterministic(simulated):
    root, data_dir = simulated
    outs = []
    for k in range(2):
        out = root / f"repeat_{k}"
        cfg = write_config(root / f"repeat_{k}.yaml", fit_payload(data_dir, out, iterations=15, chains=1))
        assert main(["fit", "--config", cfg, "--variant", "conn_only"]) == 0
        outs.append(out)
    for name in ("draws_alpha.csv", "draws_beta.csv", "draws_mu.csv"):
        assert (outs[0] / "chain_1" / name).read_bytes() == (outs[1] / "chain_1" / name).read_bytes()
    assert (outs[0] / "manifest.json").read_bytes() == (outs[1] / "manifest.json").read_bytes()


def test_missing_input_exits_with_config_code(tmp_path):
    out = tmp_path / "out"
    payload = {"paths": {"nodes": str(tmp_path / "absent.csv"), "gdm": str(tmp_path / "gdm.csv"), "out": str(out)}}
    assert main(["fit", "--config", write_config(tmp_path / "run.yaml", payload)]) == 2
    assert not out.exists()


def test_invalid_config_exit_code(tmp_path):
    assert main(["fit", "--config", write_config(tmp_path / "run.yaml", {"bogus": 1})]) == 2


def test_staged_output_discards_on_failure(tmp_path):
    out = tmp_path / "result"
    with pytest.raises(RuntimeError):
        with StagedOutput(out) as stage:
            (stage / "partial.csv").write_text("x\n")
            raise RuntimeError("boom")
    assert not out.exists()
    assert not list(tmp_path.glob(".staging-*"))


def test_manifest_has_no_output_path(tmp_path):
    cfg = RunConfig.model_validate({"paths": {"out": str(tmp_path / "a")}})
    manifest = build_manifest(cfg, "simulate")
    assert "out" not in manifest["config"]["paths"]
    assert manifest["subcommand"] == "simulate"
    assert build_manifest(cfg, "simulate") == manifest


def test_summarize_run_reports_errors(tmp_path):
    name, summary, error = summarize_run(tmp_path)
    assert summary is None
    assert error
