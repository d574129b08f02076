import json
import warnings

import numpy as np
import pytest

from data_loader import load_nodes, load_pathways, load_responses
from design import build_dyadic_data
from dyads import build_dyad_index
from errors import InvalidInputError
from evaluation import score_chains
from priors import make_prior
from sampler import Schedule, run_chain
from simulator import (
    SimConfig,
    make_pathways,
    regenerate_response,
    simulate_dataset,
    simulate_replicates,
    truth_summary,
    write_dataset,
)


def small_config(**kwargs) -> SimConfig:
    params = dict(n=12, p=2, beta=(1.0, -2.0, 0.5, 0.7), Q=2)
    params.update(kwargs)
    return SimConfig(**params)


def test_pathway_geometry():
    barrier = make_pathways("horizontal_barrier", (0.0, 2.0, 0.0, 4.0))
    corridor = make_pathways("vertical_corridor", (0.0, 2.0, 0.0, 4.0))
    np.testing.assert_allclose(barrier.features[0], [[0.0, 2.0], [2.0, 2.0]])
    np.testing.assert_allclose(corridor.features[0], [[1.0, 0.0], [1.0, 4.0]])
    with pytest.raises(InvalidInputError):
        make_pathways("river")


@pytest.mark.parametrize("kwargs", [
    {"beta": (1.0, 2.0)},
    {"n": 3},
    {"sigma2": -1.0},
    {"active_factors": 5},
    {"domain": (1.0, 0.0, 0.0, 1.0)},
])
def test_config_validation(kwargs):
    with pytest.raises(InvalidInputError):
        small_config(**kwargs)


def test_noiseless_response_is_linear():
    truth = simulate_dataset(small_config(sigma2=0.0, zero_eta=True, zero_factors=True), seed=1)
    Z = truth.design.combined
    np.testing.assert_allclose(truth.response.values, truth.alpha + Z @ truth.beta, atol=1e-12)
    np.testing.assert_array_equal(truth.delta, 0.0)


def test_regenerated_response_matches():
    truth = simulate_dataset(small_config(), seed=2)
    np.testing.assert_allclose(regenerate_response(truth), truth.response.values, atol=1e-12)


def test_delta_and_factors_are_centered():
    truth = simulate_dataset(small_config(), seed=3)
    assert truth.delta.shape == (66, 4)
    np.testing.assert_allclose(truth.delta.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(truth.W.mean(axis=0), 0.0, atol=1e-10)


def test_factor_scales_within_distance_range():
    truth = simulate_dataset(small_config(Q=5), seed=4)
    d = truth.nodes.coords[:, None, :] - truth.nodes.coords[None, :, :]
    dist = np.sqrt((d ** 2).sum(-1))[np.triu_indices(12, 1)]
    assert np.all(truth.phi_q >= dist.min() * (1 - 1e-12))
    assert np.all(truth.phi_q <= dist.max() * (1 + 1e-12))


def test_same_seed_same_dataset():
    a = simulate_dataset(small_config(), seed=7)
    b = simulate_dataset(small_config(), seed=7)
    c = simulate_dataset(small_config(), seed=8)
    np.testing.assert_array_equal(a.response.values, b.response.values)
    assert not np.allclose(a.response.values, c.response.values)


def test_inactive_factors_have_zero_loadings():
    truth = simulate_dataset(small_config(Q=4, active_factors=1), seed=5)
    np.testing.assert_array_equal(truth.C_load[:, 1:], 0.0)
    assert np.any(truth.C_load[:, 0] != 0.0)


def test_replicates_are_keyed_by_seed():
    reps = simulate_replicates(small_config(), [3, 1, 2], max_workers=2)
    assert list(reps) == [3, 1, 2]
    np.testing.assert_array_equal(reps[1].response.values, simulate_dataset(small_config(), 1).response.values)


def test_truth_summary_keys():
    truth = simulate_dataset(small_config(), seed=0)
    summary = truth_summary(truth)
    names = truth.design.names
    assert summary["beta_names"] == names
    assert summary[f"beta[{names[0]}]"] == pytest.approx(1.0)
    assert summary["alpha"] == 10.0
    json.dumps(summary)


def test_written_dataset_loads_back(tmp_path):
    truth = simulate_dataset(small_config(), seed=6)
    paths = write_dataset(truth, tmp_path)
    assert all(p.exists() for p in paths)

    nodes = load_nodes(tmp_path / "nodes.csv")
    assert nodes.ids == truth.nodes.ids
    np.testing.assert_allclose(nodes.coords, truth.nodes.coords, rtol=1e-14)
    np.testing.assert_allclose(nodes.covariates, truth.nodes.covariates, rtol=1e-14)

    idx = build_dyad_index(nodes.n)
    response = load_responses(tmp_path / "responses.csv", nodes, idx)
    np.testing.assert_allclose(response.values, truth.response.values, rtol=1e-14)

    classes = load_pathways(tmp_path / "pathways.json")
    assert [c.name for c in classes] == ["horizontal_barrier", "vertical_corridor"]
    np.testing.assert_allclose(classes[0].features[0], truth.pathways[0].features[0])


@pytest.mark.slow
def test_default_study_size():
    truth = simulate_dataset(SimConfig(), seed=0)
    assert truth.idx.N == 4950
    assert truth.design.combined.shape == (4950, 6)
    assert truth.W.shape == (4950, 6)


@pytest.mark.slow
def test_full_model_beats_standard_on_simulated_dsvc():
    truth = simulate_dataset(SimConfig(n=60), seed=3)
    assert truth.idx.N == 1770
    data = build_dyadic_data(truth.nodes, truth.idx, truth.response, truth.pathways)
    prior = make_prior(truth.nodes.coords, Q=6)
    y = truth.response.values
    summary = truth_summary(truth)
    env_truth = {"alpha": summary["alpha"]}
    env_truth.update({f"beta[{name}]": summary[f"beta[{name}]"] for name in truth.design.env_names})
    crps = {}
    outputs = {}
    coverage = {}
    for variant in ("standard", "full"):
        schedule = Schedule(iterations=8000, burnin=2000, thin=5, seed=1, model_variant=variant)
        out = run_chain(data, prior, schedule)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = score_chains([out.draws], out.meta["beta_names"], y, truth.response.observed,
                                  np.random.default_rng(0), truth=env_truth)
        crps[variant] = report.mean_crps
        coverage[variant] = report.coverage
        outputs[variant] = out
    assert crps["standard"] / crps["full"] >= 2.0
    covered = coverage["full"].set_index("parameter")["covered"]
    assert set(covered.index) == set(env_truth)
    assert covered.all(), coverage["full"]
    full = outputs["full"]
    names = list(full.meta["beta_names"])
    beta_mean = full.draws["beta"].mean(axis=0)
    assert beta_mean[names.index("horizontal_barrier")] > 0
    assert beta_mean[names.index("vertical_corridor")] < 0


@pytest.mark.slow
def test_horseshoe_switches_off_inactive_factors():
    truth = simulate_dataset(SimConfig(n=60, active_factors=3), seed=5)
    data = build_dyadic_data(truth.nodes, truth.idx, truth.response, truth.pathways)
    prior = make_prior(truth.nodes.coords, Q=6)
    out = run_chain(data, prior, Schedule(iterations=8000, burnin=2000, thin=5, seed=2))
    medians = np.sort(np.median(out.draws["xi"], axis=0))
    assert np.all(medians[:3] < 0.2 * medians[-1])
