import json

import numpy as np
import pytest

from chain_io import load_chain, save_chain
from conftest import make_data
from errors import ParseError, SchemaVersionError
from priors import make_prior
from sampler import Schedule, run_chain


@pytest.fixture(scope="module")
def chain():
    data = make_data(n=5, p=2, with_pathway=True)
    prior = make_prior(data.nodes.coords, Q=2)
    return run_chain(data, prior, Schedule(iterations=20, burnin=8, thin=1, seed=11))


def test_round_trip_is_lossless(chain, tmp_path):
    save_chain(chain, tmp_path / "chain_1")
    loaded = load_chain(tmp_path / "chain_1")
    assert set(loaded.draws) == set(chain.draws)
    for key, values in chain.draws.items():
        np.testing.assert_array_equal(loaded.draws[key], values)
    np.testing.assert_array_equal(loaded.delta_mean, chain.delta_mean)
    np.testing.assert_array_equal(loaded.delta_sd, chain.delta_sd)
    assert loaded.meta["beta_names"] == chain.meta["beta_names"]
    assert loaded.meta["acceptance"] == chain.meta["acceptance"]


def test_chain_without_factors(tmp_path):
    data = make_data(n=5, p=1, with_pathway=False)
    prior = make_prior(data.nodes.coords, Q=2)
    out = run_chain(data, prior, Schedule(iterations=6, burnin=1, seed=0, model_variant="standard"))
    save_chain(out, tmp_path)
    assert not (tmp_path / "draws_phi_q.csv").exists()
    loaded = load_chain(tmp_path)
    assert loaded.draws["phi_q"].shape == (5, 0)
    np.testing.assert_array_equal(loaded.draws["alpha"], out.draws["alpha"])


def test_truncated_file_reports_row(chain, tmp_path):
    save_chain(chain, tmp_path)
    path = tmp_path / "draws_beta.csv"
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:10] + [lines[10].split(",")[0]]) + "\n")
    with pytest.raises(ParseError) as excinfo:
        load_chain(tmp_path)
    assert excinfo.value.row == 11


def test_missing_rows_reported(chain, tmp_path):
    save_chain(chain, tmp_path)
    path = tmp_path / "draws_alpha.csv"
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:5]) + "\n")
    with pytest.raises(ParseError):
        load_chain(tmp_path)


def test_unknown_schema_version(chain, tmp_path):
    save_chain(chain, tmp_path)
    meta_path = tmp_path / "meta.json"
    meta = json.loads(meta_path.read_text())
    meta["schema_version"] = 99
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(SchemaVersionError):
        load_chain(tmp_path)


def test_missing_draw_file(chain, tmp_path):
    save_chain(chain, tmp_path)
    (tmp_path / "draws_sigma2.csv").unlink()
    with pytest.raises(FileNotFoundError):
        load_chain(tmp_path)


def test_chain_with_no_kept_draws_round_trips(tmp_path):
    data = make_data(n=5, p=1)
    prior = make_prior(data.nodes.coords, Q=2)
    out = run_chain(data, prior, Schedule(iterations=10, burnin=10))
    assert out.n_draws == 0
    save_chain(out, tmp_path)
    loaded = load_chain(tmp_path)
    assert set(loaded.draws) == set(out.draws)
    for key, values in out.draws.items():
        assert loaded.draws[key].shape == values.shape
    assert loaded.meta["n_draws"] == 0
    np.testing.assert_array_equal(loaded.delta_mean, out.delta_mean)


def test_header_only_file_with_rows_expected(chain, tmp_path):
    save_chain(chain, tmp_path)
    path = tmp_path / "draws_alpha.csv"
    path.write_text(path.read_text().splitlines()[0] + "\n")
    with pytest.raises(ParseError):
        load_chain(tmp_path)
