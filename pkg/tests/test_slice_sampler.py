import numpy as np
import pytest
from scipy import stats

from errors import InvalidStateError
from priors import PriorConfig, make_prior
from slice_sampler import slice_sample_log_range


def wide_prior(lo=-10.0, hi=10.0):
    return PriorConfig(mu_logphi=0.0, phi_bounds=(float(np.exp(lo)), float(np.exp(hi))), Q=1)


def test_standard_normal_target_passes_ks():
    prior = wide_prior()
    rng = np.random.default_rng(2024)
    x = 0.0
    draws = []
    for k in range(100_000):
        x = slice_sample_log_range(x, lambda v: -0.5 * v * v, prior, rng)
        if k % 10 == 9:
            draws.append(x)
    assert len(draws) == 10_000
    assert stats.kstest(draws, "norm").pvalue > 0.01


def test_draws_stay_inside_bounds():
    prior = wide_prior(0.0, 1.0)
    rng = np.random.default_rng(5)
    x = 0.5
    for _ in range(2000):
        x = slice_sample_log_range(x, lambda v: 0.0, prior, rng)
        assert 0.0 <= x <= 1.0


def test_small_stepout_budget_still_moves():
    prior = wide_prior()
    rng = np.random.default_rng(9)
    values = set()
    x = 0.0
    for _ in range(50):
        x = slice_sample_log_range(x, lambda v: -0.5 * v * v, prior, rng, max_stepout=1)
        values.add(x)
    assert len(values) > 10


def test_non_finite_target_raises():
    with pytest.raises(InvalidStateError):
        slice_sample_log_range(0.0, lambda v: -np.inf, wide_prior(), np.random.default_rng(0))


def test_make_prior_centers_on_median_distance():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 0.0]])
    prior = make_prior(coords, Q=2)
    from scipy.spatial.distance import pdist

    d = pdist(coords)
    assert prior.mu_logphi == pytest.approx(np.log(np.median(d)))
    lo, hi = prior.phi_bounds
    assert d.min() * (1 - 1e-12) <= lo < hi <= d.max() * (1 + 1e-12)
    assert prior.rw_sd == pytest.approx(0.15 * (np.log(hi) - np.log(lo)))
