import numpy as np
import pandas as pd
import pytest

from conftest import make_data
from covariance import KernelSpec
from dyads import build_dyad_index
from errors import InvalidInputError, SizeLimitError
from mapping import (
    GridFields,
    ObservedCholeskyCache,
    build_grid,
    dsvc_zscore_map,
    dyadic_mean_surface,
    dyad_cross_covariance,
    grid_dyads,
    krige_eta,
    krige_factor,
    make_map,
    map_draw_indices,
    node_level_slope_map,
    predict_latent_fields,
    vector_field,
    zscore_from_moments,
)


def surface_from_node_values(values: np.ndarray, grid) -> np.ndarray:
    dyads = grid_dyads(grid)
    flat = np.asarray(values, dtype=float).ravel()
    return flat[dyads.dst] - flat[dyads.src]


def fake_draws(n_nodes: int, P: int, Q: int, m: int = 3, seed: int = 0):
    r = np.random.default_rng(seed)
    N = n_nodes * (n_nodes - 1) // 2
    return {
        "alpha": r.normal(size=m),
        "beta": r.normal(size=(m, P)),
        "eta": r.normal(size=(m, n_nodes)),
        "phi_eta": np.full(m, 0.4),
        "phi_q": np.full((m, Q), 0.3),
        "W": r.normal(size=(m, N, Q)),
        "C": r.normal(size=(m, P, Q)),
    }


def test_grid_layout():
    grid = build_grid((0.0, 2.0, 0.0, 1.0), 3, 3)
    assert grid.G == 9
    assert grid.sx == pytest.approx(1.0)
    assert grid.sy == pytest.approx(0.5)
    np.testing.assert_array_equal(grid.degree(), [2, 3, 2, 3, 4, 3, 2, 3, 2])
    np.testing.assert_array_equal(grid.interior(), [4])
    assert grid.neighbors[0] == {"E": 1, "N": 3}
    np.testing.assert_allclose(grid.coords[5], [2.0, 0.5])


@pytest.mark.parametrize("args", [((0.0, 1.0, 0.0, 1.0), 2, 3), ((1.0, 0.0, 0.0, 1.0), 3, 3)])
def test_grid_validation(args):
    with pytest.raises(InvalidInputError):
        build_grid(*args)


def test_grid_requires_covariates_when_asked():
    with pytest.raises(InvalidInputError):
        build_grid((0.0, 1.0, 0.0, 1.0), 3, 3, require_covariates=True)


def test_grid_dyads_count_and_lookup():
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    dyads = grid_dyads(grid)
    assert dyads.D == 24
    d = dyads.lookup[(4, "W")]
    assert (dyads.src[d], dyads.dst[d], dyads.direction[d]) == (4, 3, "W")


def test_map_draw_indices():
    np.testing.assert_array_equal(map_draw_indices(10, 4), [0, 3, 6, 9])
    np.testing.assert_array_equal(map_draw_indices(3, 10), [0, 1, 2])
    with pytest.raises(InvalidInputError):
        map_draw_indices(0)


def test_krige_eta_interpolates_nodes(rng):
    coords = rng.uniform(size=(6, 2))
    eta = rng.normal(size=6)
    out = krige_eta(coords, coords, eta, KernelSpec("exponential", 0.5))
    np.testing.assert_allclose(out, eta, atol=1e-8)


def test_krige_factor_reproduces_observed_dyad(rng):
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    g = int(grid.interior()[0])
    h = grid.neighbors[g]["E"]
    others = [k for k in (0, 8) if k not in (g, h)]
    node_coords = grid.coords[[g, h] + others]
    idx = build_dyad_index(len(node_coords))
    dyads = grid_dyads(grid)
    w = rng.normal(size=idx.N)
    pred = krige_factor(node_coords, grid.coords, idx, dyads, w, KernelSpec("matern32", 0.5))
    assert pred[dyads.lookup[(g, "E")]] == pytest.approx(w[0], abs=1e-8)
    assert pred[dyads.lookup[(h, "W")]] == pytest.approx(w[0], abs=1e-8)


def test_cholesky_cache_reuses_factor(rng):
    data = make_data(n=5, p=1, with_pathway=False)
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    dyads = grid_dyads(grid)
    cache = ObservedCholeskyCache(data.nodes.coords, data.idx, max_entries=2)
    w = rng.normal(size=data.idx.N)
    spec = KernelSpec("matern32", 0.4)
    plain = krige_factor(data.nodes.coords, grid.coords, data.idx, dyads, w, spec)
    first = krige_factor(data.nodes.coords, grid.coords, data.idx, dyads, w, spec, cache)
    second = krige_factor(data.nodes.coords, grid.coords, data.idx, dyads, 2.0 * w, spec, cache)
    np.testing.assert_array_equal(first, plain)
    np.testing.assert_allclose(second, 2.0 * plain, rtol=1e-12)
    assert (cache.hits, cache.misses) == (1, 1)
    for phi in (0.5, 0.6, 0.7):
        cache.factor(KernelSpec("matern32", phi))
    assert len(cache) == 2


def test_dyad_cross_covariance_shape(rng):
    data = make_data(n=4, p=1, with_pathway=False)
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    S = dyad_cross_covariance(data.nodes.coords, grid.coords, data.idx, grid_dyads(grid),
                              KernelSpec("matern32", 0.3))
    assert S.shape == (24, 6)
    assert np.all(np.isfinite(S))


def test_vector_field_of_linear_surface():
    grid = build_grid((0.0, 4.0, 0.0, 4.0), 5, 5)
    values = 2.0 * grid.coords[:, 0] + 3.0 * grid.coords[:, 1]
    vf = vector_field(surface_from_node_values(values, grid), grid)
    assert len(vf) == 9
    np.testing.assert_allclose(vf["u"], 4.0)
    np.testing.assert_allclose(vf["v"], 6.0)
    np.testing.assert_allclose(vf["log_grad"], np.log(np.hypot(4.0, 6.0)))


def test_vector_field_of_flat_surface_is_floored():
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    vf = vector_field(np.zeros(grid_dyads(grid).D), grid)
    assert np.all(np.isfinite(vf["log_grad"]))
    assert vf["u"].iloc[0] == 0.0


def test_vector_field_rotates_with_surface(rng):
    n = 5
    grid = build_grid((-1.0, 1.0, -1.0, 1.0), n, n)
    f = rng.normal(size=(n, n))
    # node (ix, iy) of the rotated field takes the value at (iy, n - 1 - ix)
    g = np.empty_like(f)
    for iy in range(n):
        for ix in range(n):
            g[iy, ix] = f[n - 1 - ix, iy]
    vf = vector_field(surface_from_node_values(f, grid), grid).set_index("g")
    vg = vector_field(surface_from_node_values(g, grid), grid).set_index("g")
    for node in vg.index:
        iy, ix = divmod(node, n)
        q = (n - 1 - ix) * n + iy
        assert vg.loc[node, "u"] == pytest.approx(-vf.loc[q, "v"])
        assert vg.loc[node, "v"] == pytest.approx(vf.loc[q, "u"])


def test_zscore_from_moments_averages_over_neighbors():
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    D = grid_dyads(grid).D
    z = zscore_from_moments(np.ones((D, 2)), np.ones((D, 2)), grid)
    np.testing.assert_allclose(z, 1.0)
    z = zscore_from_moments(np.full((D, 1), 3.0), np.full((D, 1), 1.5), grid)
    np.testing.assert_allclose(z, 2.0)


def test_dsvc_zscore_map_columns(rng):
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    table = dsvc_zscore_map(rng.normal(size=(4, 24, 2)), grid)
    assert list(table.columns) == ["g", "x", "y", "zbar"]
    assert len(table) == 9
    assert np.all(table["zbar"] >= 0)


def test_node_slope_collapses_for_single_draw():
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    delta = np.zeros((1, 24, 2))
    delta[:, :, 1] = 1.0
    table, summary = node_level_slope_map(np.array([[0.5, 2.0]]), delta, grid, column=1)
    np.testing.assert_allclose(table["mean"], 3.0)
    np.testing.assert_allclose(table["lower"], table["upper"])
    assert summary == {"mean": 3.0, "prob_positive": 1.0, "prob_negative": 0.0}
    with pytest.raises(InvalidInputError):
        node_level_slope_map(np.array([[0.5, 2.0]]), delta, grid, column=2)


def test_predict_latent_fields_shapes():
    data = make_data(n=4, p=1, with_pathway=False)
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    draws = fake_draws(4, P=1, Q=2)
    fields = predict_latent_fields(draws, {"Q": 2}, data.nodes.coords, data.idx, grid, max_workers=2)
    assert fields.eta.shape == (3, 9)
    assert fields.W.shape == (3, 24, 2)
    assert fields.delta.shape == (3, 24, 1)
    np.testing.assert_allclose(fields.delta[0], fields.W[0] @ draws["C"][0].T)


def test_predict_latent_fields_limits():
    data = make_data(n=4, p=1, with_pathway=False)
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 5, 5)
    draws = fake_draws(4, P=1, Q=1)
    with pytest.raises(SizeLimitError):
        predict_latent_fields(draws, {"Q": 1}, data.nodes.coords, data.idx, grid, max_grid_dyads=10)
    del draws["W"]
    with pytest.raises(InvalidInputError):
        predict_latent_fields(draws, {"Q": 1}, data.nodes.coords, data.idx, grid)


def test_make_map_products(rng):
    data = make_data(n=5, p=2, with_pathway=True)
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3, covariates=rng.normal(size=(9, 2)))
    draws = fake_draws(5, P=3, Q=1, m=4)
    products = make_map(draws, {"Q": 1}, data.nodes.coords, data.idx, grid, data.transform, ["barrier"])
    assert len(products.mu) == 24
    assert list(products.mu.columns) == ["g", "g_neighbor", "direction", "mu"]
    assert len(products.vectors) == 1
    assert len(products.zbar) == 9
    assert set(products.theta) == {"barrier"}
    assert 0.0 <= products.theta_global["barrier"]["prob_positive"] <= 1.0


def test_make_map_needs_grid_covariates():
    data = make_data(n=5, p=2, with_pathway=True)
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    with pytest.raises(InvalidInputError):
        make_map(fake_draws(5, P=3, Q=1), {"Q": 1}, data.nodes.coords, data.idx, grid,
                 data.transform, ["barrier"])


def surface_inputs(rng, m: int = 3):
    data = make_data(n=5, p=2, with_pathway=True)
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 4, 4, covariates=rng.normal(size=(16, 2)))
    D = grid_dyads(grid).D
    fields = GridFields(draw_index=np.arange(m), eta=rng.normal(size=(m, 16)),
                        W=np.zeros((m, D, 1)), delta=rng.normal(size=(m, D, 3)))
    return data, grid, fields


def test_vector_field_ignores_alpha(rng):
    data, grid, fields = surface_inputs(rng)
    alpha = rng.normal(size=3)
    beta = rng.normal(size=(3, 3))
    a = dyadic_mean_surface(fields, alpha, beta, grid, data.transform)
    b = dyadic_mean_surface(fields, alpha + 7.5, beta, grid, data.transform)
    np.testing.assert_array_equal(a.alpha_free, b.alpha_free)
    assert not np.allclose(a.mean, b.mean)
    pd.testing.assert_frame_equal(vector_field(a.alpha_free_mean, grid), vector_field(b.alpha_free_mean, grid))


def test_planar_eta_gives_constant_gradient(rng):
    data, grid, fields = surface_inputs(rng, m=1)
    slope = 1.7
    fields.eta = slope * grid.coords[:, 0][None, :]
    fields.delta = np.zeros_like(fields.delta)
    surface = dyadic_mean_surface(fields, np.zeros(1), np.zeros((1, 3)), grid, data.transform)
    vf = vector_field(surface.alpha_free_mean, grid)
    np.testing.assert_allclose(vf["u"], 2.0 * slope, atol=1e-10)
    np.testing.assert_allclose(vf["v"], 0.0, atol=1e-10)


def test_zscore_map_is_scale_invariant(rng):
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    delta = rng.normal(size=(5, 24, 2))
    a = dsvc_zscore_map(delta, grid)["zbar"]
    b = dsvc_zscore_map(12.5 * delta, grid)["zbar"]
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_node_slope_collapses_to_coefficient_without_dsvc(rng):
    grid = build_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    beta = rng.normal(size=(6, 2))
    table, summary = node_level_slope_map(beta, np.zeros((6, 24, 2)), grid, column=1)
    np.testing.assert_allclose(table["mean"], beta[:, 1].mean(), rtol=1e-12)
    assert summary["prob_positive"] == np.mean(beta[:, 1] > 0)
