import numpy as np
import pytest

from design import PathwayClass, build_dyadic_data
from dyads import DyadicResponse, NodeSet, build_dyad_index
from priors import make_prior


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_nodes(n: int, p: int = 2, seed: int = 0) -> NodeSet:
    r = np.random.default_rng(seed)
    return NodeSet(
        ids=[f"n{k + 1}" for k in range(n)],
        coords=r.uniform(0.0, 1.0, size=(n, 2)),
        covariates=r.normal(0.0, 1.0, size=(n, p)),
    )


def make_data(n: int = 6, p: int = 2, with_pathway: bool = True, seed: int = 0):
    nodes = make_nodes(n, p, seed)
    idx = build_dyad_index(n)
    r = np.random.default_rng(seed + 1)
    response = DyadicResponse(values=r.normal(0.0, 1.0, idx.N))
    pathways = [PathwayClass("barrier", [np.array([[0.0, 0.5], [1.0, 0.5]])], tau=0.2)] if with_pathway else []
    return build_dyadic_data(nodes, idx, response, pathways)


@pytest.fixture
def small_data():
    return make_data()


@pytest.fixture
def small_prior(small_data):
    return make_prior(small_data.nodes.coords, Q=2)
