import numpy as np
import pytest

from ctcr_consensus.ctcr_map import stability_map
from ctcr_consensus.factorization import Gains, factorize
from ctcr_consensus.qpr_roots import dominant_surface
from ctcr_consensus.sds_curves import kernel_and_offspring, trace_building_curves
from ctcr_consensus.topology import example_topology, weighted_adjacency

GAINS = Gains(2.0, 0.8)
TAU_MAX = 5.0
H = 0.02
POINTS = {"a": (0.5, 0.5), "b": (1.0, 2.5), "c": (1.3, 4.5), "d": (0.05, 0.8), "e": (0.1, 3.5)}


@pytest.fixture(scope="session")
def example_adj():
    return weighted_adjacency(example_topology())


@pytest.fixture(scope="session")
def factors(example_adj):
    return factorize(example_adj, GAINS)


@pytest.fixture(scope="session")
def centroid(factors):
    return factors[0]


@pytest.fixture(scope="session")
def building(factors):
    return [trace_building_curves(f) for f in factors]


@pytest.fixture(scope="session")
def delay_curves(factors, building):
    return [kernel_and_offspring(bc, f, TAU_MAX) for f, bc in zip(factors, building)]


@pytest.fixture(scope="session")
def smap(factors, delay_curves):
    return stability_map(factors, TAU_MAX, H, curves=delay_curves)


@pytest.fixture(scope="session")
def surface(factors, smap):
    """Re(s_dom) on every cell at least 2h away from all crossing curves."""
    return dominant_surface(factors, TAU_MAX, H, mask=smap.distance >= 2 * H)


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


def random_topology(rng, n):
    """Random valid topology: every agent gets 1..n-1 distinct informers."""
    from ctcr_consensus.topology import DirectedTopology

    table = []
    for j in range(1, n + 1):
        others = [k for k in range(1, n + 1) if k != j]
        size = int(rng.integers(1, min(3, n - 1) + 1))
        table.append(tuple(int(k) for k in rng.choice(others, size=size, replace=False)))
    return DirectedTopology.from_informers(table)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(k.split(".")[0]), k)):
        terminalreporter.write_line(results[key])
