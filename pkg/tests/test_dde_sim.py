import math

import numpy as np
import pytest

from ctcr_consensus.errors import InputError
from ctcr_consensus.factorization import Gains, jordan_transform
from ctcr_consensus.dde_sim import SimConfig, Trajectory, consensus_metrics, simulate
from ctcr_consensus.topology import DirectedTopology, example_topology, spectrum, weighted_adjacency

from conftest import GAINS, POINTS
from oracles import delay_free_reference

TWO_PAIRS = DirectedTopology.from_informers([[2], [1], [4], [3]])


@pytest.fixture(scope="module")
def run_a():
    return simulate(example_topology(), GAINS, *POINTS["a"], SimConfig(t_end=120.0))


def test_consensus_is_a_fixed_point():
    cfg = SimConfig(t_end=10.0, x0=(1.5,) * 5, v0=(0.0,) * 5)
    traj = simulate(example_topology(), GAINS, 0.0, 0.0, cfg)
    assert np.all(traj.x == 1.5) and np.all(traj.v == 0.0)


def test_step_limits():
    cfg = SimConfig()
    assert cfg.step_limit(0.5, 0.5) == pytest.approx(0.005)
    assert cfg.step_limit(0.02, 3.0) == pytest.approx(0.002)
    assert cfg.step_limit(0.0, 0.0) == pytest.approx(0.005)
    assert cfg.step_limit(0.0, 2.0) == pytest.approx(0.005)
    with pytest.raises(InputError, match="exceeds"):
        SimConfig(dt=0.01).resolve_dt(0.5, 0.5)


def test_input_validation():
    with pytest.raises(InputError):
        simulate(example_topology(), GAINS, -0.1, 0.5)
    with pytest.raises(InputError):
        simulate(example_topology(), GAINS, 0.5, 0.5, SimConfig(x0=(1.0, 2.0)))


def test_seeded_initial_state():
    x, v = SimConfig(seed=3).initial_state(5)
    x2, _ = SimConfig(seed=3).initial_state(5)
    np.testing.assert_array_equal(x, x2)
    assert np.all(np.abs(x) <= 5) and np.all(v == 0)


def test_config_json_round_trip():
    cfg = SimConfig(t_end=12.0, dt=0.001, x0=(1, 2, 3), seed=4)
    assert SimConfig.from_json(cfg.to_json()) == cfg


def test_delay_free_matches_reference_solver(example_adj):
    x0 = np.array([-4.0, 1.0, 3.5, -0.5, 2.0])
    v0 = np.array([0.3, -0.2, 0.0, 0.1, -0.4])
    cfg = SimConfig(t_end=20.0, x0=tuple(x0), v0=tuple(v0))
    traj = simulate(example_topology(), GAINS, 0.0, 0.0, cfg)
    ref = delay_free_reference(example_adj.C, 2.0, 0.8, x0, v0, 20.0, traj.t)
    assert np.max(np.abs(traj.x - ref)) < 1e-6


def test_fourth_order_convergence():
    finals = []
    for dt in (0.005, 0.0025, 0.00125):
        cfg = SimConfig(t_end=6.0, dt=dt, seed=1)
        finals.append(simulate(example_topology(), GAINS, *POINTS["a"], cfg).x[-1])
    e1 = np.max(np.abs(finals[0] - finals[1]))
    e2 = np.max(np.abs(finals[1] - finals[2]))
    assert math.log2(e1 / e2) >= 3.5


def test_off_grid_delay_against_method_of_steps():
    """Mutual pair, negligible P, tau2 off the step grid, exact piecewise solution.

    The velocity disagreement u = v1 - v2 obeys u' + D u = -D u(t - tau) with
    u = 2 before t = 0, so u = -2 + 4 exp(-D t) on [0, tau] and, with w = t - tau,
    u = 2 - 4 D w exp(-D w) + (4 exp(-D tau) - 4) exp(-D w) on [tau, 2 tau].
    """
    D, tau = 0.8, 0.7133
    pair = DirectedTopology.from_informers([[2], [1]])

    def exact(t):
        if t <= tau:
            return -2 + 4 * math.exp(-D * t)
        w = t - tau
        return 2 - 4 * D * w * math.exp(-D * w) + (4 * math.exp(-D * tau) - 4) * math.exp(-D * w)

    errors = []
    for dt in (0.004, 0.002, 0.001):
        cfg = SimConfig(t_end=1.2, dt=dt, x0=(0.0, 0.0), v0=(1.0, -1.0))
        traj = simulate(pair, Gains(1e-300, D), 0.3, tau, cfg)
        errors.append(abs((traj.v[-1, 0] - traj.v[-1, 1]) - exact(traj.t[-1])))
    # the kink of the right-hand side at t = tau costs O(dt^2) in one step
    assert max(errors) < 1e-6
    assert errors[-1] < errors[0]


def test_stable_point_settles(run_a):
    m = consensus_metrics(run_a)
    assert not m.diverged
    assert 66 * 0.8 <= m.settling_time <= 66 * 1.2
    assert m.consensus_value is not None


def test_consensus_value_is_scaled_centroid(run_a, example_adj):
    T = jordan_transform(example_adj.C, example_adj.spectrum)
    m = consensus_metrics(run_a, T)
    xbar = np.mean(run_a.x[-1])
    assert m.xi_final[0] == pytest.approx(math.sqrt(5) * xbar, abs=1e-3)
    assert m.disagreement_decay < 0.05


def test_unstable_point_grows():
    traj = simulate(example_topology(), GAINS, *POINTS["b"], SimConfig(t_end=60.0))
    spread = traj.spread()
    assert spread[-1] >= 10 * spread[0]
    m = consensus_metrics(traj)
    assert m.settling_time is None and m.consensus_value is None


def test_divergence_is_flagged():
    cfg = SimConfig(t_end=400.0, x0=(0.0, 0.0, 0.0, 0.0, 1e3))
    traj = simulate(example_topology(), GAINS, *POINTS["b"], cfg)
    assert traj.diverged
    assert traj.t[-1] < 400.0
    assert consensus_metrics(traj).diverged


def test_two_pairs_agree_internally_without_consensus():
    adj = weighted_adjacency(TWO_PAIRS)
    cfg = SimConfig(t_end=60.0, x0=(-3.0, -1.0, 2.0, 4.0))
    traj = simulate(TWO_PAIRS, GAINS, 0.2, 0.2, cfg)
    x = traj.x[-1]
    assert abs(x[0] - x[1]) < 1e-4 and abs(x[2] - x[3]) < 1e-4
    assert abs(x[0] - x[2]) > 1.0
    m = consensus_metrics(traj)
    assert m.settling_time is None
    assert count_unit(adj) == 2


def count_unit(adj):
    return int(np.sum(np.abs(adj.eigenvalues - 1) < 1e-6))


def test_sample_cap_and_csv():
    traj = simulate(example_topology(), GAINS, 0.5, 0.5, SimConfig(t_end=150.0))
    assert len(traj.t) <= 20001
    assert traj.t[-1] == pytest.approx(150.0)
    text = traj.to_csv()
    head = text.splitlines()[0].split(",")
    assert head == ["t"] + [f"x{j}" for j in range(1, 6)] + [f"v{j}" for j in range(1, 6)]
    assert len(text.splitlines()) == len(traj.t) + 1


def test_modal_coordinates(run_a, example_adj):
    T = jordan_transform(example_adj.C, example_adj.spectrum)
    xi = run_a.xi(T)
    np.testing.assert_allclose(xi @ T.T, run_a.x, atol=1e-9)
    np.testing.assert_allclose(run_a.xi(), xi, atol=1e-9)
