"""One test per acceptance criterion; each records a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from ctcr_consensus.ctcr_map import STABLE, root_tendency, stability_map
from ctcr_consensus.dde_sim import SimConfig, consensus_metrics, simulate
from ctcr_consensus.factorization import factorize, jordan_transform
from ctcr_consensus.qpr_roots import dominant_root
from ctcr_consensus.topology import DirectedTopology, example_topology, weighted_adjacency

from conftest import GAINS, H, POINTS, TAU_MAX
from oracles import direct_characteristic

RESULTS: dict[str, str] = {}
TWO_PI = 2 * math.pi


def report(key, ok, detail):
    RESULTS[key] = f"criterion {key}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(RESULTS[key])
    assert ok, detail


def test_criterion_01_spectrum():
    t0 = time.perf_counter()
    adj = weighted_adjacency(example_topology())
    elapsed = time.perf_counter() - t0
    quoted = [1, 0.38, -0.5, -0.44 + 0.37j, -0.44 - 0.37j]
    eig = list(adj.eigenvalues)
    worst = 0.0
    for q in quoted:
        k = int(np.argmin([abs(e - q) for e in eig]))
        worst = max(worst, abs(eig.pop(k) - q))
    report("1", worst <= 0.01 and elapsed < 1.0, f"max deviation {worst:.4f}, {elapsed * 1e3:.1f} ms")


def test_criterion_02_factorization_identity(example_adj, factors):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        s = complex(rng.normal(0, 1.5), rng.normal(0, 3))
        t1, t2 = rng.uniform(0, TAU_MAX, 2)
        prod = np.prod([f(s, t1, t2) for f in factors])
        ref = direct_characteristic(example_adj.C, 2.0, 0.8, s, t1, t2)
        worst = max(worst, abs(prod - ref) / abs(ref))
    report("2", worst < 1e-8, f"max relative error {worst:.2e}")


def test_criterion_03_classification_and_runtime(factors):
    t0 = time.perf_counter()
    smap = stability_map(factors, TAU_MAX, H)
    elapsed = time.perf_counter() - t0
    got = {k: smap.classify(*POINTS[k]) for k in "abc"}
    cells = {k: smap.class_names()[smap.cell(*POINTS[k])] for k in "abc"}
    want = {"a": "stable", "b": "unstable", "c": "stable"}
    ok = got == want and cells == want and elapsed < 60
    report("3", ok, f"a={got['a']} b={got['b']} c={got['c']}, full map {elapsed:.1f} s")


def test_criterion_04_dominant_roots(factors):
    re = {k: dominant_root(factors, *POINTS[k]).value.real for k in "ade"}
    ok = (abs(re["a"] + 0.0610) <= 0.005 and abs(re["d"] + 0.04) <= 0.01
          and abs(re["e"] + 0.05) <= 0.01 and re["e"] < re["d"])
    report("4", ok, ", ".join(f"{k}: {v:.5f}" for k, v in re.items()))


def test_criterion_05_simulation_concordance():
    top = example_topology()
    run_a = simulate(top, GAINS, *POINTS["a"], SimConfig(t_end=200.0))
    run_c = simulate(top, GAINS, *POINTS["c"], SimConfig(t_end=800.0))
    run_b = simulate(top, GAINS, *POINTS["b"], SimConfig(t_end=60.0))
    ma, mc = consensus_metrics(run_a), consensus_metrics(run_c)
    growth = run_b.spread()[-1] / run_b.spread()[0]
    settle = ma.settling_time
    ok = (ma.final_relative_spread < 1e-3 and mc.final_relative_spread < 1e-3 and growth >= 10
          and settle is not None and 66 * 0.8 <= settle <= 66 * 1.2)
    report("5", ok, f"a spread {ma.final_relative_spread:.1e}, c spread {mc.final_relative_spread:.1e}, "
                    f"b growth {growth:.0f}x, a settles at {settle:.1f} s")


def test_criterion_06_ctcr_vs_root_finder(smap, surface):
    far = smap.distance >= 2 * H
    have = far & np.isfinite(surface.real)
    agree = (surface.real[have] < 0) == (smap.classes[have] == STABLE)
    frac = agree.mean()
    ok = have.sum() == far.sum() and frac >= 0.99
    report("6", ok, f"{agree.sum()}/{have.sum()} cells agree ({100 * frac:.2f}%), "
                    f"{far.sum() - have.sum()} missing")


def test_criterion_07_curve_residuals(factors, delay_curves):
    total, worst = 0, 0.0
    for qp, dsc in zip(factors, delay_curves):
        v = dsc.vertices()
        res = np.abs(qp(1j * v[:, 2], v[:, 0], v[:, 1])) / qp.sds_scale(v[:, 2])
        total += len(v)
        worst = max(worst, float(res.max()))
    report("7", worst < 1e-8, f"{total} vertices, max residual {worst:.1e}")


def test_criterion_08_branch_bounds_and_rt_invariance(factors, building, delay_curves):
    counts = [len(bc) for bc in building]
    bound_ok = all(c <= f.order ** 2 for c, f in zip(counts, factors))
    rng = np.random.default_rng(8)
    pairs = []
    for dsc in delay_curves:
        for c in dsc.offspring:
            for j in range(len(c)):
                pairs.append((dsc.qp, c.tau1[j], c.tau2[j], c.omega[j], c.shift))
    violations = 0
    for k in rng.choice(len(pairs), 50, replace=False):
        qp, t1, t2, w, (j1, j2) = pairs[k]
        # invariance w.r.t. tau_k holds along the direction with the other delay fixed
        if root_tendency(qp, t1, t2, w, 1) != root_tendency(qp, t1 - TWO_PI * j1 / w, t2, w, 1):
            violations += 1
        if root_tendency(qp, t1, t2, w, 2) != root_tendency(qp, t1, t2 - TWO_PI * j2 / w, w, 2):
            violations += 1
    report("8", bound_ok and violations == 0,
           f"branches {counts} vs bounds {[f.order ** 2 for f in factors]}, {violations} RT violations in 50 pairs")


def test_criterion_09_structural_root(centroid):
    rng = np.random.default_rng(9)
    taus = rng.uniform(0, 100, (1000, 2))
    values = [centroid(0.0, a, b) for a, b in taus]
    nonzero = sum(v != 0 for v in values)
    report("9", nonzero == 0, f"{nonzero} of 1000 evaluations nonzero")


def _subgroup_outcome():
    pairs = DirectedTopology.from_informers([[2], [1], [4], [3]])
    adj = weighted_adjacency(pairs)
    fs = factorize(adj, GAINS)
    disagreement = [f for f in fs if not f.is_centroid]
    stable = all(dominant_root([f], 0.2, 0.2).value.real < 0 for f in disagreement)
    traj = simulate(pairs, GAINS, 0.2, 0.2, SimConfig(t_end=60.0, x0=(-3.0, -1.0, 2.0, 4.0)))
    x = traj.x[-1]
    internal = max(abs(x[0] - x[1]), abs(x[2] - x[3]))
    global_gap = abs(x[0] - x[2])
    ok = stable and internal < 1e-4 and global_gap > 1.0
    return ok, f"pairs agree to {internal:.1e}, gap between pairs {global_gap:.2f}"


def _example_consensus():
    adj = weighted_adjacency(example_topology())
    T = jordan_transform(adj.C, adj.spectrum)
    traj = simulate(example_topology(), GAINS, *POINTS["a"], SimConfig(t_end=200.0))
    m = consensus_metrics(traj, T)
    return m.consensus_value, m.xi_final[0], math.sqrt(adj.C.shape[0])


@pytest.mark.xfail(strict=True, reason="with unit-norm first column the agreement value is xi_1 / sqrt(n)")
def test_criterion_10_literal_scaling():
    sub_ok, sub_detail = _subgroup_outcome()
    xbar, xi1, rn = _example_consensus()
    ok = sub_ok and abs(xbar - rn * xi1) < 1e-3
    report("10", ok, f"{sub_detail}; consensus {xbar:.6f} vs sqrt(n) xi1 = {rn * xi1:.6f}")


def test_criterion_10_unit_norm_scaling():
    sub_ok, sub_detail = _subgroup_outcome()
    xbar, xi1, rn = _example_consensus()
    ok = sub_ok and abs(xi1 - rn * xbar) < 1e-3
    report("10.b", ok, f"{sub_detail}; xi1 {xi1:.6f} vs sqrt(n) consensus = {rn * xbar:.6f}")
