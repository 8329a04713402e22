import math

import numpy as np
import pytest

from ctcr_consensus.errors import EmptySpectrumWindowError
from ctcr_consensus.factorization import Gains, real_factor
from ctcr_consensus.qpr_roots import (
    ACCEPT_TOL,
    default_step,
    dominant_root,
    modulus_bound,
    roots_in_rectangle,
)

from conftest import GAINS, H, POINTS
from oracles import winding_count

# rightmost roots at the reference points, confirmed by the winding oracle below
FROZEN = {
    "a": complex(-0.0610347, 1.6686),
    "d": -0.0434484,
    "e": -0.0494225,
}


def test_double_root_at_zero_delay(centroid):
    est = roots_in_rectangle(centroid, 0.0, 0.0, (-3, 1, 3))
    near = [r for r in est.roots if abs(r.value) < 1e-6]
    assert len(near) == 1
    assert near[0].multiplicity == 2


def test_zero_eigenvalue_factor_roots():
    est = roots_in_rectangle(real_factor(0.0, GAINS), 0.7, 1.9, (-2, 0.5, 5))
    assert len(est.roots) == 1
    assert abs(est.roots[0].value - complex(-0.4, math.sqrt(1.84))) < 1e-9


def test_residuals_and_upper_half_plane(factors, rng):
    for _ in range(20):
        t1, t2 = rng.uniform(0, 5, 2)
        for qp in factors:
            est = roots_in_rectangle(qp, t1, t2, (-1.5, 0.5, 6))
            for r in est.roots:
                assert r.value.imag >= 0
                assert r.residual < ACCEPT_TOL
                res = abs(qp(r.value, t1, t2)) / qp.scale(r.value, t1, t2)
                assert res < ACCEPT_TOL


def test_conjugate_closure(factors, rng):
    for _ in range(10):
        t1, t2 = rng.uniform(0, 5, 2)
        for qp in factors:
            roots = np.array([r.value for r in roots_in_rectangle(qp, t1, t2, (-1.5, 0.5, 6)).roots])
            full = np.concatenate([roots, np.conj(roots)])
            for z in np.conj(full):
                assert np.min(np.abs(full - z)) < 1e-12
            for z in np.conj(roots):
                assert abs(qp(z, t1, t2)) / qp.scale(z, t1, t2) < ACCEPT_TOL


def test_roots_deduplicated(factors):
    roots = [r.value for r in roots_in_rectangle(factors[2], 1.0, 2.5, (-2, 0.5, 20)).roots]
    gaps = [abs(a - b) for i, a in enumerate(roots) for b in roots[i + 1:]]
    assert min(gaps) > 1e-6


def test_count_matches_winding_number(factors, rng):
    for case in range(20):
        qp = factors[case % len(factors)]
        t1, t2 = rng.uniform(0, 5, 2)
        lo = rng.uniform(-1.2, -0.2)
        hi = rng.uniform(0.05, 0.5)
        wmax = rng.uniform(2, 8)
        est = roots_in_rectangle(qp, t1, t2, (lo, hi, wmax))
        inside = [r for r in est.roots if lo < r.value.real < hi and r.value.imag < wmax]
        # each upper root has a mirror image unless it is real
        found = sum((1 if r.value.imag == 0 else 2) * r.multiplicity for r in inside)
        assert found == winding_count(lambda z: qp(z, t1, t2), lo, hi, wmax)


def test_modulus_bound_is_a_bound(factors, rng):
    for _ in range(10):
        t1, t2 = rng.uniform(0, 5, 2)
        for qp in factors:
            R = modulus_bound(qp, -0.3, t1, t2)
            est = roots_in_rectangle(qp, t1, t2, (-0.3, 0.5, R + 10))
            assert all(abs(r.value) <= R + 1e-9 for r in est.roots)


def test_default_step_follows_delay(centroid):
    assert default_step(centroid, 0.1, 0.1) == pytest.approx(0.02)
    assert default_step(centroid, 40.0, 1.0) == pytest.approx(0.5 / 40.0)


@pytest.mark.parametrize("name", ["a", "d", "e"])
def test_dominant_root_frozen(factors, name):
    r = dominant_root(factors, *POINTS[name])
    ref = FROZEN[name]
    assert r.value.real == pytest.approx(complex(ref).real, abs=1e-6)
    if isinstance(ref, complex):
        assert r.value.imag == pytest.approx(ref.imag, abs=1e-4)


@pytest.mark.parametrize("name", ["a", "d", "e"])
def test_dominant_root_has_nothing_to_its_right(factors, name):
    t1, t2 = POINTS[name]
    re = dominant_root(factors, t1, t2).value.real
    for qp in factors:
        R = modulus_bound(qp, re + 1e-3, t1, t2)
        n = winding_count(lambda z: qp(z, t1, t2), re + 1e-3, 1.0, R + 1.0)
        assert n == (1 if qp.is_centroid else 0)


def test_dominant_root_example_points(factors):
    a = dominant_root(factors, *POINTS["a"]).value.real
    d = dominant_root(factors, *POINTS["d"]).value.real
    e = dominant_root(factors, *POINTS["e"]).value.real
    assert a == pytest.approx(-0.0610, abs=0.005)
    assert d == pytest.approx(-0.04, abs=0.01)
    assert e == pytest.approx(-0.05, abs=0.01)
    assert e < d


def test_zero_delay_reduction(factors):
    # delay-free polynomials; the centroid's is s^2 whose second root stays at 0
    r = dominant_root(factors, 0.0, 0.0)
    best = max(np.roots(f.delay_free_coeffs()[::-1]).real.max() for f in factors)
    assert r.value.real == pytest.approx(best, abs=1e-9)


def test_unstable_point_has_right_half_plane_root(factors):
    assert dominant_root(factors, *POINTS["b"]).value.real == pytest.approx(0.121468, abs=1e-5)


def test_right_edge_widens(factors):
    # the unstable root sits within one grid step of the initial right edge
    r = dominant_root(factors, *POINTS["b"], sigma=(-2.0, 0.13))
    assert r.value.real == pytest.approx(0.121468, abs=1e-5)
    assert r.region.sigma_max == pytest.approx(0.63)


def test_empty_window_raises():
    qp = real_factor(0.0, Gains(5.0, 4.0))  # roots -2 +- i
    with pytest.raises(EmptySpectrumWindowError, match="empty spectrum window"):
        dominant_root([qp], 0.3, 0.3, sigma=(-0.3, 0.5))
    assert dominant_root([qp], 0.3, 0.3, sigma=(-0.6, 0.5)).value == pytest.approx(-2 + 1j)


def test_dominant_root_requires_factors():
    with pytest.raises(ValueError):
        dominant_root([], 0.1, 0.1)


def test_surface_continuity(surface, smap):
    re = surface.real
    stable = (smap.classes == 0) & np.isfinite(re)
    for axis in (0, 1):
        both = stable & np.roll(stable, -1, axis=axis)
        if axis == 0:
            both[-1, :] = False
        else:
            both[:, -1] = False
        jump = np.abs(np.roll(re, -1, axis=axis) - re)[both]
        assert jump.max() < 0.5


def test_surface_has_no_missing_cells(surface):
    assert surface.missing == []


def test_surface_masked_cells_left_empty(surface, smap):
    assert np.all(np.isnan(surface.real[smap.distance < 2 * H]))


def test_approach_to_origin_slows_consensus(factors):
    """Re(s_dom) tends to 0 as tau1 -> 0: the structural root gets company."""
    values = [dominant_root(factors, t, t).value.real for t in (0.1, 0.03, 0.01, 0.001)]
    assert all(a < b for a, b in zip(values, values[1:]))
    assert values[-1] > -0.003
    # near the tau2 axis the decay rate is about 2 tau1
    assert dominant_root(factors, 0.01, 0.0).value.real == pytest.approx(-0.02, rel=0.01)


@pytest.mark.xfail(strict=True, reason="the origin cell is not the fastest in its neighbourhood")
def test_origin_cell_is_fastest_in_neighbourhood(factors):
    h = H
    origin = dominant_root(factors, h / 2, h / 2).value.real
    around = [dominant_root(factors, h / 2 + i * h, h / 2 + j * h).value.real
              for i in range(3) for j in range(3) if (i, j) != (0, 0)]
    assert origin <= min(around)
