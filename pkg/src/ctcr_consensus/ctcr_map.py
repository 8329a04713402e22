"""Root counting in the delay plane by cluster treatment of characteristic roots.

The number of right-half-plane roots of a factor can only change where the
delay pair sits on a crossing curve.  Starting from the delay-free count at
the origin, the count at (tau1, tau2) is obtained by walking the L-shaped
path (0, 0) -> (tau1, 0) -> (tau1, tau2) and adding 2 * RT for each curve
crossed, RT being the root tendency w.r.t. the delay that varies on the leg.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import NonSimpleCrossingError, UnclassifiablePointError
from .factorization import QuasiPolynomial, delay_free_unstable_count, root_sensitivity
from .sds_curves import (
    DEFAULT_RESOLUTION,
    DelaySpaceCurves,
    kernel_and_offspring,
    trace_building_curves,
)

log = logging.getLogger(__name__)

TOL_CURVE = 1e-6
TANGENT_TOL = 1e-10
SIMPLE_TOL = 1e-12
DETOUR_STEP = 10 * TOL_CURVE
MAX_DETOURS = 5
DEFAULT_STEP = 0.02

STABLE, UNSTABLE, MARGINAL = 0, 1, 2
CLASS_NAMES = {STABLE: "stable", UNSTABLE: "unstable", MARGINAL: "marginal"}


def root_tendency(qp: QuasiPolynomial, tau1: float, tau2: float, omega: float,
                  delay_index: int) -> int:
    """sgn Re(ds/dtau_k) for the imaginary root i omega; 0 when tangential."""
    if delay_index not in (1, 2):
        raise ValueError("delay_index must be 1 or 2")
    d1, d2, qs = root_sensitivity(qp, 1j * omega, tau1, tau2)
    if abs(qs) <= SIMPLE_TOL * float(qp.scale(1j * omega, tau1, tau2)):
        raise NonSimpleCrossingError(
            f"non-simple crossing at tau=({tau1:.6g}, {tau2:.6g}), omega={omega:.6g}")
    d = complex(d1 if delay_index == 1 else d2)
    if abs(d.real) < TANGENT_TOL * abs(d):
        return 0
    return 1 if d.real > 0 else -1


# --------------------------------------------------------------------------
# crossings of an axis-parallel leg


@dataclass
class LegCrossings:
    t: np.ndarray       # position along the leg (the varying delay)
    omega: np.ndarray
    rt: np.ndarray      # root tendency w.r.t. the varying delay
    tangential: bool    # some crossing could not be signed reliably


def _refine(qp, var, fixed, t, omega, iters=8):
    """Newton on q(i omega) = 0 in (omega, t) with the other delay fixed."""
    t = np.array(t, dtype=float)
    omega = np.array(omega, dtype=float)
    for _ in range(iters):
        tau = (t, fixed) if var == 0 else (fixed, t)
        q, qs, qt1, qt2 = qp.partials(1j * omega, *tau)
        qt = qt1 if var == 0 else qt2
        dw = 1j * qs
        det = dw.real * qt.imag - qt.real * dw.imag
        ok = np.abs(det) > 1e-300
        det = np.where(ok, det, 1.0)
        step_w = (q.real * qt.imag - qt.real * q.imag) / det
        step_t = (dw.real * q.imag - q.real * dw.imag) / det
        omega = omega - np.where(ok, step_w, 0.0)
        t = t - np.where(ok, step_t, 0.0)
    tau = (t, fixed) if var == 0 else (fixed, t)
    res = np.abs(qp(1j * omega, *tau)) / qp.scale(1j * omega, *tau)
    return t, omega, res


def leg_crossings(dsc: DelaySpaceCurves, var: int, fixed: float, lo: float, hi: float) -> LegCrossings:
    """Crossing points on the leg {tau_var in (lo, hi], tau_other = fixed}.

    ``var`` is 0 for a leg along tau1 and 1 for a leg along tau2.  Chords
    straddling the leg are found with a half-open test (so a shared vertex
    is counted once), then the exact crossing is located by Newton.
    """
    qp = dsc.qp
    other = 1 - var
    seg = dsc.segments
    empty = LegCrossings(np.empty(0), np.empty(0), np.empty(0, dtype=int), False)
    if not len(seg):
        return empty
    a, b = seg[:, 0, other], seg[:, 1, other]
    mask = (np.minimum(a, b) <= fixed) & (fixed < np.maximum(a, b))
    if not mask.any():
        return empty
    s = seg[mask]
    w = dsc.seg_omega[mask]
    chain = dsc.seg_chain[mask]
    u = (fixed - s[:, 0, other]) / (s[:, 1, other] - s[:, 0, other])
    t0 = s[:, 0, var] + u * (s[:, 1, var] - s[:, 0, var])
    w0 = w[:, 0] + u * (w[:, 1] - w[:, 0])
    span = np.linalg.norm(s[:, 1] - s[:, 0], axis=1)
    near = (t0 > lo - 2 * span - TOL_CURVE) & (t0 <= hi + 2 * span + TOL_CURVE)
    if not near.any():
        return empty
    t0, w0, span, chain = t0[near], w0[near], span[near], chain[near]
    t, omega, res = _refine(qp, var, fixed, t0, w0)
    trusted = (res < 1e-9) & (np.abs(t - t0) <= 3 * span + 1e-9) & (omega > 0)
    if not trusted.all():
        log.debug("%d crossing(s) kept at chord position", int(np.sum(~trusted)))
    t = np.where(trusted, t, t0)
    omega = np.where(trusted, omega, w0)
    keep = (t > lo) & (t <= hi)
    t, omega, chain = t[keep], omega[keep], chain[keep]
    if not len(t):
        return empty
    order = np.argsort(t, kind="stable")
    t, omega, chain = t[order], omega[order], chain[order]
    # different chains refining onto one point: the same locus traced twice
    dup = np.zeros(len(t), dtype=bool)
    tangential = False
    for i in range(1, len(t)):
        if abs(t[i] - t[i - 1]) < 1e-9 * (1 + abs(t[i])) and abs(omega[i] - omega[i - 1]) < 1e-7:
            if chain[i] != chain[i - 1]:
                dup[i] = True
            else:
                tangential = True  # two chords of one chain meeting at a fold
    t, omega = t[~dup], omega[~dup]
    tau = (t, np.full_like(t, fixed)) if var == 0 else (np.full_like(t, fixed), t)
    d1, d2, qs = root_sensitivity(qp, 1j * omega, *tau)
    d = d1 if var == 0 else d2
    scale = qp.scale(1j * omega, *tau)
    if np.any(np.abs(qs) <= SIMPLE_TOL * scale):
        raise NonSimpleCrossingError(f"non-simple crossing on the leg tau_{other + 1}={fixed:.6g}")
    rt = np.where(np.abs(d.real) < TANGENT_TOL * np.abs(d), 0, np.sign(d.real)).astype(int)
    tangential = tangential or bool(np.any(rt == 0))
    return LegCrossings(t, omega, rt, tangential)


# --------------------------------------------------------------------------
# single-point counting


def _base_count(qp: QuasiPolynomial) -> int:
    count = delay_free_unstable_count(qp)
    expected_marginal = 2 if qp.is_centroid else 0
    if count.marginal != expected_marginal:
        raise UnclassifiablePointError(
            f"{qp.kind} factor has {count.marginal} imaginary-axis root(s) at zero delay; "
            "the delay-free anchor is ambiguous")
    return count.unstable


def _curves_for(qp, tau_max, resolution=DEFAULT_RESOLUTION):
    return kernel_and_offspring(trace_building_curves(qp, resolution), qp, tau_max)


def _walk(dsc: DelaySpaceCurves, path: Sequence[tuple[float, float]]) -> int:
    """Count along a path of axis-parallel legs; raises on tangential legs."""
    total = 0
    for (x0, y0), (x1, y1) in zip(path[:-1], path[1:]):
        if x0 == x1 and y0 == y1:
            continue
        var = 0 if y0 == y1 else 1
        fixed = y0 if var == 0 else x0
        start, end = (x0, x1) if var == 0 else (y0, y1)
        lo, hi, sign = (start, end, 1) if end > start else (end, start, -1)
        cr = leg_crossings(dsc, var, fixed, lo, hi)
        if cr.tangential:
            raise _Tangential
        if len(cr.t) and (abs(cr.t[-1] - hi) < TOL_CURVE or abs(cr.t[0] - lo) < TOL_CURVE):
            raise _Tangential
        total += sign * 2 * int(cr.rt.sum())
    return total


class _Tangential(Exception):
    pass


def distance_to_curves(dsc: DelaySpaceCurves, tau1: float, tau2: float) -> float:
    """Euclidean distance from a delay pair to the nearest chord of ``dsc``."""
    seg = dsc.segments
    if not len(seg):
        return np.inf
    p = np.array([tau1, tau2])
    a, b = seg[:, 0], seg[:, 1]
    ab = b - a
    den = np.einsum("ij,ij->i", ab, ab)
    u = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.where(den > 0, den, 1.0), 0.0, 1.0)
    return float(np.min(np.linalg.norm(a + u[:, None] * ab - p, axis=1)))


def unstable_count(qp: QuasiPolynomial, tau1: float, tau2: float,
                   curves: DelaySpaceCurves | None = None) -> int:
    """Number of roots with Re s > 0 of one factor (structural s = 0 excluded).

    The L-path is tried first; if it grazes a tangential crossing the last
    leg is moved sideways in steps of ``DETOUR_STEP`` and reconnected.
    """
    if tau1 < 0 or tau2 < 0:
        raise ValueError("delays must be nonnegative")
    if curves is None:
        curves = _curves_for(qp, max(tau1, tau2) + 1.0)
    if distance_to_curves(curves, tau1, tau2) < TOL_CURVE:
        raise UnclassifiablePointError(
            f"({tau1:.6g}, {tau2:.6g}) lies on a crossing curve (marginal)")
    base = _base_count(qp)
    for attempt in range(MAX_DETOURS + 1):
        if attempt == 0:
            path = [(0.0, 0.0), (tau1, 0.0), (tau1, tau2)]
        else:
            # staircase: climb at a shifted tau1, then step over to the target
            x = tau1 + attempt * DETOUR_STEP * (1 if attempt % 2 else -1)
            x = max(x, 0.5 * tau1)
            path = [(0.0, 0.0), (x, 0.0), (x, tau2), (tau1, tau2)]
        try:
            return base + _walk(curves, path)
        except _Tangential:
            continue
    raise UnclassifiablePointError(
        f"no transversal path to ({tau1:.6g}, {tau2:.6g}) after {MAX_DETOURS} detours")


# --------------------------------------------------------------------------
# the map


@dataclass
class StabilityMap:
    """Unstable-root counts on the cell centres of a square grid.

    ``axis[i]`` is the delay of cell i; grids are indexed ``[i2, i1]`` (rows
    along tau2).  ``distance`` is the distance of each cell centre to the
    nearest crossing curve of any factor.
    """

    tau_max: float
    h: float
    axis: np.ndarray
    factors: list[QuasiPolynomial]
    counts: list[np.ndarray]
    total: np.ndarray
    classes: np.ndarray
    distance: np.ndarray
    curves: list[DelaySpaceCurves]
    consensus_possible: bool
    timings: dict = field(default_factory=dict)

    def cell(self, tau1: float, tau2: float) -> tuple[int, int]:
        n = len(self.axis)
        i1 = int(np.clip(np.floor(tau1 / self.h), 0, n - 1))
        i2 = int(np.clip(np.floor(tau2 / self.h), 0, n - 1))
        return i2, i1

    def classify(self, tau1: float, tau2: float) -> str:
        """Exact classification of an arbitrary delay pair (not the raster)."""
        dist = min(distance_to_curves(c, tau1, tau2) for c in self.curves)
        if dist < TOL_CURVE:
            return "marginal"
        nu = sum(unstable_count(f, tau1, tau2, c) for f, c in zip(self.factors, self.curves))
        return "stable" if nu == 0 else "unstable"

    def total_count(self, tau1: float, tau2: float) -> int:
        return sum(unstable_count(f, tau1, tau2, c) for f, c in zip(self.factors, self.curves))

    @property
    def stable_mask(self) -> np.ndarray:
        return self.classes == STABLE

    def class_names(self) -> np.ndarray:
        return np.vectorize(CLASS_NAMES.get)(self.classes)


def _column_counts(dsc: DelaySpaceCurves, axis: np.ndarray, tau_max: float):
    """NU of one factor at every cell centre, column by column."""
    n = len(axis)
    base = _base_count(dsc.qp)
    counts = np.zeros((n, n), dtype=int)
    marginal = np.zeros((n, n), dtype=bool)
    leg1 = leg_crossings(dsc, 0, 0.0, 0.0, tau_max)
    redo = []
    for i1, x in enumerate(axis):
        before = leg1.t < x
        if leg1.tangential and np.any(leg1.rt[before] == 0) or np.any(np.abs(leg1.t - x) < TOL_CURVE):
            redo.append(i1)
            continue
        start = base + 2 * int(leg1.rt[before].sum())
        col = leg_crossings(dsc, 1, x, 0.0, tau_max)
        if col.tangential:
            redo.append(i1)
            continue
        steps = np.searchsorted(col.t, axis, side="right")
        cum = np.concatenate([[0], np.cumsum(2 * col.rt)])
        counts[:, i1] = start + cum[steps]
        if len(col.t):
            gap = np.abs(axis[:, None] - col.t[None, :]).min(axis=1)
            marginal[:, i1] = gap < TOL_CURVE
    for i1 in redo:
        log.info("%s factor: column tau1=%.6g re-routed point by point", dsc.qp.kind, axis[i1])
        for i2, y in enumerate(axis):
            try:
                counts[i2, i1] = unstable_count(dsc.qp, axis[i1], y, dsc)
            except UnclassifiablePointError:
                marginal[i2, i1] = True
    return counts, marginal


def _curve_distance(curves: Sequence[DelaySpaceCurves], axis: np.ndarray, h: float) -> np.ndarray:
    """Distance raster to the union of chords, sampled at h/4 and refined nearby."""
    seg = np.vstack([c.segments for c in curves if len(c.segments)] or [np.empty((0, 2, 2))])
    n = len(axis)
    if not len(seg):
        return np.full((n, n), np.inf)
    a, b = seg[:, 0], seg[:, 1]
    length = np.linalg.norm(b - a, axis=1)
    pieces = np.maximum(1, np.ceil(length / (0.25 * h)).astype(int))
    idx = np.repeat(np.arange(len(seg)), pieces + 1)
    frac = np.concatenate([np.linspace(0.0, 1.0, k + 1) for k in pieces])
    samples = a[idx] + frac[:, None] * (b - a)[idx]
    T1, T2 = np.meshgrid(axis, axis)
    centres = np.column_stack([T1.ravel(), T2.ravel()])
    dist, nearest = cKDTree(samples).query(centres)
    # exact point-to-chord distance wherever the sampled value is small
    close = np.nonzero(dist < 0.25 * h)[0]
    if len(close):
        tree = cKDTree(0.5 * (a + b))
        reach = 0.5 * length.max() + 0.25 * h
        for k in close:
            p = centres[k]
            cand = np.asarray(tree.query_ball_point(p, reach), dtype=int)
            if not len(cand):
                continue
            ab = b[cand] - a[cand]
            den = np.einsum("ij,ij->i", ab, ab)
            u = np.clip(np.einsum("ij,ij->i", p - a[cand], ab) / np.where(den > 0, den, 1.0), 0, 1)
            dist[k] = min(dist[k], np.min(np.linalg.norm(a[cand] + u[:, None] * ab - p, axis=1)))
    return dist.reshape(n, n)


def stability_map(factors: Sequence[QuasiPolynomial], tau_max: float, h: float = DEFAULT_STEP,
                  curves: Sequence[DelaySpaceCurves] | None = None,
                  resolution: int = DEFAULT_RESOLUTION,
                  consensus_possible: bool | None = None) -> StabilityMap:
    """Classify the cell centres of [0, tau_max]^2 at step ``h``.

    A cell is stable when no factor has a right-half-plane root (the
    centroid's structural origin root aside), marginal within ``TOL_CURVE``
    of a crossing curve, unstable otherwise.
    """
    import time

    if not (tau_max > 0 and h > 0):
        raise ValueError("tau_max and h must be positive")
    factors = list(factors)
    timings = {}
    t0 = time.perf_counter()
    if curves is None:
        curves = [_curves_for(f, tau_max, resolution) for f in factors]
    curves = list(curves)
    timings["curves"] = time.perf_counter() - t0
    n = int(round(tau_max / h))
    axis = (np.arange(n) + 0.5) * h
    t0 = time.perf_counter()
    counts, marg = [], np.zeros((n, n), dtype=bool)
    for dsc in curves:
        c, m = _column_counts(dsc, axis, tau_max)
        counts.append(c)
        marg |= m
    total = np.sum(counts, axis=0) if counts else np.zeros((n, n), dtype=int)
    if np.any(total < 0):
        log.warning("%d cells with negative root count", int(np.sum(total < 0)))
    timings["count"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    distance = _curve_distance(curves, axis, h)
    timings["distance"] = time.perf_counter() - t0
    marg |= distance < TOL_CURVE
    classes = np.where(marg, MARGINAL, np.where(total == 0, STABLE, UNSTABLE)).astype(np.int8)
    if consensus_possible is None:
        consensus_possible = sum(f.is_centroid for f in factors) == 1
    return StabilityMap(float(tau_max), float(h), axis, factors, counts, total, classes,
                        distance, curves, bool(consensus_possible), timings)
