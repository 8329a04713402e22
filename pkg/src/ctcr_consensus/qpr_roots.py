"""Mapping-based root finding for the factor quasi-polynomials.

q is sampled on a rectangular grid of the complex plane; the zero-level
contours of Re q are traced by marching squares and Im q is inspected along
them.  Every sign change of Im q on a Re q = 0 contour brackets a root,
which Newton's method then refines.  Only the closed upper half-plane is
scanned (the grid dips one step below the real axis so real roots are
bracketed too); conjugates are implied by the real coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from skimage.measure import find_contours

from .errors import EmptySpectrumWindowError
from .factorization import QuasiPolynomial

log = logging.getLogger(__name__)

DEFAULT_STEP = 0.02
MAX_STEP = 0.05
SIGMA_MIN = -2.0
SIGMA_MAX = 0.5
OMEGA_MAX = 20.0
ACCEPT_TOL = 1e-9
NEWTON_TOL = 1e-12
DEDUP_TOL = 1e-6
ORIGIN_RADIUS = 1e-6
REAL_SNAP = 1e-9


class Region(NamedTuple):
    sigma_min: float
    sigma_max: float
    omega_max: float


class Root(NamedTuple):
    value: complex
    multiplicity: int
    residual: float  # |q(value)| / scale


@dataclass
class SpectrumEstimate:
    region: Region
    roots: list[Root]
    dropped: int = 0

    @property
    def rightmost(self) -> Root | None:
        return max(self.roots, key=lambda r: r.value.real, default=None)


def default_step(qp: QuasiPolynomial, tau1: float, tau2: float, base: float = DEFAULT_STEP) -> float:
    """Grid step resolving the oscillation of the largest delay exponential."""
    delay = max(a * tau1 + b * tau2 for a, b in qp.exponents)
    return min(base, MAX_STEP, 0.5 / max(delay, 1.0))


class _Target:
    """q, or q / s for a deflated centroid, with its derivative."""

    def __init__(self, qp: QuasiPolynomial, tau1: float, tau2: float, deflate: bool):
        self.qp, self.tau1, self.tau2, self.deflate = qp, tau1, tau2, deflate

    def __call__(self, s):
        q, qs, _, _ = self.qp.partials(s, self.tau1, self.tau2)
        if not self.deflate:
            return q, qs
        return q / s, (qs * s - q) / (s * s)

    def residual(self, s):
        return np.abs(self.qp(s, self.tau1, self.tau2)) / self.qp.scale(s, self.tau1, self.tau2)


@lru_cache(maxsize=128)
def _poly_grid(qp: QuasiPolynomial, sig0: float, nsig: int, om0: float, nom: int, step: float):
    """Term polynomials on a grid; cached because they do not depend on the delays."""
    sig = sig0 + step * np.arange(nsig)
    om = om0 + step * np.arange(nom)
    s = sig[None, :] + 1j * om[:, None]
    out = tuple(npoly.polyval(s, c) for c in qp.coeffs)
    for v in out:
        v.flags.writeable = False
    return sig, om, out


def _grid(qp: QuasiPolynomial, tau1, tau2, sig, om, deflate):
    """Target values on the grid (rows: omega, cols: sigma)."""
    step = sig[1] - sig[0]
    sig, om, polys = _poly_grid(qp, float(sig[0]), len(sig), float(om[0]), len(om), float(step))
    total = np.zeros((len(om), len(sig)), dtype=complex)
    for (a, b), p in zip(qp.exponents, polys):
        d = a * tau1 + b * tau2
        if d == 0:
            total += p
        else:
            total += p * (np.exp(-d * sig)[None, :] * np.exp(-1j * d * om)[:, None])
    if deflate:
        total /= sig[None, :] + 1j * om[:, None]
    return total


def _candidates(values, sig, om):
    """Points on Re = 0 contours where Im changes sign (linear estimate)."""
    re, im = values.real, values.imag
    step_s, step_w = sig[1] - sig[0], om[1] - om[0]
    out = []
    for path in find_contours(re, 0.0):
        r, c = path[:, 0], path[:, 1]
        # bilinear interpolation of Im along the contour
        r0 = np.clip(np.floor(r).astype(int), 0, im.shape[0] - 2)
        c0 = np.clip(np.floor(c).astype(int), 0, im.shape[1] - 2)
        fr, fc = r - r0, c - c0
        v = ((1 - fr) * (1 - fc) * im[r0, c0] + (1 - fr) * fc * im[r0, c0 + 1]
             + fr * (1 - fc) * im[r0 + 1, c0] + fr * fc * im[r0 + 1, c0 + 1])
        flip = np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) <= 0)[0]
        for k in flip:
            den = v[k] - v[k + 1]
            u = v[k] / den if den != 0 else 0.5
            rr = r[k] + u * (r[k + 1] - r[k])
            cc = c[k] + u * (c[k + 1] - c[k])
            out.append(sig[0] + cc * step_s + 1j * (om[0] + rr * step_w))
    return np.array(out, dtype=complex)


def _newton(target: _Target, s0: np.ndarray, iters: int = 60):
    """Newton with multiplicity estimation from the contraction of the steps.

    A root of multiplicity m makes plain Newton contract by (m - 1)/m per
    step; once that ratio is steady, the step is scaled by m.
    """
    s = s0.astype(complex).copy()
    m = np.ones(len(s), dtype=int)
    prev = np.full(len(s), np.inf)
    steady = np.zeros(len(s), dtype=int)
    done = np.zeros(len(s), dtype=bool)
    for _ in range(iters):
        act = ~done
        if not act.any():
            break
        with np.errstate(all="ignore"):
            f, df = target(s[act])
            step = np.where(df != 0, f / df, 0.0)
        size = np.abs(step)
        ratio = size / prev[act]
        guess = np.rint(1.0 / np.maximum(1.0 - ratio, 1e-3)).astype(int)
        plain = m[act] == 1
        stable = plain & (ratio > 0.3) & (ratio < 0.95) & (np.abs(ratio - (guess - 1) / guess) < 0.05)
        st = np.where(stable, steady[act] + 1, 0)
        mm = np.where(st >= 3, guess, m[act])
        s_new = s[act] - mm * step
        idx = np.nonzero(act)[0]
        s[idx] = s_new
        m[idx] = mm
        steady[idx] = st
        prev[idx] = size
        conv = (size <= 1e-15 * (1 + np.abs(s_new))) | ~np.isfinite(s_new)
        done[idx] = conv
    return s, m


def _solve(target: _Target, region: Region, step: float) -> SpectrumEstimate:
    sig = region.sigma_min + step * np.arange(int(math.ceil((region.sigma_max - region.sigma_min) / step - 1e-9)) + 1)
    # a half-step offset keeps the grid (and the deflated target) off the real axis
    om = -1.5 * step + step * np.arange(int(math.ceil(region.omega_max / step)) + 3)
    values = _grid(target.qp, target.tau1, target.tau2, sig, om, target.deflate)
    cand = _candidates(values, sig, om)
    if not len(cand):
        return SpectrumEstimate(region, [])
    s, m = _newton(target, cand)
    ok = np.isfinite(s)
    s, m = s[ok], m[ok]
    snap = np.abs(s.imag) <= REAL_SNAP * np.maximum(1.0, np.abs(s))
    s = np.where(snap, s.real + 0j, s)
    res = target.residual(s)
    if target.deflate:
        # the deflated target is exact at the origin where q/s is not evaluated
        f, _ = target(np.where(np.abs(s) > 0, s, 1e-300))
        res = np.where(np.abs(s) > 0, res, np.abs(f))
    inside = ((s.real >= region.sigma_min - step) & (s.real <= region.sigma_max + step)
              & (s.imag >= 0) & (s.imag <= region.omega_max + step))
    good = inside & (res < ACCEPT_TOL)
    dropped = int(np.sum(inside & ~good))
    if dropped:
        log.debug("%d candidate(s) failed to converge", dropped)
    roots: list[Root] = []
    for k in np.argsort(res[good], kind="stable"):
        val, mult, r = complex(s[good][k]), int(m[good][k]), float(res[good][k])
        if all(abs(val - other.value) > DEDUP_TOL for other in roots):
            roots.append(Root(val, mult, r))
    roots.sort(key=lambda r: (-r.value.real, r.value.imag))
    return SpectrumEstimate(region, roots, dropped)


def roots_in_rectangle(qp: QuasiPolynomial, tau1: float, tau2: float,
                       region: Region | Sequence[float] = (SIGMA_MIN, SIGMA_MAX, OMEGA_MAX),
                       step: float | None = None, deflate: bool = False) -> SpectrumEstimate:
    """Roots of ``qp`` in [sigma_min, sigma_max] x [0, omega_max].

    ``deflate`` removes the structural origin root of a centroid factor by
    working with q(s)/s.
    """
    region = Region(*map(float, region))
    if not (region.sigma_max > region.sigma_min and region.omega_max > 0):
        raise ValueError(f"empty region {region}")
    if step is None:
        step = default_step(qp, tau1, tau2)
    return _solve(_Target(qp, tau1, tau2, deflate and qp.is_centroid), region, step)


class DominantRoot(NamedTuple):
    value: complex
    factor: int  # index into the factor list
    region: Region


def modulus_bound(qp: QuasiPolynomial, sigma_lo: float, tau1: float, tau2: float) -> float:
    """Radius beyond which ``qp`` has no root with Re s >= sigma_lo.

    The undelayed term carries the highest power of s, so on that half-plane
    a root needs |s|^n <= sum_k B_k |s|^k with B_k collecting the remaining
    coefficient magnitudes, each delayed one weighted by exp(-d sigma_lo).
    """
    n = qp.coeffs.shape[1] - 1
    bound = np.zeros(n + 1)
    lead = 0.0
    for (a, b), c in qp.terms:
        d = a * tau1 + b * tau2
        w = np.abs(c) * math.exp(-d * sigma_lo) if (a or b) else np.abs(c)
        if a == 0 and b == 0:
            lead = c[n]
            w = w.copy()
            w[n] = 0.0
        elif c[n] != 0:
            return math.inf  # delayed top-order term: neutral type, no bound
        bound += w
    if lead == 0:
        return math.inf
    poly = np.concatenate([[abs(lead)], -bound[n - 1::-1]])
    r = np.roots(poly)
    r = r[np.abs(r.imag) < 1e-9 * (1 + np.abs(r))].real
    return float(r.max()) if len(r) else 0.0


_STAGES = (-0.25, -1.0)


def _rightmost(factors, tau1, tau2, lo, hi, omega_max, step):
    """Rightmost deflated root over all factors in [lo, hi] x [0, omega cap]."""
    best = None
    for k, qp in enumerate(factors):
        st = default_step(qp, tau1, tau2) if step is None else step
        cap = min(omega_max, math.ceil(modulus_bound(qp, lo, tau1, tau2) + 2 * st))
        if cap <= 0:
            continue
        r = roots_in_rectangle(qp, tau1, tau2, (lo, hi, cap), st, deflate=True).rightmost
        if r is not None and (best is None or r.value.real > best[0].real):
            best = (r.value, k, st)
    return best


def dominant_root(factors: Sequence[QuasiPolynomial], tau1: float, tau2: float,
                  sigma=(SIGMA_MIN, SIGMA_MAX), omega_max=OMEGA_MAX,
                  step: float | None = None, floor: float | None = None) -> DominantRoot:
    """Rightmost characteristic root over all factors.

    The rectangle grows to the right while the rightmost root sits within a
    grid step of its edge, and to the left (twice) if it holds no root.
    Narrow left edges are tried first; since no root with Re s above the
    left edge can lie beyond :func:`modulus_bound`, the frequency range is
    cut there, which gives the same answer as the full rectangle.  ``floor``
    is an optional extra first left edge, e.g. the real part of a root
    already known to exist.
    """
    if not factors:
        raise ValueError("no factors given")
    lo, hi = sigma
    edges = [e for e in ((floor,) if floor is not None else ()) + _STAGES if lo < e < hi]
    edges.append(lo)
    for widen in range(3):
        for edge in edges:
            best = _rightmost(factors, tau1, tau2, edge, hi, omega_max, step)
            if best is None:
                continue
            for _ in range(40):
                if best[0].real < hi - best[2]:
                    break
                hi += 0.5
                best = _rightmost(factors, tau1, tau2, edge, hi, omega_max, step)
            return DominantRoot(best[0], best[1], Region(edge, hi, omega_max))
        lo *= 2.0
        edges = [lo]
    raise EmptySpectrumWindowError(
        f"empty spectrum window: no characteristic root in [{lo / 2:.3g}, {hi:.3g}] x [0, {omega_max:.3g}] "
        f"at tau=({tau1:.6g}, {tau2:.6g})")


def factor_dominant(qp: QuasiPolynomial, tau1: float, tau2: float,
                    sigma=(SIGMA_MIN, SIGMA_MAX), omega_max=OMEGA_MAX,
                    step: float | None = None) -> complex:
    """Rightmost root of a single factor (structural centroid root deflated)."""
    return dominant_root([qp], tau1, tau2, sigma, omega_max, step).value


@dataclass
class DominantSurface:
    """Re(s_dom) on the cell centres of [0, tau_max]^2 (rows along tau2)."""

    tau_max: float
    h: float
    axis: np.ndarray
    real: np.ndarray
    imag: np.ndarray
    factor: np.ndarray
    missing: list = field(default_factory=list)

    def at(self, tau1: float, tau2: float) -> float:
        n = len(self.axis)
        i1 = int(np.clip(np.floor(tau1 / self.h), 0, n - 1))
        i2 = int(np.clip(np.floor(tau2 / self.h), 0, n - 1))
        return float(self.real[i2, i1])


def dominant_surface(factors: Sequence[QuasiPolynomial], tau_max: float, h: float,
                     sigma=(SIGMA_MIN, SIGMA_MAX), omega_max=OMEGA_MAX,
                     step: float | None = None, workers: int = 1,
                     mask: np.ndarray | None = None) -> DominantSurface:
    """Re(s_dom) at every cell centre; failed cells are left NaN and listed.

    ``mask`` (same shape as the raster) restricts the work to selected cells.
    """
    n = int(round(tau_max / h))
    axis = (np.arange(n) + 0.5) * h
    real = np.full((n, n), np.nan)
    imag = np.full((n, n), np.nan)
    which = np.full((n, n), -1, dtype=int)
    missing = []

    def one(i2, i1):
        return dominant_root(factors, axis[i1], axis[i2], sigma, omega_max, step)

    cells = [(i2, i1) for i2 in range(n) for i1 in range(n) if mask is None or mask[i2, i1]]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda c: _guarded(one, *c), cells))
    else:
        results = [_guarded(one, *c) for c in cells]
    for (i2, i1), r in zip(cells, results):
        if isinstance(r, Exception):
            missing.append((i2, i1, str(r)))
            continue
        real[i2, i1], imag[i2, i1], which[i2, i1] = r.value.real, r.value.imag, r.factor
    return DominantSurface(float(tau_max), float(h), axis, real, imag, which, missing)


def _guarded(fn, *args):
    try:
        return fn(*args)
    except (EmptySpectrumWindowError, FloatingPointError, ArithmeticError) as exc:
        return exc
