"""Stability-switching curves through the spectral delay space (SDS).

At an imaginary root s = i omega only the phases nu_k = tau_k omega enter the
exponentials, so every crossing lives in the 2 pi x 2 pi building block of
(nu1, nu2).  After the half-angle substitution each factor becomes a pair of
real polynomials in omega (real and imaginary parts); they share a root
exactly where the Sylvester resultant vanishes.  Sign changes of that
resultant over a grid of the building block locate the building curves,
which are then mapped back to the delay plane (kernel) and replicated with
period 2 pi / omega (offspring).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegeneratePointError
from .factorization import QuasiPolynomial, root_sensitivity

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
OMEGA_MIN = 1e-6
RESIDUAL_TOL = 1e-8
RECOVERY_TOL = 1e-8
BISECT_TOL = 1e-10
DEDUP_TOL = 1e-8
BRIDGE_RADIUS = 0.25
DEFAULT_RESOLUTION = 2000
_CHUNK_CELLS = 250_000


class SdsPoint(NamedTuple):
    nu1: float
    nu2: float
    omega: float


# --------------------------------------------------------------------------
# half-angle substitution and the resultant


def _phase_forms(nu):
    """Rational form of exp(-i nu) as ``N / Dn`` with ``Dn > 0``.

    Uses z = tan(nu/2) where |z| <= 1 and w = cot(nu/2) elsewhere, so the
    substitution never meets its singular line nu = pi.
    """
    half = 0.5 * np.asarray(nu, dtype=float)
    c, s = np.cos(half), np.sin(half)
    use_tan = np.abs(c) >= np.abs(s)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(use_tan, s / c, c / s)
    N = np.where(use_tan, (1.0 - 1j * t) ** 2, (t - 1j) ** 2)
    return N, 1.0 + t * t


def _complex_coeffs(qp: QuasiPolynomial, N1, D1, N2, D2):
    """Coefficients (ascending in omega) of the cleared q(i omega)."""
    A, B = qp.max_exponents
    width = qp.coeffs.shape[1]
    ik = 1j ** np.arange(width)
    shape = np.broadcast(N1, N2).shape
    out = np.zeros(shape + (width,), dtype=complex)
    for (a, b), c in qp.terms:
        K = N1 ** a * D1 ** (A - a) * N2 ** b * D2 ** (B - b)
        out += np.asarray(K)[..., None] * (c * ik)
    return out


def frequency_polynomials(qp: QuasiPolynomial, z1, z2):
    """Real and imaginary parts of q(i omega) after the tangent substitution.

    ``z_k = tan(nu_k / 2)``; denominators ``(1 + z1^2)^a_max (1 + z2^2)^b_max``
    are cleared.  Returns ``(f, g)``, coefficient arrays ascending in omega
    with formal degree equal to the factor order.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    cc = _complex_coeffs(qp, (1 - 1j * z1) ** 2, 1 + z1 * z1, (1 - 1j * z2) ** 2, 1 + z2 * z2)
    return cc.real, cc.imag


def sylvester_matrix(f, g):
    """Sylvester matrix of ascending coefficient arrays (batched on leading axes)."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    m, n = f.shape[-1] - 1, g.shape[-1] - 1
    batch = np.broadcast_shapes(f.shape[:-1], g.shape[:-1])
    M = np.zeros(batch + (m + n, m + n))
    fd, gd = f[..., ::-1], g[..., ::-1]
    for r in range(n):
        M[..., r, r:r + m + 1] = fd
    for r in range(m):
        M[..., n + r, r:r + n + 1] = gd
    return M


def resultant(f, g) -> float:
    """Sylvester resultant of two real polynomials (ascending coefficients).

    Formal degrees are taken from the array lengths, so a vanishing leading
    coefficient in one argument only rescales the result.
    """
    f = np.atleast_1d(np.asarray(f, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if not f.any() and not g.any():
        raise DegeneratePointError("both polynomials vanish identically: degenerate point")
    if len(f) == 1 and len(g) == 1:
        return 1.0
    return float(np.linalg.det(sylvester_matrix(f, g)))


def resultant_sign(qp: QuasiPolynomial, nu1, nu2) -> np.ndarray:
    """Sign of F(nu1, nu2), the resultant of the cleared real/imag parts.

    The two substitution forms differ by positive factors only, so signs are
    comparable across the whole building block.
    """
    N1, D1 = _phase_forms(nu1)
    N2, D2 = _phase_forms(nu2)
    cc = _complex_coeffs(qp, N1, D1, N2, D2)
    sign, _ = np.linalg.slogdet(sylvester_matrix(cc.real, cc.imag))
    return sign


# --------------------------------------------------------------------------
# tracing


def _real_positive_roots(coeffs):
    """Real roots > OMEGA_MIN of an ascending coefficient array."""
    c = np.trim_zeros(np.asarray(coeffs, dtype=float)[::-1], "f")
    if len(c) < 2:
        return np.empty(0)
    big = np.max(np.abs(c))
    while len(c) > 1 and abs(c[0]) < 1e-13 * big:
        c = c[1:]
    if len(c) < 2:
        return np.empty(0)
    r = np.roots(c)
    r = r[np.abs(r.imag) <= 1e-7 * (1.0 + np.abs(r.real))].real
    return r[r > OMEGA_MIN]


def _recover_omega(f, g):
    """Common positive root of f and g, or nan.

    Roots come from the polynomial of lower effective degree and are scored
    by the relative size of the other polynomial.
    """
    def degree(c):
        nz = np.nonzero(np.abs(c) > 1e-13 * max(np.max(np.abs(c)), 1e-300))[0]
        return nz[-1] if len(nz) else -1

    df, dg = degree(f), degree(g)
    if dg < 0 and df < 0:
        return math.nan
    solve, check = (g, f) if (0 <= dg <= df or df < 0) else (f, g)
    cands = _real_positive_roots(solve)
    if not len(cands):
        return math.nan
    norm = np.sum(np.abs(check)) or 1.0
    powers = cands[:, None] ** np.arange(len(check))
    scores = np.abs(powers @ check) / (norm * np.maximum(1.0, cands) ** (len(check) - 1))
    best = int(np.argmin(scores))
    return float(cands[best]) if scores[best] < RECOVERY_TOL else math.nan


def _polish(qp: QuasiPolynomial, omega, nu1, nu2, free_axis, iters=8):
    """Newton on q(i omega; nu1, nu2) = 0 in (omega, nu_free), other phase fixed."""
    omega = np.array(omega, dtype=float)
    nu = [np.array(nu1, dtype=float), np.array(nu2, dtype=float)]
    for _ in range(iters):
        q, dw, dn1, dn2 = qp.sds_values(omega, nu[0], nu[1])
        dn = dn1 if free_axis == 0 else dn2
        det = dw.real * dn.imag - dn.real * dw.imag
        ok = np.abs(det) > 1e-300
        det = np.where(ok, det, 1.0)
        step_w = (q.real * dn.imag - dn.real * q.imag) / det
        step_n = (dw.real * q.imag - q.real * dw.imag) / det
        omega = omega - np.where(ok, step_w, 0.0)
        nu[free_axis] = nu[free_axis] - np.where(ok, step_n, 0.0)
    return omega, nu[0], nu[1]


def sds_residual(qp: QuasiPolynomial, omega, nu1, nu2):
    """Relative residual |q(i omega)| / scale at an SDS point."""
    q = qp.sds_values(omega, nu1, nu2)[0]
    return np.abs(q) / qp.sds_scale(omega)


def _sign_grid(qp: QuasiPolynomial, nu: np.ndarray) -> np.ndarray:
    """sign F on the product grid, rows indexed by nu2 and columns by nu1."""
    res = len(nu)
    N, Dn = _phase_forms(nu)
    S = np.empty((res, res), dtype=np.int8)
    rows = max(1, _CHUNK_CELLS // res)
    for start in range(0, res, rows):
        sl = slice(start, min(res, start + rows))
        cc = _complex_coeffs(qp, N[None, :], Dn[None, :], N[sl, None], Dn[sl, None])
        sign, _ = np.linalg.slogdet(sylvester_matrix(cc.real, cc.imag))
        S[sl] = np.where(sign == 0, 1, sign)
    return S


def _brackets(S: np.ndarray, nu: np.ndarray, free_axis: int):
    """Sign-change brackets of the free phase, wrapping across 2 pi.

    ``S`` has rows indexed by nu2 and columns by nu1.
    """
    h = nu[1] - nu[0]
    axis = 1 if free_axis == 0 else 0
    i2, i1 = np.nonzero(S != np.roll(S, -1, axis=axis))
    sign_lo = S[i2, i1]
    if free_axis == 0:
        fixed, lo = nu[i2], nu[i1]
    else:
        fixed, lo = nu[i1], nu[i2]
    return fixed, lo, lo + h, sign_lo


def _bisect(qp, fixed, lo, hi, sign_lo, free_axis):
    while True:
        width = hi - lo
        if not len(width) or width.max() < BISECT_TOL:
            break
        mid = 0.5 * (lo + hi)
        if free_axis == 0:
            sm = resultant_sign(qp, mid, fixed)
        else:
            sm = resultant_sign(qp, fixed, mid)
        same = sm == sign_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


@dataclass
class BuildingCurve:
    """A linked branch of SDS points; phases are unwrapped along the branch."""

    nu1: np.ndarray
    nu2: np.ndarray
    omega: np.ndarray
    closed: bool = False

    def __len__(self):
        return len(self.omega)

    def points(self) -> list[SdsPoint]:
        return [
            SdsPoint(a % TWO_PI, b % TWO_PI, w)
            for a, b, w in zip(self.nu1, self.nu2, self.omega)
        ]


class BuildingCurves(list):
    """List of :class:`BuildingCurve` with tracing diagnostics attached."""

    def __init__(self, curves=(), *, resolution=0, discarded=0, accepted=0):
        super().__init__(curves)
        self.resolution = resolution
        self.discarded = discarded
        self.accepted = accepted


def _solve_brackets(qp, nu, S, free_axis):
    fixed, lo, hi, sign_lo = _brackets(S, nu, free_axis)
    free = _bisect(qp, fixed, lo, hi, sign_lo, free_axis)
    nu1, nu2 = (free, fixed) if free_axis == 0 else (fixed, free)
    N1, D1 = _phase_forms(nu1)
    N2, D2 = _phase_forms(nu2)
    cc = _complex_coeffs(qp, N1, D1, N2, D2)
    omega = np.array([_recover_omega(f, g) for f, g in zip(cc.real, cc.imag)])
    return nu1, nu2, omega


def trace_building_curves(qp: QuasiPolynomial, resolution: int = DEFAULT_RESOLUTION) -> BuildingCurves:
    """Locate and link the building curves of one factor in [0, 2 pi)^2.

    Both scan directions (rows of fixed nu2 and columns of fixed nu1) come
    from one sign grid of the resultant.  Each bracket is bisected, omega is
    recovered as the positive common root, then (omega, nu_free) is polished
    by Newton and the point is kept only if its residual is below
    ``RESIDUAL_TOL`` times the factor scale.
    """
    if resolution < 360:
        raise ValueError("resolution must be at least 360 grid points per axis")
    h = TWO_PI / resolution
    nu = (np.arange(resolution) + 0.5) * h
    S = _sign_grid(qp, nu)

    parts = []
    discarded = 0
    for free_axis in (0, 1):
        nu1, nu2, omega = _solve_brackets(qp, nu, S, free_axis)
        good = np.isfinite(omega)
        discarded += int(np.sum(~good))
        nu1, nu2, omega = nu1[good], nu2[good], omega[good]
        if not len(omega):
            continue
        omega, nu1, nu2 = _polish(qp, omega, nu1, nu2, free_axis)
        ok = (omega > OMEGA_MIN) & (sds_residual(qp, omega, nu1, nu2) < RESIDUAL_TOL)
        discarded += int(np.sum(~ok))
        parts.append(np.column_stack([nu1[ok] % TWO_PI, nu2[ok] % TWO_PI, omega[ok]]))

    if not parts:
        return BuildingCurves(resolution=resolution, discarded=discarded)
    pts = _dedupe(np.vstack(parts))
    curves = _link(pts, 3.0 * h)
    log.debug("factor %s: %d SDS points, %d branches, %d discarded",
              qp.kind, len(pts), len(curves), discarded)
    return BuildingCurves(curves, resolution=resolution, discarded=discarded, accepted=len(pts))


def _torus_delta(a, b):
    d = b - a
    return (d + math.pi) % TWO_PI - math.pi


def _dedupe(pts: np.ndarray) -> np.ndarray:
    if len(pts) < 2:
        return pts
    tree = cKDTree(pts[:, :2] % TWO_PI, boxsize=TWO_PI)
    pairs = tree.query_pairs(DEDUP_TOL, output_type="ndarray")
    if not len(pairs):
        return pts
    same_omega = np.abs(pts[pairs[:, 0], 2] - pts[pairs[:, 1], 2]) < 1e-6 * (1 + pts[pairs[:, 0], 2])
    drop = np.unique(pairs[same_omega].max(axis=1))
    return np.delete(pts, drop, axis=0)


def _omega_compatible(w1, w2, rel=0.1, abs_=0.05):
    return np.abs(w1 - w2) <= rel * np.maximum(w1, w2) + abs_


def _pair_distance(pts, pairs):
    return np.hypot(_torus_delta(pts[pairs[:, 0], 0], pts[pairs[:, 1], 0]),
                    _torus_delta(pts[pairs[:, 0], 1], pts[pairs[:, 1], 1]))


def _link(pts: np.ndarray, threshold: float) -> list[BuildingCurve]:
    """Link SDS points into polylines on the torus.

    Greedy shortest-edge linking (degree <= 2, no cycles) within
    ``threshold``, followed by a bridging pass that joins open ends up to
    ``BRIDGE_RADIUS`` apart.  Such gaps appear where a branch touches its
    own omega -> -omega mirror image (the resultant cannot separate the two
    zero sets there).
    """
    n = len(pts)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    degree = np.zeros(n, dtype=int)
    nbrs: list[list[int]] = [[] for _ in range(n)]

    def connect(candidates):
        for a, b in candidates.tolist():
            if degree[a] >= 2 or degree[b] >= 2:
                continue
            ra, rb = find(a), find(b)
            if ra == rb:
                continue
            parent[ra] = rb
            degree[a] += 1
            degree[b] += 1
            nbrs[a].append(b)
            nbrs[b].append(a)

    tree = cKDTree(pts[:, :2], boxsize=TWO_PI)
    pairs = tree.query_pairs(threshold, output_type="ndarray")
    if len(pairs):
        pairs = pairs[_omega_compatible(pts[pairs[:, 0], 2], pts[pairs[:, 1], 2])]
        connect(pairs[np.argsort(_pair_distance(pts, pairs), kind="stable")])

    ends = np.nonzero(degree < 2)[0]
    if len(ends) > 1:
        etree = cKDTree(pts[ends, :2], boxsize=TWO_PI)
        bp = etree.query_pairs(max(BRIDGE_RADIUS, threshold), output_type="ndarray")
        if len(bp):
            bp = ends[bp]
            bp = bp[_omega_compatible(pts[bp[:, 0], 2], pts[bp[:, 1], 2], 0.1, 0.02)]
            connect(bp[np.argsort(_pair_distance(pts, bp), kind="stable")])

    curves = []
    visited = np.zeros(n, dtype=bool)

    def walk(start):
        order = [start]
        visited[start] = True
        prev, cur = -1, start
        while True:
            nxt = [v for v in nbrs[cur] if v != prev and not visited[v]]
            if not nxt:
                return order
            prev, cur = cur, nxt[0]
            visited[cur] = True
            order.append(cur)

    for start in range(n):
        if not visited[start] and degree[start] <= 1:
            curves.append(walk(start))
    for start in range(n):
        if not visited[start]:  # every vertex has degree 2 only on a cycle
            curves.append(walk(start))

    out = []
    for order in curves:
        p = pts[order]
        nu1 = p[0, 0] + np.concatenate([[0.0], np.cumsum(_torus_delta(p[:-1, 0], p[1:, 0]))])
        nu2 = p[0, 1] + np.concatenate([[0.0], np.cumsum(_torus_delta(p[:-1, 1], p[1:, 1]))])
        closed = False
        if len(order) >= 4:
            gap = math.hypot(_torus_delta(p[-1, 0], p[0, 0]), _torus_delta(p[-1, 1], p[0, 1]))
            closed = gap <= max(BRIDGE_RADIUS, threshold) and bool(
                _omega_compatible(p[-1, 2], p[0, 2], 0.1, 0.02))
        out.append(BuildingCurve(nu1, nu2, p[:, 2].copy(), closed))
    return out


# --------------------------------------------------------------------------
# back to the delay plane


@dataclass
class DelayCurve:
    """Polyline of crossing points in the (tau1, tau2) plane.

    ``shift`` is the generator offset (j1, j2); (0, 0) marks a kernel piece.
    ``rt1``/``rt2`` are root tendencies w.r.t. tau1 and tau2 at each vertex.
    """

    tau1: np.ndarray
    tau2: np.ndarray
    omega: np.ndarray
    rt1: np.ndarray
    rt2: np.ndarray
    shift: tuple[int, int]
    branch: int

    def __len__(self):
        return len(self.omega)

    @property
    def is_kernel(self) -> bool:
        return self.shift == (0, 0)


@dataclass
class DelaySpaceCurves:
    """Kernel and offspring curves of one factor inside [0, tau_max]^2.

    ``segments`` (m, 2, 2) holds every chord of the shifted branches that
    touches the window, including the connector chords where a branch leaves
    one building block for the next; ``seg_omega`` carries the crossing
    frequency at both ends and ``seg_chain`` a (branch, shift) label.
    """

    qp: QuasiPolynomial
    tau_max: float
    kernel: list[DelayCurve]
    offspring: list[DelayCurve]
    segments: np.ndarray
    seg_omega: np.ndarray
    seg_chain: np.ndarray
    branches: int
    dropped: int = 0

    @property
    def curves(self) -> list[DelayCurve]:
        return self.kernel + self.offspring

    def vertices(self) -> np.ndarray:
        """All exported vertices as rows (tau1, tau2, omega)."""
        rows = [np.column_stack([c.tau1, c.tau2, c.omega]) for c in self.curves]
        return np.vstack(rows) if rows else np.empty((0, 3))


def _tendency_signs(qp, tau1, tau2, omega):
    d1, d2, _ = root_sensitivity(qp, 1j * omega, tau1, tau2)
    return np.sign(d1.real).astype(np.int8), np.sign(d2.real).astype(np.int8)


def _in_window(t1, t2, tau_max):
    return (t1 >= 0) & (t1 <= tau_max) & (t2 >= 0) & (t2 <= tau_max)


def _shift_range(nu, omega, tau_max):
    lo = math.floor(-np.max(nu) / TWO_PI)
    hi = math.ceil((tau_max * np.max(omega) - np.min(nu)) / TWO_PI)
    return range(lo, hi + 1)


def kernel_and_offspring(curves: BuildingCurves, qp: QuasiPolynomial, tau_max: float) -> DelaySpaceCurves:
    """Map building curves of ``qp`` to the delay plane up to ``tau_max``.

    A branch point (nu1, nu2, omega) produces the delays
    ((nu1 + 2 pi j1) / omega, (nu2 + 2 pi j2) / omega).  Branches are kept
    with unwrapped phases and every integer shift that can reach the window
    is generated, so that chords crossing the edges of the building block
    are retained for classification.  Each vertex is then labelled with its
    generator in [0, 2 pi)^2; pieces with generator (0, 0) form the kernel.
    """
    if not tau_max > 0:
        raise ValueError("tau_max must be positive")
    kernel: list[DelayCurve] = []
    offspring: list[DelayCurve] = []
    segs, seg_w, seg_id = [], [], []
    dropped = 0
    chain_id = 0
    for b, curve in enumerate(curves):
        nu1, nu2, omega = curve.nu1, curve.nu2, curve.omega
        keep = omega >= OMEGA_MIN
        dropped += int(np.sum(~keep))
        if not keep.all():
            log.info("branch %d: %d vertices below omega_min dropped", b, int(np.sum(~keep)))
        nu1, nu2, omega = nu1[keep], nu2[keep], omega[keep]
        if len(omega) < 1:
            continue
        if curve.closed and len(omega) > 2:
            nu1 = np.append(nu1, nu1[-1] + _torus_delta(nu1[-1], nu1[0]))
            nu2 = np.append(nu2, nu2[-1] + _torus_delta(nu2[-1], nu2[0]))
            omega = np.append(omega, omega[0])
        g1 = np.floor(nu1 / TWO_PI).astype(int)
        g2 = np.floor(nu2 / TWO_PI).astype(int)
        for j1 in _shift_range(nu1, omega, tau_max):
            t1 = (nu1 + TWO_PI * j1) / omega
            if t1.max() < 0 or t1.min() > tau_max:
                continue
            for j2 in _shift_range(nu2, omega, tau_max):
                t2 = (nu2 + TWO_PI * j2) / omega
                if t2.max() < 0 or t2.min() > tau_max:
                    continue
                chain_id += 1
                if len(omega) >= 2:
                    a = np.column_stack([t1[:-1], t2[:-1]])
                    c = np.column_stack([t1[1:], t2[1:]])
                    lo, hi = np.minimum(a, c), np.maximum(a, c)
                    hit = np.all((hi >= 0) & (lo <= tau_max), axis=1)
                    if hit.any():
                        segs.append(np.stack([a[hit], c[hit]], axis=1))
                        seg_w.append(np.column_stack([omega[:-1][hit], omega[1:][hit]]))
                        seg_id.append(np.full(int(hit.sum()), chain_id))
                _emit_pieces(qp, t1, t2, omega, g1 + j1, g2 + j2, b, tau_max, kernel, offspring)
    if segs:
        segments = np.vstack(segs)
        seg_omega = np.vstack(seg_w)
        seg_chain = np.concatenate(seg_id)
    else:
        segments = np.empty((0, 2, 2))
        seg_omega = np.empty((0, 2))
        seg_chain = np.empty(0, dtype=int)
    return DelaySpaceCurves(qp, float(tau_max), kernel, offspring, segments, seg_omega,
                            seg_chain, branches=len(curves), dropped=dropped)


def _emit_pieces(qp, t1, t2, omega, gen1, gen2, branch, tau_max, kernel, offspring):
    """Split a shifted branch into runs of one generator, clipped to the window."""
    inside = _in_window(t1, t2, tau_max)
    # a vertex is exported when it or a neighbour lies in the window
    near = inside.copy()
    near[1:] |= inside[:-1]
    near[:-1] |= inside[1:]
    valid = near & (gen1 >= 0) & (gen2 >= 0)
    if not valid.any():
        return
    label = np.where(valid, gen1 * 100003 + gen2, -1)
    cuts = np.nonzero(np.diff(label) != 0)[0] + 1
    for run in np.split(np.arange(len(omega)), cuts):
        if label[run[0]] < 0 or len(run) < 2:
            continue
        a, b, w = t1[run], t2[run], omega[run]
        rt1, rt2 = _tendency_signs(qp, a, b, w)
        shift = (int(gen1[run[0]]), int(gen2[run[0]]))
        piece = DelayCurve(a, b, w, rt1, rt2, shift, branch)
        (kernel if shift == (0, 0) else offspring).append(piece)
