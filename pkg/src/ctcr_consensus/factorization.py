"""Block-diagonal factorization of the delayed consensus dynamics.

Every real eigenvalue lam of C contributes the second-order factor

    s^2 + D s + P - lam (D s e^{-tau2 s} + P e^{-tau1 s})

and every conjugate pair contributes the fourth-order product of the two
complex second-order factors, written with real coefficients through
Re(lam) and |lam|^2.  The full characteristic function is the product of
all factors, so the system is analysed one small quasi-polynomial at a time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import DefectiveAdjacencyError, InputError
from .topology import UNIT_CLUSTER_TOL, Eigenvalue, WeightedAdjacency

MARGIN_TOL = 1e-9
RANK_TOL = 1e-8

CENTROID = "centroid"
REAL = "real-disagreement"
COMPLEX = "complex-disagreement"


@dataclass(frozen=True)
class Gains:
    P: float
    D: float

    def __post_init__(self):
        if not (self.P > 0 and self.D > 0):
            raise InputError(f"gains must be positive, got P={self.P}, D={self.D}")


@dataclass(frozen=True, eq=False)
class QuasiPolynomial:
    """``sum_{a,b} p_ab(s) exp(-(a tau1 + b tau2) s)`` with real ``p_ab``.

    ``exponents`` is an (m, 2) integer array of (a, b) pairs and ``coeffs`` an
    (m, order + 1) array of polynomial coefficients in ascending powers of s.
    """

    exponents: np.ndarray
    coeffs: np.ndarray
    lam: complex
    kind: str
    order: int
    _dcoeffs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        exps = np.asarray(self.exponents, dtype=int).reshape(-1, 2)
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(len(exps), -1)
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "_dcoeffs", np.array([npoly.polyder(c) for c in coeffs]))

    @property
    def terms(self) -> list[tuple[tuple[int, int], np.ndarray]]:
        return [((int(a), int(b)), c) for (a, b), c in zip(self.exponents, self.coeffs)]

    @property
    def is_centroid(self) -> bool:
        return self.kind == CENTROID

    @property
    def max_exponents(self) -> tuple[int, int]:
        return int(self.exponents[:, 0].max()), int(self.exponents[:, 1].max())

    def _term_values(self, s, tau1, tau2):
        """Per-term polynomial values, derivatives, delays and exponentials.

        Terms run along a trailing axis; ``s`` and the delays broadcast.
        """
        s, t1, t2 = np.broadcast_arrays(np.asarray(s, dtype=complex),
                                        np.asarray(tau1, dtype=float), np.asarray(tau2, dtype=float))
        width = self.coeffs.shape[1]
        powers = s[..., None] ** np.arange(width)
        polys = powers @ self.coeffs.T
        dpolys = powers[..., :width - 1] @ self._dcoeffs.T
        delays = t1[..., None] * self.exponents[:, 0] + t2[..., None] * self.exponents[:, 1]
        exps = np.exp(-delays * s[..., None])
        return s, polys, dpolys, delays, exps

    def __call__(self, s, tau1, tau2):
        _, polys, _, _, exps = self._term_values(s, tau1, tau2)
        return np.sum(polys * exps, axis=-1)

    def partials(self, s, tau1, tau2):
        """Return ``(q, dq/ds, dq/dtau1, dq/dtau2)``."""
        s, polys, dpolys, delays, exps = self._term_values(s, tau1, tau2)
        pe = polys * exps
        q = np.sum(pe, axis=-1)
        qs = np.sum((dpolys - delays * polys) * exps, axis=-1)
        spe = s[..., None] * pe
        qt1 = -np.sum(self.exponents[:, 0] * spe, axis=-1)
        qt2 = -np.sum(self.exponents[:, 1] * spe, axis=-1)
        return q, qs, qt1, qt2

    def scale(self, s, tau1, tau2):
        """``sum |c_k| |s|^k |exp(-d s)|`` over all terms; the residual yardstick.

        Built from coefficient magnitudes so it stays positive at roots of
        individual term polynomials.
        """
        s, t1, t2 = np.broadcast_arrays(np.asarray(s, dtype=complex),
                                        np.asarray(tau1, dtype=float), np.asarray(tau2, dtype=float))
        powers = np.abs(s)[..., None] ** np.arange(self.coeffs.shape[1])
        delays = t1[..., None] * self.exponents[:, 0] + t2[..., None] * self.exponents[:, 1]
        return np.sum((powers @ np.abs(self.coeffs).T) * np.exp(-delays * s.real[..., None]), axis=-1)

    # --- spectral-delay-space form: s = i omega, exponentials fixed by phases

    def sds_values(self, omega, nu1, nu2):
        """``q(i omega)`` with ``tau_k omega = nu_k`` plus its partials.

        Returns ``(q, dq/domega, dq/dnu1, dq/dnu2)``.
        """
        s = 1j * np.asarray(omega, dtype=float)
        q = dqw = dn1 = dn2 = 0
        for (a, b), c, dc in zip(self.exponents, self.coeffs, self._dcoeffs):
            e = np.exp(-1j * (a * np.asarray(nu1, float) + b * np.asarray(nu2, float)))
            pe = npoly.polyval(s, c) * e
            q = q + pe
            dqw = dqw + 1j * npoly.polyval(s, dc) * e
            if a:
                dn1 = dn1 - 1j * a * pe
            if b:
                dn2 = dn2 - 1j * b * pe
        shape = np.broadcast(s, nu1, nu2).shape
        return tuple(np.broadcast_to(v, shape) * 1 for v in (q, dqw, dn1, dn2))

    def sds_scale(self, omega):
        s = 1j * np.asarray(omega, dtype=float)
        return sum(np.abs(npoly.polyval(s, c)) for c in self.coeffs)

    def delay_free_coeffs(self) -> np.ndarray:
        """Ascending coefficients of the ordinary polynomial at tau1 = tau2 = 0."""
        return self.coeffs.sum(axis=0)

    def to_dict(self) -> dict:
        return {
            "lambda": [self.lam.real, self.lam.imag],
            "kind": self.kind,
            "order": self.order,
            "terms": [
                {"a": a, "b": b, "coeffs": [float(x) for x in c]} for (a, b), c in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "QuasiPolynomial":
        terms = doc["terms"]
        width = max(len(t["coeffs"]) for t in terms)
        coeffs = [list(t["coeffs"]) + [0.0] * (width - len(t["coeffs"])) for t in terms]
        return cls(
            exponents=[(t["a"], t["b"]) for t in terms],
            coeffs=coeffs,
            lam=complex(*doc["lambda"]),
            kind=doc["kind"],
            order=int(doc["order"]),
        )


def evaluate(qp: QuasiPolynomial, s, tau1, tau2):
    return qp(s, tau1, tau2)


def root_sensitivity(qp: QuasiPolynomial, s, tau1, tau2):
    """``(ds/dtau1, ds/dtau2, dq/ds)`` along a simple root, by implicit differentiation."""
    _, qs, qt1, qt2 = qp.partials(s, tau1, tau2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -qt1 / qs, -qt2 / qs, qs


def real_factor(lam: float, gains: Gains, kind: str | None = None) -> QuasiPolynomial:
    P, D = gains.P, gains.D
    if kind is None:
        kind = CENTROID if abs(lam - 1.0) < UNIT_CLUSTER_TOL else REAL
    if kind == CENTROID:
        # lam = 1 is exact for a row-stochastic C; snapping keeps q(0) == 0 exact
        lam = 1.0
    return QuasiPolynomial(
        exponents=[(0, 0), (1, 0), (0, 1)],
        coeffs=[[P, D, 1.0], [-lam * P, 0.0, 0.0], [0.0, -lam * D, 0.0]],
        lam=complex(lam),
        kind=kind,
        order=2,
    )


def complex_factor(lam: complex, gains: Gains) -> QuasiPolynomial:
    P, D = gains.P, gains.D
    lam = complex(lam)
    if lam.imag < 0:
        lam = lam.conjugate()
    two_re = 2.0 * lam.real
    mod2 = lam.real ** 2 + lam.imag ** 2
    base = np.array([P, D, 1.0])  # s^2 + D s + P
    rows = {
        (0, 0): npoly.polymul(base, base),
        (1, 0): -two_re * P * base,
        (0, 1): -two_re * D * npoly.polymul([0.0, 1.0], base),
        (2, 0): [mod2 * P * P],
        (1, 1): [0.0, 2.0 * mod2 * P * D],
        (0, 2): [0.0, 0.0, mod2 * D * D],
    }
    coeffs = np.zeros((len(rows), 5))
    for i, c in enumerate(rows.values()):
        coeffs[i, : len(c)] = c
    return QuasiPolynomial(list(rows), coeffs, lam, COMPLEX, 4)


def build_factors(eigs: Sequence[Eigenvalue], gains: Gains) -> list[QuasiPolynomial]:
    """One factor per real eigenvalue and one per conjugate pair."""
    factors = []
    for e in eigs:
        if not e.representative:
            continue
        if e.kind == "real":
            factors.append(real_factor(e.value.real, gains))
        else:
            factors.append(complex_factor(e.value, gains))
    return factors


class RootCount(NamedTuple):
    unstable: int
    marginal: int


def delay_free_unstable_count(qp: QuasiPolynomial, tol: float = MARGIN_TOL) -> RootCount:
    """Open right-half-plane and imaginary-axis root counts at zero delay."""
    c = qp.delay_free_coeffs()
    roots = np.roots(c[::-1])
    re = roots.real
    return RootCount(int(np.sum(re > tol)), int(np.sum(np.abs(re) <= tol)))


def _eigen_clusters(eigs: Sequence[Eigenvalue], tol: float = UNIT_CLUSTER_TOL):
    clusters: list[list[complex]] = []
    for e in eigs:
        for cl in clusters:
            if abs(cl[0] - e.value) < tol:
                cl.append(e.value)
                break
        else:
            clusters.append([e.value])
    return clusters


def check_diagonalizable(C: np.ndarray, eigs: Sequence[Eigenvalue]) -> None:
    """Raise :class:`DefectiveAdjacencyError` on a deficient eigenspace."""
    n = C.shape[0]
    for cl in _eigen_clusters(eigs):
        if len(cl) < 2:
            continue
        lam = np.mean(cl)
        sv = np.linalg.svd(C - lam * np.eye(n), compute_uv=False)
        geometric = int(np.sum(sv < RANK_TOL * max(1.0, sv[0])))
        if geometric < len(cl):
            raise DefectiveAdjacencyError(
                f"eigenvalue cluster near {lam:.6g} has algebraic multiplicity {len(cl)} "
                f"but only {geometric} independent eigenvector(s); C is not diagonalizable"
            )


def factorize(adj: WeightedAdjacency, gains: Gains) -> list[QuasiPolynomial]:
    check_diagonalizable(adj.C, adj.spectrum)
    return build_factors(adj.spectrum, gains)


def jordan_transform(C: np.ndarray, eigs: Sequence[Eigenvalue]) -> np.ndarray:
    """Real T with T^-1 C T block diagonal (1x1 real, 2x2 rotation blocks).

    Columns follow the representative order of ``eigs``; the eigenvector of
    lam = 1 is the normalized ones vector 1/sqrt(n).
    """
    check_diagonalizable(C, eigs)
    n = C.shape[0]
    cols = []
    done = set()
    for idx, e in enumerate(eigs):
        if not e.representative or idx in done:
            continue
        same = [i for i, f in enumerate(eigs) if f.representative and abs(f.value - e.value) < UNIT_CLUSTER_TOL]
        done.update(same)
        lam = np.mean([eigs[i].value for i in same])
        if e.kind == "real" and abs(lam - 1.0) < UNIT_CLUSTER_TOL and len(same) == 1:
            cols.append(np.ones(n) / np.sqrt(n))
            continue
        _, sv, vh = np.linalg.svd(C - lam * np.eye(n))
        basis = vh[-len(same):].conj().T
        for v in basis.T:
            if e.kind == "real":
                cols.append(v.real / np.linalg.norm(v.real))
            else:
                cols.extend([v.real, -v.imag])
    T = np.column_stack(cols)
    if np.linalg.cond(T) > 1e10:
        raise DefectiveAdjacencyError("eigenvector matrix is numerically singular")
    return T


def factors_to_json(factors: Sequence[QuasiPolynomial]) -> str:
    return json.dumps([f.to_dict() for f in factors], indent=2)


def factors_from_json(text: str) -> list[QuasiPolynomial]:
    return [QuasiPolynomial.from_dict(d) for d in json.loads(text)]
