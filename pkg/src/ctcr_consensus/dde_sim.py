"""Fixed-step simulation of the delayed PD consensus protocol.

    x_j'' = P (mean_{k in N_j} x_k(t - tau1) - x_j) + D (mean_{k in N_j} x_k'(t - tau2) - x_j')

Classical RK4; delayed states come from cubic Hermite interpolation of the
stored grid values (position with velocity, velocity with acceleration),
which keeps the local error at fourth order when stage times fall between
grid points.  The pre-history is constant.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import InputError
from .factorization import Gains, jordan_transform
from .topology import DirectedTopology, adjacency_matrix, spectrum

DIVERGENCE = 1e9
SETTLE_FRACTION = 0.02
MAX_SAMPLES = 20000


@dataclass
class SimConfig:
    """Integration settings.  ``dt=None`` picks the largest admissible step."""

    t_end: float = 200.0
    dt: float | None = None
    x0: tuple[float, ...] | None = None
    v0: tuple[float, ...] | None = None
    seed: int = 0
    spread: float = 5.0  # default positions are uniform on [-spread, spread]

    def step_limit(self, tau1: float, tau2: float) -> float:
        nonzero = [t for t in (tau1, tau2) if t > 0]
        if not nonzero:
            return 0.005
        return min(nonzero + [0.05]) / 10.0

    def resolve_dt(self, tau1: float, tau2: float) -> float:
        limit = self.step_limit(tau1, tau2)
        if self.dt is None:
            return limit
        if self.dt > limit * (1 + 1e-12):
            raise InputError(f"dt={self.dt} exceeds the admissible step {limit:.6g}")
        return float(self.dt)

    def initial_state(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        x = np.asarray(self.x0, float) if self.x0 is not None else rng.uniform(-self.spread, self.spread, n)
        v = np.asarray(self.v0, float) if self.v0 is not None else np.zeros(n)
        if x.shape != (n,) or v.shape != (n,):
            raise InputError(f"initial state must have {n} entries per agent")
        return x, v

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        doc = json.loads(text)
        for key in ("x0", "v0"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray  # (samples, n)
    v: np.ndarray
    tau1: float
    tau2: float
    gains: Gains
    dt: float
    diverged: bool
    C: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def spread(self) -> np.ndarray:
        return self.x.max(axis=1) - self.x.min(axis=1)

    def xi(self, T: np.ndarray | None = None) -> np.ndarray:
        """Modal coordinates T^-1 x(t) of the positions."""
        if T is None:
            T = jordan_transform(self.C, spectrum(self.C))
        return np.linalg.solve(T, self.x.T).T

    def to_csv(self) -> str:
        n = self.n
        head = ["t"] + [f"x{j}" for j in range(1, n + 1)] + [f"v{j}" for j in range(1, n + 1)]
        rows = np.column_stack([self.t, self.x, self.v])
        lines = [",".join(head)]
        lines += [",".join(f"{v:.12g}" for v in row) for row in rows]
        return "\n".join(lines) + "\n"


def _hermite(y0, d0, y1, d1, theta, h):
    t2 = theta * theta
    t3 = t2 * theta
    return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + theta) * h * d0
            + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * d1)


class _History:
    """Grid values of x, v and a with constant extension into t < 0."""

    def __init__(self, steps: int, n: int, dt: float):
        self.X = np.empty((steps + 1, n))
        self.V = np.empty((steps + 1, n))
        self.A = np.empty((steps + 1, n))
        self.dt = dt

    def position(self, k: int, c: float, tau: float):
        """x at t_k + c dt - tau."""
        return self._sample(k, c, tau, self.X, self.V)

    def velocity(self, k: int, c: float, tau: float):
        return self._sample(k, c, tau, self.V, self.A)

    def _sample(self, k, c, tau, Y, dY):
        pos = k + c - tau / self.dt  # fractional grid index
        if pos <= 0:
            return Y[0]
        i = int(math.floor(pos))
        theta = pos - i
        if theta < 1e-12:
            return Y[i]
        if i + 1 > k:
            raise RuntimeError("delayed sample reaches the current step")
        return _hermite(Y[i], dY[i], Y[i + 1], dY[i + 1], theta, self.dt)


def simulate(topology: DirectedTopology, gains: Gains, tau1: float, tau2: float,
             config: SimConfig | None = None) -> Trajectory:
    """Integrate the protocol from a constant pre-history up to ``config.t_end``."""
    config = config or SimConfig()
    if tau1 < 0 or tau2 < 0:
        raise InputError("delays must be nonnegative")
    C = adjacency_matrix(topology)
    n = topology.n
    dt = config.resolve_dt(tau1, tau2)
    steps = int(math.ceil(config.t_end / dt - 1e-9))
    P, D = gains.P, gains.D
    x, v = config.initial_state(n)
    hist = _History(steps, n, dt)
    stride = max(1, int(math.ceil((steps + 1) / MAX_SAMPLES)))

    def accel(k, c, xs, vs):
        xd = hist.position(k, c, tau1) if tau1 > 0 else xs
        vd = hist.velocity(k, c, tau2) if tau2 > 0 else vs
        return P * (C @ xd - xs) + D * (C @ vd - vs)

    ts, xs_out, vs_out = [], [], []
    diverged = False
    k = 0
    for k in range(steps + 1):
        hist.X[k], hist.V[k] = x, v
        a1 = accel(k, 0.0, x, v)
        hist.A[k] = a1
        if k % stride == 0 or k == steps:
            ts.append(k * dt)
            xs_out.append(x.copy())
            vs_out.append(v.copy())
        if not (np.all(np.isfinite(x)) and np.max(np.abs(x)) <= DIVERGENCE):
            diverged = True
            break
        if k == steps:
            break
        x2, v2 = x + 0.5 * dt * v, v + 0.5 * dt * a1
        a2 = accel(k, 0.5, x2, v2)
        x3, v3 = x + 0.5 * dt * v2, v + 0.5 * dt * a2
        a3 = accel(k, 0.5, x3, v3)
        x4, v4 = x + dt * v3, v + dt * a3
        a4 = accel(k, 1.0, x4, v4)
        x = x + dt / 6.0 * (v + 2 * v2 + 2 * v3 + v4)
        v = v + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    return Trajectory(np.array(ts), np.array(xs_out), np.array(vs_out), float(tau1),
                      float(tau2), gains, dt, diverged, C)


class ConsensusMetrics(NamedTuple):
    spread: np.ndarray
    settling_time: float | None
    consensus_value: float | None
    final_relative_spread: float
    diverged: bool
    xi_final: np.ndarray | None
    disagreement_decay: float | None  # max_j>=2 |xi_j(end)| / max |xi(0)|


def consensus_metrics(traj: Trajectory, T: np.ndarray | None = None,
                      settle_fraction: float = SETTLE_FRACTION) -> ConsensusMetrics:
    """Spread, settling time, agreement value and modal decay of a run.

    The settling time is the first sample after which the spread stays below
    ``settle_fraction`` of its initial value; it is None when that never
    happens within the horizon.
    """
    spread = traj.spread()
    s0 = spread[0] if spread[0] > 0 else 1.0
    rel = spread / s0
    below = rel < settle_fraction
    settling = None
    if not traj.diverged and below[-1]:
        above = np.nonzero(~below)[0]
        settling = float(traj.t[above[-1] + 1]) if len(above) else float(traj.t[0])
    final_rel = float(rel[-1])
    value = float(np.mean(traj.x[-1])) if settling is not None else None
    xi_final = decay = None
    if T is not None and not traj.diverged:
        xi = traj.xi(T)
        xi_final = xi[-1]
        ref = np.max(np.abs(xi[0])) or 1.0
        decay = float(np.max(np.abs(xi[-1, 1:])) / ref) if traj.n > 1 else 0.0
    return ConsensusMetrics(spread, settling, value, final_rel, traj.diverged, xi_final, decay)
