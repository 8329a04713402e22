"""Directed communication topologies and the weighted adjacency matrix C.

Agents are 1-indexed throughout, so agent ``j`` listens to the agents in
``informers[j - 1]``.  An edge ``k -> j`` means that agent k informs agent j.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    AgentIndexError,
    DuplicateEdgeError,
    EigenvalueConvergenceError,
    NoInformersError,
    SelfLoopError,
    TopologyError,
)

REAL_TOL = 1e-9
UNIT_CLUSTER_TOL = 1e-6


@dataclass(frozen=True)
class DirectedTopology:
    n: int
    informers: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.n < 2:
            raise TopologyError(f"need at least 2 agents, got n={self.n}")
        if len(self.informers) != self.n:
            raise TopologyError(
                f"informer table has {len(self.informers)} rows for n={self.n}"
            )
        for j, group in enumerate(self.informers, start=1):
            if len(set(group)) != len(group):
                raise DuplicateEdgeError(f"agent {j} lists an informer twice")
            for k in group:
                if not 1 <= k <= self.n:
                    raise AgentIndexError(
                        f"informer {k} of agent {j} is outside [1, {self.n}]"
                    )
                if k == j:
                    raise SelfLoopError(f"agent {j} lists itself as informer")
            if not group:
                raise NoInformersError(f"agent {j} has no informers")

    @property
    def in_degrees(self) -> tuple[int, ...]:
        return tuple(len(group) for group in self.informers)

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Edges ``(k, j)`` meaning k informs j, ordered by receiver."""
        return [(k, j) for j, group in enumerate(self.informers, start=1) for k in group]

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "DirectedTopology":
        table: list[list[int]] = [[] for _ in range(n)]
        seen = set()
        for edge in edges:
            k, j = int(edge[0]), int(edge[1])
            for idx in (k, j):
                if not 1 <= idx <= n:
                    raise AgentIndexError(f"edge {k} -> {j}: agent {idx} is outside [1, {n}]")
            if k == j:
                raise SelfLoopError(f"edge {k} -> {j} is a self-loop")
            if (k, j) in seen:
                raise DuplicateEdgeError(f"edge {k} -> {j} appears more than once")
            seen.add((k, j))
            table[j - 1].append(k)
        for j, group in enumerate(table, start=1):
            if not group:
                raise NoInformersError(f"agent {j} has no informers")
        return cls(n, tuple(tuple(g) for g in table))

    @classmethod
    def from_informers(cls, informers: Sequence[Sequence[int]]) -> "DirectedTopology":
        return cls(len(informers), tuple(tuple(int(k) for k in g) for g in informers))


class Eigenvalue(NamedTuple):
    value: complex
    kind: str  # "real" or "complex"
    representative: bool  # True for real eigenvalues and for the Im > 0 member of a pair


@dataclass(frozen=True)
class WeightedAdjacency:
    C: np.ndarray
    spectrum: tuple[Eigenvalue, ...]
    spanning_tree: bool

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([e.value for e in self.spectrum])

    @property
    def unit_multiplicity(self) -> int:
        return count_unit_eigenvalues(self.spectrum)


def _parse_edge_list(text: str) -> DirectedTopology:
    n = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if n is None:
            parts = line.split()
            if len(parts) != 2 or parts[0] != "n":
                raise TopologyError(f"line {lineno}: expected 'n <count>', got {raw!r}")
            try:
                n = int(parts[1])
            except ValueError:
                raise TopologyError(f"line {lineno}: agent count {parts[1]!r} is not an integer")
            continue
        if "->" not in line:
            raise TopologyError(f"line {lineno}: expected 'k -> j', got {raw!r}")
        left, right = line.split("->", 1)
        try:
            edges.append((int(left), int(right)))
        except ValueError:
            raise TopologyError(f"line {lineno}: agent indices must be integers, got {raw!r}")
    if n is None:
        raise TopologyError("document does not declare the agent count ('n <count>')")
    return DirectedTopology.from_edges(n, edges)


def load_topology(document: str) -> DirectedTopology:
    """Parse an edge-list document or its JSON equivalent.

    Edge-list form::

        # comment
        n 5
        2 -> 1
        1 -> 2

    JSON form: ``{"n": 5, "edges": [[2, 1], [1, 2], ...]}``.
    """
    stripped = document.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(stripped)
            n = int(doc["n"])
            edges = doc["edges"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise TopologyError(f"malformed JSON topology: {exc}") from exc
        return DirectedTopology.from_edges(n, edges)
    return _parse_edge_list(document)


def load_topology_file(path: str | Path) -> DirectedTopology:
    return load_topology(Path(path).read_text(encoding="utf-8"))


def adjacency_matrix(topology: DirectedTopology) -> np.ndarray:
    """C = Delta^-1 A: row j holds 1/delta_j at the informers of agent j."""
    C = np.zeros((topology.n, topology.n))
    for j, group in enumerate(topology.informers):
        for k in group:
            C[j, k - 1] = 1.0 / len(group)
    return C


def spectrum(C: np.ndarray, real_tol: float = REAL_TOL) -> tuple[Eigenvalue, ...]:
    """Eigenvalues of C, sorted by descending real part.

    Eigenvalues with ``|Im| < real_tol`` are snapped to the real axis; the
    rest come in conjugate pairs, the ``Im > 0`` member flagged as the
    representative.
    """
    try:
        # LAPACK geev: balancing, Hessenberg reduction, shifted QR
        values = np.linalg.eigvals(np.asarray(C, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise EigenvalueConvergenceError(f"QR iteration did not converge: {exc}") from exc
    out = []
    for lam in values:
        if abs(lam.imag) < real_tol:
            out.append(Eigenvalue(complex(lam.real, 0.0), "real", True))
        else:
            out.append(Eigenvalue(complex(lam), "complex", lam.imag > 0))
    out.sort(key=lambda e: (-round(e.value.real, 12), -e.value.imag))
    return tuple(out)


def count_unit_eigenvalues(eigs: Iterable[Eigenvalue], tol: float = UNIT_CLUSTER_TOL) -> int:
    return sum(1 for e in eigs if abs(e.value - 1.0) < tol)


def has_spanning_tree(topology: DirectedTopology) -> bool:
    """True iff some agent reaches every agent along the information flow."""
    followers: list[list[int]] = [[] for _ in range(topology.n)]
    for k, j in topology.edges:
        followers[k - 1].append(j - 1)
    for root in range(topology.n):
        seen = {root}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v in followers[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if len(seen) == topology.n:
            return True
    return False


def weighted_adjacency(topology: DirectedTopology) -> WeightedAdjacency:
    C = adjacency_matrix(topology)
    return WeightedAdjacency(C, spectrum(C), has_spanning_tree(topology))


def example_topology() -> DirectedTopology:
    """The five-agent directed example used throughout the test suite."""
    return DirectedTopology.from_informers([[2], [1, 4], [2, 4], [3, 5], [2, 3]])
