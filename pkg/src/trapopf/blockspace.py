"""Variable partitioning, colouring, box geometry, and criticality measures.

The decision vector is split into N node sub-vectors; nodes are grouped into
K colour classes such that no two nodes sharing a coupling edge have the same
colour.  A Gauss-Seidel sweep then visits colours sequentially while all nodes
of one colour update independently.  Feasible sets are per-coordinate boxes
(possibly with infinite bounds), which keeps projections, tangent-cone
projections, and active-set queries closed-form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ACTIVE_TOL",
    "ActiveSet",
    "BlockVector",
    "BoxSet",
    "CouplingGraph",
    "Partition",
    "active_set",
    "criticality",
    "greedy_coloring",
    "project_box",
    "projected_gradient",
]

# Absolute tolerance deciding whether a coordinate sits on its bound.
ACTIVE_TOL = 1e-10


@dataclass(frozen=True)
class CouplingGraph:
    """Undirected coupling structure between nodes (no self-loops)."""

    num_nodes: int
    edges: frozenset[tuple[int, int]]
    _adjacency: tuple[tuple[int, ...], ...] = field(
        repr=False, compare=False, default=()
    )

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable[Sequence[int]]) -> "CouplingGraph":
        if num_nodes <= 0:
            raise ValueError("num_nodes must be positive")
        normalized = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < num_nodes and 0 <= j < num_nodes):
                raise ValueError(f"edge ({i}, {j}) out of range")
            normalized.add((min(i, j), max(i, j)))
        adj: list[list[int]] = [[] for _ in range(num_nodes)]
        for i, j in sorted(normalized):
            adj[i].append(j)
            adj[j].append(i)
        graph = cls(num_nodes, frozenset(normalized))
        object.__setattr__(graph, "_adjacency", tuple(tuple(sorted(a)) for a in adj))
        return graph

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._adjacency[i]

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def degree(self, i: int) -> int:
        return len(self._adjacency[i])

    def to_json(self) -> str:
        return json.dumps(
            {"num_nodes": self.num_nodes, "edges": sorted(map(list, self.edges))},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "CouplingGraph":
        doc = json.loads(text)
        return cls.from_edges(doc["num_nodes"], doc["edges"])


@dataclass(frozen=True)
class Partition:
    """Node sizes plus a colour (1..K) per node.

    Nodes keep their natural order inside the flat vector; ``node_order``
    exposes the colour-sorted permutation used by sweep schedules.
    """

    node_sizes: tuple[int, ...]
    colors: tuple[int, ...]
    offsets: tuple[int, ...] = field(repr=False, compare=False, default=())
    color_groups: tuple[tuple[int, ...], ...] = field(
        repr=False, compare=False, default=()
    )

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.node_sizes)
        colors = tuple(int(c) for c in self.colors)
        if len(sizes) != len(colors):
            raise ValueError("node_sizes and colors must have equal length")
        if not sizes:
            raise ValueError("partition needs at least one node")
        if any(s <= 0 for s in sizes):
            raise ValueError("node sizes must be positive")
        k = max(colors)
        present = set(colors)
        if min(colors) < 1 or present != set(range(1, k + 1)):
            raise ValueError("colors must cover 1..K with no empty color")
        offsets = (0,) + tuple(np.cumsum(sizes).tolist())
        groups = tuple(
            tuple(i for i, c in enumerate(colors) if c == kk)
            for kk in range(1, k + 1)
        )
        object.__setattr__(self, "node_sizes", sizes)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "color_groups", groups)

    @property
    def num_nodes(self) -> int:
        return len(self.node_sizes)

    @property
    def num_colors(self) -> int:
        return len(self.color_groups)

    @property
    def dim(self) -> int:
        return self.offsets[-1]

    @property
    def node_order(self) -> tuple[int, ...]:
        """Permutation of nodes sorted by colour (the sweep visit order)."""
        return tuple(i for group in self.color_groups for i in group)

    def node_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def color_indices(self, k: int) -> np.ndarray:
        """Flat coordinate indices of colour class ``k`` (1-based)."""
        group = self.color_groups[k - 1]
        if not group:
            return np.empty(0, dtype=np.intp)
        return np.concatenate(
            [np.arange(self.offsets[i], self.offsets[i + 1]) for i in group]
        )

    def validate_against(self, graph: CouplingGraph) -> None:
        """Raise if two coupled nodes share a colour."""
        if graph.num_nodes != self.num_nodes:
            raise ValueError("graph/partition node count mismatch")
        for i, j in graph.edges:
            if self.colors[i] == self.colors[j]:
                raise ValueError(
                    f"nodes {i} and {j} are coupled but share color {self.colors[i]}"
                )

    def to_json(self, graph: CouplingGraph | None = None) -> str:
        doc = {
            "node_sizes": list(self.node_sizes),
            "colors": list(self.colors),
            "node_order": list(self.node_order),
        }
        if graph is not None:
            doc["edges"] = sorted(map(list, graph.edges))
        return json.dumps(doc, sort_keys=True)


@dataclass(frozen=True)
class BoxSet:
    """Per-coordinate bounds; IEEE infinities encode one-sided constraints."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("bounds must be 1-d arrays of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("bounds must not contain NaN")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(
            np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol)
        )

    @classmethod
    def unbounded(cls, n: int) -> "BoxSet":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))


@dataclass(frozen=True)
class ActiveSet:
    """Coordinates sitting on their lower/upper bounds."""

    at_lower: np.ndarray
    at_upper: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "at_lower", np.asarray(self.at_lower, dtype=np.intp)
        )
        object.__setattr__(
            self, "at_upper", np.asarray(self.at_upper, dtype=np.intp)
        )

    @property
    def indices(self) -> np.ndarray:
        """Union of active coordinates, sorted."""
        return np.union1d(self.at_lower, self.at_upper)

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[self.at_lower] = True
        m[self.at_upper] = True
        return m

    def issubset(self, other: "ActiveSet") -> bool:
        return bool(
            np.all(np.isin(self.at_lower, other.at_lower))
            and np.all(np.isin(self.at_upper, other.at_upper))
        )


@dataclass
class BlockVector:
    """Flat vector together with its node/colour structure."""

    data: np.ndarray
    partition: Partition

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (self.partition.dim,):
            raise ValueError("data length does not match partition dimension")

    def node_view(self, i: int) -> np.ndarray:
        return self.data[self.partition.node_slice(i)]

    def color_view(self, k: int) -> np.ndarray:
        return self.data[self.partition.color_indices(k)]

    def copy(self) -> "BlockVector":
        return BlockVector(self.data.copy(), self.partition)


def _check_dims(x: np.ndarray, box: BoxSet) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (box.dim,):
        raise ValueError(f"dimension mismatch: x has {x.shape}, box has {box.dim}")
    return x


def project_box(x: np.ndarray, box: BoxSet) -> np.ndarray:
    """Componentwise clamp onto the box (idempotent, nonexpansive)."""
    return np.clip(_check_dims(x, box), box.lower, box.upper)


def active_set(x: np.ndarray, box: BoxSet, tol: float = ACTIVE_TOL) -> ActiveSet:
    """Coordinates within ``tol`` of a finite bound."""
    x = _check_dims(x, box)
    at_lower = np.flatnonzero(x - box.lower <= tol)
    at_upper = np.flatnonzero(box.upper - x <= tol)
    return ActiveSet(at_lower, at_upper)


def projected_gradient(
    x: np.ndarray, g: np.ndarray, box: BoxSet, tol: float = ACTIVE_TOL
) -> np.ndarray:
    """Projection of -g onto the tangent cone of the box at x.

    Closed form per coordinate: fixed coordinates give 0, a coordinate active
    at its lower (upper) bound keeps only the inward part max(-g, 0)
    (min(-g, 0)), and free coordinates pass -g through.
    """
    x = _check_dims(x, box)
    g = np.asarray(g, dtype=float)
    if g.shape != x.shape:
        raise ValueError("gradient dimension mismatch")
    d = -g
    lo_active = x - box.lower <= tol
    up_active = box.upper - x <= tol
    out = np.where(lo_active, np.maximum(d, 0.0), d)
    out = np.where(up_active, np.minimum(d, 0.0), out)
    out = np.where(lo_active & up_active, 0.0, out)
    return out


def criticality(x: np.ndarray, g: np.ndarray, box: BoxSet) -> float:
    """First-order criticality measure ||P(x - g) - x||_2 (zero iff critical)."""
    x = _check_dims(x, box)
    if not box.contains(x):
        raise ValueError("x is infeasible for the box")
    g = np.asarray(g, dtype=float)
    if g.shape != x.shape:
        raise ValueError("gradient dimension mismatch")
    return float(np.linalg.norm(project_box(x - g, box) - x))


def greedy_coloring(
    graph: CouplingGraph, node_sizes: Sequence[int] | None = None
) -> Partition:
    """Greedy colouring in ascending node index with smallest available colour.

    Deterministic given the node order.  Always valid; not necessarily
    minimal.  On forests labelled parent-before-child (every node has at most
    one lower-indexed neighbour) it uses exactly 2 colours.
    """
    n = graph.num_nodes
    colors = [0] * n
    for i in range(n):
        taken = {colors[j] for j in graph.neighbors(i) if j < i}
        c = 1
        while c in taken:
            c += 1
        colors[i] = c
    sizes = tuple(node_sizes) if node_sizes is not None else (1,) * n
    return Partition(sizes, tuple(colors))
