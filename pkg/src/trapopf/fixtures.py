"""Synthetic block-structured problems for tests and benchmark baselines.

Random QPs carry an explicit colour assignment so the coupling pattern is a
valid K-partite structure by construction; the equality-constrained QP has a
closed-form solution used as an oracle.
"""

from __future__ import annotations

import numpy as np

from .blockspace import BoxSet, CouplingGraph, Partition
from .auglag import SparseRows
from .model import BlockMatrixBuilder, BlockSparseMatrix

__all__ = [
    "CoshProblem",
    "EqualityQp",
    "QpProblem",
    "random_block_qp",
    "strongly_convex_fixture",
]


class QpProblem:
    """L(x) = 0.5 x^T B x + b^T x + c with block-sparse symmetric B."""

    def __init__(self, hess: BlockSparseMatrix, linear: np.ndarray, const: float,
                 box: BoxSet, graph: CouplingGraph):
        self.hess_matrix = hess
        self.linear = np.asarray(linear, dtype=float)
        self.const = float(const)
        self._box = box
        self._graph = graph

    @property
    def node_sizes(self) -> tuple[int, ...]:
        return self.hess_matrix.node_sizes

    def eval(self, x):
        return 0.5 * float(x @ self.hess_matrix.matvec(x)) + float(self.linear @ x) + self.const

    def grad(self, x):
        return self.hess_matrix.matvec(x) + self.linear

    def hessian(self, x):
        return self.hess_matrix

    def bounds(self):
        return self._box

    def coupling(self):
        return self._graph

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        return self.hess_matrix.to_dense(), self.linear.copy()


def _random_structure(rng, num_nodes, num_colors, size_range):
    sizes = tuple(int(rng.integers(size_range[0], size_range[1] + 1))
                  for _ in range(num_nodes))
    # every colour nonempty, rest random
    colors = list(range(1, num_colors + 1))
    colors += [int(rng.integers(1, num_colors + 1)) for _ in range(num_nodes - num_colors)]
    rng.shuffle(colors)
    edges = []
    for i in range(num_nodes):
        for j in range(i + 1, num_nodes):
            if colors[i] != colors[j] and rng.random() < 0.6:
                edges.append((i, j))
    return sizes, tuple(colors), edges


def random_block_qp(
    seed: int,
    num_nodes: int = 6,
    num_colors: int = 3,
    size_range: tuple[int, int] = (1, 3),
    convex: bool = True,
    bounded_fraction: float = 0.6,
) -> tuple[QpProblem, Partition]:
    """Random QP whose Hessian pattern matches a K-partite coupling graph.

    Convex instances are shifted SPD with eigenvalues in roughly [0.5, 5];
    nonconvex ones keep a few negative eigenvalues.
    """
    rng = np.random.default_rng(seed)
    if num_colors > num_nodes:
        raise ValueError("need at least one node per colour")
    sizes, colors, edges = _random_structure(rng, num_nodes, num_colors, size_range)
    partition = Partition(sizes, colors)
    graph = CouplingGraph.from_edges(num_nodes, edges)
    n = partition.dim

    builder = BlockMatrixBuilder(sizes)
    for i in range(num_nodes):
        a = rng.standard_normal((sizes[i], sizes[i]))
        builder.add(i, i, 0.5 * (a + a.T))
    for (i, j) in edges:
        builder.add(i, j, 0.6 * rng.standard_normal((sizes[i], sizes[j])))
    raw = builder.build(validate=False)
    dense = raw.to_dense()
    eigs = np.linalg.eigvalsh(dense)
    if convex:
        shift = max(0.0, 0.5 - float(eigs.min()))
        scale_cap = 5.0 / max(1.0, float(eigs.max()) + shift)
        scale = min(1.0, scale_cap)
    else:
        # keep indefiniteness but bound the spectrum
        shift = 0.0
        scale = 1.0 / max(1.0, float(np.max(np.abs(eigs))) / 4.0)
    final = BlockMatrixBuilder(sizes)
    for (i, j), m in raw.blocks.items():
        final.add(i, j, scale * m)
    if shift > 0.0:
        for i in range(num_nodes):
            final.add(i, i, scale * shift * np.eye(sizes[i]))
    hess = final.build(validate=False)

    linear = rng.standard_normal(n)
    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    for idx in range(n):
        if rng.random() < bounded_fraction:
            a, b = np.sort(rng.uniform(-2.0, 2.0, size=2))
            lower[idx], upper[idx] = a, b
        elif rng.random() < 0.5 * bounded_fraction:
            lower[idx] = rng.uniform(-2.0, 0.0)
    box = BoxSet(lower, upper)
    problem = QpProblem(hess, linear, float(rng.standard_normal()), box, graph)
    return problem, partition


class EqualityQp:
    """min 0.5 ||x||^2  s.t.  sum(x) = 1; solution x* = 1/n, mu* = -1/n.

    The single dense constraint row couples every node pair through the
    penalty term, so the declared coupling graph is complete.
    """

    def __init__(self, n: int):
        self.n = int(n)
        self._sizes = (1,) * self.n

    @property
    def node_sizes(self):
        return self._sizes

    def box(self):
        return BoxSet.unbounded(self.n)

    def coupling(self):
        edges = [(i, j) for i in range(self.n) for j in range(i + 1, self.n)]
        return CouplingGraph.from_edges(self.n, edges)

    def objective(self, x):
        return 0.5 * float(x @ x)

    def objective_grad(self, x):
        return np.asarray(x, dtype=float).copy()

    def objective_hessian(self, x):
        return BlockSparseMatrix(
            self._sizes, {(i, i): np.eye(1) for i in range(self.n)}
        )

    def residuals(self, x):
        return np.array([float(np.sum(x)) - 1.0])

    def jacobian(self, x):
        rows = SparseRows(self._sizes)
        rows.append({i: np.ones(1) for i in range(self.n)})
        return rows

    def constraint_hessian(self, x, weights):
        return BlockSparseMatrix(self._sizes, {})

    def solution(self) -> tuple[np.ndarray, float]:
        return np.full(self.n, 1.0 / self.n), -1.0 / self.n


class CoshProblem:
    """Strongly convex, non-quadratic: 0.5 x^T A x + b^T x + kappa * sum cosh(x_i).

    The Hessian A + kappa diag(cosh x) varies with x, so Newton-type local
    rates are observable (a quadratic would converge in one step).
    """

    def __init__(self, hess: BlockSparseMatrix, linear: np.ndarray, kappa: float,
                 box: BoxSet, graph: CouplingGraph):
        self.base = hess
        self.linear = np.asarray(linear, dtype=float)
        self.kappa = float(kappa)
        self._box = box
        self._graph = graph

    @property
    def node_sizes(self):
        return self.base.node_sizes

    def eval(self, x):
        return (0.5 * float(x @ self.base.matvec(x)) + float(self.linear @ x)
                + self.kappa * float(np.sum(np.cosh(x))))

    def grad(self, x):
        return self.base.matvec(x) + self.linear + self.kappa * np.sinh(x)

    def hessian(self, x):
        builder = BlockMatrixBuilder(self.base.node_sizes)
        builder.add_matrix(self.base)
        pos = 0
        for i, size in enumerate(self.base.node_sizes):
            builder.add(i, i, np.diag(self.kappa * np.cosh(x[pos:pos + size])))
            pos += size
        return builder.build(validate=False)

    def bounds(self):
        return self._box

    def coupling(self):
        return self._graph

    def dense_hessian(self, x):
        return self.base.to_dense() + np.diag(self.kappa * np.cosh(x))


def strongly_convex_fixture(seed: int = 7, num_nodes: int = 5,
                            num_colors: int = 2,
                            scale: float = 0.1,
                            kappa: float = 0.01) -> tuple[CoshProblem, Partition]:
    """Interior-optimum strongly convex fixture for local-rate probes.

    The default scaling keeps the smallest Hessian eigenvalue near 0.05 so
    that proximal weights of 1e-2 visibly slow the local rate.
    """
    qp, partition = random_block_qp(
        seed, num_nodes=num_nodes, num_colors=num_colors, convex=True,
        bounded_fraction=0.0,
    )
    scaled = BlockMatrixBuilder(partition.node_sizes)
    for (i, j), m in qp.hess_matrix.blocks.items():
        scaled.add(i, j, scale * m)
    n = partition.dim
    box = BoxSet(np.full(n, -50.0), np.full(n, 50.0))
    problem = CoshProblem(scaled.build(validate=False), scale * qp.linear,
                          kappa, box, qp.coupling())
    return problem, partition
