"""Quadratic trust-region model with block-sparse symmetric Hessian storage.

Hessian blocks are dense and keyed by node pairs (i, j) with i <= j; the
pattern mirrors the coupling graph plus diagonal blocks.  Matrix-vector
products accumulate per block in a fixed sorted order so results are bitwise
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .blockspace import BoxSet, CouplingGraph, Partition

__all__ = [
    "BlockMatrixBuilder",
    "BlockSparseMatrix",
    "NlpProblem",
    "QuadraticModel",
    "as_single_node",
    "hess_vec",
    "model_eval",
    "partial_model_gradient",
]


class BlockSparseMatrix:
    """Symmetric matrix stored as dense node-pair blocks (upper pairs only)."""

    def __init__(
        self,
        node_sizes: tuple[int, ...],
        blocks: dict[tuple[int, int], np.ndarray],
        validate: bool = True,
    ):
        self.node_sizes = tuple(int(s) for s in node_sizes)
        self.offsets = (0,) + tuple(np.cumsum(self.node_sizes).tolist())
        self.blocks = {}
        for (i, j), m in blocks.items():
            if j < i:
                i, j, m = j, i, np.asarray(m, dtype=float).T
            m = np.asarray(m, dtype=float)
            if m.shape != (self.node_sizes[i], self.node_sizes[j]):
                raise ValueError(f"block ({i}, {j}) has shape {m.shape}")
            self.blocks[(i, j)] = m
        if validate:
            for (i, j), m in self.blocks.items():
                if i == j and not np.allclose(m, m.T, atol=1e-12, rtol=1e-12):
                    raise ValueError(f"diagonal block {i} is not symmetric")
        # row index for fast per-node gradient accumulation, sorted for
        # deterministic traversal
        rows: dict[int, list[tuple[int, tuple[int, int], bool]]] = {
            i: [] for i in range(len(self.node_sizes))
        }
        for (i, j) in sorted(self.blocks):
            rows[i].append((j, (i, j), False))
            if i != j:
                rows[j].append((i, (i, j), True))
        self._rows = {i: sorted(r) for i, r in rows.items()}

    @property
    def dim(self) -> int:
        return self.offsets[-1]

    @property
    def num_nodes(self) -> int:
        return len(self.node_sizes)

    def node_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def block(self, i: int, j: int) -> np.ndarray | None:
        """Stored block (i, j), transposing if only (j, i) is stored."""
        if (i, j) in self.blocks:
            return self.blocks[(i, j)]
        if (j, i) in self.blocks:
            return self.blocks[(j, i)].T
        return None

    def row_blocks(self, i: int):
        """Yield (j, block) pairs of row i in ascending j order."""
        for j, key, transposed in self._rows[i]:
            m = self.blocks[key]
            yield j, (m.T if transposed else m)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError("dimension mismatch in matvec")
        out = np.zeros_like(v)
        for (i, j) in sorted(self.blocks):
            m = self.blocks[(i, j)]
            si, sj = self.node_slice(i), self.node_slice(j)
            out[si] += m @ v[sj]
            if i != j:
                out[sj] += m.T @ v[si]
        return out

    def pattern(self) -> frozenset[tuple[int, int]]:
        """Off-diagonal node pairs carried by this matrix."""
        return frozenset((i, j) for (i, j) in self.blocks if i != j)

    def norm_bound(self) -> float:
        """Upper bound on ||B||_2 via the largest block-row sup-norm sum."""
        best = 0.0
        for i in range(self.num_nodes):
            total = 0.0
            for _, m in self.row_blocks(i):
                total += float(np.max(np.sum(np.abs(m), axis=1), initial=0.0))
            best = max(best, total)
        return best

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for (i, j), m in self.blocks.items():
            si, sj = self.node_slice(i), self.node_slice(j)
            out[si, sj] = m
            if i != j:
                out[sj, si] = m.T
        return out

    def matches_coupling(self, graph: CouplingGraph, exact: bool = False) -> bool:
        """Pattern containment (or equality, if ``exact``) against the graph."""
        pat = self.pattern()
        if exact:
            return pat == graph.edges
        return pat <= graph.edges


class BlockMatrixBuilder:
    """Accumulates block contributions; transposes to upper storage."""

    def __init__(self, node_sizes: tuple[int, ...]):
        self.node_sizes = tuple(int(s) for s in node_sizes)
        self._acc: dict[tuple[int, int], np.ndarray] = {}

    def add(self, i: int, j: int, m: np.ndarray) -> None:
        m = np.asarray(m, dtype=float)
        if j < i:
            i, j, m = j, i, m.T
        key = (i, j)
        if key in self._acc:
            self._acc[key] = self._acc[key] + m
        else:
            self._acc[key] = m.copy()

    def add_matrix(self, other: BlockSparseMatrix) -> None:
        for (i, j), m in other.blocks.items():
            self.add(i, j, m)

    def build(self, drop_tol: float = 0.0, validate: bool = True) -> BlockSparseMatrix:
        blocks = {
            k: m
            for k, m in self._acc.items()
            if np.any(np.abs(m) > drop_tol) or k[0] == k[1]
        }
        return BlockSparseMatrix(self.node_sizes, blocks, validate=validate)


def hess_vec(matrix: BlockSparseMatrix, v: np.ndarray) -> np.ndarray:
    """Structured symmetric matrix-vector product."""
    return matrix.matvec(v)


@dataclass
class QuadraticModel:
    """Second-order model around x: value + <g, d> + 0.5 <d, B d>."""

    x: np.ndarray
    value: float
    grad: np.ndarray
    hess: BlockSparseMatrix

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.grad = np.asarray(self.grad, dtype=float)
        n = self.hess.dim
        if self.x.shape != (n,) or self.grad.shape != (n,):
            raise ValueError("model dimensions are inconsistent")
        self.value = float(self.value)


def model_eval(model: QuadraticModel, xp: np.ndarray) -> float:
    """Exact evaluation of the quadratic model at ``xp``."""
    xp = np.asarray(xp, dtype=float)
    if xp.shape != model.x.shape:
        raise ValueError("dimension mismatch in model_eval")
    d = xp - model.x
    return model.value + float(model.grad @ d) + 0.5 * float(d @ model.hess.matvec(d))


def partial_model_gradient(
    model: QuadraticModel, partition: Partition, color: int, mixed: np.ndarray
) -> np.ndarray:
    """Gradient block of the model at a mixed point, for one colour class.

    ``mixed`` holds already-committed values on earlier colours and base
    values elsewhere.  Only stored Hessian blocks contribute:
    g_k + sum_j B(k, j) (mixed_j - x_j).
    """
    mixed = np.asarray(mixed, dtype=float)
    if mixed.shape != model.x.shape:
        raise ValueError("dimension mismatch in partial_model_gradient")
    d = mixed - model.x
    pieces = []
    for i in partition.color_groups[color - 1]:
        sl = partition.node_slice(i)
        acc = model.grad[sl].copy()
        for j, m in model.hess.row_blocks(i):
            dj = d[model.hess.node_slice(j)]
            if np.any(dj):
                acc += m @ dj
        pieces.append(acc)
    if not pieces:
        return np.empty(0)
    return np.concatenate(pieces)


@runtime_checkable
class NlpProblem(Protocol):
    """Oracle interface for a block-structured bound-constrained NLP."""

    @property
    def node_sizes(self) -> tuple[int, ...]: ...

    def eval(self, x: np.ndarray) -> float: ...

    def grad(self, x: np.ndarray) -> np.ndarray: ...

    def hessian(self, x: np.ndarray) -> BlockSparseMatrix: ...

    def bounds(self) -> BoxSet: ...

    def coupling(self) -> CouplingGraph: ...


class _MonolithicProblem:
    """View of a problem as a single node (centralised baseline, K = 1)."""

    def __init__(self, inner: NlpProblem):
        self._inner = inner
        self._n = sum(inner.node_sizes)

    @property
    def node_sizes(self) -> tuple[int, ...]:
        return (self._n,)

    def eval(self, x: np.ndarray) -> float:
        return self._inner.eval(x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self._inner.grad(x)

    def hessian(self, x: np.ndarray) -> BlockSparseMatrix:
        dense = self._inner.hessian(x).to_dense()
        return BlockSparseMatrix((self._n,), {(0, 0): dense})

    def bounds(self) -> BoxSet:
        return self._inner.bounds()

    def coupling(self) -> CouplingGraph:
        return CouplingGraph.from_edges(1, [])


def as_single_node(problem: NlpProblem) -> NlpProblem:
    """Wrap a problem so the whole vector is one node (one colour)."""
    return _MonolithicProblem(problem)
