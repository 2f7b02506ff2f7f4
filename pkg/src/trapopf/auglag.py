"""Equality-constrained NLPs via bound-constrained augmented Lagrangians.

L_rho(x, mu) = f(x) + (mu + (rho/2) c(x))^T c(x), minimised over the box by
the trust-region solver.  Two outer loops are provided: the basic first-order
update (multiplier step + fixed penalty growth every iteration) and the
adaptive variant that compares ||c|| against a shrinking tolerance before
deciding between a multiplier step and a penalty increase.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .blockspace import BoxSet, CouplingGraph, Partition, project_box
from .commaccount import CommLedger
from .driver import IterationRecord, TrapParams, TrapReport, trap_solve
from .model import BlockMatrixBuilder, BlockSparseMatrix
from typing import Protocol, runtime_checkable

__all__ = [
    "AugLagOracle",
    "EqualityNlp",
    "OuterReport",
    "OuterRow",
    "OuterState",
    "SparseRows",
    "auglag_oracle",
    "auglag_outer",
    "lancelot_outer",
]


class SparseRows:
    """Constraint Jacobian stored row-wise, each row keyed to the nodes it touches."""

    def __init__(self, node_sizes: tuple[int, ...]):
        self.node_sizes = tuple(node_sizes)
        self.offsets = (0,) + tuple(np.cumsum(self.node_sizes).tolist())
        self.rows: list[dict[int, np.ndarray]] = []

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    @property
    def dim(self) -> int:
        return self.offsets[-1]

    def append(self, pieces: dict[int, np.ndarray]) -> int:
        row = {}
        for node, seg in pieces.items():
            seg = np.asarray(seg, dtype=float)
            size = self.node_sizes[node]
            if seg.shape != (size,):
                raise ValueError(f"row piece for node {node} has shape {seg.shape}")
            row[int(node)] = seg
        self.rows.append(row)
        return len(self.rows) - 1

    def rtv(self, w: np.ndarray) -> np.ndarray:
        """J^T w, accumulated row by row."""
        out = np.zeros(self.dim)
        for weight, row in zip(w, self.rows):
            if weight == 0.0:
                continue
            for node, seg in row.items():
                sl = slice(self.offsets[node], self.offsets[node + 1])
                out[sl] += weight * seg
        return out

    def dot(self, v: np.ndarray) -> np.ndarray:
        """J v (used by finite-difference checks)."""
        out = np.zeros(self.num_rows)
        for r, row in enumerate(self.rows):
            acc = 0.0
            for node, seg in row.items():
                sl = slice(self.offsets[node], self.offsets[node + 1])
                acc += float(seg @ v[sl])
            out[r] = acc
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.num_rows, self.dim))
        for r, row in enumerate(self.rows):
            for node, seg in row.items():
                out[r, self.offsets[node] : self.offsets[node + 1]] = seg
        return out

    def add_gauss_newton(self, builder: BlockMatrixBuilder, weight: float) -> None:
        """Accumulate weight * J^T J into the builder, block by block."""
        for row in self.rows:
            nodes = sorted(row)
            for ai, a in enumerate(nodes):
                ga = row[a]
                for b in nodes[ai:]:
                    builder.add(a, b, weight * np.outer(ga, row[b]))


@runtime_checkable
class EqualityNlp(Protocol):
    """min f(x) s.t. c(x) = 0, x in box, with block-structured derivatives."""

    @property
    def node_sizes(self) -> tuple[int, ...]: ...

    def box(self) -> BoxSet: ...

    def coupling(self) -> CouplingGraph: ...
        # graph of the *penalised* Lagrangian, including the J^T J fill

    def objective(self, x: np.ndarray) -> float: ...

    def objective_grad(self, x: np.ndarray) -> np.ndarray: ...

    def objective_hessian(self, x: np.ndarray) -> BlockSparseMatrix: ...

    def residuals(self, x: np.ndarray) -> np.ndarray: ...

    def jacobian(self, x: np.ndarray) -> SparseRows: ...

    def constraint_hessian(self, x: np.ndarray, weights: np.ndarray) -> BlockSparseMatrix: ...
        # sum_j weights_j * Hess(c_j), assembled block-sparse


class AugLagOracle:
    """Bound-constrained oracle for L_rho(., mu); implements NlpProblem.

    value    f + mu^T c + (rho/2) ||c||^2
    gradient grad f + J^T (mu + rho c)
    hessian  Hess f + sum_j (mu + rho c)_j Hess c_j + rho J^T J
    """

    def __init__(self, problem: EqualityNlp, mu: np.ndarray, rho: float):
        if rho <= 0.0:
            raise ValueError("rho must be positive")
        self.problem = problem
        self.mu = np.asarray(mu, dtype=float)
        self.rho = float(rho)
        self._cache_key: bytes | None = None
        self._cache: tuple[np.ndarray, SparseRows | None] | None = None

    @property
    def node_sizes(self) -> tuple[int, ...]:
        return self.problem.node_sizes

    def bounds(self) -> BoxSet:
        return self.problem.box()

    def coupling(self) -> CouplingGraph:
        return self.problem.coupling()

    def _residuals(self, x: np.ndarray, need_jac: bool) -> tuple[np.ndarray, SparseRows | None]:
        key = x.tobytes()
        if self._cache_key == key and self._cache is not None:
            c, jac = self._cache
            if jac is not None or not need_jac:
                return c, jac
        c = self.problem.residuals(x)
        jac = self.problem.jacobian(x) if need_jac else None
        self._cache_key, self._cache = key, (c, jac)
        return c, jac

    def eval(self, x: np.ndarray) -> float:
        c, _ = self._residuals(x, need_jac=False)
        return float(self.problem.objective(x) + self.mu @ c + 0.5 * self.rho * (c @ c))

    def grad(self, x: np.ndarray) -> np.ndarray:
        c, jac = self._residuals(x, need_jac=True)
        return self.problem.objective_grad(x) + jac.rtv(self.mu + self.rho * c)

    def hessian(self, x: np.ndarray) -> BlockSparseMatrix:
        c, jac = self._residuals(x, need_jac=True)
        builder = BlockMatrixBuilder(self.node_sizes)
        builder.add_matrix(self.problem.objective_hessian(x))
        builder.add_matrix(self.problem.constraint_hessian(x, self.mu + self.rho * c))
        jac.add_gauss_newton(builder, self.rho)
        return builder.build(validate=False)


def auglag_oracle(problem: EqualityNlp, mu: np.ndarray, rho: float) -> AugLagOracle:
    return AugLagOracle(problem, mu, rho)


@dataclass
class OuterState:
    """Dual state carried across outer iterations."""

    mu: np.ndarray
    rho: float
    omega: float  # running inner KKT tolerance (adaptive loop)
    eta: float  # running constraint tolerance (adaptive loop)


@dataclass
class OuterRow:
    """One line of the outer-iteration table (the benchmark schema)."""

    outer_iter: int
    inner_iters: int
    cum_scg: int
    inner_kkt: float
    constraint_norm: float


@dataclass
class OuterReport:
    x: np.ndarray
    state: OuterState
    rows: list[OuterRow]
    termination: str  # converged | max_outer
    objective: float
    constraint_norm: float
    total_scg: int
    inner_records: list[tuple[int, IterationRecord]] = field(default_factory=list)
    inner_reports: list[TrapReport] = field(default_factory=list)


def _run_outer(
    problem: EqualityNlp,
    x0: np.ndarray,
    rho0: float,
    factor: float,
    inner: TrapParams,
    outer_tol: float,
    max_outer: int,
    mu0: np.ndarray | None,
    partition: Partition | None,
    ledger: CommLedger | None,
    adaptive: bool,
) -> OuterReport:
    if rho0 <= 0.0 or factor <= 1.0:
        raise ValueError("need rho0 > 0 and factor > 1")
    m = problem.residuals(np.asarray(x0, dtype=float)).shape[0]
    mu = np.zeros(m) if mu0 is None else np.asarray(mu0, dtype=float).copy()
    state = OuterState(
        mu=mu, rho=float(rho0), omega=1.0 / rho0, eta=1.0 / rho0**0.1
    )
    x = project_box(np.asarray(x0, dtype=float), problem.box())
    rows: list[OuterRow] = []
    inner_records: list[tuple[int, IterationRecord]] = []
    inner_reports: list[TrapReport] = []
    termination = "max_outer"

    for j in range(1, max_outer + 1):
        params = inner
        if adaptive:
            params = replace(inner, epsilon=max(state.omega, inner.epsilon))
        oracle = auglag_oracle(problem, state.mu, state.rho)
        report = trap_solve(oracle, x, params, partition=partition, ledger=ledger)
        x = report.x
        c = problem.residuals(x)
        cnorm = float(np.linalg.norm(c))
        rows.append(
            OuterRow(j, report.iterations, report.cum_scg, report.final_kkt, cnorm)
        )
        inner_records.extend((j, rec) for rec in report.records)
        inner_reports.append(report)
        if ledger is not None:
            # dual update is neighbour-local; the ||c|| comparison is central
            ledger.reduction("dual_update", tag=f"outer:{j}")
        if cnorm <= outer_tol and report.final_kkt <= inner.epsilon:
            termination = "converged"
            break
        if adaptive:
            if cnorm <= state.eta:
                state.mu = state.mu + state.rho * c
                state.omega /= state.rho
                state.eta /= state.rho**0.9
            else:
                state.rho *= factor
                state.omega = 1.0 / state.rho
                state.eta = 1.0 / state.rho**0.1
        else:
            state.mu = state.mu + state.rho * c
            state.rho *= factor

    return OuterReport(
        x=x,
        state=state,
        rows=rows,
        termination=termination,
        objective=float(problem.objective(x)),
        constraint_norm=float(np.linalg.norm(problem.residuals(x))),
        total_scg=sum(r.cum_scg for r in rows),
        inner_records=inner_records,
        inner_reports=inner_reports,
    )


def auglag_outer(
    problem: EqualityNlp,
    x0: np.ndarray,
    rho0: float = 10.0,
    factor: float = 30.0,
    inner: TrapParams | None = None,
    outer_tol: float = 1e-7,
    max_outer: int = 30,
    mu0: np.ndarray | None = None,
    partition: Partition | None = None,
    ledger: CommLedger | None = None,
) -> OuterReport:
    """Basic first-order dual loop: mu += rho c and rho *= factor each round."""
    if inner is None:
        inner = TrapParams(max_iters=300)
    return _run_outer(
        problem, x0, rho0, factor, inner, outer_tol, max_outer, mu0,
        partition, ledger, adaptive=False,
    )


def lancelot_outer(
    problem: EqualityNlp,
    x0: np.ndarray,
    rho0: float = 10.0,
    factor: float = 100.0,
    inner: TrapParams | None = None,
    outer_tol: float = 1e-7,
    max_outer: int = 30,
    mu0: np.ndarray | None = None,
    partition: Partition | None = None,
    ledger: CommLedger | None = None,
) -> OuterReport:
    """Adaptive dual loop driven by the running tolerances (omega_j, eta_j).

    Inner solves run to max(omega_j, epsilon); on ||c|| <= eta_j the
    multipliers move and both tolerances tighten (omega /= rho,
    eta /= rho^0.9), otherwise the penalty grows and they reset
    (omega = 1/rho, eta = rho^-0.1).
    """
    if inner is None:
        inner = TrapParams(max_iters=100)
    return _run_outer(
        problem, x0, rho0, factor, inner, outer_tol, max_outer, mu0,
        partition, ledger, adaptive=True,
    )
