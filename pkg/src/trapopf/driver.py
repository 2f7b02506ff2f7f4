"""Outer trust-region loop: termination test, sweep, refinement, ratio test.

Radius policy (one admissible choice within the permitted intervals, kept in
one place so alternatives can be tried): rejected steps shrink the radius to
sigma2*Delta, successful steps keep it, very successful steps grow it to
sigma3*Delta.  The gradient and Hessian oracles are refreshed only after
accepted steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .blockspace import BoxSet, Partition, active_set, criticality, greedy_coloring, project_box
from .cauchy import CauchyParams, cauchy_sweep
from .commaccount import CommLedger
from .model import NlpProblem, QuadraticModel, model_eval
from .refine import RefineParams, scg_refine

logger = logging.getLogger(__name__)

__all__ = ["IterationRecord", "TrapParams", "TrapReport", "trap_solve"]


@dataclass(frozen=True)
class TrapParams:
    """Trust-region loop controls (orderings checked at construction)."""

    delta0: float = 1.0
    sigma1: float = 0.25
    sigma2: float = 0.5
    sigma3: float = 2.0
    eta1: float = 0.1
    eta2: float = 0.9
    epsilon: float = 1e-5
    max_iters: int = 300
    cauchy: CauchyParams = field(default_factory=CauchyParams)
    refine: RefineParams = field(default_factory=RefineParams)

    def __post_init__(self) -> None:
        if not 0.0 < self.sigma1 < self.sigma2 < 1.0 < self.sigma3:
            raise ValueError("need 0 < sigma1 < sigma2 < 1 < sigma3")
        if not 0.0 < self.eta1 < self.eta2 < 1.0:
            raise ValueError("need 0 < eta1 < eta2 < 1")
        if self.delta0 <= 0.0 or self.epsilon <= 0.0:
            raise ValueError("delta0 and epsilon must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.cauchy.nu2 > self.refine.gamma2:
            raise ValueError(
                "containment fraction nu2 must not exceed gamma2, otherwise the "
                "Cauchy point can leave the refinement region"
            )


@dataclass
class IterationRecord:
    iteration: int
    delta: float
    rho: float
    status: str  # rejected | successful | very_successful
    kkt: float
    model_decrease: float
    objective: float
    active_size: int
    cum_scg: int


@dataclass
class TrapReport:
    x: np.ndarray
    iterations: int
    records: list[IterationRecord]
    termination: str  # kkt_tol | max_iters
    final_kkt: float
    cum_scg: int
    objective: float
    iterates: list[np.ndarray] | None = None


def trap_solve(
    problem: NlpProblem,
    x0: np.ndarray,
    params: TrapParams | None = None,
    partition: Partition | None = None,
    ledger: CommLedger | None = None,
    keep_iterates: bool = False,
) -> TrapReport:
    """Run the trust-region loop until the KKT measure drops below epsilon.

    ``partition`` defaults to a greedy colouring of the problem's coupling
    graph and is validated against it (no two coupled nodes may share a
    colour, which the sweep's within-colour independence relies on).
    """
    if params is None:
        params = TrapParams()
    graph = problem.coupling()
    if partition is None:
        partition = greedy_coloring(graph, problem.node_sizes)
    else:
        if partition.node_sizes != tuple(problem.node_sizes):
            raise ValueError("partition node sizes do not match the problem")
    partition.validate_against(graph)
    box = problem.bounds()

    x = np.asarray(x0, dtype=float).copy()
    if not box.contains(x):
        logger.info("projecting infeasible start point onto the box")
        x = project_box(x, box)

    fx = float(problem.eval(x))
    if not np.isfinite(fx):
        raise ValueError("objective is not finite at the start point")
    g = problem.grad(x)
    hess = problem.hessian(x)

    delta = params.delta0
    records: list[IterationRecord] = []
    iterates: list[np.ndarray] | None = [x.copy()] if keep_iterates else None
    cum_scg = 0
    termination = "max_iters"
    kkt = criticality(x, g, box)

    for it in range(1, params.max_iters + 1):
        if ledger is not None:
            ledger.set_iteration(it)
            ledger.reduction("ratio_test", tag="termination")
        if kkt <= params.epsilon:
            termination = "kkt_tol"
            break

        model = QuadraticModel(x, fx, g, hess)
        sweep = cauchy_sweep(model, partition, box, delta, params.cauchy, ledger)
        refined = scg_refine(
            model, partition, box, sweep, delta, params.refine, ledger,
            call_tag=f"scg:i{it}",
        )
        cum_scg += refined.cg_iterations
        y = refined.y
        # quadratic parts only: adding the O(|f|) base value would absorb
        # decreases smaller than eps*|f|
        d = y - x
        m_dec = -(float(g @ d) + 0.5 * float(d @ hess.matvec(d)))

        if m_dec <= 0.0:
            # numerical stagnation: no representable model decrease left
            if kkt <= 10.0 * params.epsilon:
                termination = "kkt_tol"
                logger.info("stagnation at near-critical point (kkt=%.3e)", kkt)
                break
            raise RuntimeError(
                f"refinement produced no model decrease at a non-critical "
                f"point (kkt={kkt:.3e}, m_dec={m_dec:.3e})"
            )

        fy = float(problem.eval(y))
        if not np.isfinite(fy):
            raise ValueError(
                f"objective not finite at trial point (iteration {it}); "
                f"iterate dump: x={x!r}, y={y!r}"
            )
        rho = (fx - fy) / m_dec
        if ledger is not None:
            ledger.reduction("ratio_test", tag="ratio")
            ledger.broadcast("ratio_test", tag="ratio")

        # once the predicted decrease sinks below the resolution of the
        # objective difference, the ratio is noise/noise; rejecting on it
        # collapses the radius, so such steps count as plain successes
        noise = 64.0 * np.finfo(float).eps * (abs(fx) + abs(fy) + 1.0)
        noise_accept = m_dec <= noise

        if rho < params.eta1 and not noise_accept:
            status = "rejected"
            delta = params.sigma2 * delta
        else:
            if noise_accept or rho <= params.eta2:
                status = "successful"
            else:
                status = "very_successful"
                delta = params.sigma3 * delta
            x, fx = y, fy
            g = problem.grad(x)
            hess = problem.hessian(x)
            kkt = criticality(x, g, box)

        if keep_iterates:
            iterates.append(x.copy())
        records.append(
            IterationRecord(
                iteration=it,
                delta=delta,
                rho=rho,
                status=status,
                kkt=kkt,
                model_decrease=m_dec,
                objective=fx,
                active_size=active_set(x, box).size,
                cum_scg=cum_scg,
            )
        )
    else:
        # loop ran out; re-test criticality so max_iters is honest
        if kkt <= params.epsilon:
            termination = "kkt_tol"

    return TrapReport(
        x=x,
        iterations=len(records),
        records=records,
        termination=termination,
        final_kkt=kkt,
        cum_scg=cum_scg,
        objective=fx,
        iterates=iterates,
    )
