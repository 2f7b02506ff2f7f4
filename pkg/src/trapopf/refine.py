"""Proximally regularised refinement on the free subspace of the Cauchy point.

Starting from the Cauchy point z, conjugate gradients minimise

    <g_sigma, p> + 0.5 <p, B_sigma p>,  p = y - x,
    g_sigma = g - sigma (z - x),        B_sigma = B + sigma I,

over the coordinates left free by the active set at z, inside the sup-norm
box of radius gamma2*Delta intersected with the bounds.  Coordinates active
at z stay pinned to their z values throughout, so the active set can only
grow.  The CG loop is the delayed-inner-product rearrangement: both sums
<r,w> and <w, B_sigma w> happen in one stage, and the direction curvature
follows the recurrence t <- delta_hat - beta^2 t.  Negative curvature or a
trial step crossing the feasible box takes the largest feasible step along
the current direction and stops.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .blockspace import BoxSet, Partition
from .cauchy import CauchyResult
from .commaccount import CommLedger
from .model import BlockSparseMatrix, QuadraticModel

logger = logging.getLogger(__name__)

__all__ = [
    "BlockJacobiPreconditioner",
    "ReducedSpace",
    "RefineParams",
    "RefineResult",
    "RefineTermination",
    "block_jacobi_preconditioner",
    "regularised_model",
    "scg_refine",
]


class RefineTermination(Enum):
    CONVERGED = "converged"
    NEGATIVE_CURVATURE = "negative_curvature"
    BOUNDARY_HIT = "boundary_hit"
    MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class RefineParams:
    """Refinement controls.

    sigma: proximal weight pulling the refined step towards the Cauchy point
        (sigma >= 0; 0 recovers the plain trust-region subproblem).
    xi: relative residual tolerance in (0,1); None selects the adaptive
        forcing min(0.5, sqrt(||reduced g||)) per call.
    gamma1: fraction of the Cauchy decrease the result must retain.
    gamma2: trust-region scaling for the refinement box (>= 1, so the Cauchy
        point itself is feasible whenever nu2 <= gamma2).
    max_cg_iters: CG iteration cap; None means 5 * (free dimension).
    """

    sigma: float = 1e-10
    xi: float | None = None
    gamma1: float = 0.1
    gamma2: float = 1.1
    max_cg_iters: int | None = None
    precondition: bool = False
    curvature_guard: float = 1e-30

    def __post_init__(self) -> None:
        if self.sigma < 0.0:
            raise ValueError("sigma must be nonnegative")
        if self.xi is not None and not 0.0 < self.xi < 1.0:
            raise ValueError("xi must lie in (0, 1)")
        if not 0.0 < self.gamma1 < 1.0:
            raise ValueError("gamma1 must lie in (0, 1)")
        if self.gamma2 < 1.0:
            raise ValueError("gamma2 must be at least 1")
        if self.max_cg_iters is not None and self.max_cg_iters < 1:
            raise ValueError("max_cg_iters must be positive")


@dataclass(frozen=True)
class ReducedSpace:
    """Free coordinates at the Cauchy point (the coordinate selector Z)."""

    free_indices: np.ndarray

    @classmethod
    def from_active(cls, n: int, active) -> "ReducedSpace":
        mask = np.ones(n, dtype=bool)
        mask[active.at_lower] = False
        mask[active.at_upper] = False
        return cls(np.flatnonzero(mask))

    @property
    def size(self) -> int:
        return int(self.free_indices.size)


@dataclass
class RefineResult:
    y: np.ndarray
    cg_iterations: int
    termination: RefineTermination
    model_decrease_from_cauchy: float
    residual_history: list[float]


def regularised_model(model: QuadraticModel, z: np.ndarray, sigma: float):
    """Shifted gradient and Hessian operator of the proximal subproblem.

    Returns (g_sigma, apply) with g_sigma = g - sigma (z - x) and
    apply(v) = B v + sigma v, the exact quadratic reformulation of adding
    (sigma/2)||y - z||^2 to the model.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    z = np.asarray(z, dtype=float)
    g_sigma = model.grad - sigma * (z - model.x)

    def apply(v: np.ndarray) -> np.ndarray:
        return model.hess.matvec(v) + sigma * v

    return g_sigma, apply


class BlockJacobiPreconditioner:
    """Per-node inverse of the diagonal blocks of B_sigma on the free space.

    Indefinite blocks are shifted by tau*I with tau doubling until the
    Cholesky factorisation succeeds; a block that never factors falls back to
    the identity (logged).  The operator is symmetric positive definite.
    """

    def __init__(
        self,
        hess: BlockSparseMatrix,
        sigma: float,
        partition: Partition,
        free_mask: np.ndarray,
        max_shift_attempts: int = 60,
    ):
        self.segments: list[tuple[slice, np.ndarray | None]] = []
        pos = 0
        for i in range(partition.num_nodes):
            sl = partition.node_slice(i)
            local_free = np.flatnonzero(free_mask[sl])
            m = local_free.size
            if m == 0:
                continue
            block = hess.block(i, i)
            sub = (
                np.zeros((m, m))
                if block is None
                else block[np.ix_(local_free, local_free)].copy()
            )
            sub[np.diag_indices(m)] += sigma
            factor = None
            tau = 0.0
            scale = max(1.0, float(np.max(np.abs(sub))))
            for _ in range(max_shift_attempts):
                try:
                    factor = np.linalg.cholesky(sub + tau * np.eye(m))
                    break
                except np.linalg.LinAlgError:
                    tau = 1e-8 * scale if tau == 0.0 else 2.0 * tau
            if factor is None:
                logger.warning(
                    "preconditioner: node %d block not factorisable, using identity", i
                )
            self.segments.append((slice(pos, pos + m), factor))
            pos += m
        self.dim = pos

    def apply(self, r: np.ndarray) -> np.ndarray:
        out = np.empty_like(r)
        for sl, factor in self.segments:
            if factor is None:
                out[sl] = r[sl]
            else:
                tmp = np.linalg.solve(factor, r[sl])
                out[sl] = np.linalg.solve(factor.T, tmp)
        return out


def block_jacobi_preconditioner(
    hess: BlockSparseMatrix,
    sigma: float,
    partition: Partition,
    free_mask: np.ndarray,
) -> BlockJacobiPreconditioner:
    return BlockJacobiPreconditioner(hess, sigma, partition, free_mask)


def _feasible_step(y, p, lo, hi):
    """Largest a >= 0 with y + a p inside [lo, hi] (componentwise)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(p > 0, (hi - y) / p, np.inf)
        dn = np.where(p < 0, (lo - y) / p, np.inf)
    a = float(np.min(np.minimum(up, dn), initial=np.inf))
    return max(a, 0.0)


def scg_refine(
    model: QuadraticModel,
    partition: Partition,
    box: BoxSet,
    cauchy: CauchyResult,
    delta: float,
    params: RefineParams | None = None,
    ledger: CommLedger | None = None,
    call_tag: str = "scg",
) -> RefineResult:
    """Safeguarded CG from the Cauchy point on the reduced regularised system.

    Guarantees on return: y is feasible, ||y - x||_inf <= gamma2*Delta, the
    active set at z is preserved, and m(x) - m(y) >= gamma1 (m(x) - m(z))
    (iteration zero starts at z and the regularised model decreases
    monotonically).  Hitting the iteration cap is not an error.
    """
    if params is None:
        params = RefineParams()
    x = model.x
    z = cauchy.z
    n = x.shape[0]
    free_mask = np.ones(n, dtype=bool)
    free_mask[cauchy.active.at_lower] = False
    free_mask[cauchy.active.at_upper] = False
    free = np.flatnonzero(free_mask)

    lo = np.maximum(box.lower, x - params.gamma2 * delta)
    hi = np.minimum(box.upper, x + params.gamma2 * delta)
    if np.any(z < lo - 1e-12) or np.any(z > hi + 1e-12):
        raise ValueError("Cauchy point lies outside the refinement region")

    if free.size == 0:
        return RefineResult(z.copy(), 0, RefineTermination.CONVERGED, 0.0, [])

    sigma = params.sigma
    g_sigma, apply_full = regularised_model(model, z, sigma)

    def reduced_apply(v_hat: np.ndarray) -> np.ndarray:
        v = np.zeros(n)
        v[free] = v_hat
        return apply_full(v)[free]

    # residual of the regularised system at the start point y = z
    r = -(g_sigma + apply_full(z - x))[free]
    y = np.clip(z.copy(), lo, hi)

    precond = (
        block_jacobi_preconditioner(model.hess, sigma, partition, free_mask)
        if params.precondition
        else None
    )

    def weighted(v: np.ndarray) -> np.ndarray:
        return precond.apply(v) if precond is not None else v

    g_hat = model.grad[free]
    gnorm = float(np.sqrt(g_hat @ weighted(g_hat)))
    xi = params.xi if params.xi is not None else min(0.5, np.sqrt(gnorm))
    threshold = (xi * gnorm) ** 2
    if ledger is not None:
        ledger.reduction("scg", tag=f"{call_tag}:setup")

    max_iters = params.max_cg_iters if params.max_cg_iters is not None else 5 * free.size
    lo_f, hi_f = lo[free], hi[free]
    y_f = y[free]

    history: list[float] = []
    termination = RefineTermination.MAX_ITERS
    steps = 0
    p = v = np.zeros(0)
    t = u_prev = 0.0
    for it in range(1, max_iters + 1):
        w = weighted(r)
        s = reduced_apply(w)
        u = float(r @ w)
        d_hat = float(w @ s)
        if ledger is not None:
            tag = f"{call_tag}:it{it}"
            ledger.reduction("scg", count=2, tag=tag)
            ledger.broadcast("scg", tag=tag)
        history.append(float(np.sqrt(max(u, 0.0))))
        if u <= threshold:
            termination = RefineTermination.CONVERGED
            break
        if it == 1:
            t, p, v = d_hat, w.copy(), s.copy()
        else:
            beta = u / u_prev
            t = d_hat - beta * beta * t
            p = w + beta * p
            v = s + beta * v
        a_max = _feasible_step(y_f, p, lo_f, hi_f)
        if t <= params.curvature_guard:
            # the delayed-update recurrence can misreport curvature once
            # residuals reach roundoff level; verify before an unbounded step
            slope = float(r @ p)
            if slope <= 0.0:
                # direction is noise, not descent: stop without moving
                termination = RefineTermination.MAX_ITERS
                break
            s_honest = reduced_apply(p)
            curv = float(p @ s_honest)
            if curv <= params.curvature_guard:
                y_f = y_f + a_max * p
                steps = it
                termination = RefineTermination.NEGATIVE_CURVATURE
                break
            # false alarm: continue with honestly recomputed quantities
            # (exact line-minimising step, guaranteed model decrease)
            t, v = curv, s_honest
            a = slope / curv
        else:
            a = u / t
        if a >= a_max:
            y_f = y_f + a_max * p
            steps = it
            termination = RefineTermination.BOUNDARY_HIT
            break
        y_f = y_f + a * p
        r = r - a * v
        u_prev = u
        steps = it

    y = z.copy()
    y[free] = np.clip(y_f, lo_f, hi_f)

    d_z, d_y = z - x, y - x
    m_z = float(model.grad @ d_z) + 0.5 * float(d_z @ model.hess.matvec(d_z))
    m_y = float(model.grad @ d_y) + 0.5 * float(d_y @ model.hess.matvec(d_y))
    return RefineResult(y, steps, termination, m_z - m_y, history)
