"""Alternating projected-gradient sweep producing the Cauchy point.

One pass over the K colour classes in order; within a colour every node takes
an independent projected gradient step on the model, with its own backtracked
step size.  A step is accepted when it satisfies, on that node's coordinates,

    dm <= nu0 * <grad, step>      (Armijo-type sufficient decrease)
    ||step||_inf <= nu2 * Delta   (containment in the scaled trust region)

where dm is the exact model change restricted to the node (same-colour nodes
carry no mutual Hessian block, so node contributions add exactly).
Backtracking halts with the step floor nu3^max_backtracks * nu4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blockspace import ActiveSet, BoxSet, Partition, active_set
from .commaccount import CommLedger
from .model import QuadraticModel, partial_model_gradient

__all__ = [
    "BacktrackLimitError",
    "CauchyParams",
    "CauchyResult",
    "cauchy_sweep",
    "check_block_decrease",
    "relative_error_bound",
    "sufficient_decrease_bound",
]


class BacktrackLimitError(RuntimeError):
    """Backtracking could not satisfy the step conditions on one node.

    Signals a Hessian-bound violation or badly scaled data; carries the node.
    """

    def __init__(self, node: int, backtracks: int):
        super().__init__(
            f"node {node}: no acceptable step after {backtracks} backtracks"
        )
        self.node = node
        self.backtracks = backtracks


@dataclass(frozen=True)
class CauchyParams:
    """Step-size rules for the sweep.

    nu0: Armijo fraction in (0,1).
    nu1: rejected steps at least nu1*Delta large count as radius-limited
         (enters the decrease constant only).
    nu2: containment fraction, ||step||_inf <= nu2*Delta, nu1 < nu2.
    nu3: backtracking ratio in (0,1).
    nu4: first trial step size; nu5 its cap (nu4 <= nu5).
    """

    nu0: float = 0.1
    nu1: float = 0.5
    nu2: float = 1.0
    nu3: float = 0.5
    nu4: float = 1.0
    nu5: float = 1.0
    max_backtracks: int = 60

    def __post_init__(self) -> None:
        if not 0.0 < self.nu0 < 1.0:
            raise ValueError("nu0 must lie in (0, 1)")
        if not 0.0 < self.nu1 < self.nu2:
            raise ValueError("need 0 < nu1 < nu2")
        if not 0.0 < self.nu3 < 1.0:
            raise ValueError("nu3 must lie in (0, 1)")
        if not 0.0 < self.nu4 <= self.nu5:
            raise ValueError("need 0 < nu4 <= nu5")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be positive")

    @property
    def decrease_constant(self) -> float:
        """chi = nu0 * min(nu4, 2(1-nu0), nu3*nu1)."""
        return self.nu0 * min(self.nu4, 2.0 * (1.0 - self.nu0), self.nu3 * self.nu1)


@dataclass
class CauchyResult:
    """Cauchy point and per-node step diagnostics.

    ``last_rejected`` holds the final rejected trial step per node
    (alpha/nu3), NaN when the first trial was accepted; kept so the
    not-too-small step conditions can be audited from traces.
    """

    z: np.ndarray
    alphas: np.ndarray
    backtrack_counts: np.ndarray
    last_rejected: np.ndarray
    block_decreases: np.ndarray
    decrease: float
    active: ActiveSet


def _node_step(x_i, g_i, b_ii, lo_i, hi_i, delta, params):
    """Backtracked projected gradient step on one node.

    Returns (z_i, alpha, backtracks, last_rejected, model_change).
    """
    alpha = params.nu4
    last_rejected = np.nan
    for q in range(params.max_backtracks + 1):
        z_i = np.clip(x_i - alpha * g_i, lo_i, hi_i)
        d_i = z_i - x_i
        slope = float(g_i @ d_i)
        dm = slope if b_ii is None else slope + 0.5 * float(d_i @ (b_ii @ d_i))
        if dm <= params.nu0 * slope and np.max(np.abs(d_i), initial=0.0) <= params.nu2 * delta:
            return z_i, alpha, q, last_rejected, dm
        last_rejected = alpha
        alpha *= params.nu3
    raise BacktrackLimitError(-1, params.max_backtracks)


def cauchy_sweep(
    model: QuadraticModel,
    partition: Partition,
    box: BoxSet,
    delta: float,
    params: CauchyParams | None = None,
    ledger: CommLedger | None = None,
) -> CauchyResult:
    """One alternating projected-gradient sweep over the colour classes.

    Colours are a strict sequential barrier; nodes within a colour read the
    pre-colour snapshot and write disjoint blocks, so the loop below matches
    the parallel semantics exactly.
    """
    if params is None:
        params = CauchyParams()
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    x = model.x
    if not box.contains(x):
        raise ValueError("base point is infeasible")
    n_nodes = partition.num_nodes
    z = x.copy()
    alphas = np.full(n_nodes, np.nan)
    backtracks = np.zeros(n_nodes, dtype=int)
    last_rejected = np.full(n_nodes, np.nan)
    block_dec = np.zeros(n_nodes)
    total_change = 0.0

    for k in range(1, partition.num_colors + 1):
        group = partition.color_groups[k - 1]
        # gradient blocks from the pre-colour snapshot (parallel reads)
        grads = {}
        d = z - x
        for i in group:
            sl = partition.node_slice(i)
            acc = model.grad[sl].copy()
            for j, m in model.hess.row_blocks(i):
                dj = d[model.hess.node_slice(j)]
                if np.any(dj):
                    acc += m @ dj
            grads[i] = acc
        for i in group:
            sl = partition.node_slice(i)
            try:
                z_i, alpha, q, rej, dm = _node_step(
                    x[sl],
                    grads[i],
                    model.hess.block(i, i),
                    box.lower[sl],
                    box.upper[sl],
                    delta,
                    params,
                )
            except BacktrackLimitError as err:
                raise BacktrackLimitError(i, err.backtracks) from None
            z[sl] = z_i
            alphas[i] = alpha
            backtracks[i] = q
            last_rejected[i] = rej
            block_dec[i] = -dm
            total_change += dm
        if ledger is not None:
            for i in group:
                for j in ledger.graph.neighbors(i) if ledger.graph else ():
                    ledger.neighbour_exchange(
                        i, j, partition.node_sizes[i], "cauchy", tag="cauchy"
                    )

    return CauchyResult(
        z=z,
        alphas=alphas,
        backtrack_counts=backtracks,
        last_rejected=last_rejected,
        block_decreases=block_dec,
        decrease=-total_change,
        active=active_set(z, box),
    )


def check_block_decrease(
    model: QuadraticModel,
    partition: Partition,
    color: int,
    z_k: np.ndarray,
    mixed: np.ndarray,
    delta: float,
    params: CauchyParams,
) -> bool:
    """Verify the per-colour acceptance conditions at a trial block.

    True iff the Armijo-type inequality and the sup-norm containment both
    hold for colour ``color`` with earlier colours fixed at their values in
    ``mixed``.  The model change is evaluated through the same per-node
    quadratic used by the sweep (exact, since same-colour blocks are
    uncoupled), which keeps the test well conditioned.
    """
    idx = partition.color_indices(color)
    d_k = np.asarray(z_k, dtype=float) - mixed[idx]
    if np.max(np.abs(d_k), initial=0.0) > params.nu2 * delta:
        return False
    grad_k = partial_model_gradient(model, partition, color, mixed)
    slope = float(grad_k @ d_k)
    dm = slope
    pos = 0
    for i in partition.color_groups[color - 1]:
        size = partition.node_sizes[i]
        d_i = d_k[pos : pos + size]
        b_ii = model.hess.block(i, i)
        if b_ii is not None:
            dm += 0.5 * float(d_i @ (b_ii @ d_i))
        pos += size
    return dm <= params.nu0 * slope


def sufficient_decrease_bound(
    result: CauchyResult,
    model: QuadraticModel,
    partition: Partition,
    delta: float,
    params: CauchyParams,
) -> float:
    """Lower bound the sweep must beat:

        chi * sum_i (||d_i||/alpha_i) * min(Delta, (||d_i||/alpha_i)/(1+||B||))

    summed per node (each node backtracks on its own), with ||B||_2 replaced
    by the block-row sup-norm upper estimate, which only weakens the bound.
    """
    bnorm = model.hess.norm_bound()
    chi = params.decrease_constant
    total = 0.0
    d = result.z - model.x
    for i in range(partition.num_nodes):
        sl = partition.node_slice(i)
        rate = float(np.linalg.norm(d[sl])) / result.alphas[i]
        total += rate * min(delta, rate / (1.0 + bnorm))
    return chi * total


def relative_error_bound(
    result: CauchyResult,
    model: QuadraticModel,
    partition: Partition,
    gradient_at_z: np.ndarray,
) -> float:
    """Upper bound on the projected-gradient norm at the Cauchy point:

        K ||B|| ||z - x|| + sum_k ( ||D_k^-1 d_k|| + ||g_k(z) - g_k(x)|| )

    with per-node step sizes entering through the stacked scaled step
    D_k^-1 d_k and ||B||_2 replaced by its upper estimate (which only
    loosens the right-hand side).
    """
    gradient_at_z = np.asarray(gradient_at_z, dtype=float)
    d = result.z - model.x
    gdiff = gradient_at_z - model.grad
    bnorm = model.hess.norm_bound()
    total = partition.num_colors * bnorm * float(np.linalg.norm(d))
    for k in range(1, partition.num_colors + 1):
        scaled_sq = 0.0
        for i in partition.color_groups[k - 1]:
            sl = partition.node_slice(i)
            scaled_sq += float(d[sl] @ d[sl]) / result.alphas[i] ** 2
        idx = partition.color_indices(k)
        total += np.sqrt(scaled_sq) + float(np.linalg.norm(gdiff[idx]))
    return total
