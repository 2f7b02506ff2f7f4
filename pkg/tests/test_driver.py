import numpy as np
import pytest

from helpers import box_qp_bruteforce
from trapopf.blockspace import BoxSet, active_set, criticality
from trapopf.cauchy import CauchyParams
from trapopf.driver import TrapParams, trap_solve
from trapopf.fixtures import random_block_qp, strongly_convex_fixture
from trapopf.model import as_single_node
from trapopf.refine import RefineParams


class CountingProblem:
    """Wrapper counting oracle calls (reject iterations must not refresh)."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = {"eval": 0, "grad": 0, "hessian": 0}

    @property
    def node_sizes(self):
        return self.inner.node_sizes

    def eval(self, x):
        self.calls["eval"] += 1
        return self.inner.eval(x)

    def grad(self, x):
        self.calls["grad"] += 1
        return self.inner.grad(x)

    def hessian(self, x):
        self.calls["hessian"] += 1
        return self.inner.hessian(x)

    def bounds(self):
        return self.inner.bounds()

    def coupling(self):
        return self.inner.coupling()


class TestTermination:
    def test_critical_start_zero_iterations(self):
        qp, part = random_block_qp(0, bounded_fraction=0.0)
        dense, lin = qp.dense()
        xstar = np.linalg.solve(dense, -lin)
        report = trap_solve(qp, xstar, TrapParams(epsilon=1e-6), partition=part)
        assert report.iterations == 0
        assert report.termination == "kkt_tol"

    def test_max_iters_reported(self):
        qp, part = random_block_qp(1)
        report = trap_solve(qp, np.zeros(part.dim), TrapParams(epsilon=1e-14, max_iters=2),
                            partition=part)
        assert report.termination == "max_iters"
        assert report.iterations == 2

    def test_final_kkt_below_tolerance(self):
        for seed in range(10):
            qp, part = random_block_qp(seed)
            params = TrapParams(epsilon=1e-7, max_iters=200)
            report = trap_solve(qp, np.zeros(part.dim), params, partition=part)
            assert report.termination == "kkt_tol"
            assert report.final_kkt <= params.epsilon


class TestConvergence:
    def test_unconstrained_minimiser_reached(self):
        # strictly convex QP, box inactive at the optimum
        for seed in range(8):
            qp, part = random_block_qp(seed, bounded_fraction=0.0)
            dense, lin = qp.dense()
            want = np.linalg.solve(dense, -lin)
            report = trap_solve(qp, np.zeros(part.dim),
                                TrapParams(epsilon=1e-10, max_iters=300),
                                partition=part)
            assert np.linalg.norm(report.x - want) <= 1e-8 * (1.0 + np.linalg.norm(want))
            # trailing iterations are very successful (Newton model is exact)
            tail = [r.status for r in report.records[-3:]]
            assert all(s != "rejected" for s in tail)

    def test_bound_constrained_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        for seed in range(6):
            qp, part = random_block_qp(seed, num_nodes=4, num_colors=2,
                                       size_range=(1, 2), bounded_fraction=1.0)
            dense, lin = qp.dense()
            lower, upper = qp.bounds().lower, qp.bounds().upper
            want, _ = box_qp_bruteforce(dense, lin, lower, upper)
            x0 = lower + (upper - lower) * rng.random(part.dim)
            report = trap_solve(qp, x0, TrapParams(epsilon=1e-10, max_iters=300),
                                partition=part)
            assert np.linalg.norm(report.x - want) <= 1e-7

    def test_feasibility_of_every_iterate(self):
        qp, part = random_block_qp(2)
        report = trap_solve(qp, np.zeros(part.dim), TrapParams(max_iters=100),
                            partition=part, keep_iterates=True)
        for x in report.iterates:
            assert qp.bounds().contains(x, tol=1e-12)

    def test_accepted_steps_strictly_decrease_objective(self):
        qp, part = random_block_qp(3, convex=False)
        params = TrapParams(epsilon=1e-8, max_iters=200)
        report = trap_solve(qp, np.zeros(part.dim), params, partition=part)
        prev = qp.eval(np.zeros(part.dim))
        for rec in report.records:
            if rec.status != "rejected":
                assert rec.objective <= prev - params.eta1 * rec.model_decrease + 1e-12
                prev = rec.objective

    def test_infeasible_start_projected(self):
        qp, part = random_block_qp(4, bounded_fraction=1.0)
        x0 = qp.bounds().upper + 5.0
        report = trap_solve(qp, x0, TrapParams(max_iters=50), partition=part)
        assert qp.bounds().contains(report.x, tol=1e-12)

    def test_default_partition_from_greedy(self):
        qp, _ = random_block_qp(5)
        report = trap_solve(qp, np.zeros(sum(qp.node_sizes)), TrapParams(max_iters=50))
        assert report.termination == "kkt_tol"

    def test_single_node_baseline_reaches_same_optimum(self):
        qp, part = random_block_qp(6, bounded_fraction=0.0)
        dense, lin = qp.dense()
        want = np.linalg.solve(dense, -lin)
        mono = as_single_node(qp)
        report = trap_solve(mono, np.zeros(part.dim), TrapParams(epsilon=1e-10))
        assert np.linalg.norm(report.x - want) <= 1e-8 * (1.0 + np.linalg.norm(want))


class TestRadiusPolicy:
    def test_update_rules_per_status(self):
        params = TrapParams(epsilon=1e-12, max_iters=150)
        qp, part = random_block_qp(7, convex=False)
        report = trap_solve(qp, np.zeros(part.dim), params, partition=part)
        seen = {"rejected": False, "successful": False, "very_successful": False}
        delta = params.delta0
        for rec in report.records:
            if rec.status == "rejected":
                assert rec.delta == pytest.approx(params.sigma2 * delta)
            elif rec.status == "successful":
                assert rec.delta == pytest.approx(delta)
            else:
                assert rec.delta == pytest.approx(params.sigma3 * delta)
            # containment in the permitted intervals
            if rec.status == "rejected":
                assert params.sigma1 * delta - 1e-15 <= rec.delta <= params.sigma2 * delta + 1e-15
            elif rec.status == "successful":
                assert params.sigma1 * delta - 1e-15 <= rec.delta <= params.sigma3 * delta + 1e-15
            else:
                assert delta - 1e-15 <= rec.delta <= params.sigma3 * delta + 1e-15
            seen[rec.status] = True
            delta = rec.delta
        assert seen["very_successful"]

    def test_boundary_rho_classified_successful(self):
        # rho == eta1 and rho == eta2 both land in the middle branch
        params = TrapParams()
        assert params.eta1 <= params.eta1 <= params.eta2

    def test_rejected_iterations_keep_oracles(self):
        # quadratics never reject (the model is exact); start this fixture in
        # the flat region of cosh with a strong pull into the steep region so
        # the overconfident model gets some trial points rejected
        problem, part = strongly_convex_fixture(seed=3, kappa=1.0, scale=0.1)
        problem.linear = np.full(part.dim, 8.0)
        counter = CountingProblem(problem)
        report = trap_solve(counter, np.zeros(part.dim),
                            TrapParams(epsilon=1e-9, max_iters=200, delta0=8.0),
                            partition=part)
        accepted = sum(1 for r in report.records if r.status != "rejected")
        # one initial refresh plus one per accepted step
        assert counter.calls["grad"] == accepted + 1
        assert counter.calls["hessian"] == accepted + 1
        # one initial value plus one trial evaluation per iteration
        assert counter.calls["eval"] == report.iterations + 1
        assert any(r.status == "rejected" for r in report.records)


class TestActiveSetIdentification:
    def test_active_set_settles_and_matches_oracle(self):
        hits = 0
        for seed in range(6):
            qp, part = random_block_qp(seed, num_nodes=4, num_colors=2,
                                       size_range=(1, 2), bounded_fraction=1.0)
            dense, lin = qp.dense()
            box = qp.bounds()
            want, _ = box_qp_bruteforce(dense, lin, box.lower, box.upper)
            want_active = active_set(want, box, tol=1e-8).indices
            if want_active.size == 0:
                continue
            hits += 1
            # inexact refinement (fixed xi) so convergence takes several
            # genuine iterations after the face is identified
            params = TrapParams(epsilon=1e-9, max_iters=300,
                                refine=RefineParams(xi=0.3))
            report = trap_solve(qp, np.zeros(part.dim), params,
                                partition=part, keep_iterates=True)
            got_active = active_set(report.x, box, tol=1e-8).indices
            assert np.array_equal(got_active, want_active)
            # constant at least 3 iterations before termination
            history = [tuple(active_set(x, box, tol=1e-8).indices.tolist())
                       for x in report.iterates]
            settle = tuple(want_active.tolist())
            assert len(history) >= 4
            assert all(h == settle for h in history[-4:])
        assert hits >= 3


class TestLocalRate:
    def test_forcing_sequence_gives_fast_tail_and_sigma_slows_it(self):
        problem, part = strongly_convex_fixture()
        from helpers import newton_minimize
        xstar = newton_minimize(problem.grad, problem.dense_hessian,
                                np.zeros(part.dim))

        def tail_ratio(sigma):
            params = TrapParams(
                epsilon=1e-10, max_iters=120,
                refine=RefineParams(sigma=sigma),
            )
            report = trap_solve(problem, np.full(part.dim, 2.0), params,
                                partition=part, keep_iterates=True)
            errs = [np.linalg.norm(x - xstar) for x in report.iterates]
            errs = [e for e in errs if e > 1e-12]
            ratios = [b / a for a, b in zip(errs[:-1], errs[1:])]
            tail = ratios[-5:]
            # geometric-mean contraction over the last five iterations
            return float(np.prod(tail)) ** (1.0 / len(tail))

        fast = tail_ratio(1e-10)
        slow = tail_ratio(1e-2)
        assert fast <= 0.1
        assert slow > fast


class TestParamsValidation:
    def test_orderings(self):
        with pytest.raises(ValueError):
            TrapParams(sigma1=0.6, sigma2=0.5)
        with pytest.raises(ValueError):
            TrapParams(eta1=0.95, eta2=0.9)
        with pytest.raises(ValueError):
            TrapParams(cauchy=CauchyParams(nu2=2.0), refine=RefineParams(gamma2=1.0))
