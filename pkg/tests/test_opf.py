import numpy as np
import pytest

from helpers import central_diff_gradient
from trapopf.auglag import auglag_oracle
from trapopf.blockspace import greedy_coloring
from trapopf.opf import (
    CaseFormatError,
    bundled_case,
    build_polar_opf,
    build_rect_opf,
    opf_coloring,
    parse_case,
    rect_from_polar,
)
from trapopf.opf.case import Bus, Generator, Line, Load, NetworkCase


def random_interior_point(problem, rng):
    """Generic point inside the box, away from the bounds."""
    box = problem.box()
    lo = np.where(np.isfinite(box.lower), box.lower, -1.0)
    hi = np.where(np.isfinite(box.upper), box.upper, 1.0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    x = lo + (hi - lo) * (0.25 + 0.5 * rng.random(box.dim))
    x[box.lower == box.upper] = box.lower[box.lower == box.upper]
    return x


def fd_jacobian(problem, x, h=1e-7):
    m = problem.residuals(x).size
    out = np.zeros((m, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h * (1.0 + abs(x[i]))
        out[:, i] = (problem.residuals(x + e) - problem.residuals(x - e)) / (2 * e[i])
    return out


TOY = """
function mpc = toy
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 138 1 1.1 0.9;
  2 1 50 10 0 0 1 1 0 138 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 100 -100 1 100 1 100 0; ];
mpc.branch = [ 1 2 0 0.1 0 100 100 100 0 0 1; ];
mpc.gencost = [ 2 0 0 3 0.1 5 0; ];
"""


class TestParseCase:
    def test_two_bus_toy_series_admittance(self):
        case = parse_case(TOY)
        assert case.num_buses == 2 and case.num_lines == 1
        line = case.lines[0]
        # r=0, x=0.1 -> series admittance 0 - 10j
        assert line.g_series == pytest.approx(0.0)
        assert line.b_series == pytest.approx(-10.0)
        assert case.loads[0].p == pytest.approx(0.5)  # per unit

    def test_dangling_bus_named_in_error(self):
        bad = TOY.replace("1 2 0 0.1", "1 99 0 0.1")
        with pytest.raises(CaseFormatError, match="99"):
            parse_case(bad)

    def test_nonpositive_base_rejected(self):
        with pytest.raises(CaseFormatError, match="baseMVA"):
            parse_case(TOY.replace("mpc.baseMVA = 100;", "mpc.baseMVA = 0;"))

    def test_malformed_number_carries_line(self):
        bad = TOY.replace("2 1 50 10", "2 1 fifty 10")
        with pytest.raises(CaseFormatError, match="line"):
            parse_case(bad)

    def test_bundled_case9_shape(self):
        case = bundled_case("case9")
        assert case.num_buses == 9
        assert case.num_lines == 9
        assert len(case.generators) == 3
        pairs = {tuple(sorted((l.from_bus, l.to_bus))) for l in case.lines}
        assert pairs == {(1, 4), (4, 5), (5, 6), (3, 6), (6, 7), (7, 8),
                         (2, 8), (8, 9), (4, 9)}

    def test_disconnected_rejected(self):
        case = bundled_case("case9")
        with pytest.raises(CaseFormatError, match="connected"):
            NetworkCase("x", 100.0, case.buses, case.lines[:2],
                        case.generators, case.loads)


def zero_admittance_case():
    buses = (Bus(1, 3, 0.0, 0.0, 0.9, 1.1), Bus(2, 1, 0.0, 0.0, 0.9, 1.1))
    lines = (Line(1, 2, 0.0, 0.0, 0.0, 1.0),)
    gens = (Generator(1, 0.0, 1.0, -1.0, 1.0, 0.0, 5.0, 0.1),)
    loads = (Load(2, 0.5, 0.1),)
    return NetworkCase("zero", 100.0, buses, lines, gens, loads)


class TestPolar:
    def test_counts(self):
        p = build_polar_opf(bundled_case("case9"))
        assert p.layout.dim == 2 * 9 + 2 * 3 + 3 * 9
        x = p.flat_start()
        assert p.residuals(x).size == 2 * 9 + 3 * 9

    def test_zero_admittance_balances_are_net_injections(self):
        p = build_polar_opf(zero_admittance_case())
        x = p.flat_start()
        x[p.pl_idx] = 0.0
        x[p.ql_idx] = 0.0
        r = p.residuals(x)
        # P balance: gen - load; flows vanish identically
        assert r[0] == pytest.approx(x[p.gen_p[0]])
        assert r[1] == pytest.approx(-0.5)
        assert r[2] == pytest.approx(x[p.gen_p[0] + 1])
        assert r[3] == pytest.approx(-0.1)

    @pytest.mark.parametrize("case_name", ["case2", "case9"])
    def test_jacobian_matches_fd(self, case_name):
        p = build_polar_opf(bundled_case(case_name))
        rng = np.random.default_rng(1)
        for _ in range(4):
            x = random_interior_point(p, rng)
            dense = p.jacobian(x).to_dense()
            fd = fd_jacobian(p, x)
            assert np.max(np.abs(dense - fd)) <= 1e-6 * (1.0 + np.max(np.abs(fd)))

    def test_constraint_hessian_matches_fd_of_jtv(self):
        p = build_polar_opf(bundled_case("case9"))
        rng = np.random.default_rng(2)
        x = random_interior_point(p, rng)
        w = rng.standard_normal(p.residuals(x).size)
        dense = p.constraint_hessian(x, w).to_dense()
        n = x.size
        fd = np.zeros((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1e-7 * (1.0 + abs(x[i]))
            fd[:, i] = (p.jacobian(x + e).rtv(w) - p.jacobian(x - e).rtv(w)) / (2 * e[i])
        assert np.max(np.abs(dense - fd)) <= 1e-5 * (1.0 + np.max(np.abs(fd)))

    def test_objective_gradient_fd(self):
        p = build_polar_opf(bundled_case("case9"))
        rng = np.random.default_rng(3)
        x = random_interior_point(p, rng)
        fd = central_diff_gradient(p.objective, x)
        assert np.linalg.norm(p.objective_grad(x) - fd) <= 1e-5 * (1 + np.linalg.norm(fd))

    def test_layout_covers_every_variable(self):
        # no silent unused slots: every variable is read by some residual row
        p = build_polar_opf(bundled_case("case9"))
        rng = np.random.default_rng(4)
        x = random_interior_point(p, rng)
        dense = p.jacobian(x).to_dense()
        touched = np.any(dense != 0.0, axis=0)
        assert touched.all()

    def test_auglag_pattern_equals_coupling_exactly(self):
        p = build_polar_opf(bundled_case("case9"))
        rng = np.random.default_rng(5)
        mu = rng.standard_normal(p.residuals(p.flat_start()).size)
        oracle = auglag_oracle(p, mu, 7.0)
        x = random_interior_point(p, rng)
        assert oracle.hessian(x).pattern() == p.coupling().edges

    def test_auglag_gradient_fd_at_flat_start(self):
        p = build_polar_opf(bundled_case("case9"))
        oracle = auglag_oracle(p, np.zeros(45), 10.0)
        x = p.flat_start()
        fd = central_diff_gradient(oracle.eval, x)
        g = oracle.grad(x)
        assert np.linalg.norm(g - fd) <= 1e-6 * (1.0 + np.linalg.norm(fd))


class TestRect:
    def test_counts(self):
        r = build_rect_opf(bundled_case("case9"))
        assert r.layout.dim == (2 + 2) * 9 + 2 * 3 + 3 * 9
        x = r.flat_start()
        assert r.residuals(x).size == 2 * 9 + 3 * 9 + 2 * 9

    @pytest.mark.parametrize("case_name", ["case2", "case9"])
    def test_jacobian_matches_fd(self, case_name):
        r = build_rect_opf(bundled_case(case_name))
        rng = np.random.default_rng(6)
        for _ in range(4):
            x = random_interior_point(r, rng)
            dense = r.jacobian(x).to_dense()
            fd = fd_jacobian(r, x)
            assert np.max(np.abs(dense - fd)) <= 1e-6 * (1.0 + np.max(np.abs(fd)))

    def test_constraint_hessian_matches_fd_of_jtv(self):
        r = build_rect_opf(bundled_case("case9"))
        rng = np.random.default_rng(7)
        x = random_interior_point(r, rng)
        w = rng.standard_normal(r.residuals(x).size)
        dense = r.constraint_hessian(x, w).to_dense()
        n = x.size
        fd = np.zeros((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1e-7 * (1.0 + abs(x[i]))
            fd[:, i] = (r.jacobian(x + e).rtv(w) - r.jacobian(x - e).rtv(w)) / (2 * e[i])
        assert np.max(np.abs(dense - fd)) <= 1e-5 * (1.0 + np.max(np.abs(fd)))

    def test_zero_admittance_reduces_to_injections(self):
        r = build_rect_opf(zero_admittance_case())
        x = r.flat_start()
        x[r.pl_idx] = 0.0
        x[r.ql_idx] = 0.0
        res = r.residuals(x)
        assert res[1] == pytest.approx(-0.5)
        assert res[3] == pytest.approx(-0.1)

    def test_polar_rect_residuals_agree_under_map(self):
        case = bundled_case("case9")
        polar = build_polar_opf(case)
        rect = build_rect_opf(case)
        rng = np.random.default_rng(8)
        common = 2 * case.num_buses + 3 * case.num_lines
        for _ in range(100):
            xp = random_interior_point(polar, rng)
            xr = rect_from_polar(polar, rect, xp)
            rp = polar.residuals(xp)
            rr = rect.residuals(xr)
            assert np.max(np.abs(rp - rr[:common])) <= 1e-12 * (1 + np.max(np.abs(rp)))
            # voltage slack rows are consistent by construction of the map
            assert np.max(np.abs(rr[common:])) <= 1e-12

    def test_auglag_pattern_equals_coupling_exactly(self):
        r = build_rect_opf(bundled_case("case9"))
        rng = np.random.default_rng(9)
        x = random_interior_point(r, rng)
        mu = rng.standard_normal(r.residuals(x).size)
        oracle = auglag_oracle(r, mu, 3.0)
        assert oracle.hessian(x).pattern() == r.coupling().edges


class TestColoring:
    def test_nine_bus_schedule_matches_published_grouping(self):
        case = bundled_case("case9")
        layout = build_polar_opf(case).layout
        part = opf_coloring(layout)
        assert part.num_colors == 5
        def lines_in_phase(k):
            return {
                tuple(sorted((case.lines[i - 9].from_bus, case.lines[i - 9].to_bus)))
                for i in part.color_groups[k - 1]
            }
        assert lines_in_phase(1) == {(2, 8), (6, 7), (4, 9)}
        assert lines_in_phase(2) == {(7, 8), (3, 6), (4, 5)}
        assert lines_in_phase(3) == {(8, 9), (5, 6), (1, 4)}
        buses4 = {case.buses[i].id for i in part.color_groups[3]}
        buses5 = {case.buses[i].id for i in part.color_groups[4]}
        assert buses4 == {1, 2, 3, 5, 7, 9}
        assert buses5 == {4, 6, 8}

    def test_single_line_three_phases(self):
        layout = build_polar_opf(bundled_case("case2")).layout
        part = opf_coloring(layout)
        # line phase, then the two adjacent buses sequentially
        assert part.num_colors == 3
        assert part.colors[2] == 1  # the line node
        assert sorted(part.colors[:2]) == [2, 3]

    def test_path_feeder_four_phases(self):
        text = """
function mpc = path4
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 12 1 1.1 0.9;
  2 1 10 2 0 0 1 1 0 12 1 1.1 0.9;
  3 1 10 2 0 0 1 1 0 12 1 1.1 0.9;
  4 1 10 2 0 0 1 1 0 12 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 50 -50 1 100 1 50 0; ];
mpc.branch = [
  1 2 0.01 0.1 0 50 50 50 0 0 1;
  2 3 0.01 0.1 0 50 50 50 0 0 1;
  3 4 0.01 0.1 0 50 50 50 0 0 1;
];
mpc.gencost = [ 2 0 0 2 5 0; ];
"""
        layout = build_polar_opf(parse_case(text)).layout
        part = opf_coloring(layout)
        assert part.num_colors == 4  # 2 line phases + 2 bus phases

    def test_star_needs_hub_degree_line_phases(self):
        # lines sharing the hub are mutually coupled through the hub balance
        # row, so a 3-spoke star takes 3 line phases (plus 2 bus phases)
        text = """
function mpc = star4
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 12 1 1.1 0.9;
  2 1 10 2 0 0 1 1 0 12 1 1.1 0.9;
  3 1 10 2 0 0 1 1 0 12 1 1.1 0.9;
  4 1 10 2 0 0 1 1 0 12 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 50 -50 1 100 1 50 0; ];
mpc.branch = [
  1 2 0.01 0.1 0 50 50 50 0 0 1;
  1 3 0.01 0.1 0 50 50 50 0 0 1;
  1 4 0.01 0.1 0 50 50 50 0 0 1;
];
mpc.gencost = [ 2 0 0 2 5 0; ];
"""
        layout = build_polar_opf(parse_case(text)).layout
        part = opf_coloring(layout)
        assert part.num_colors == 5  # 3 line phases + 2 bus phases

    def test_schedule_valid_against_penalised_coupling(self):
        for name in ("case2", "case9"):
            p = build_polar_opf(bundled_case(name))
            part = opf_coloring(p.layout)
            part.validate_against(p.coupling())  # must not raise

    def test_generic_greedy_is_valid_on_element_graph(self):
        p = build_polar_opf(bundled_case("case9"))
        part = greedy_coloring(p.coupling(), p.node_sizes)
        part.validate_against(p.coupling())
