"""Polar-coordinate AC optimal power flow as an equality-constrained NLP.

Elements are the nodes: one node per bus carrying (v, theta) plus the (p, q)
of its generators, one node per line carrying the directed flow triple
(p, q, s).  Residual families, in order: active balance per bus, reactive
balance per bus, then per line the two flow definitions and the thermal
equality p^2 + q^2 + s = rate^2 (s >= 0 turns the limit into an equality).

Flow through line (i, j), measured at the from end with series admittance
g + jb, charging bc and the PI-model coefficients
gff = g, bff = b + bc/2, gft = -g, bft = -b:

    P = gff v_i^2 + v_i v_j T,   T = gft cos(th_i - th_j) + bft sin(th_i - th_j)
    Q = -bff v_i^2 - v_i v_j W,  W = -gft sin(th_i - th_j) + bft cos(th_i - th_j)

The to-end balance uses the negated flow variable of the directed line (flow
conservation; a line variable couples only to its two end buses).  The
reference bus angle is pinned to zero through equal bounds; without it the
balance equations are rotation invariant and the Hessian singular.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..auglag import SparseRows
from ..blockspace import BoxSet, CouplingGraph
from ..model import BlockMatrixBuilder, BlockSparseMatrix
from .case import NetworkCase

__all__ = ["OpfLayout", "PolarOpf", "build_polar_opf"]


@dataclass(frozen=True)
class OpfLayout:
    """Variable and residual maps shared by the OPF formulations.

    Nodes are buses then lines.  Bus-local variable order is the head block
    (v, theta) or (e, f), then (p, q) per generator at the bus, then any
    bus-local slacks.  Line-local order is (p, q, s).
    """

    case: NetworkCase
    node_sizes: tuple[int, ...]
    bus_head: int  # leading bus-local variables before generator slots
    bus_tail: int  # trailing bus-local slack variables
    var_names: tuple[str, ...]
    row_names: tuple[str, ...]

    @property
    def num_buses(self) -> int:
        return self.case.num_buses

    @property
    def num_lines(self) -> int:
        return self.case.num_lines

    @property
    def dim(self) -> int:
        return sum(self.node_sizes)

    def offsets(self) -> tuple[int, ...]:
        return (0,) + tuple(np.cumsum(self.node_sizes).tolist())

    def line_node(self, l: int) -> int:
        return self.num_buses + l

    def to_json(self) -> str:
        return json.dumps(
            {
                "node_sizes": list(self.node_sizes),
                "variables": list(self.var_names),
                "rows": list(self.row_names),
            },
            sort_keys=True,
        )


def _layout(case: NetworkCase, head_names, tail_names) -> OpfLayout:
    gens_at: dict[int, list[int]] = {i: [] for i in range(case.num_buses)}
    index = case.bus_index()
    for g, gen in enumerate(case.generators):
        gens_at[index[gen.bus]].append(g)
    sizes = []
    names: list[str] = []
    for b, bus in enumerate(case.buses):
        local = list(head_names)
        for g in gens_at[b]:
            local += [f"p_gen{g}", f"q_gen{g}"]
        local += list(tail_names)
        sizes.append(len(local))
        names += [f"bus{bus.id}:{nm}" for nm in local]
    for ln in case.lines:
        sizes.append(3)
        names += [f"line{ln.from_bus}-{ln.to_bus}:{nm}" for nm in ("p", "q", "s")]
    rows = [f"P_balance:bus{b.id}" for b in case.buses]
    rows += [f"Q_balance:bus{b.id}" for b in case.buses]
    for ln in case.lines:
        tag = f"line{ln.from_bus}-{ln.to_bus}"
        rows += [f"P_flow:{tag}", f"Q_flow:{tag}", f"thermal:{tag}"]
    if tail_names:
        rows += [f"v_lower:bus{b.id}" for b in case.buses]
        rows += [f"v_upper:bus{b.id}" for b in case.buses]
    return OpfLayout(case, tuple(sizes), len(head_names), len(tail_names),
                     tuple(names), tuple(rows))


def _coupling(case: NetworkCase) -> CouplingGraph:
    """Bus-line incidence, adjacent buses (flow rows), lines sharing a bus."""
    index = case.bus_index()
    nb = case.num_buses
    edges = set()
    lines_at: dict[int, list[int]] = {b: [] for b in range(nb)}
    for l, ln in enumerate(case.lines):
        i, j = index[ln.from_bus], index[ln.to_bus]
        node = nb + l
        edges.add((i, node))
        edges.add((j, node))
        edges.add((min(i, j), max(i, j)))
        lines_at[i].append(node)
        lines_at[j].append(node)
    for incident in lines_at.values():
        for a_i, a in enumerate(incident):
            for b in incident[a_i + 1 :]:
                edges.add((min(a, b), max(a, b)))
    return CouplingGraph.from_edges(nb + case.num_lines, edges)


class _OpfBase:
    """Index bookkeeping shared by the polar and rectangular formulations."""

    def __init__(self, case: NetworkCase, layout: OpfLayout):
        self.case = case
        self.layout = layout
        self._offsets = layout.offsets()
        index = case.bus_index()
        self.from_idx = np.array([index[l.from_bus] for l in case.lines], dtype=int)
        self.to_idx = np.array([index[l.to_bus] for l in case.lines], dtype=int)
        self.gff = np.array([l.g_self for l in case.lines])
        self.bff = np.array([l.b_self for l in case.lines])
        self.gft = np.array([-l.g_series for l in case.lines])
        self.bft = np.array([-l.b_series for l in case.lines])
        self.rate = np.array([l.rate for l in case.lines])
        self.gsh = np.array([b.g_shunt for b in case.buses])
        self.bsh = np.array([b.b_shunt for b in case.buses])
        self.pd = np.zeros(case.num_buses)
        self.qd = np.zeros(case.num_buses)
        for load in case.loads:
            self.pd[index[load.bus]] += load.p
            self.qd[index[load.bus]] += load.q
        self.gens_at: dict[int, list[int]] = {b: [] for b in range(case.num_buses)}
        self.gen_bus = np.zeros(len(case.generators), dtype=int)
        for g, gen in enumerate(case.generators):
            self.gens_at[index[gen.bus]].append(g)
            self.gen_bus[g] = index[gen.bus]
        self.ref = case.reference_index()
        self._graph = _coupling(case)

        nb = case.num_buses
        head = layout.bus_head
        self.bus_off = np.array(self._offsets[:nb])
        self.line_off = np.array(self._offsets[nb : nb + case.num_lines])
        # generator slots (p; q follows at +1)
        self.gen_p = np.zeros(len(case.generators), dtype=int)
        for b in range(nb):
            for slot, g in enumerate(self.gens_at[b]):
                self.gen_p[g] = self.bus_off[b] + head + 2 * slot
        self.base = case.base_mva
        self.c0 = np.array([g.c0 for g in case.generators])
        self.c1 = np.array([g.c1 for g in case.generators])
        self.c2 = np.array([g.c2 for g in case.generators])

    @property
    def node_sizes(self) -> tuple[int, ...]:
        return self.layout.node_sizes

    def coupling(self) -> CouplingGraph:
        return self._graph

    # -- generation cost ----------------------------------------------------

    def objective(self, x) -> float:
        p_mw = x[self.gen_p] * self.base
        return float(np.sum(self.c0 + self.c1 * p_mw + self.c2 * p_mw**2))

    def objective_grad(self, x) -> np.ndarray:
        out = np.zeros(self.layout.dim)
        p_mw = x[self.gen_p] * self.base
        out[self.gen_p] = self.base * (self.c1 + 2.0 * self.c2 * p_mw)
        return out

    def objective_hessian(self, x) -> BlockSparseMatrix:
        builder = BlockMatrixBuilder(self.node_sizes)
        for b in range(self.case.num_buses):
            size = self.node_sizes[b]
            block = np.zeros((size, size))
            for slot, g in enumerate(self.gens_at[b]):
                k = self.layout.bus_head + 2 * slot
                block[k, k] = 2.0 * self.c2[g] * self.base**2
            builder.add(b, b, block)
        return builder.build(validate=False)


class PolarOpf(_OpfBase):
    """Equality-constrained NLP of the polar formulation."""

    def __init__(self, case: NetworkCase):
        super().__init__(case, _layout(case, ("v", "theta"), ()))
        self.v_idx = self.bus_off
        self.th_idx = self.bus_off + 1
        self.pl_idx = self.line_off
        self.ql_idx = self.line_off + 1
        self.s_idx = self.line_off + 2

    def box(self) -> BoxSet:
        n = self.layout.dim
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        for b, bus in enumerate(self.case.buses):
            lo[self.v_idx[b]], hi[self.v_idx[b]] = bus.v_min, bus.v_max
        lo[self.th_idx[self.ref]] = hi[self.th_idx[self.ref]] = 0.0
        for g, gen in enumerate(self.case.generators):
            lo[self.gen_p[g]], hi[self.gen_p[g]] = gen.p_min, gen.p_max
            lo[self.gen_p[g] + 1], hi[self.gen_p[g] + 1] = gen.q_min, gen.q_max
        lo[self.s_idx] = 0.0
        return BoxSet(lo, hi)

    # -- flow expressions ----------------------------------------------------

    def _trig(self, x):
        vi, vj = x[self.v_idx[self.from_idx]], x[self.v_idx[self.to_idx]]
        dth = x[self.th_idx[self.from_idx]] - x[self.th_idx[self.to_idx]]
        c, s = np.cos(dth), np.sin(dth)
        t = self.gft * c + self.bft * s
        w = -self.gft * s + self.bft * c
        return vi, vj, t, w

    def residuals(self, x) -> np.ndarray:
        nb, nl = self.case.num_buses, self.case.num_lines
        vi, vj, t, w = self._trig(x)
        pf = self.gff * vi**2 + vi * vj * t
        qf = -self.bff * vi**2 - vi * vj * w
        pl, ql, s = x[self.pl_idx], x[self.ql_idx], x[self.s_idx]
        v = x[self.v_idx]
        r_p = -self.pd - self.gsh * v**2
        r_q = -self.qd + self.bsh * v**2
        np.add.at(r_p, self.gen_bus, x[self.gen_p])
        np.add.at(r_q, self.gen_bus, x[self.gen_p + 1])
        np.subtract.at(r_p, self.from_idx, pl)
        np.add.at(r_p, self.to_idx, pl)
        np.subtract.at(r_q, self.from_idx, ql)
        np.add.at(r_q, self.to_idx, ql)
        out = np.empty(2 * nb + 3 * nl)
        out[:nb] = r_p
        out[nb : 2 * nb] = r_q
        out[2 * nb + 0 :: 3][:nl] = pl - pf
        out[2 * nb + 1 :: 3][:nl] = ql - qf
        out[2 * nb + 2 :: 3][:nl] = pl**2 + ql**2 + s - self.rate**2
        return out

    def jacobian(self, x) -> SparseRows:
        rows = SparseRows(self.node_sizes)
        nb = self.case.num_buses
        head = self.layout.bus_head
        v = x[self.v_idx]
        vi, vj, t, w = self._trig(x)
        pl, ql = x[self.pl_idx], x[self.ql_idx]

        from_lines: dict[int, list[int]] = {b: [] for b in range(nb)}
        to_lines: dict[int, list[int]] = {b: [] for b in range(nb)}
        for l in range(self.case.num_lines):
            from_lines[self.from_idx[l]].append(l)
            to_lines[self.to_idx[l]].append(l)

        for family, dshunt, slot in (("p", -2.0 * self.gsh * v, 0),
                                     ("q", 2.0 * self.bsh * v, 1)):
            for b in range(nb):
                local = np.zeros(self.node_sizes[b])
                local[0] = dshunt[b]
                for k, _ in enumerate(self.gens_at[b]):
                    local[head + 2 * k + slot] = 1.0
                pieces = {b: local}
                for l in from_lines[b]:
                    seg = np.zeros(3)
                    seg[0 if family == "p" else 1] = -1.0
                    pieces[self.layout.line_node(l)] = seg
                for l in to_lines[b]:
                    seg = np.zeros(3)
                    seg[0 if family == "p" else 1] = 1.0
                    pieces[self.layout.line_node(l)] = seg
                rows.append(pieces)

        for l in range(self.case.num_lines):
            i, j = int(self.from_idx[l]), int(self.to_idx[l])
            node = self.layout.line_node(l)
            # d(pf)/d(vi, thi, vj, thj) and d(qf)/d(...)
            dpf_i = np.zeros(self.node_sizes[i])
            dpf_j = np.zeros(self.node_sizes[j])
            dpf_i[0] = 2.0 * self.gff[l] * vi[l] + vj[l] * t[l]
            dpf_i[1] = vi[l] * vj[l] * w[l]
            dpf_j[0] = vi[l] * t[l]
            dpf_j[1] = -vi[l] * vj[l] * w[l]
            rows.append({node: np.array([1.0, 0.0, 0.0]),
                         i: -dpf_i, j: -dpf_j})
            dqf_i = np.zeros(self.node_sizes[i])
            dqf_j = np.zeros(self.node_sizes[j])
            dqf_i[0] = -2.0 * self.bff[l] * vi[l] - vj[l] * w[l]
            dqf_i[1] = vi[l] * vj[l] * t[l]
            dqf_j[0] = -vi[l] * w[l]
            dqf_j[1] = -vi[l] * vj[l] * t[l]
            rows.append({node: np.array([0.0, 1.0, 0.0]),
                         i: -dqf_i, j: -dqf_j})
            rows.append({node: np.array([2.0 * pl[l], 2.0 * ql[l], 1.0])})
        return rows

    def constraint_hessian(self, x, weights) -> BlockSparseMatrix:
        nb, nl = self.case.num_buses, self.case.num_lines
        builder = BlockMatrixBuilder(self.node_sizes)
        vi, vj, t, w = self._trig(x)
        w_p = weights[:nb]
        w_q = weights[nb : 2 * nb]
        for b in range(nb):
            coef = -2.0 * self.gsh[b] * w_p[b] + 2.0 * self.bsh[b] * w_q[b]
            if coef != 0.0:
                block = np.zeros((self.node_sizes[b], self.node_sizes[b]))
                block[0, 0] = coef
                builder.add(b, b, block)
        for l in range(nl):
            lam_p = weights[2 * nb + 3 * l]
            lam_q = weights[2 * nb + 3 * l + 1]
            lam_s = weights[2 * nb + 3 * l + 2]
            i, j = int(self.from_idx[l]), int(self.to_idx[l])
            # residual is pl - pf (ql - qf): constraint hessian = -hess(flow)
            # hess(pf) over (vi, thi | vj, thj):
            #  [2gff      vj*w   |  t        -vj*w ]
            #  [vj*w   -vivj*t   |  vi*w    vivj*t ]
            #  [t        vi*w    |  0        -vi*w ]
            #  [-vj*w   vivj*t   |  -vi*w  -vivj*t ]
            hp_ii = np.array([[2.0 * self.gff[l], vj[l] * w[l]],
                              [vj[l] * w[l], -vi[l] * vj[l] * t[l]]])
            hp_ij = np.array([[t[l], -vj[l] * w[l]],
                              [vi[l] * w[l], vi[l] * vj[l] * t[l]]])
            hp_jj = np.array([[0.0, -vi[l] * w[l]],
                              [-vi[l] * w[l], -vi[l] * vj[l] * t[l]]])
            # hess(qf):
            hq_ii = np.array([[-2.0 * self.bff[l], vj[l] * t[l]],
                              [vj[l] * t[l], vi[l] * vj[l] * w[l]]])
            hq_ij = np.array([[-w[l], -vj[l] * t[l]],
                              [vi[l] * t[l], -vi[l] * vj[l] * w[l]]])
            hq_jj = np.array([[0.0, -vi[l] * t[l]],
                              [-vi[l] * t[l], vi[l] * vj[l] * w[l]]])
            cii = -(lam_p * hp_ii + lam_q * hq_ii)
            cij = -(lam_p * hp_ij + lam_q * hq_ij)
            cjj = -(lam_p * hp_jj + lam_q * hq_jj)
            if i == j:  # self-loops are rejected at parse time; defensive
                raise ValueError("line endpoints coincide")
            bi = np.zeros((self.node_sizes[i], self.node_sizes[i]))
            bi[:2, :2] = cii
            builder.add(i, i, bi)
            bj = np.zeros((self.node_sizes[j], self.node_sizes[j]))
            bj[:2, :2] = cjj
            builder.add(j, j, bj)
            bij = np.zeros((self.node_sizes[i], self.node_sizes[j]))
            bij[:2, :2] = cij
            builder.add(i, j, bij)
            if lam_s != 0.0:
                node = self.layout.line_node(l)
                builder.add(node, node, np.diag([2.0 * lam_s, 2.0 * lam_s, 0.0]))
        return builder.build(validate=False)

    # -- starting points -----------------------------------------------------

    def _fill_flows(self, x) -> None:
        vi, vj, t, w = self._trig(x)
        x[self.pl_idx] = self.gff * vi**2 + vi * vj * t
        x[self.ql_idx] = -self.bff * vi**2 - vi * vj * w
        x[self.s_idx] = np.maximum(
            self.rate**2 - x[self.pl_idx] ** 2 - x[self.ql_idx] ** 2, 0.0
        )

    def flat_start(self) -> np.ndarray:
        x = np.zeros(self.layout.dim)
        for b, bus in enumerate(self.case.buses):
            x[self.v_idx[b]] = min(max(1.0, bus.v_min), bus.v_max)
        ngen = max(len(self.case.generators), 1)
        for g, gen in enumerate(self.case.generators):
            x[self.gen_p[g]] = min(max(np.sum(self.pd) / ngen, gen.p_min), gen.p_max)
            x[self.gen_p[g] + 1] = min(max(np.sum(self.qd) / ngen, gen.q_min), gen.q_max)
        self._fill_flows(x)
        return x

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform in the box; angles in [-pi/6, pi/6]; flows made consistent."""
        x = np.zeros(self.layout.dim)
        for b, bus in enumerate(self.case.buses):
            x[self.v_idx[b]] = rng.uniform(bus.v_min, bus.v_max)
            x[self.th_idx[b]] = rng.uniform(-np.pi / 6.0, np.pi / 6.0)
        x[self.th_idx[self.ref]] = 0.0
        for g, gen in enumerate(self.case.generators):
            x[self.gen_p[g]] = rng.uniform(gen.p_min, gen.p_max)
            x[self.gen_p[g] + 1] = rng.uniform(gen.q_min, gen.q_max)
        self._fill_flows(x)
        return x


def build_polar_opf(case: NetworkCase) -> PolarOpf:
    """Polar-coordinate OPF with analytic derivatives; layout on ``.layout``."""
    return PolarOpf(case)
