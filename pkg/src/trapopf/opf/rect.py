"""Rectangular-coordinate AC-OPF: v e^{i theta} replaced by e + i f.

All residuals become quadratic.  With vsq = e^2 + f^2 per bus and, per line
(i, j),

    K = e_i e_j + f_i f_j      (= v_i v_j cos(th_i - th_j))
    L = f_i e_j - e_i f_j      (= v_i v_j sin(th_i - th_j))

the flow expressions are P = gff vsq_i + gft K + bft L and
Q = -bff vsq_i + gft L - bft K.  Voltage magnitude bounds turn into two
slack-equalities per bus, v_min^2 + s_lo = vsq and vsq + s_hi = v_max^2 with
s_lo, s_hi >= 0, appended after the common residual families so the first
2B + 3L rows align one-to-one with the polar ordering.  The reference bus is
pinned by f = 0 (equal bounds).
"""

from __future__ import annotations

import numpy as np

from ..auglag import SparseRows
from ..blockspace import BoxSet
from ..model import BlockMatrixBuilder, BlockSparseMatrix
from .case import NetworkCase
from .polar import OpfLayout, PolarOpf, _layout, _OpfBase

__all__ = ["RectOpf", "build_rect_opf", "rect_from_polar"]


class RectOpf(_OpfBase):
    """Equality-constrained NLP of the rectangular formulation."""

    def __init__(self, case: NetworkCase):
        super().__init__(case, _layout(case, ("e", "f"), ("s_vlo", "s_vhi")))
        self.e_idx = self.bus_off
        self.f_idx = self.bus_off + 1
        sizes = np.array(self.node_sizes[: case.num_buses])
        self.slo_idx = self.bus_off + sizes - 2
        self.shi_idx = self.bus_off + sizes - 1
        self.pl_idx = self.line_off
        self.ql_idx = self.line_off + 1
        self.s_idx = self.line_off + 2
        self.vmin = np.array([b.v_min for b in case.buses])
        self.vmax = np.array([b.v_max for b in case.buses])

    def box(self) -> BoxSet:
        n = self.layout.dim
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        lo[self.f_idx[self.ref]] = hi[self.f_idx[self.ref]] = 0.0
        for g, gen in enumerate(self.case.generators):
            lo[self.gen_p[g]], hi[self.gen_p[g]] = gen.p_min, gen.p_max
            lo[self.gen_p[g] + 1], hi[self.gen_p[g] + 1] = gen.q_min, gen.q_max
        lo[self.slo_idx] = 0.0
        lo[self.shi_idx] = 0.0
        lo[self.s_idx] = 0.0
        return BoxSet(lo, hi)

    def _products(self, x):
        ei, fi = x[self.e_idx[self.from_idx]], x[self.f_idx[self.from_idx]]
        ej, fj = x[self.e_idx[self.to_idx]], x[self.f_idx[self.to_idx]]
        k = ei * ej + fi * fj
        l = fi * ej - ei * fj
        return ei, fi, ej, fj, k, l

    def residuals(self, x) -> np.ndarray:
        nb, nl = self.case.num_buses, self.case.num_lines
        e, f = x[self.e_idx], x[self.f_idx]
        vsq = e**2 + f**2
        ei, fi, ej, fj, k, l = self._products(x)
        vsq_i = ei**2 + fi**2
        pf = self.gff * vsq_i + self.gft * k + self.bft * l
        qf = -self.bff * vsq_i + self.gft * l - self.bft * k
        pl, ql, s = x[self.pl_idx], x[self.ql_idx], x[self.s_idx]
        r_p = -self.pd - self.gsh * vsq
        r_q = -self.qd + self.bsh * vsq
        np.add.at(r_p, self.gen_bus, x[self.gen_p])
        np.add.at(r_q, self.gen_bus, x[self.gen_p + 1])
        np.subtract.at(r_p, self.from_idx, pl)
        np.add.at(r_p, self.to_idx, pl)
        np.subtract.at(r_q, self.from_idx, ql)
        np.add.at(r_q, self.to_idx, ql)
        out = np.empty(2 * nb + 3 * nl + 2 * nb)
        out[:nb] = r_p
        out[nb : 2 * nb] = r_q
        out[2 * nb : 2 * nb + 3 * nl : 3] = pl - pf
        out[2 * nb + 1 : 2 * nb + 3 * nl : 3] = ql - qf
        out[2 * nb + 2 : 2 * nb + 3 * nl : 3] = pl**2 + ql**2 + s - self.rate**2
        base = 2 * nb + 3 * nl
        out[base : base + nb] = vsq - self.vmin**2 - x[self.slo_idx]
        out[base + nb :] = self.vmax**2 - vsq - x[self.shi_idx]
        return out

    def jacobian(self, x) -> SparseRows:
        rows = SparseRows(self.node_sizes)
        nb = self.case.num_buses
        head = self.layout.bus_head
        e, f = x[self.e_idx], x[self.f_idx]
        ei, fi, ej, fj, k, l = self._products(x)
        pl, ql = x[self.pl_idx], x[self.ql_idx]

        from_lines: dict[int, list[int]] = {b: [] for b in range(nb)}
        to_lines: dict[int, list[int]] = {b: [] for b in range(nb)}
        for ln in range(self.case.num_lines):
            from_lines[self.from_idx[ln]].append(ln)
            to_lines[self.to_idx[ln]].append(ln)

        for family, shunt, slot in (("p", -self.gsh, 0), ("q", self.bsh, 1)):
            for b in range(nb):
                local = np.zeros(self.node_sizes[b])
                local[0] = 2.0 * shunt[b] * e[b]
                local[1] = 2.0 * shunt[b] * f[b]
                for kk, _ in enumerate(self.gens_at[b]):
                    local[head + 2 * kk + slot] = 1.0
                pieces = {b: local}
                for ln in from_lines[b]:
                    seg = np.zeros(3)
                    seg[0 if family == "p" else 1] = -1.0
                    pieces[self.layout.line_node(ln)] = seg
                for ln in to_lines[b]:
                    seg = np.zeros(3)
                    seg[0 if family == "p" else 1] = 1.0
                    pieces[self.layout.line_node(ln)] = seg
                rows.append(pieces)

        for ln in range(self.case.num_lines):
            i, j = int(self.from_idx[ln]), int(self.to_idx[ln])
            node = self.layout.line_node(ln)
            gff, bff = self.gff[ln], self.bff[ln]
            gft, bft = self.gft[ln], self.bft[ln]
            # dK = (ej, fj | ei, fi); dL = (-fj, ej | fi, -ei); dvsq_i = (2ei, 2fi)
            dpf_i = np.zeros(self.node_sizes[i])
            dpf_j = np.zeros(self.node_sizes[j])
            dpf_i[0] = 2.0 * gff * ei[ln] + gft * ej[ln] - bft * fj[ln]
            dpf_i[1] = 2.0 * gff * fi[ln] + gft * fj[ln] + bft * ej[ln]
            dpf_j[0] = gft * ei[ln] + bft * fi[ln]
            dpf_j[1] = gft * fi[ln] - bft * ei[ln]
            rows.append({node: np.array([1.0, 0.0, 0.0]), i: -dpf_i, j: -dpf_j})
            dqf_i = np.zeros(self.node_sizes[i])
            dqf_j = np.zeros(self.node_sizes[j])
            dqf_i[0] = -2.0 * bff * ei[ln] - gft * fj[ln] - bft * ej[ln]
            dqf_i[1] = -2.0 * bff * fi[ln] + gft * ej[ln] - bft * fj[ln]
            dqf_j[0] = gft * fi[ln] - bft * ei[ln]
            dqf_j[1] = -gft * ei[ln] - bft * fi[ln]
            rows.append({node: np.array([0.0, 1.0, 0.0]), i: -dqf_i, j: -dqf_j})
            rows.append({node: np.array([2.0 * pl[ln], 2.0 * ql[ln], 1.0])})

        for b in range(nb):  # v_lower rows: vsq - vmin^2 - s_lo
            local = np.zeros(self.node_sizes[b])
            local[0], local[1] = 2.0 * e[b], 2.0 * f[b]
            local[-2] = -1.0
            rows.append({b: local})
        for b in range(nb):  # v_upper rows: vmax^2 - vsq - s_hi
            local = np.zeros(self.node_sizes[b])
            local[0], local[1] = -2.0 * e[b], -2.0 * f[b]
            local[-1] = -1.0
            rows.append({b: local})
        return rows

    def constraint_hessian(self, x, weights) -> BlockSparseMatrix:
        nb, nl = self.case.num_buses, self.case.num_lines
        builder = BlockMatrixBuilder(self.node_sizes)
        w_p = weights[:nb]
        w_q = weights[nb : 2 * nb]
        base = 2 * nb + 3 * nl
        w_lo = weights[base : base + nb]
        w_hi = weights[base + nb : base + 2 * nb]
        for b in range(nb):
            coef = (-2.0 * self.gsh[b] * w_p[b] + 2.0 * self.bsh[b] * w_q[b]
                    + 2.0 * w_lo[b] - 2.0 * w_hi[b])
            if coef != 0.0:
                block = np.zeros((self.node_sizes[b], self.node_sizes[b]))
                block[0, 0] = coef
                block[1, 1] = coef
                builder.add(b, b, block)
        eye2 = np.eye(2)
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])  # hess(L) cross block
        for ln in range(nl):
            lam_p = weights[2 * nb + 3 * ln]
            lam_q = weights[2 * nb + 3 * ln + 1]
            lam_s = weights[2 * nb + 3 * ln + 2]
            i, j = int(self.from_idx[ln]), int(self.to_idx[ln])
            gff, bff = self.gff[ln], self.bff[ln]
            gft, bft = self.gft[ln], self.bft[ln]
            # hess(P) parts: 2*gff*I on (i,i); gft*I + bft*rot on (i,j)
            # hess(Q) parts: -2*bff*I on (i,i); gft*rot - bft*I on (i,j)
            cii = -(lam_p * 2.0 * gff - lam_q * 2.0 * bff) * eye2
            cij = -(lam_p * (gft * eye2 + bft * rot)
                    + lam_q * (gft * rot - bft * eye2))
            bi = np.zeros((self.node_sizes[i], self.node_sizes[i]))
            bi[:2, :2] = cii
            builder.add(i, i, bi)
            bij = np.zeros((self.node_sizes[i], self.node_sizes[j]))
            bij[:2, :2] = cij
            builder.add(i, j, bij)
            if lam_s != 0.0:
                node = self.layout.line_node(ln)
                builder.add(node, node, np.diag([2.0 * lam_s, 2.0 * lam_s, 0.0]))
        return builder.build(validate=False)

    # -- starting points -----------------------------------------------------

    def _fill_flows(self, x) -> None:
        ei, fi, ej, fj, k, l = self._products(x)
        vsq_i = ei**2 + fi**2
        x[self.pl_idx] = self.gff * vsq_i + self.gft * k + self.bft * l
        x[self.ql_idx] = -self.bff * vsq_i + self.gft * l - self.bft * k
        x[self.s_idx] = np.maximum(
            self.rate**2 - x[self.pl_idx] ** 2 - x[self.ql_idx] ** 2, 0.0
        )

    def _fill_voltage_slacks(self, x) -> None:
        vsq = x[self.e_idx] ** 2 + x[self.f_idx] ** 2
        x[self.slo_idx] = np.maximum(vsq - self.vmin**2, 0.0)
        x[self.shi_idx] = np.maximum(self.vmax**2 - vsq, 0.0)

    def flat_start(self) -> np.ndarray:
        x = np.zeros(self.layout.dim)
        for b, bus in enumerate(self.case.buses):
            x[self.e_idx[b]] = min(max(1.0, bus.v_min), bus.v_max)
        ngen = max(len(self.case.generators), 1)
        for g, gen in enumerate(self.case.generators):
            x[self.gen_p[g]] = min(max(np.sum(self.pd) / ngen, gen.p_min), gen.p_max)
            x[self.gen_p[g] + 1] = min(max(np.sum(self.qd) / ngen, gen.q_min), gen.q_max)
        self._fill_flows(x)
        self._fill_voltage_slacks(x)
        return x

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        x = np.zeros(self.layout.dim)
        for b, bus in enumerate(self.case.buses):
            v = rng.uniform(bus.v_min, bus.v_max)
            th = rng.uniform(-np.pi / 6.0, np.pi / 6.0)
            if b == self.ref:
                th = 0.0
            x[self.e_idx[b]] = v * np.cos(th)
            x[self.f_idx[b]] = v * np.sin(th)
        for g, gen in enumerate(self.case.generators):
            x[self.gen_p[g]] = rng.uniform(gen.p_min, gen.p_max)
            x[self.gen_p[g] + 1] = rng.uniform(gen.q_min, gen.q_max)
        self._fill_flows(x)
        self._fill_voltage_slacks(x)
        return x


def build_rect_opf(case: NetworkCase) -> RectOpf:
    """Rectangular-coordinate OPF; residual rows 0..2B+3L-1 align with polar."""
    return RectOpf(case)


def rect_from_polar(polar: PolarOpf, rect: RectOpf, x_polar: np.ndarray) -> np.ndarray:
    """Map a polar point to rectangular coordinates (same case required).

    e = v cos(theta), f = v sin(theta); generator and line variables carry
    over; voltage slacks are set consistently with their equality rows.
    """
    if polar.case is not rect.case and polar.case != rect.case:
        raise ValueError("formulations must share a case")
    x = np.zeros(rect.layout.dim)
    v = x_polar[polar.v_idx]
    th = x_polar[polar.th_idx]
    x[rect.e_idx] = v * np.cos(th)
    x[rect.f_idx] = v * np.sin(th)
    x[rect.gen_p] = x_polar[polar.gen_p]
    x[rect.gen_p + 1] = x_polar[polar.gen_p + 1]
    x[rect.pl_idx] = x_polar[polar.pl_idx]
    x[rect.ql_idx] = x_polar[polar.ql_idx]
    x[rect.s_idx] = x_polar[polar.s_idx]
    rect._fill_voltage_slacks(x)
    return x
