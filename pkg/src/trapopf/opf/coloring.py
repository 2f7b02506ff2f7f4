"""Sweep schedules for OPF element graphs: line phases first, then bus phases.

Two lines conflict when they share a bus (the shared balance row couples their
flow variables through the penalty term), two buses conflict when a line joins
them, and every line conflicts with both end buses, so line phases and bus
phases are kept disjoint.

Line phases come from edge-colouring the bus graph: degree-1 buses are
stripped iteratively (recording their pendant lines), a remaining single-cycle
core is walked from its lowest bus towards its lowest-indexed neighbour with
colours assigned cyclically, and pendant lines are filled back in reverse
strip order with the smallest colour unused at their attachment bus.  Meshed
cores fall back to greedy colouring in case order.  Phases are then ordered by
their lexicographically largest member line, and bus phases (greedy in
ascending bus index) follow.  On ring-with-spur transmission networks this
yields balanced line groups covering each hub exactly once per phase.
"""

from __future__ import annotations

from ..blockspace import Partition
from .case import NetworkCase
from .polar import OpfLayout

__all__ = ["opf_coloring"]


def _line_conflicts(case: NetworkCase) -> list[set[int]]:
    index = case.bus_index()
    at_bus: dict[int, list[int]] = {b: [] for b in range(case.num_buses)}
    conf: list[set[int]] = [set() for _ in case.lines]
    for l, ln in enumerate(case.lines):
        for end in (index[ln.from_bus], index[ln.to_bus]):
            for other in at_bus[end]:
                conf[l].add(other)
                conf[other].add(l)
            at_bus[end].append(l)
    return conf


def _schedule_lines(case: NetworkCase) -> list[int]:
    index = case.bus_index()
    nb, nl = case.num_buses, case.num_lines
    ends = [(index[l.from_bus], index[l.to_bus]) for l in case.lines]
    incident: list[list[int]] = [[] for _ in range(nb)]
    for l, (i, j) in enumerate(ends):
        incident[i].append(l)
        incident[j].append(l)

    # strip pendant lines (attached to a degree-1 bus), innermost last
    alive_line = [True] * nl
    degree = [len(incident[b]) for b in range(nb)]
    pendant_order: list[int] = []
    changed = True
    while changed:
        changed = False
        for b in range(nb):
            if degree[b] == 1:
                l = next(k for k in incident[b] if alive_line[k])
                alive_line[l] = False
                pendant_order.append(l)
                for end in ends[l]:
                    degree[end] -= 1
                changed = True
    core = [l for l in range(nl) if alive_line[l]]

    conf = _line_conflicts(case)
    colors = [0] * nl
    if core:
        core_buses = {b for l in core for b in ends[l]}
        if all(degree[b] == 2 for b in core_buses):
            # single-cycle (or disjoint-cycle) core: walk each cycle from its
            # lowest bus towards its lowest neighbour, colours cycling 1,2,3
            used = set()
            for start in sorted(core_buses):
                if start in used:
                    continue
                def other_end(l: int, here: int) -> int:
                    i, j = ends[l]
                    return j if here == i else i

                cycle: list[int] = []
                bus = start
                prev_line = -1
                while True:
                    used.add(bus)
                    candidates = [
                        l
                        for l in incident[bus]
                        if alive_line[l] and l != prev_line and colors[l] == 0
                    ]
                    step = min(candidates, key=lambda l: (other_end(l, bus), l))
                    cycle.append(step)
                    colors[step] = -1  # visited marker, real colour set below
                    bus = other_end(step, bus)
                    prev_line = step
                    if bus == start:
                        break
                for pos, l in enumerate(cycle):
                    colors[l] = pos % 3 + 1
                # wrap edge may clash with the first edge of the cycle
                last, first, before = cycle[-1], cycle[0], cycle[-2]
                if colors[last] == colors[first]:
                    colors[last] = next(
                        c for c in (1, 2, 3)
                        if c not in (colors[first], colors[before])
                    )
        else:
            # meshed core: greedy in case order
            for l in core:
                taken = {colors[o] for o in conf[l] if colors[o]}
                c = 1
                while c in taken:
                    c += 1
                colors[l] = c

    for l in reversed(pendant_order):
        taken = {colors[o] for o in conf[l] if colors[o]}
        c = 1
        while c in taken:
            c += 1
        colors[l] = c

    # canonical phase order: ascending by the largest member line's bus pair
    num = max(colors)
    def phase_key(c):
        members = [tuple(sorted((case.lines[l].from_bus, case.lines[l].to_bus)))
                   for l in range(nl) if colors[l] == c]
        return max(members)
    order = sorted(range(1, num + 1), key=phase_key)
    remap = {old: new + 1 for new, old in enumerate(order)}
    return [remap[c] for c in colors]


def _schedule_buses(case: NetworkCase) -> list[int]:
    index = case.bus_index()
    nb = case.num_buses
    adj: list[set[int]] = [set() for _ in range(nb)]
    for ln in case.lines:
        i, j = index[ln.from_bus], index[ln.to_bus]
        adj[i].add(j)
        adj[j].add(i)
    colors = [0] * nb
    for b in range(nb):
        taken = {colors[o] for o in adj[b] if o < b}
        c = 1
        while c in taken:
            c += 1
        colors[b] = c
    return colors


def opf_coloring(layout: OpfLayout) -> Partition:
    """Schedule: line phases 1..KL, then bus phases KL+1..KL+KB.

    The result is validated against the penalised coupling graph (including
    the Gauss-Newton fill), so no two coupled elements ever share a phase.
    """
    case = layout.case
    line_colors = _schedule_lines(case)
    bus_colors = _schedule_buses(case)
    kl = max(line_colors) if line_colors else 0
    colors = tuple(c + kl for c in bus_colors) + tuple(line_colors)
    partition = Partition(layout.node_sizes, colors)
    from .polar import _coupling

    partition.validate_against(_coupling(case))
    return partition
