"""Communication accounting for the distributed execution model.

Nothing is transported; the ledger just counts what a distributed deployment
would exchange: neighbour vector messages (legal only along coupling-graph
edges), global scalar reductions, and global broadcasts, attributed to the
phase that caused them.  Counters are linearisable (a single lock), so totals
are ordering-independent when updates come from concurrent regions.
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field

from .blockspace import CouplingGraph

__all__ = ["PHASES", "CommLedger", "NonNeighborExchangeError", "PhaseCounters"]

PHASES = ("cauchy", "scg", "ratio_test", "dual_update")


class NonNeighborExchangeError(ValueError):
    """A vector exchange was attempted between uncoupled nodes."""

    def __init__(self, i: int, j: int):
        super().__init__(f"nodes {i} and {j} are not neighbours in the coupling graph")
        self.pair = (i, j)


@dataclass
class PhaseCounters:
    local_msgs: int = 0
    local_floats: int = 0
    reductions: int = 0
    broadcasts: int = 0

    def snapshot(self) -> tuple[int, int, int, int]:
        return (self.local_msgs, self.local_floats, self.reductions, self.broadcasts)


@dataclass
class _Event:
    iteration: int
    phase: str
    kind: str
    amount: int
    tag: str | None = None


class CommLedger:
    """Counts exchanges implied by one solve; observer only, no transport."""

    def __init__(self, graph: CouplingGraph | None = None):
        self.graph = graph
        self.iteration = 0
        self.totals: dict[str, PhaseCounters] = {p: PhaseCounters() for p in PHASES}
        self.events: list[_Event] = []
        self._lock = threading.Lock()

    def _counters(self, phase: str) -> PhaseCounters:
        if phase not in self.totals:
            raise ValueError(f"unknown phase {phase!r}")
        return self.totals[phase]

    def set_iteration(self, it: int) -> None:
        self.iteration = int(it)

    def neighbour_exchange(
        self, i: int, j: int, floats: int, phase: str, tag: str | None = None
    ) -> None:
        if self.graph is not None and not self.graph.has_edge(i, j):
            raise NonNeighborExchangeError(i, j)
        with self._lock:
            c = self._counters(phase)
            c.local_msgs += 1
            c.local_floats += int(floats)
            self.events.append(
                _Event(self.iteration, phase, "neighbour_exchange", int(floats), tag)
            )

    def reduction(self, phase: str, count: int = 1, tag: str | None = None) -> None:
        with self._lock:
            self._counters(phase).reductions += count
            self.events.append(_Event(self.iteration, phase, "reduction", count, tag))

    def broadcast(self, phase: str, count: int = 1, tag: str | None = None) -> None:
        with self._lock:
            self._counters(phase).broadcasts += count
            self.events.append(_Event(self.iteration, phase, "broadcast", count, tag))

    # -- reporting ---------------------------------------------------------

    def totals_by_phase(self) -> dict[str, tuple[int, int, int, int]]:
        return {p: c.snapshot() for p, c in self.totals.items()}

    def events_by_tag(self, prefix: str) -> dict[str, dict[str, int]]:
        """Aggregate event kinds per tag, for tags starting with ``prefix``."""
        out: dict[str, dict[str, int]] = {}
        for e in self.events:
            if e.tag is None or not e.tag.startswith(prefix):
                continue
            bucket = out.setdefault(e.tag, {})
            bucket[e.kind] = bucket.get(e.kind, 0) + (
                e.amount if e.kind != "neighbour_exchange" else 1
            )
        return out

    def per_iteration_rows(self) -> list[dict[str, int | str]]:
        """Phase-by-counter matrix per iteration (CSV export schema)."""
        acc: dict[tuple[int, str], PhaseCounters] = {}
        for e in self.events:
            c = acc.setdefault((e.iteration, e.phase), PhaseCounters())
            if e.kind == "neighbour_exchange":
                c.local_msgs += 1
                c.local_floats += e.amount
            elif e.kind == "reduction":
                c.reductions += e.amount
            elif e.kind == "broadcast":
                c.broadcasts += e.amount
        rows = []
        for (it, phase) in sorted(acc):
            c = acc[(it, phase)]
            rows.append(
                {
                    "iteration": it,
                    "phase": phase,
                    "local_msgs": c.local_msgs,
                    "local_floats": c.local_floats,
                    "reductions": c.reductions,
                    "broadcasts": c.broadcasts,
                }
            )
        return rows

    def write_csv(self, path) -> None:
        rows = self.per_iteration_rows()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh,
                fieldnames=[
                    "iteration",
                    "phase",
                    "local_msgs",
                    "local_floats",
                    "reductions",
                    "broadcasts",
                ],
            )
            writer.writeheader()
            writer.writerows(rows)
