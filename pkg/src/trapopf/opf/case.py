"""MATPOWER-style case files: parsing, per-unit conversion, PI-model admittances.

The accepted grammar (documented in the README) is the ``mpc.<table> = [...]``
subset: a ``baseMVA`` scalar plus ``bus``, ``gen``, ``branch`` and ``gencost``
matrices, ``%`` comments, rows terminated by ``;``.  All powers are converted
to per-unit on parse; branch series admittance g + jb is stored as parsed from
r, x (the PI-model off-diagonal entries are the negated series admittance and
are derived in the formulation builders).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

__all__ = [
    "Bus",
    "CaseFormatError",
    "Generator",
    "Line",
    "Load",
    "NetworkCase",
    "parse_case",
    "parse_case_file",
]

# synthetic thermal cap (pu) for branches with RATE_A <= 0 ("unlimited")
UNLIMITED_RATE = 1e4


class CaseFormatError(ValueError):
    """Malformed case text; carries the 1-based source line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class Bus:
    id: int
    btype: int
    g_shunt: float  # pu at v = 1
    b_shunt: float
    v_min: float
    v_max: float


@dataclass(frozen=True)
class Load:
    bus: int
    p: float  # pu
    q: float


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    c0: float  # $ / h
    c1: float  # $ / MWh
    c2: float  # $ / MW^2 h


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    g_series: float
    b_series: float
    b_charging: float
    rate: float  # pu

    @property
    def g_self(self) -> float:
        return self.g_series

    @property
    def b_self(self) -> float:
        return self.b_series + 0.5 * self.b_charging


@dataclass(frozen=True)
class NetworkCase:
    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]

    def __post_init__(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseFormatError("duplicate bus ids")
        known = set(ids)
        for ln in self.lines:
            for end in (ln.from_bus, ln.to_bus):
                if end not in known:
                    raise CaseFormatError(f"branch references absent bus {end}")
        for g in self.generators:
            if g.bus not in known:
                raise CaseFormatError(f"generator references absent bus {g.bus}")
            if g.p_min > g.p_max or g.q_min > g.q_max:
                raise CaseFormatError(f"generator at bus {g.bus} has empty bounds")
        for b in self.buses:
            if b.v_min > b.v_max:
                raise CaseFormatError(f"bus {b.id} has v_min > v_max")
        if not self._connected():
            raise CaseFormatError("network graph is not connected")

    def _connected(self) -> bool:
        if not self.buses:
            return False
        index = self.bus_index()
        adj: list[list[int]] = [[] for _ in self.buses]
        for ln in self.lines:
            i, j = index[ln.from_bus], index[ln.to_bus]
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            for j in adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == len(self.buses)

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def num_buses(self) -> int:
        return len(self.buses)

    @property
    def num_lines(self) -> int:
        return len(self.lines)

    def reference_index(self) -> int:
        """Reference bus: the type-3 bus, else the first generator bus."""
        for i, b in enumerate(self.buses):
            if b.btype == 3:
                return i
        if self.generators:
            return self.bus_index()[self.generators[0].bus]
        return 0


_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*(.*)")


def _tokenize(text: str):
    """Yield (kind, payload, line_no): scalar assignments and matrix rows."""
    lines = text.splitlines()
    current: str | None = None
    row_buffer: list[str] = []
    for no, raw in enumerate(lines, start=1):
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue
        if current is None:
            m = _ASSIGN.match(line)
            if not m:
                continue  # function header, version string, etc.
            name, rest = m.group(1), m.group(2).strip()
            if rest.startswith("["):
                current = name
                rest = rest[1:].strip()
                row_buffer = []
                if rest:
                    line = rest
                else:
                    continue
            else:
                yield "scalar", (name, rest.rstrip(";").strip(), no), no
                continue
        # inside a matrix: accumulate until "];"
        closing = line.find("]")
        body = line[:closing] if closing >= 0 else line
        row_buffer.append(body)
        if closing >= 0:
            rows = [c.strip() for c in " ".join(row_buffer).split(";")]
            yield "matrix", (current, [r for r in rows if r], no), no
            current = None
            row_buffer = []


def _floats(row: str, line: int) -> list[float]:
    out = []
    for tok in row.split():
        try:
            out.append(float(tok))
        except ValueError:
            raise CaseFormatError(f"malformed number {tok!r}", line) from None
    return out


def parse_case(text: str, name: str = "case") -> NetworkCase:
    """Parse MATPOWER-style case text into a per-unit NetworkCase."""
    scalars: dict[str, str] = {}
    matrices: dict[str, tuple[list[str], int]] = {}
    for kind, payload, no in _tokenize(text):
        if kind == "scalar":
            key, value, _ = payload
            scalars[key] = value
        else:
            key, rows, end_line = payload
            matrices[key] = (rows, end_line)

    if "baseMVA" not in scalars:
        raise CaseFormatError("missing mpc.baseMVA")
    try:
        base = float(scalars["baseMVA"])
    except ValueError:
        raise CaseFormatError(f"malformed baseMVA {scalars['baseMVA']!r}") from None
    if base <= 0:
        raise CaseFormatError(f"baseMVA must be positive, got {base}")

    for section in ("bus", "gen", "branch", "gencost"):
        if section not in matrices:
            raise CaseFormatError(f"missing mpc.{section} section")

    buses: list[Bus] = []
    loads: list[Load] = []
    rows, at = matrices["bus"]
    for row in rows:
        vals = _floats(row, at)
        if len(vals) < 13:
            raise CaseFormatError(f"bus row needs 13 columns, got {len(vals)}", at)
        bus_id, btype = int(vals[0]), int(vals[1])
        pd, qd, gs, bs = vals[2], vals[3], vals[4], vals[5]
        buses.append(
            Bus(bus_id, btype, gs / base, bs / base, v_min=vals[12], v_max=vals[11])
        )
        if pd != 0.0 or qd != 0.0:
            loads.append(Load(bus_id, pd / base, qd / base))

    lines: list[Line] = []
    rows, at = matrices["branch"]
    for row in rows:
        vals = _floats(row, at)
        if len(vals) < 11:
            raise CaseFormatError(f"branch row needs 11 columns, got {len(vals)}", at)
        f, t = int(vals[0]), int(vals[1])
        r, x, bc = vals[2], vals[3], vals[4]
        rate = vals[5] / base
        if rate <= 0.0:
            rate = UNLIMITED_RATE
        if vals[8] not in (0.0, 1.0) or vals[9] != 0.0:
            raise CaseFormatError(
                "off-nominal taps and phase shifters are not supported", at
            )
        if vals[10] == 0.0:
            continue  # out-of-service branch
        denom = r * r + x * x
        if denom == 0.0:
            raise CaseFormatError(f"branch {f}-{t} has zero impedance", at)
        lines.append(Line(f, t, r / denom, -x / denom, bc, rate))

    gens_raw = []
    rows, at = matrices["gen"]
    total_gen_rows = len(rows)
    for pos, row in enumerate(rows):
        vals = _floats(row, at)
        if len(vals) < 10:
            raise CaseFormatError(f"gen row needs 10 columns, got {len(vals)}", at)
        if len(vals) > 7 and vals[7] == 0.0:
            continue  # offline unit
        gens_raw.append(
            dict(pos=pos, bus=int(vals[0]), qmax=vals[3] / base,
                 qmin=vals[4] / base, pmax=vals[8] / base, pmin=vals[9] / base)
        )

    rows, at = matrices["gencost"]
    if len(rows) != total_gen_rows:
        raise CaseFormatError(
            f"gencost has {len(rows)} rows for {total_gen_rows} generators", at
        )
    gens: list[Generator] = []
    for g in gens_raw:
        vals = _floats(rows[g["pos"]], at)
        if int(vals[0]) != 2:
            raise CaseFormatError("only polynomial cost models are supported", at)
        ncost = int(vals[3])
        coeffs = vals[4 : 4 + ncost]
        if len(coeffs) != ncost or ncost > 3 or ncost < 1:
            raise CaseFormatError(f"unsupported cost row {rows[g['pos']]!r}", at)
        padded = [0.0] * (3 - ncost) + coeffs  # [c2, c1, c0]
        gens.append(
            Generator(g["bus"], g["pmin"], g["pmax"], g["qmin"], g["qmax"],
                      c0=padded[2], c1=padded[1], c2=padded[0])
        )

    return NetworkCase(name, base, tuple(buses), tuple(lines), tuple(gens),
                       tuple(loads))


def parse_case_file(path) -> NetworkCase:
    with open(path) as fh:
        text = fh.read()
    import os

    return parse_case(text, name=os.path.splitext(os.path.basename(str(path)))[0])
