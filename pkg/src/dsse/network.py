"""Radial distribution network model.

A :class:`Network` is an immutable single-voltage-level radial feeder:
``n`` buses with contiguous 0-based ids, exactly one slack bus, and
``n - 1`` series branches forming a spanning tree. Loads and impedances
are stored both in the source physical units (MW/MVAr, ohms) and in
per-unit on the network base; the per-unit values are always derived
from the physical ones so serialization round-trips exactly.

Case documents come in two formats: a native JSON schema and a subset
of the MATPOWER case format (``baseMVA``, ``bus``, ``branch`` tables).
:func:`parse_case` sniffs the format; :func:`network_to_json` writes
the native schema.
"""

import json
import re
from dataclasses import dataclass

import numpy as np

from . import ieee33
from .errors import CaseParseError, CaseValidationError, InvalidBranchError

SLACK = "slack"
LOAD = "load"


@dataclass(frozen=True)
class Bus:
    """Single bus.

    Attributes:
        id: 0-based bus index.
        kind: ``"slack"`` or ``"load"``.
        p_load_mw: active power demand, MW (positive = consumption).
        q_load_mvar: reactive power demand, MVAr.
        p_load: active demand in per-unit on the system base.
        q_load: reactive demand in per-unit.
    """

    id: int
    kind: str
    p_load_mw: float
    q_load_mvar: float
    p_load: float
    q_load: float


@dataclass(frozen=True)
class Branch:
    """Series branch (line segment) between two buses.

    Attributes:
        from_bus: sending-end bus id.
        to_bus: receiving-end bus id.
        r_ohm: series resistance, ohms.
        x_ohm: series reactance, ohms.
        r: resistance in per-unit on the system impedance base.
        x: reactance in per-unit.
    """

    from_bus: int
    to_bus: int
    r_ohm: float
    x_ohm: float
    r: float
    x: float


def _make_bus(bus_id, kind, p_load_mw, q_load_mvar, base_mva):
    return Bus(
        id=bus_id,
        kind=kind,
        p_load_mw=p_load_mw,
        q_load_mvar=q_load_mvar,
        p_load=p_load_mw / base_mva,
        q_load=q_load_mvar / base_mva,
    )


def _make_branch(from_bus, to_bus, r_ohm, x_ohm, z_base):
    return Branch(
        from_bus=from_bus,
        to_bus=to_bus,
        r_ohm=r_ohm,
        x_ohm=x_ohm,
        r=r_ohm / z_base,
        x=x_ohm / z_base,
    )


@dataclass(frozen=True)
class Network:
    """Validated radial network.

    Attributes:
        base_mva: system power base, MVA.
        base_kv: nominal line-to-line voltage, kV.
        buses: tuple of :class:`Bus`, ordered by id.
        branches: tuple of :class:`Branch`.
        name: optional case label carried through serialization.
    """

    base_mva: float
    base_kv: float
    buses: tuple
    branches: tuple
    name: str = ""

    def __post_init__(self):
        if self.base_mva <= 0.0:
            raise CaseValidationError(f"base_mva must be positive, got {self.base_mva}")
        if self.base_kv <= 0.0:
            raise CaseValidationError(f"base_kv must be positive, got {self.base_kv}")
        n = len(self.buses)
        if n == 0:
            raise CaseValidationError("network has no buses")
        for pos, bus in enumerate(self.buses):
            if bus.id != pos:
                raise CaseValidationError(
                    f"bus ids must be contiguous 0..{n - 1} in order; "
                    f"position {pos} holds id {bus.id}"
                )
            if bus.kind not in (SLACK, LOAD):
                raise CaseValidationError(f"bus {bus.id}: unknown kind '{bus.kind}'")
        slacks = [bus.id for bus in self.buses if bus.kind == SLACK]
        if len(slacks) != 1:
            raise CaseValidationError(
                f"exactly one slack bus required, found {len(slacks)}: {slacks}"
            )
        for branch in self.branches:
            for end in (branch.from_bus, branch.to_bus):
                if not 0 <= end < n:
                    raise CaseValidationError(
                        f"branch {branch.from_bus}-{branch.to_bus}: bus {end} does not exist"
                    )
            if branch.from_bus == branch.to_bus:
                raise CaseValidationError(
                    f"branch {branch.from_bus}-{branch.to_bus} is a self-loop"
                )
        if len(self.branches) != n - 1:
            raise CaseValidationError(
                f"radial network with {n} buses needs {n - 1} branches, "
                f"got {len(self.branches)}"
            )
        # n-1 edges + connected  <=>  spanning tree (radial, no loops)
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for branch in self.branches:
            ra, rb = find(branch.from_bus), find(branch.to_bus)
            if ra == rb:
                raise CaseValidationError(
                    f"branch {branch.from_bus}-{branch.to_bus} closes a loop"
                )
            parent[ra] = rb

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_branch(self):
        return len(self.branches)

    @property
    def slack(self):
        for bus in self.buses:
            if bus.kind == SLACK:
                return bus.id
        raise CaseValidationError("no slack bus")  # unreachable after validation

    @property
    def z_base_ohm(self):
        return self.base_kv**2 / self.base_mva


def branch_admittance(branch):
    """Series admittance ``1 / (r + jx)`` in per-unit.

    Raises:
        InvalidBranchError: if the branch impedance is exactly zero.
    """
    z = complex(branch.r, branch.x)
    if z == 0:
        raise InvalidBranchError(
            f"branch {branch.from_bus}-{branch.to_bus} has zero impedance"
        )
    return 1.0 / z


def build_ybus(network):
    """Dense bus admittance matrix, per-unit.

    Symmetric by construction: each branch stamps the same admittance
    object into both off-diagonal cells, so ``Y[i, j] == Y[j, i]``
    holds bitwise.
    """
    n = network.n_bus
    ybus = np.zeros((n, n), dtype=complex)
    for branch in network.branches:
        y = branch_admittance(branch)
        i, j = branch.from_bus, branch.to_bus
        ybus[i, i] += y
        ybus[j, j] += y
        ybus[i, j] -= y
        ybus[j, i] -= y
    return ybus


# ---------------------------------------------------------------------------
# native JSON schema
# ---------------------------------------------------------------------------

_BUS_FIELDS = {"id": int, "kind": str, "p_load_mw": (int, float), "q_load_mvar": (int, float)}
_BRANCH_FIELDS = {"from": int, "to": int, "r_ohm": (int, float), "x_ohm": (int, float)}


def _require(mapping, field, types, where):
    if field not in mapping:
        raise CaseParseError(f"missing required field in {where}", field=field)
    value = mapping[field]
    if not isinstance(value, types) or isinstance(value, bool):
        raise CaseParseError(
            f"bad type for {where} entry: expected {types}, got {type(value).__name__}",
            field=field,
        )
    return value


def _network_from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise CaseParseError("top-level JSON value must be an object")
    base_mva = float(_require(doc, "base_mva", (int, float), "case"))
    base_kv = float(_require(doc, "base_kv", (int, float), "case"))
    z_base = base_kv**2 / base_mva
    buses = tuple(
        _make_bus(
            _require(entry, "id", int, f"buses[{k}]"),
            _require(entry, "kind", str, f"buses[{k}]"),
            float(_require(entry, "p_load_mw", (int, float), f"buses[{k}]")),
            float(_require(entry, "q_load_mvar", (int, float), f"buses[{k}]")),
            base_mva,
        )
        for k, entry in enumerate(_require(doc, "buses", list, "case"))
    )
    branches = tuple(
        _make_branch(
            _require(entry, "from", int, f"branches[{k}]"),
            _require(entry, "to", int, f"branches[{k}]"),
            float(_require(entry, "r_ohm", (int, float), f"branches[{k}]")),
            float(_require(entry, "x_ohm", (int, float), f"branches[{k}]")),
            z_base,
        )
        for k, entry in enumerate(_require(doc, "branches", list, "case"))
    )
    name = doc.get("name", "")
    if not isinstance(name, str):
        raise CaseParseError("bad type for case entry: 'name' must be a string", field="name")
    return Network(base_mva=base_mva, base_kv=base_kv, buses=buses, branches=branches, name=name)


def network_to_json(network, indent=2):
    """Serialize to the native JSON schema (inverse of JSON parsing)."""
    doc = {
        "base_mva": network.base_mva,
        "base_kv": network.base_kv,
        "buses": [
            {
                "id": bus.id,
                "kind": bus.kind,
                "p_load_mw": bus.p_load_mw,
                "q_load_mvar": bus.q_load_mvar,
            }
            for bus in network.buses
        ],
        "branches": [
            {
                "from": branch.from_bus,
                "to": branch.to_bus,
                "r_ohm": branch.r_ohm,
                "x_ohm": branch.x_ohm,
            }
            for branch in network.branches
        ],
    }
    if network.name:
        doc["name"] = network.name
    return json.dumps(doc, indent=indent)


# ---------------------------------------------------------------------------
# MATPOWER case subset
# ---------------------------------------------------------------------------

def _matpower_matrix(text, label):
    match = re.search(r"mpc\.%s\s*=\s*\[([^\]]*)\]" % label, text)
    if match is None:
        raise CaseParseError(f"mpc.{label} table not found", field=label)
    line0 = text[: match.start()].count("\n") + 1
    rows = []
    for offset, raw in enumerate(match.group(1).split(";")):
        line = re.sub(r"%.*", "", raw).strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError as exc:
            raise CaseParseError(
                f"mpc.{label}: non-numeric entry {exc}",
                line=line0 + match.group(1)[: _offset_of(match.group(1), offset)].count("\n"),
                field=label,
            ) from exc
    return rows


def _offset_of(body, semicolon_index):
    pos = 0
    for _ in range(semicolon_index):
        pos = body.index(";", pos) + 1
    return pos


def _network_from_matpower(text):
    match = re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;", text)
    if match is None:
        raise CaseParseError("mpc.baseMVA not found", field="baseMVA")
    base_mva = float(match.group(1))
    bus_rows = _matpower_matrix(text, "bus")
    branch_rows = _matpower_matrix(text, "branch")
    if not bus_rows:
        raise CaseParseError("mpc.bus table is empty", field="bus")

    base_kvs = set()
    id_map = {}
    buses = []
    for pos, row in enumerate(bus_rows):
        if len(row) < 10:
            raise CaseParseError(
                f"mpc.bus row {pos + 1}: expected at least 10 columns, got {len(row)}",
                field="bus",
            )
        ext_id, bus_type = int(row[0]), int(row[1])
        if bus_type == 3:
            kind = SLACK
        elif bus_type == 1:
            kind = LOAD
        else:
            raise CaseValidationError(
                f"bus {ext_id}: unsupported MATPOWER bus type {bus_type} "
                "(only PQ=1 and slack=3)"
            )
        if ext_id in id_map:
            raise CaseValidationError(f"duplicate bus id {ext_id} in mpc.bus")
        id_map[ext_id] = pos
        base_kvs.add(row[9])
        buses.append((kind, row[2], row[3]))
    if len(base_kvs) != 1:
        raise CaseValidationError(
            f"single voltage level required, found base_kv values {sorted(base_kvs)}"
        )
    base_kv = base_kvs.pop()
    if base_kv <= 0:
        raise CaseValidationError(f"base_kv must be positive, got {base_kv}")
    z_base = base_kv**2 / base_mva

    branches = []
    for pos, row in enumerate(branch_rows):
        if len(row) < 4:
            raise CaseParseError(
                f"mpc.branch row {pos + 1}: expected at least 4 columns, got {len(row)}",
                field="branch",
            )
        for end in (int(row[0]), int(row[1])):
            if end not in id_map:
                raise CaseValidationError(f"mpc.branch row {pos + 1}: unknown bus {end}")
        if len(row) >= 11 and row[10] == 0:
            continue  # out-of-service branch
        # columns 2,3 are r,x in per-unit on the case base; store as ohms
        branches.append(
            _make_branch(id_map[int(row[0])], id_map[int(row[1])],
                         row[2] * z_base, row[3] * z_base, z_base)
        )

    return Network(
        base_mva=base_mva,
        base_kv=base_kv,
        buses=tuple(
            _make_bus(pos, kind, p_mw, q_mvar, base_mva)
            for pos, (kind, p_mw, q_mvar) in enumerate(buses)
        ),
        branches=tuple(branches),
    )


def parse_case(text, name_hint=""):
    """Parse a case document, auto-detecting JSON vs MATPOWER format.

    Args:
        text: full document contents.
        name_hint: label to attach when the document carries none.

    Raises:
        CaseParseError: malformed document (syntax level).
        CaseValidationError: well-formed but not a valid radial network.
    """
    stripped = text.lstrip()
    if not stripped:
        raise CaseParseError("empty case document")
    if stripped.startswith("{"):
        network = _network_from_json(text)
    else:
        network = _network_from_matpower(text)
    if not network.name and name_hint:
        network = Network(
            base_mva=network.base_mva,
            base_kv=network.base_kv,
            buses=network.buses,
            branches=network.branches,
            name=name_hint,
        )
    return network


def load_case(path):
    """Read and parse a case file from disk."""
    with open(path) as handle:
        text = handle.read()
    return parse_case(text, name_hint=str(path))


def builtin_ieee33():
    """The embedded 33-bus radial test feeder."""
    loads = {bus_id: (p_kw, q_kvar) for bus_id, p_kw, q_kvar in ieee33.LOADS}
    z_base = ieee33.BASE_KV**2 / ieee33.BASE_MVA
    buses = tuple(
        _make_bus(
            bus_id,
            SLACK if bus_id == 0 else LOAD,
            loads.get(bus_id, (0.0, 0.0))[0] / 1e3,
            loads.get(bus_id, (0.0, 0.0))[1] / 1e3,
            ieee33.BASE_MVA,
        )
        for bus_id in range(33)
    )
    branches = tuple(
        _make_branch(f, t, r_ohm, x_ohm, z_base) for f, t, r_ohm, x_ohm in ieee33.BRANCHES
    )
    return Network(
        base_mva=ieee33.BASE_MVA,
        base_kv=ieee33.BASE_KV,
        buses=buses,
        branches=branches,
        name="ieee33",
    )
