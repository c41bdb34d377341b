"""Netlist, device and placement data model.

Instances, nets and pins get dense integer ids in file order.  Pins are
stored net by net (driver first, then loads in file order), so the pins of
net ``n`` occupy ``net_ptr[n]:net_ptr[n + 1]`` in every per-pin array.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np


class NetlistError(ValueError):
    """Raised for malformed or inconsistent netlist / device / placement input."""


class InstanceKind(enum.IntEnum):
    LUT = 0
    FF = 1
    DSP = 2
    RAMB = 3
    MUX = 4
    IO = 5
    ClockBuffer = 6
    CARRY8 = 7
    Shifter = 8
    LUTRAM = 9


N_KINDS = len(InstanceKind)
SEQUENTIAL_KINDS = frozenset({InstanceKind.FF, InstanceKind.DSP, InstanceKind.RAMB, InstanceKind.IO})

# Site resource consumed by each kind.  Logic-like kinds share the LUT sites.
RESOURCE_CLASS = {
    InstanceKind.LUT: "LUT",
    InstanceKind.LUTRAM: "LUT",
    InstanceKind.MUX: "LUT",
    InstanceKind.CARRY8: "LUT",
    InstanceKind.Shifter: "LUT",
    InstanceKind.FF: "FF",
    InstanceKind.DSP: "DSP",
    InstanceKind.RAMB: "RAMB",
    InstanceKind.IO: "IO",
    InstanceKind.ClockBuffer: "ClockBuffer",
}


def parse_kind(name: str) -> InstanceKind:
    try:
        return InstanceKind[name]
    except KeyError:
        raise NetlistError(f"unknown instance kind {name!r}") from None


@dataclass(frozen=True)
class Instance:
    id: int
    name: str
    kind: InstanceKind
    fixed: bool = False
    sequential: bool = False
    clock_net: Optional[int] = None
    x: Optional[float] = None
    y: Optional[float] = None


@dataclass(frozen=True)
class Pin:
    id: int
    inst: int
    net: int
    is_driver: bool
    dx: float = 0.0
    dy: float = 0.0


@dataclass(frozen=True)
class Net:
    id: int
    name: str
    driver: int
    loads: tuple[int, ...]

    @property
    def pin_count(self) -> int:
        return 1 + len(self.loads)

    @property
    def fanout(self) -> int:
        return len(self.loads)

    @property
    def pins(self) -> tuple[int, ...]:
        return (self.driver,) + self.loads


@dataclass
class Netlist:
    instances: list[Instance]
    nets: list[Net]
    pins: list[Pin]
    name: str = "design"

    @cached_property
    def inst_index(self) -> dict[str, int]:
        return {inst.name: inst.id for inst in self.instances}

    @cached_property
    def net_index(self) -> dict[str, int]:
        return {net.name: net.id for net in self.nets}

    @property
    def num_instances(self) -> int:
        return len(self.instances)

    @property
    def num_nets(self) -> int:
        return len(self.nets)

    # flat arrays -------------------------------------------------------
    @cached_property
    def net_ptr(self) -> np.ndarray:
        ptr = np.zeros(len(self.nets) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([n.pin_count for n in self.nets])
        return ptr

    @cached_property
    def pin_inst(self) -> np.ndarray:
        return np.array([p.inst for p in self.pins], dtype=np.int64)

    @cached_property
    def pin_net(self) -> np.ndarray:
        return np.array([p.net for p in self.pins], dtype=np.int64)

    @cached_property
    def pin_offset(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([p.dx for p in self.pins], dtype=float),
                np.array([p.dy for p in self.pins], dtype=float))

    @cached_property
    def pin_is_driver(self) -> np.ndarray:
        return np.array([p.is_driver for p in self.pins], dtype=bool)

    @cached_property
    def kinds(self) -> np.ndarray:
        return np.array([int(i.kind) for i in self.instances], dtype=np.int64)

    @cached_property
    def resource_classes(self) -> np.ndarray:
        return np.array([RESOURCE_CLASS[i.kind] for i in self.instances], dtype=object)

    @cached_property
    def fixed_mask(self) -> np.ndarray:
        return np.array([i.fixed for i in self.instances], dtype=bool)

    @cached_property
    def sequential_mask(self) -> np.ndarray:
        return np.array([i.sequential for i in self.instances], dtype=bool)

    @cached_property
    def clock_nets(self) -> frozenset[int]:
        return frozenset(i.clock_net for i in self.instances if i.clock_net is not None)

    @cached_property
    def timing_nets(self) -> list[int]:
        """Signal nets with at least one load (clock nets are ideal and excluded)."""
        return [n.id for n in self.nets if n.loads and n.id not in self.clock_nets]

    @cached_property
    def fanout(self) -> np.ndarray:
        return np.array([n.fanout for n in self.nets], dtype=np.int64)

    def pin_positions(self, placement: "Placement") -> tuple[np.ndarray, np.ndarray]:
        dx, dy = self.pin_offset
        return placement.x[self.pin_inst] + dx, placement.y[self.pin_inst] + dy

    def initial_placement(self, device: Optional["Device"] = None) -> "Placement":
        """Fixed instances at their file coordinates, movables at the die center."""
        n = self.num_instances
        cx = device.width / 2.0 if device else 0.0
        cy = device.height / 2.0 if device else 0.0
        x = np.full(n, cx)
        y = np.full(n, cy)
        for inst in self.instances:
            if inst.x is not None:
                x[inst.id] = inst.x
            if inst.y is not None:
                y[inst.id] = inst.y
        return Placement(x, y)


@dataclass
class Placement:
    """Continuous (x, y) site coordinates, one entry per instance."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape:
            raise NetlistError("x and y coordinate arrays differ in length")

    def copy(self) -> "Placement":
        return Placement(self.x.copy(), self.y.copy())

    def __len__(self):
        return len(self.x)


@dataclass
class Device:
    width: int
    height: int
    clock_rows: int = 1
    clock_cols: int = 1
    capacity: dict[str, float] = field(default_factory=dict)
    clock_capacity: int = 24
    region_rects: Optional[list[tuple[float, float, float, float]]] = None

    @property
    def num_regions(self) -> int:
        return len(self.regions)

    @cached_property
    def regions(self) -> list[tuple[float, float, float, float]]:
        """Clock-region rectangles ``(x0, y0, x1, y1)``, row-major from the origin."""
        if self.region_rects is not None:
            return list(self.region_rects)
        xs = [round(c * self.width / self.clock_cols) for c in range(self.clock_cols + 1)]
        ys = [round(r * self.height / self.clock_rows) for r in range(self.clock_rows + 1)]
        return [(xs[c], ys[r], xs[c + 1], ys[r + 1])
                for r in range(self.clock_rows) for c in range(self.clock_cols)]

    def region_of(self, x, y) -> np.ndarray:
        """Index of the clock region containing each point (-1 if none)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.full(x.shape, -1, dtype=np.int64)
        for k, (x0, y0, x1, y1) in enumerate(self.regions):
            inside = (x >= x0) & (x < x1) & (y >= y0) & (y < y1)
            out[inside & (out < 0)] = k
        return out

    def capacity_of(self, resource: str) -> float:
        return float(self.capacity.get(resource, 0.0))


# ---------------------------------------------------------------------------
# parsing / serialization

def _pin_ref(ref, where: str) -> tuple[str, float, float]:
    if not isinstance(ref, dict) or "inst" not in ref:
        raise NetlistError(f"{where}: pin reference needs an 'inst' field")
    off = ref.get("offset", [0.0, 0.0])
    if len(off) != 2:
        raise NetlistError(f"{where}: offset must be [dx, dy]")
    return ref["inst"], float(off[0]), float(off[1])


def netlist_from_dict(data: dict, name: str = "design") -> Netlist:
    if not isinstance(data, dict) or "instances" not in data or "nets" not in data:
        raise NetlistError("netlist must be an object with 'instances' and 'nets'")

    raw_insts = data["instances"]
    names: dict[str, int] = {}
    for k, ri in enumerate(raw_insts):
        if "name" not in ri or "kind" not in ri:
            raise NetlistError(f"instance #{k} lacks 'name' or 'kind'")
        if ri["name"] in names:
            raise NetlistError(f"duplicate instance name {ri['name']!r}")
        names[ri["name"]] = k

    net_names: dict[str, int] = {}
    for k, rn in enumerate(data["nets"]):
        if "name" not in rn:
            raise NetlistError(f"net #{k} lacks 'name'")
        if rn["name"] in net_names:
            raise NetlistError(f"duplicate net name {rn['name']!r}")
        net_names[rn["name"]] = k

    instances = []
    for k, ri in enumerate(raw_insts):
        kind = parse_kind(ri["kind"])
        clock = ri.get("clock")
        if clock is not None and clock not in net_names:
            raise NetlistError(f"instance {ri['name']!r}: dangling clock net {clock!r}")
        fixed = bool(ri.get("fixed", False))
        x, y = ri.get("x"), ri.get("y")
        instances.append(Instance(
            id=k, name=ri["name"], kind=kind, fixed=fixed,
            sequential=bool(ri.get("sequential", kind in SEQUENTIAL_KINDS)),
            clock_net=None if clock is None else net_names[clock],
            x=None if x is None else float(x), y=None if y is None else float(y)))

    nets, pins = [], []

    def add_pin(ref, net_id, is_driver, where):
        inst_name, dx, dy = _pin_ref(ref, where)
        if inst_name not in names:
            raise NetlistError(f"{where}: dangling instance reference {inst_name!r}")
        pins.append(Pin(len(pins), names[inst_name], net_id, is_driver, dx, dy))
        return pins[-1].id

    for k, rn in enumerate(data["nets"]):
        where = f"net {rn['name']!r}"
        drv = rn.get("driver")
        if isinstance(drv, list):
            if len(drv) > 1:
                raise NetlistError(f"{where}: multiple drivers")
            drv = drv[0] if drv else None
        if drv is None:
            raise NetlistError(f"{where}: no driver")
        d = add_pin(drv, k, True, where)
        loads = tuple(add_pin(r, k, False, where) for r in rn.get("loads", []))
        nets.append(Net(k, rn["name"], d, loads))

    return Netlist(instances, nets, pins, name=data.get("name", name))


def parse_netlist(text: str) -> Netlist:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetlistError(f"malformed JSON: {exc}") from None
    return netlist_from_dict(data)


def netlist_to_dict(netlist: Netlist) -> dict:
    insts = []
    for inst in netlist.instances:
        d = {"name": inst.name, "kind": inst.kind.name, "fixed": inst.fixed}
        if inst.sequential != (inst.kind in SEQUENTIAL_KINDS):
            d["sequential"] = inst.sequential
        if inst.x is not None:
            d["x"] = inst.x
        if inst.y is not None:
            d["y"] = inst.y
        if inst.clock_net is not None:
            d["clock"] = netlist.nets[inst.clock_net].name
        insts.append(d)

    def ref(pid):
        p = netlist.pins[pid]
        r = {"inst": netlist.instances[p.inst].name}
        if p.dx or p.dy:
            r["offset"] = [p.dx, p.dy]
        return r

    nets = [{"name": n.name, "driver": ref(n.driver), "loads": [ref(p) for p in n.loads]}
            for n in netlist.nets]
    return {"name": netlist.name, "instances": insts, "nets": nets}


def serialize_netlist(netlist: Netlist) -> str:
    """Canonical JSON text: fixed key order, defaults omitted."""
    return json.dumps(netlist_to_dict(netlist), indent=1) + "\n"


def device_from_dict(data: dict) -> Device:
    try:
        w, h = data["width"], data["height"]
    except (KeyError, TypeError):
        raise NetlistError("device needs 'width' and 'height'") from None
    if w <= 0 or h <= 0:
        raise NetlistError("device dimensions must be positive")
    cr = data.get("clock_regions", {"rows": 1, "cols": 1})
    rects = cr.get("rects")
    dev = Device(
        width=w, height=h, clock_rows=int(cr.get("rows", 1)), clock_cols=int(cr.get("cols", 1)),
        capacity={k: float(v) for k, v in data.get("capacity", {}).items()},
        clock_capacity=int(data.get("clock_capacity", 24)),
        region_rects=None if rects is None else [tuple(map(float, r)) for r in rects])
    if dev.clock_rows <= 0 or dev.clock_cols <= 0:
        raise NetlistError("clock region grid must be at least 1x1")
    _check_tiling(dev)
    return dev


def _check_tiling(dev: Device):
    rects = dev.regions
    area = 0.0
    for x0, y0, x1, y1 in rects:
        if not (0 <= x0 < x1 <= dev.width and 0 <= y0 < y1 <= dev.height):
            raise NetlistError(f"clock region {(x0, y0, x1, y1)} outside the die or empty")
        area += (x1 - x0) * (y1 - y0)
    for a in range(len(rects)):
        for b in range(a + 1, len(rects)):
            ax0, ay0, ax1, ay1 = rects[a]
            bx0, by0, bx1, by1 = rects[b]
            if min(ax1, bx1) > max(ax0, bx0) and min(ay1, by1) > max(ay0, by0):
                raise NetlistError(f"clock regions {a} and {b} overlap")
    if abs(area - dev.width * dev.height) > 1e-9:
        raise NetlistError("clock regions do not tile the die")


def parse_device(text: str) -> Device:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetlistError(f"malformed JSON: {exc}") from None
    return device_from_dict(data)


def device_to_dict(dev: Device) -> dict:
    cr = {"rows": dev.clock_rows, "cols": dev.clock_cols}
    if dev.region_rects is not None:
        cr["rects"] = [list(r) for r in dev.region_rects]
    return {"width": dev.width, "height": dev.height, "clock_regions": cr,
            "capacity": dict(dev.capacity), "clock_capacity": dev.clock_capacity}


def placement_to_dict(netlist: Netlist, placement: Placement) -> dict:
    return {"placements": [{"inst": inst.name, "x": float(placement.x[inst.id]),
                            "y": float(placement.y[inst.id])} for inst in netlist.instances]}


def placement_from_dict(netlist: Netlist, data: dict) -> Placement:
    pl = netlist.initial_placement()
    seen = np.zeros(netlist.num_instances, dtype=bool)
    for rec in data.get("placements", []):
        k = netlist.inst_index.get(rec.get("inst"))
        if k is None:
            raise NetlistError(f"placement refers to unknown instance {rec.get('inst')!r}")
        pl.x[k], pl.y[k] = float(rec["x"]), float(rec["y"])
        seen[k] = True
    missing = [netlist.instances[k].name for k in np.flatnonzero(~seen)
               if not netlist.instances[k].fixed]
    if missing:
        raise NetlistError(f"placement lacks {len(missing)} movable instances, e.g. {missing[0]!r}")
    return pl


# ---------------------------------------------------------------------------
# geometry

def net_hpwl(netlist: Netlist, net: int, placement: Placement) -> float:
    pins = netlist.nets[net].pins
    if len(pins) < 2:
        return 0.0
    px, py = netlist.pin_positions(placement)
    idx = np.asarray(pins)
    return float(px[idx].max() - px[idx].min() + py[idx].max() - py[idx].min())


def all_net_bboxes(netlist: Netlist, placement: Placement):
    """Per-net (xmin, xmax, ymin, ymax) arrays over pin positions."""
    px, py = netlist.pin_positions(placement)
    start = netlist.net_ptr[:-1]
    return (np.minimum.reduceat(px, start), np.maximum.reduceat(px, start),
            np.minimum.reduceat(py, start), np.maximum.reduceat(py, start))


def all_net_hpwl(netlist: Netlist, placement: Placement) -> np.ndarray:
    if not netlist.nets:
        return np.zeros(0)
    x0, x1, y0, y1 = all_net_bboxes(netlist, placement)
    return (x1 - x0) + (y1 - y0)


def total_hpwl(netlist: Netlist, placement: Placement, exclude_clock: bool = True) -> float:
    h = all_net_hpwl(netlist, placement)
    if exclude_clock and netlist.clock_nets:
        h = h.copy()
        h[list(netlist.clock_nets)] = 0.0
    return float(h.sum())


# ---------------------------------------------------------------------------
# validation

def _combinational_cycle(netlist: Netlist) -> bool:
    seq = netlist.sequential_mask
    n = netlist.num_instances
    succ: list[list[int]] = [[] for _ in range(n)]
    indeg = np.zeros(n, dtype=np.int64)
    for nid in netlist.timing_nets:
        net = netlist.nets[nid]
        u = netlist.pins[net.driver].inst
        if seq[u]:
            continue
        for pid in net.loads:
            v = netlist.pins[pid].inst
            if not seq[v]:
                succ[u].append(v)
                indeg[v] += 1
    stack = [v for v in range(n) if indeg[v] == 0]
    seen = 0
    while stack:
        u = stack.pop()
        seen += 1
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                stack.append(v)
    return seen < n


def validate(netlist: Netlist, device: Device) -> list[str]:
    """Return a list of violation messages; empty when the design is usable."""
    problems = []
    if _combinational_cycle(netlist):
        problems.append("combinational cycle")
    demand: dict[str, int] = {}
    for inst in netlist.instances:
        res = RESOURCE_CLASS[inst.kind]
        demand[res] = demand.get(res, 0) + 1
    for res, count in sorted(demand.items()):
        supply = device.width * device.height * device.capacity_of(res)
        if count > supply:
            problems.append(f"insufficient {res} capacity ({count} > {supply:g})")
    for inst in netlist.instances:
        if inst.fixed:
            if inst.x is None or inst.y is None:
                problems.append(f"fixed instance {inst.name} is unplaced")
            elif not (0 <= inst.x < device.width and 0 <= inst.y < device.height):
                problems.append(f"fixed instance {inst.name} lies outside the die")
    return problems
