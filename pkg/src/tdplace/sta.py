"""Levelised static timing analysis on a driver->load arc graph.

Timing convention used throughout: ``t_arr[v]`` is the arrival at the
*input* of v and ``logic[v]`` is charged when the signal leaves v, so for an
arc u -> v

    t_arr[v] = max(t_arr[u] + logic[u] + delay(u, v))
    t_req[u] = min(t_req[v] - delay(u, v)) - logic[u]
    slack(u, v) = t_req[v] - (t_arr[u] + logic[u] + delay(u, v))

With this convention arc slack equals clock period minus the longest full
path through the arc, and capture points (logic 0) are required at the
clock period.  Sequential instances are split into a launch vertex
(clock-to-Q as its logic delay) and a capture vertex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from .features import FeatureExtractor, _ranges
from .netlist import InstanceKind, Netlist, Placement

COMB, LAUNCH, CAPTURE = 0, 1, 2


class TimingError(RuntimeError):
    pass


@dataclass
class LogicDelayTable:
    delays: dict[InstanceKind, float]

    def __getitem__(self, kind) -> float:
        return float(self.delays.get(InstanceKind(kind), 0.0))

    @classmethod
    def default(cls) -> "LogicDelayTable":
        text = resources.files("tdplace").joinpath("data/logic_delays.json").read_text()
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_dict(cls, data: dict) -> "LogicDelayTable":
        d = {InstanceKind[k]: float(v) for k, v in data.items()}
        if any(v < 0 for v in d.values()):
            raise ValueError("logic delays must be non-negative")
        return cls(d)


@dataclass
class CriticalPath:
    arcs: list[int]
    endpoint_slack: float

    @property
    def c_max(self) -> int:
        return len(self.arcs)

    @property
    def c_forward(self) -> list[int]:
        """Arcs remaining between each arc's load and the endpoint."""
        n = len(self.arcs)
        return [n - 1 - k for k in range(n)]


@dataclass
class TimingGraph:
    logic: np.ndarray
    arc_src: np.ndarray
    arc_dst: np.ndarray
    is_sink: np.ndarray
    clock_period: float
    arc_delay: Optional[np.ndarray] = None
    vert_inst: Optional[np.ndarray] = None
    vert_role: Optional[np.ndarray] = None
    arc_net: Optional[np.ndarray] = None
    arc_load: Optional[np.ndarray] = None
    net_ids: Optional[np.ndarray] = None  # timing nets, arcs of net_ids[k] are arc_ptr[k]:arc_ptr[k+1]
    arc_ptr: Optional[np.ndarray] = None
    levels: Optional[list[np.ndarray]] = None
    level: Optional[np.ndarray] = None
    t_arr: Optional[np.ndarray] = None
    t_req: Optional[np.ndarray] = None
    arc_slack: Optional[np.ndarray] = None
    best_in: Optional[np.ndarray] = None
    wns: float = float("nan")
    tns: float = float("nan")
    cpd: float = float("nan")

    def __post_init__(self):
        self.logic = np.asarray(self.logic, dtype=float)
        self.arc_src = np.asarray(self.arc_src, dtype=np.int64)
        self.arc_dst = np.asarray(self.arc_dst, dtype=np.int64)
        self.is_sink = np.asarray(self.is_sink, dtype=bool)
        if self.arc_delay is None:
            self.arc_delay = np.zeros(len(self.arc_src))
        self.arc_delay = np.asarray(self.arc_delay, dtype=float)

    @property
    def n_vertices(self) -> int:
        return len(self.logic)

    @property
    def n_arcs(self) -> int:
        return len(self.arc_src)

    def set_net_delays(self, delays: dict[int, np.ndarray]):
        """Write per-net load delays onto the arcs (net ids -> arrays in load order)."""
        for k, n in enumerate(self.net_ids):
            d = delays.get(int(n))
            if d is not None:
                self.arc_delay[self.arc_ptr[k]:self.arc_ptr[k + 1]] = d

    def endpoint_slacks(self) -> np.ndarray:
        sinks = np.flatnonzero(self.is_sink)
        return self.clock_period - (self.t_arr[sinks] + self.logic[sinks])


def build_timing_graph(netlist: Netlist, table: Optional[LogicDelayTable] = None,
                       clock_period: float = 5.0) -> TimingGraph:
    table = table or LogicDelayTable.default()
    seq = netlist.sequential_mask
    n_inst = netlist.num_instances
    launch = np.empty(n_inst, dtype=np.int64)
    capture = np.empty(n_inst, dtype=np.int64)
    logic, vinst, role = [], [], []
    for inst in netlist.instances:
        d = table[inst.kind]
        launch[inst.id] = len(logic)
        logic.append(d)
        vinst.append(inst.id)
        if seq[inst.id]:
            role.append(LAUNCH)
            capture[inst.id] = len(logic)
            logic.append(0.0)
            vinst.append(inst.id)
            role.append(CAPTURE)
        else:
            role.append(COMB)
            capture[inst.id] = launch[inst.id]
    nets = np.asarray(netlist.timing_nets, dtype=np.int64)
    ptr = netlist.net_ptr
    fan = ptr[nets + 1] - ptr[nets] - 1
    arc_ptr = np.zeros(len(nets) + 1, dtype=np.int64)
    arc_ptr[1:] = np.cumsum(fan)
    drv_inst = netlist.pin_inst[ptr[nets]]
    load_pins = _ranges(ptr[nets] + 1, fan)
    src = launch[np.repeat(drv_inst, fan)]
    dst = capture[netlist.pin_inst[load_pins]]
    role = np.asarray(role)
    g = TimingGraph(
        logic=np.asarray(logic), arc_src=src, arc_dst=dst, is_sink=role == CAPTURE,
        clock_period=float(clock_period), vert_inst=np.asarray(vinst), vert_role=role,
        arc_net=np.repeat(nets, fan), arc_load=np.arange(len(load_pins)) - np.repeat(arc_ptr[:-1], fan),
        net_ids=nets, arc_ptr=arc_ptr)
    levelize(g)
    return g


def levelize(graph: TimingGraph) -> list[np.ndarray]:
    """Topological levels: level 0 has no fan-in, level(v) = 1 + max level of predecessors."""
    n = graph.n_vertices
    src, dst = graph.arc_src, graph.arc_dst
    order = np.argsort(src, kind="stable")
    out_ptr = np.zeros(n + 1, dtype=np.int64)
    out_ptr[1:] = np.cumsum(np.bincount(src, minlength=n))
    dst_by_src = dst[order]
    indeg = np.bincount(dst, minlength=n)
    level = np.full(n, -1, dtype=np.int64)
    frontier = np.flatnonzero(indeg == 0)
    levels = []
    while frontier.size:
        level[frontier] = len(levels)
        levels.append(frontier)
        idx = _ranges(out_ptr[frontier], out_ptr[frontier + 1] - out_ptr[frontier])
        d = dst_by_src[idx]
        indeg = indeg - np.bincount(d, minlength=n)
        frontier = np.unique(d[indeg[d] == 0])
    if (level < 0).any():
        raise TimingError("combinational cycle in timing graph")
    graph.levels = levels
    graph.level = level
    return levels


def _arcs_by_level(graph: TimingGraph, endpoint: np.ndarray):
    lv = graph.level[endpoint]
    order = np.argsort(lv, kind="stable")
    bounds = np.searchsorted(lv[order], np.arange(len(graph.levels) + 1))
    return order, bounds


def forward_propagate(graph: TimingGraph, rng: Optional[np.random.Generator] = None
                      ) -> CriticalPath:
    """Latest arrival times, level by level.  ``rng`` shuffles within-level order."""
    if graph.levels is None:
        levelize(graph)
    t_arr = np.zeros(graph.n_vertices)
    src, dst = graph.arc_src, graph.arc_dst
    order, bounds = _arcs_by_level(graph, dst)
    for k in range(1, len(graph.levels)):
        arcs = order[bounds[k]:bounds[k + 1]]
        if rng is not None:
            arcs = rng.permutation(arcs)
        t_arr[dst[arcs]] = -np.inf
        np.maximum.at(t_arr, dst[arcs], t_arr[src[arcs]] + graph.logic[src[arcs]] + graph.arc_delay[arcs])
    graph.t_arr = t_arr
    # backpointer: lowest-numbered arc achieving the max
    cand = t_arr[src] + graph.logic[src] + graph.arc_delay
    tight = np.flatnonzero(cand == t_arr[dst])
    best = np.full(graph.n_vertices, graph.n_arcs, dtype=np.int64)
    np.minimum.at(best, dst[tight], tight)
    best[best == graph.n_arcs] = -1
    graph.best_in = best
    paths = critical_paths(graph, 1)
    return paths[0] if paths else CriticalPath([], float("inf"))


def backward_propagate(graph: TimingGraph, rng: Optional[np.random.Generator] = None
                       ) -> np.ndarray:
    """Required times; vertices that reach no capture point stay at +inf."""
    t_req = np.full(graph.n_vertices, np.inf)
    sinks = graph.is_sink
    t_req[sinks] = graph.clock_period - graph.logic[sinks]
    src, dst = graph.arc_src, graph.arc_dst
    order, bounds = _arcs_by_level(graph, src)
    for k in reversed(range(len(graph.levels))):
        arcs = order[bounds[k]:bounds[k + 1]]
        if rng is not None:
            arcs = rng.permutation(arcs)
        np.minimum.at(t_req, src[arcs], t_req[dst[arcs]] - graph.arc_delay[arcs] - graph.logic[src[arcs]])
    graph.t_req = t_req
    return t_req


def compute_slacks(graph: TimingGraph):
    """Per-arc slack plus WNS / TNS / CPD over capture points."""
    src, dst = graph.arc_src, graph.arc_dst
    graph.arc_slack = graph.t_req[dst] - (graph.t_arr[src] + graph.logic[src] + graph.arc_delay)
    ep = graph.endpoint_slacks()
    if len(ep):
        graph.wns = float(ep.min())
        graph.tns = float(np.minimum(ep, 0.0).sum())
        graph.cpd = graph.clock_period - graph.wns
    else:
        graph.wns, graph.tns, graph.cpd = float("inf"), 0.0, 0.0
    return graph.arc_slack, graph.wns, graph.tns, graph.cpd


def trace_path(graph: TimingGraph, sink: int) -> CriticalPath:
    arcs = []
    v = sink
    while graph.best_in[v] >= 0:
        a = int(graph.best_in[v])
        arcs.append(a)
        v = int(graph.arc_src[a])
    arcs.reverse()
    slack = graph.clock_period - (graph.t_arr[sink] + graph.logic[sink])
    return CriticalPath(arcs, float(slack))


def critical_paths(graph: TimingGraph, k: int) -> list[CriticalPath]:
    """Paths to the ``k`` capture points with the worst endpoint slack."""
    sinks = np.flatnonzero(graph.is_sink)
    if not len(sinks):
        return []
    arrival = graph.t_arr[sinks] + graph.logic[sinks]
    order = np.lexsort((sinks, -arrival))[:k]
    return [trace_path(graph, int(s)) for s in sinks[order]]


def analyze(graph: TimingGraph) -> CriticalPath:
    path = forward_propagate(graph)
    backward_propagate(graph)
    compute_slacks(graph)
    return path


def run_sta(graph: TimingGraph, netlist: Netlist, placement: Placement, grid, model,
            batch_size: int = 256, extractor: Optional[FeatureExtractor] = None):
    """Refresh net features, predict arc delays in batches, propagate; returns (graph, path)."""
    ex = extractor or FeatureExtractor(netlist, placement, grid)
    fs = ex.extract(graph.net_ids)
    flat = model.predict(fs, batch_size) if fs.n_pairs else np.zeros(0)
    graph.arc_delay = np.asarray(flat, dtype=float).copy()
    path = analyze(graph)
    return graph, path


def timing_report(graph: TimingGraph, path: CriticalPath, netlist: Optional[Netlist] = None) -> dict:
    def name(v):
        if netlist is None or graph.vert_inst is None:
            return int(v)
        return netlist.instances[int(graph.vert_inst[v])].name

    rows = []
    for a in path.arcs:
        rows.append({
            "from": name(graph.arc_src[a]), "to": name(graph.arc_dst[a]),
            "net": (netlist.nets[int(graph.arc_net[a])].name
                    if netlist is not None and graph.arc_net is not None else None),
            "netD": float(graph.arc_delay[a]), "slack": float(graph.arc_slack[a])})
    return {"wns": graph.wns, "tns": graph.tns, "cpd": graph.cpd,
            "clock_period": graph.clock_period, "critical_path": rows}
