"""Per-net graph and timing feature extraction (25 features per driver/load pair).

Vertex features (13): instance x, y, one-hot kind (10), is-load flag.
Net environment (5): HPWL, vertical extent, horizontal extent, fanout, mean routing density.
Pin routing (7): |dx|, |dy|, load index, IO / DSP / RAMB crossing flags, pin density.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .congestion import GCellGrid, PointCounter, box_mean_density, pair_pin_density
from .netlist import N_KINDS, InstanceKind, Netlist, Placement

N_VERTEX_FEATURES = 2 + N_KINDS + 1
N_ENV_FEATURES = 5
N_PIN_FEATURES = 7

DRIVER_TO_LOAD, LOAD_TO_DRIVER, DRIVER_SELF, LOAD_SELF = range(4)
N_EDGE_TYPES = 4

CROSSING_KINDS = (InstanceKind.IO, InstanceKind.DSP, InstanceKind.RAMB)


@dataclass
class NetGraph:
    vertices: np.ndarray  # (p, 13), driver first
    edges: list[tuple[int, int, int]]  # (src, dst, type)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)


@dataclass
class FeatureSet:
    """Features for a list of nets, flattened.  Net-local indices run 0..n_nets-1."""

    net_ids: np.ndarray
    vert_feat: np.ndarray
    vert_ptr: np.ndarray
    edge_src: np.ndarray  # vertex indices into vert_feat
    edge_dst: np.ndarray
    edge_type: np.ndarray
    edge_ptr: np.ndarray
    env: np.ndarray
    pin_feat: np.ndarray
    pair_ptr: np.ndarray
    labels: Optional[np.ndarray] = None

    @property
    def n_nets(self) -> int:
        return len(self.net_ids)

    @property
    def n_pairs(self) -> int:
        return len(self.pin_feat)

    @property
    def pair_net(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_nets), np.diff(self.pair_ptr))

    @property
    def vert_net(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_nets), np.diff(self.vert_ptr))

    def select(self, nets: Sequence[int]) -> "FeatureSet":
        """Sub-set of the given local net indices, in the given order."""
        nets = np.asarray(nets, dtype=np.int64)
        vcount = np.diff(self.vert_ptr)[nets]
        ecount = np.diff(self.edge_ptr)[nets]
        pcount = np.diff(self.pair_ptr)[nets]
        vidx = _ranges(self.vert_ptr[nets], vcount)
        eidx = _ranges(self.edge_ptr[nets], ecount)
        pidx = _ranges(self.pair_ptr[nets], pcount)
        vert_ptr = _ptr(vcount)
        # shift edge endpoints from old vertex numbering to the new one
        shift = np.repeat(vert_ptr[:-1] - self.vert_ptr[nets], ecount)
        return FeatureSet(
            net_ids=self.net_ids[nets], vert_feat=self.vert_feat[vidx], vert_ptr=vert_ptr,
            edge_src=self.edge_src[eidx] + shift, edge_dst=self.edge_dst[eidx] + shift,
            edge_type=self.edge_type[eidx], edge_ptr=_ptr(ecount),
            env=self.env[nets], pin_feat=self.pin_feat[pidx], pair_ptr=_ptr(pcount),
            labels=None if self.labels is None else self.labels[pidx])

    def graph(self, k: int) -> NetGraph:
        a, b = self.edge_ptr[k], self.edge_ptr[k + 1]
        v0 = self.vert_ptr[k]
        edges = [(int(s - v0), int(d - v0), int(t)) for s, d, t in
                 zip(self.edge_src[a:b], self.edge_dst[a:b], self.edge_type[a:b])]
        return NetGraph(self.vert_feat[v0:self.vert_ptr[k + 1]].copy(), edges)

    @staticmethod
    def concat(parts: Sequence["FeatureSet"]) -> "FeatureSet":
        parts = [p for p in parts if p.n_nets]
        if not parts:
            return empty_feature_set()
        voff = np.cumsum([0] + [len(p.vert_feat) for p in parts[:-1]])
        labels = None
        if all(p.labels is not None for p in parts):
            labels = np.concatenate([p.labels for p in parts])
        return FeatureSet(
            net_ids=np.concatenate([p.net_ids for p in parts]),
            vert_feat=np.concatenate([p.vert_feat for p in parts]),
            vert_ptr=_ptr(np.concatenate([np.diff(p.vert_ptr) for p in parts])),
            edge_src=np.concatenate([p.edge_src + o for p, o in zip(parts, voff)]),
            edge_dst=np.concatenate([p.edge_dst + o for p, o in zip(parts, voff)]),
            edge_type=np.concatenate([p.edge_type for p in parts]),
            edge_ptr=_ptr(np.concatenate([np.diff(p.edge_ptr) for p in parts])),
            env=np.concatenate([p.env for p in parts]),
            pin_feat=np.concatenate([p.pin_feat for p in parts]),
            pair_ptr=_ptr(np.concatenate([np.diff(p.pair_ptr) for p in parts])),
            labels=labels)


def _ptr(counts) -> np.ndarray:
    p = np.zeros(len(counts) + 1, dtype=np.int64)
    p[1:] = np.cumsum(counts)
    return p


def _ranges(starts, counts) -> np.ndarray:
    """Concatenation of arange(s, s + c) for each (s, c)."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offs = np.repeat(np.asarray(starts, dtype=np.int64) - _ptr(counts)[:-1], counts)
    return np.arange(total) + offs


def empty_feature_set() -> FeatureSet:
    z = np.zeros(1, dtype=np.int64)
    return FeatureSet(np.zeros(0, np.int64), np.zeros((0, N_VERTEX_FEATURES)), z.copy(),
                      np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64), z.copy(),
                      np.zeros((0, N_ENV_FEATURES)), np.zeros((0, N_PIN_FEATURES)), z.copy())


def net_edges(fanout: int) -> list[tuple[int, int, int]]:
    """Edge list of a net graph with the driver at vertex 0."""
    edges = [(0, k, DRIVER_TO_LOAD) for k in range(1, fanout + 1)]
    edges += [(k, 0, LOAD_TO_DRIVER) for k in range(1, fanout + 1)]
    edges.append((0, 0, DRIVER_SELF))
    edges += [(k, k, LOAD_SELF) for k in range(1, fanout + 1)]
    return edges


def build_net_graph(netlist: Netlist, net: int, placement: Placement) -> NetGraph:
    n = netlist.nets[net]
    feats = np.zeros((n.pin_count, N_VERTEX_FEATURES))
    for k, pid in enumerate(n.pins):
        inst = netlist.pins[pid].inst
        x, y = placement.x[inst], placement.y[inst]
        if not (np.isfinite(x) and np.isfinite(y)):
            raise ValueError(f"instance {netlist.instances[inst].name} is unplaced")
        feats[k, 0], feats[k, 1] = x, y
        feats[k, 2 + int(netlist.instances[inst].kind)] = 1.0
        feats[k, -1] = 0.0 if k == 0 else 1.0
    return NetGraph(feats, net_edges(n.fanout))


class FeatureExtractor:
    """Vectorised feature extraction for many nets at one placement."""

    def __init__(self, netlist: Netlist, placement: Placement, grid: GCellGrid):
        self.netlist = netlist
        self.placement = placement
        self.grid = grid
        self.px, self.py = netlist.pin_positions(placement)
        self.pins = PointCounter(self.px, self.py)
        kinds = netlist.kinds
        self.crossers = {}
        for kind in CROSSING_KINDS:
            sel = kinds == int(kind)
            self.crossers[kind] = PointCounter(placement.x[sel], placement.y[sel])

    def extract(self, nets: Optional[Sequence[int]] = None) -> FeatureSet:
        nl, pl = self.netlist, self.placement
        nets = np.asarray(nl.timing_nets if nets is None else nets, dtype=np.int64)
        if len(nets) == 0:
            return empty_feature_set()
        if not (np.all(np.isfinite(pl.x)) and np.all(np.isfinite(pl.y))):
            raise ValueError("placement contains unplaced instances")
        ptr = nl.net_ptr
        pcount = ptr[nets + 1] - ptr[nets]
        fan = pcount - 1
        pins = _ranges(ptr[nets], pcount)
        inst = nl.pin_inst[pins]
        vert_ptr = _ptr(pcount)

        vf = np.zeros((len(pins), N_VERTEX_FEATURES))
        vf[:, 0] = pl.x[inst]
        vf[:, 1] = pl.y[inst]
        vf[np.arange(len(pins)), 2 + nl.kinds[inst]] = 1.0
        vf[:, -1] = 1.0
        vf[vert_ptr[:-1], -1] = 0.0

        # edges, net by net: d->l, l->d, d self, l self
        ecount = 2 * fan + pcount
        edge_ptr = _ptr(ecount)
        drv = np.repeat(vert_ptr[:-1], fan)
        load_mask = np.ones(len(pins), dtype=bool)
        load_mask[vert_ptr[:-1]] = False
        loads = np.flatnonzero(load_mask)
        src = np.empty(edge_ptr[-1], dtype=np.int64)
        dst = np.empty_like(src)
        typ = np.empty_like(src)
        base = edge_ptr[:-1]
        # position of each block inside its net's edge range
        lo = _ranges(base, fan)
        ld = _ranges(base + fan, fan)
        ds = base + 2 * fan
        ls = _ranges(base + 2 * fan + 1, fan)
        src[lo], dst[lo], typ[lo] = drv, loads, DRIVER_TO_LOAD
        src[ld], dst[ld], typ[ld] = loads, drv, LOAD_TO_DRIVER
        src[ds], dst[ds], typ[ds] = vert_ptr[:-1], vert_ptr[:-1], DRIVER_SELF
        src[ls], dst[ls], typ[ls] = loads, loads, LOAD_SELF

        px, py = self.px[pins], self.py[pins]
        x0 = np.minimum.reduceat(px, vert_ptr[:-1])
        x1 = np.maximum.reduceat(px, vert_ptr[:-1])
        y0 = np.minimum.reduceat(py, vert_ptr[:-1])
        y1 = np.maximum.reduceat(py, vert_ptr[:-1])
        env = np.column_stack([(x1 - x0) + (y1 - y0), y1 - y0, x1 - x0, fan,
                               box_mean_density(self.grid, x0, x1, y0, y1)])

        dpin = np.repeat(ptr[nets], fan)
        lpin = pins[load_mask]
        dx, dy = self.px[dpin], self.py[dpin]
        lx, ly = self.px[lpin], self.py[lpin]
        idx = np.arange(len(lpin)) - np.repeat(_ptr(fan)[:-1], fan)
        cross = []
        rx0, rx1 = np.minimum(dx, lx), np.maximum(dx, lx)
        ry0, ry1 = np.minimum(dy, ly), np.maximum(dy, ly)
        dinst, linst = nl.pin_inst[dpin], nl.pin_inst[lpin]
        for kind in CROSSING_KINDS:
            c = self.crossers[kind].count(rx0, rx1, ry0, ry1)
            own = (nl.kinds[dinst] == int(kind)).astype(np.int64)
            own += ((nl.kinds[linst] == int(kind)) & (linst != dinst))
            cross.append((c - own > 0).astype(float))
        pd = pair_pin_density(self.pins, dx, dy, lx, ly, self.grid.cell_size)
        pin_feat = np.column_stack([np.abs(dx - lx), np.abs(dy - ly), idx, *cross, pd])

        return FeatureSet(net_ids=nets, vert_feat=vf, vert_ptr=vert_ptr, edge_src=src,
                          edge_dst=dst, edge_type=typ, edge_ptr=edge_ptr, env=env,
                          pin_feat=pin_feat, pair_ptr=_ptr(fan))


def extract_features(netlist: Netlist, placement: Placement, grid: GCellGrid,
                     nets: Optional[Sequence[int]] = None) -> FeatureSet:
    return FeatureExtractor(netlist, placement, grid).extract(nets)
