"""Synthetic benchmark designs and the ground-truth delay oracle used to label them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .congestion import compute_routing_density
from .features import FeatureExtractor, FeatureSet
from .netlist import (RESOURCE_CLASS, Device, InstanceKind, Netlist, NetlistError, Placement,
                      netlist_from_dict, validate)
from .sta import LogicDelayTable, build_timing_graph, run_sta

K = InstanceKind

# relative input capacitance of a load pin, by kind
LOAD_CAPACITANCE = {
    K.LUT: 1.0, K.FF: 1.0, K.DSP: 5.0, K.RAMB: 5.0, K.MUX: 1.0, K.IO: 3.0,
    K.ClockBuffer: 1.0, K.CARRY8: 2.0, K.Shifter: 1.5, K.LUTRAM: 2.0,
}
_CAP_BY_KIND = np.array([LOAD_CAPACITANCE[k] for k in K])

DEFAULT_MIX = {
    K.LUT: 0.50, K.FF: 0.28, K.CARRY8: 0.05, K.MUX: 0.05,
    K.LUTRAM: 0.03, K.Shifter: 0.03, K.DSP: 0.03, K.RAMB: 0.03,
}
SITE_CAPACITY = {"LUT": 1.0, "FF": 1.0, "DSP": 0.25, "RAMB": 0.25, "IO": 1.0, "ClockBuffer": 1.0}


@dataclass
class SyntheticOracle:
    """Ground-truth pair delay

        d = a0 + a1*L + a2*log(1 + fanout)*L + a3*avg_rd + a4*avg_pd + a5*C_load + noise

    where L = |dx| + |dy| between driver and load, C_load is the summed load
    capacitance of the net, and noise ~ N(0, sigma) is fixed per load pin.
    """

    seed: int = 0
    a0: float = 0.1
    a1: float = 0.01
    a2: float = 0.004
    a3: float = 0.0002
    a4: float = 0.0001
    a5: float = 0.02
    sigma: float = 0.02
    delay_floor: float = 0.01
    cell_size: float = 4.0
    _noise: dict = field(default_factory=dict, repr=False, compare=False)

    def pin_noise(self, netlist: Netlist) -> np.ndarray:
        key = len(netlist.pins)
        if key not in self._noise:
            rng = np.random.default_rng([self.seed, 0x5EED])
            self._noise[key] = rng.normal(0.0, self.sigma, key)
        return self._noise[key]

    def pair_delays(self, fs: FeatureSet, netlist: Netlist) -> np.ndarray:
        if fs.n_pairs == 0:
            return np.zeros(0)
        pins, env = fs.pin_feat, fs.env
        dist = pins[:, 0] + pins[:, 1]
        fan = env[fs.pair_net, 3]
        # summed load capacitance per net from the one-hot kind columns
        is_load = fs.vert_feat[:, -1] > 0.5
        vcap = fs.vert_feat[:, 2:2 + len(K)] @ _CAP_BY_KIND * is_load
        cap = np.add.reduceat(vcap, fs.vert_ptr[:-1])[fs.pair_net]
        load_pin = netlist.net_ptr[fs.net_ids][fs.pair_net] + 1 + pins[:, 2].astype(np.int64)
        d = (self.a0 + self.a1 * dist + self.a2 * np.log1p(fan) * dist
             + self.a3 * env[fs.pair_net, 4] + self.a4 * pins[:, 6] + self.a5 * cap
             + self.pin_noise(netlist)[load_pin])
        return np.maximum(d, self.delay_floor)

    def as_model(self, netlist: Netlist) -> "OracleModel":
        return OracleModel(self, netlist)

    def label(self, netlist: Netlist, placement: Placement, device: Device,
              nets=None) -> FeatureSet:
        grid = compute_routing_density(netlist, placement, device, self.cell_size)
        fs = FeatureExtractor(netlist, placement, grid).extract(nets)
        fs.labels = self.pair_delays(fs, netlist)
        return fs

    def timing(self, netlist: Netlist, placement: Placement, device: Device,
               clock_period: float = 5.0, table: Optional[LogicDelayTable] = None):
        """Ground-truth STA; returns ``(graph, critical_path)``."""
        graph = build_timing_graph(netlist, table, clock_period)
        grid = compute_routing_density(netlist, placement, device, self.cell_size)
        return run_sta(graph, netlist, placement, grid, self.as_model(netlist))

    def critical_path_delay(self, netlist: Netlist, placement: Placement, device: Device) -> float:
        graph, _ = self.timing(netlist, placement, device)
        return graph.cpd

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if not f.name.startswith("_")}

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticOracle":
        known = {f.name for f in fields(cls) if not f.name.startswith("_")}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown oracle fields {sorted(unknown)}")
        return cls(**data)


@dataclass
class OracleModel:
    """Adapter giving the oracle the same ``predict`` surface as the learned model."""

    oracle: SyntheticOracle
    netlist: Netlist

    def predict(self, fs: FeatureSet, batch_size: int = 256) -> np.ndarray:
        return self.oracle.pair_delays(fs, self.netlist)


@dataclass
class SynthConfig:
    fanout_mean: float = 3.0
    max_fanout: int = 32
    min_depth: int = 4
    max_depth: int = 12
    stage_cells: int = 150  # combinational cells per pipeline stage
    io_fraction: float = 0.04
    utilization: float = 0.6
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))


def auto_device(netlist_kinds: np.ndarray, utilization: float = 0.6) -> Device:
    """Square die sized so the scarcest resource sits near ``utilization``."""
    need = {}
    for k in np.asarray(netlist_kinds):
        res = RESOURCE_CLASS[K(int(k))]
        need[res] = need.get(res, 0) + 1
    area = max(cnt / SITE_CAPACITY[res] for res, cnt in need.items()
               if res not in ("IO", "ClockBuffer"))
    side = max(8, int(math.ceil(math.sqrt(area / utilization))))
    regions = max(1, round(side / 20))
    return Device(width=side, height=side, clock_rows=regions, clock_cols=regions,
                  capacity=dict(SITE_CAPACITY), clock_capacity=24)


def _kind_counts(cells: int, cfg: SynthConfig) -> tuple[int, int, dict]:
    n_io = max(2, round(cfg.io_fraction * cells))
    n_clk = 1 if cells < 2000 else 2
    rest = cells - n_io - n_clk
    total = sum(cfg.mix.values())
    counts = {k: int(round(rest * p / total)) for k, p in cfg.mix.items()}
    counts[K.FF] = max(counts.get(K.FF, 0), 1)
    counts[K.LUT] = counts.get(K.LUT, 0) + rest - sum(counts.values())
    if counts[K.LUT] < 1:
        raise ValueError("too few cells for the kind mix")
    return n_io, n_clk, counts


def _perimeter_points(n: int, width: float, height: float):
    t = (np.arange(n) + 0.5) / n * 2 * (width + height)
    x, y = np.empty(n), np.empty(n)
    for i, s in enumerate(t):
        if s < width:
            x[i], y[i] = s, 0.0
        elif s < width + height:
            x[i], y[i] = width - 0.5, s - width
        elif s < 2 * width + height:
            x[i], y[i] = 2 * width + height - s, height - 0.5
        else:
            x[i], y[i] = 0.0, 2 * (width + height) - s
    return np.clip(x, 0, width - 0.5), np.clip(y, 0, height - 0.5)


def synth_design(cells: int, seed: int = 0, device: Optional[Device] = None,
                 config: Optional[SynthConfig] = None,
                 oracle: Optional[SyntheticOracle] = None) -> tuple[Netlist, SyntheticOracle, Device]:
    """Random pipelined layered-DAG design.

    Combinational cells are split into pipeline stages of 4-12 logic levels;
    FF / DSP / RAMB instances sit on the stage boundaries.  Loads are drawn
    near their driver in a hidden 2-D layout so the netlist has spatial
    locality a placer can recover.  Returns ``(netlist, oracle, device)``.
    """
    if cells < 10:
        raise ValueError("synth_design needs at least 10 cells")
    cfg = config or SynthConfig()
    rng = np.random.default_rng(seed)
    n_io, n_clk, counts = _kind_counts(cells, cfg)

    kinds = []
    for k in sorted(counts):
        kinds += [k] * counts[k]
    kinds = np.array(kinds, dtype=np.int64)[rng.permutation(sum(counts.values()))]
    core_kinds = kinds
    all_kinds = np.concatenate([core_kinds, np.full(n_io, int(K.IO)), np.full(n_clk, int(K.ClockBuffer))])
    if device is None:
        device = auto_device(all_kinds, cfg.utilization)

    n_core = len(core_kinds)
    io_ids = np.arange(n_core, n_core + n_io)
    clk_ids = np.arange(n_core + n_io, cells)
    seq_kinds = (int(K.FF), int(K.DSP), int(K.RAMB))
    is_seq = np.isin(core_kinds, seq_kinds)
    comb = np.flatnonzero(~is_seq)
    seq = np.flatnonzero(is_seq)
    n_in = max(1, n_io // 2)
    io_in, io_out = io_ids[:n_in], io_ids[n_in:]

    # hidden layout; IOs use their physical periphery position
    W, H = float(device.width), float(device.height)
    iox, ioy = _perimeter_points(n_io, W, H)
    hidden = rng.random((cells, 2))
    hidden[io_ids, 0], hidden[io_ids, 1] = iox / W, ioy / H

    n_stages = max(1, int(round(len(comb) / cfg.stage_cells)))
    stage_of = rng.integers(0, n_stages, size=len(comb))
    boundary_of = rng.integers(0, n_stages, size=len(seq))
    levels: list[list[np.ndarray]] = []
    for s in range(n_stages):
        members = comb[stage_of == s]
        depth = min(int(rng.integers(cfg.min_depth, cfg.max_depth + 1)), len(members))
        lv = np.empty(len(members), dtype=np.int64)
        lv[:depth] = np.arange(1, depth + 1)
        lv[depth:] = rng.integers(1, depth + 1, size=len(members) - depth) if depth else []
        levels.append([members[lv == l] for l in range(1, depth + 1)])

    def launchers(s):
        out = seq[boundary_of == (s - 1) % n_stages]
        if s == 0:
            out = np.concatenate([out, io_in])
        return out if len(out) else np.concatenate([seq, io_in])

    def capturers(s):
        out = seq[boundary_of == s]
        if s == n_stages - 1:
            out = np.concatenate([out, io_out])
        return out if len(out) else np.concatenate([seq, io_out])

    target = {}
    loads: dict[int, list[int]] = {}
    p = 1.0 / cfg.fanout_mean

    def fan(u):
        if u not in target:
            target[u] = int(min(rng.geometric(p), cfg.max_fanout))
            loads[u] = []
        return target[u]

    def attach(v, drivers):
        d = np.linalg.norm(hidden[drivers] - hidden[v], axis=1)
        room = np.array([len(loads.get(int(u), [])) < fan(int(u)) for u in drivers])
        pick = drivers[np.argmin(np.where(room, d, d + 1e3))]
        loads[int(pick)].append(int(v))

    def fill(u, pool):
        need = fan(u) - len(loads[u])
        if need <= 0 or not len(pool):
            return
        pool = pool[~np.isin(pool, loads[u]) & (pool != u)]
        if not len(pool):
            return
        d = np.linalg.norm(hidden[pool] - hidden[u], axis=1)
        near = pool[np.argsort(d, kind="stable")[:max(3 * need, 4)]]
        loads[u] += [int(v) for v in rng.choice(near, size=min(need, len(near)), replace=False)]

    empty = np.zeros(0, dtype=np.int64)
    for s in range(n_stages):
        lv = levels[s]
        depth = len(lv)
        launch, capture = launchers(s), capturers(s)
        tiers = [launch] + lv  # tier t drives tier t + 1
        for t in range(1, depth + 1):
            for v in tiers[t]:
                attach(v, tiers[t - 1])
        for v in capture:
            attach(v, tiers[depth])
        for t in range(depth + 1):
            pool = np.concatenate([tiers[t + 1] if t + 1 <= depth else empty,
                                   tiers[t + 2] if t + 2 <= depth else empty,
                                   capture if t >= depth - 1 else empty])
            for u in tiers[t]:
                fan(int(u))
                fill(int(u), pool)

    names = [f"{K(int(k)).name.lower()}_{i}" for i, k in enumerate(all_kinds)]
    ff_clock = rng.integers(0, n_clk, size=cells)
    insts = []
    for i, k in enumerate(all_kinds):
        rec = {"name": names[i], "kind": K(int(k)).name}
        if k in (int(K.IO), int(K.ClockBuffer)):
            rec["fixed"] = True
            if k == int(K.IO):
                j = i - n_core
                rec["x"], rec["y"] = float(iox[j]), float(ioy[j])
            else:
                j = i - n_core - n_io
                rec["x"], rec["y"] = float((j + 0.5) * W / n_clk), float(H / 2)
        if k == int(K.FF):
            rec["clock"] = f"clk{ff_clock[i]}"
        insts.append(rec)
    nets = [{"name": f"clk{c}", "driver": {"inst": names[clk_ids[c]]},
             "loads": [{"inst": names[i]} for i in np.flatnonzero((all_kinds == int(K.FF)) & (ff_clock == c))]}
            for c in range(n_clk)]
    for u in sorted(loads):
        if loads[u]:
            nets.append({"name": f"n_{names[u]}", "driver": {"inst": names[u]},
                         "loads": [{"inst": names[v]} for v in loads[u]]})
    netlist = netlist_from_dict({"name": f"synth_{cells}_{seed}", "instances": insts, "nets": nets})
    problems = validate(netlist, device)
    if problems:
        raise NetlistError("synthetic design does not fit the device: " + "; ".join(problems))
    if oracle is None:
        oracle = SyntheticOracle(seed=seed)
    return netlist, oracle, device
