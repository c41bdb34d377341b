"""Timing-driven quadratic global placement.

Each iteration minimises

    (1 - lam) * (WL + WD) + lam * WT

where WL is the B2B-linearised wirelength, WD the density anchors from the
previous rough legalisation, and WT the timing-arc and clock-region
pseudo-nets.  x and y are independent SPD systems solved by Jacobi-PCG.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import cg

from .congestion import compute_routing_density
from .features import _ranges
from .legalize import (PseudoNet, adjust_resources, bin_utilization, make_bins,
                       spread_instances)
from .netlist import Device, Netlist, Placement, total_hpwl
from .sta import (LogicDelayTable, TimingGraph, backward_propagate, build_timing_graph,
                  compute_slacks, critical_paths, run_sta)

log = logging.getLogger(__name__)


@dataclass
class PlacerConfig:
    lam: float = 0.5
    lam_warmup: int = 10  # iterations to ramp lam from 0 to its final value
    alpha: float = 1.5
    beta: float = 0.5
    gamma: float = 0.3
    percentile: float = 5.0
    clock_period: Optional[float] = None  # None: auto_period_factor x the current CPD
    auto_period_factor: float = 0.9
    slack_threshold: Optional[float] = None  # None: the percentile threshold T_thr
    negative_only: bool = True  # weight only arcs with negative slack
    w_base: float = 0.0
    b_min: float = 1e-3
    b_max: float = 10.0
    w_max: float = 1e3
    t_thr_floor: float = 0.01  # |T_thr| floor as a fraction of the clock period
    timing_scale: float = 5.0
    critical_paths: int = 10  # paths whose arcs get the depth bonus
    long_path_arcs: int = 8
    region_threshold: float = 0.5
    region_weight: float = 1.0
    max_iterations: int = 30
    min_iterations: Optional[int] = None  # None: lam_warmup + hpwl_window
    hpwl_tol: float = 0.005
    hpwl_window: int = 3
    anchor_fraction: float = 0.3  # w0 as a fraction of the mean B2B weight
    anchor_growth: float = 1.0  # w_mp = w0 * (1 + iter / anchor_growth)
    anchor_all: bool = True
    epsilon: float = 1e-4
    min_pin_distance: float = 1.0
    cg_tolerance: float = 1e-6
    cg_max_iters: int = 1000
    batch_size: int = 256
    bin_size: float = 4.0
    gcell_size: float = 4.0
    kappa: float = 1.5
    clock_limit: float = 0.8
    congestion_strength: float = 0.1
    congestion_start: int = 5
    congestion_ramp: int = 5  # iterations to ramp the congestion scaling to full strength
    report_timing: bool = True  # run STA for the trace even when lam = 0
    keep_best: bool = True  # return the lowest-CPD iterate once lam is at full strength
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("alpha, beta, gamma must be non-negative")
        if not 0.0 < self.percentile < 100.0:
            raise ValueError("percentile must lie in (0, 100)")
        if self.clock_period is not None and self.clock_period <= 0:
            raise ValueError("clock period must be positive")

    def lam_at(self, iteration: int) -> float:
        if self.lam_warmup <= 0:
            return self.lam
        return self.lam * min(1.0, iteration / self.lam_warmup)


# ---------------------------------------------------------------------------
# B2B net model

def _b2b_dim(pos: np.ndarray, net_ptr: np.ndarray, nets: np.ndarray, eps: float):
    """B2B pin pairs and weights for one dimension over many nets."""
    cnt = net_ptr[nets + 1] - net_ptr[nets]
    keep = cnt >= 2
    nets, cnt = nets[keep], cnt[keep]
    if not len(nets):
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros(0)
    pins = _ranges(net_ptr[nets], cnt)
    seg = np.repeat(np.arange(len(nets)), cnt)
    order = np.lexsort((pins, pos[pins], seg))
    spins = pins[order]
    start = np.zeros(len(nets) + 1, dtype=np.int64)
    start[1:] = np.cumsum(cnt)
    lo = spins[start[:-1]]
    hi = spins[start[1:] - 1]
    inner_mask = np.ones(len(spins), dtype=bool)
    inner_mask[start[:-1]] = False
    inner_mask[start[1:] - 1] = False
    inner = spins[inner_mask]
    iseg = seg[inner_mask]
    i = np.concatenate([lo, inner, inner])
    j = np.concatenate([hi, lo[iseg], hi[iseg]])
    p = np.concatenate([cnt, cnt[iseg], cnt[iseg]])
    w = 1.0 / ((p - 1) * np.maximum(np.abs(pos[i] - pos[j]), eps))
    return i, j, w


def b2b_coefficients(netlist: Netlist, net: int, placement: Placement, eps: float = 1e-4):
    """B2B pairs of one net as ``[(pin_i, pin_j, w_x, w_y)]``.

    A pair that is a B2B connection in only one dimension has zero weight in
    the other.  At the construction placement, sum(w_x * dx^2) equals the net's
    x extent and likewise for y.
    """
    px, py = netlist.pin_positions(placement)
    nets = np.array([net], dtype=np.int64)
    out: dict[tuple[int, int], list[float]] = {}
    for dim, pos in enumerate((px, py)):
        for a, b, w in zip(*_b2b_dim(pos, netlist.net_ptr, nets, eps)):
            key = (int(min(a, b)), int(max(a, b)))
            out.setdefault(key, [0.0, 0.0])[dim] += float(w)
    return [(a, b, wx, wy) for (a, b), (wx, wy) in sorted(out.items())]


# ---------------------------------------------------------------------------
# timing weights

def estimate_timing_threshold(slacks, percentile: float) -> float:
    """Nearest-rank percentile of the slack distribution."""
    s = np.sort(np.asarray(slacks, dtype=float).ravel())
    if not len(s):
        raise ValueError("cannot estimate a timing threshold from no slacks")
    if not 0.0 < percentile <= 100.0:
        raise ValueError("percentile must lie in (0, 100]")
    rank = max(1, int(math.ceil(percentile / 100.0 * len(s))))
    return float(s[rank - 1])


def arc_weight_formula(slack, c_forward, c_max, on_path, t_thr: float, cfg: PlacerConfig,
                       clock_period: float):
    """b ** e with b = clamp(1 - slack / Cl) and e = alpha + beta * slack / T_thr + bonus."""
    slack = np.asarray(slack, dtype=float)
    b = np.clip(1.0 - slack / clock_period, cfg.b_min, cfg.b_max)
    # a threshold near zero would blow the exponent up; keep its sign, floor its size
    floor = cfg.t_thr_floor * clock_period
    if t_thr == 0:
        ratio = np.zeros_like(slack)
    else:
        ratio = slack / (math.copysign(max(abs(t_thr), floor), t_thr))
    c_max = np.maximum(np.asarray(c_max, dtype=float), 1.0)
    bonus = np.where(on_path, cfg.gamma * np.asarray(c_forward, dtype=float) / c_max, 0.0)
    # capped in log space so huge exponents cannot overflow
    expo = (cfg.alpha + cfg.beta * ratio + bonus) * np.log(b)
    cap = math.log(cfg.w_max)
    return np.where(expo < cap, np.exp(np.minimum(expo, cap)), cfg.w_max)


def timing_arc_weight(slack, on_critical_path, c_forward, c_max, t_thr: float,
                      config: Optional[PlacerConfig] = None, clock_period: Optional[float] = None):
    """Per-arc timing weight; arcs at or above the slack threshold get ``w_base``."""
    cfg = config or PlacerConfig()
    cl = clock_period if clock_period is not None else cfg.clock_period
    if cl is None or cl <= 0:
        raise ValueError("timing weights need a positive clock period")
    slack = np.asarray(slack, dtype=float)
    w = arc_weight_formula(slack, c_forward, c_max, on_critical_path, t_thr, cfg, cl)
    thr = cfg.slack_threshold if cfg.slack_threshold is not None else t_thr
    if cfg.negative_only:
        thr = min(thr, 0.0)
    active = slack < thr
    out = np.where(active, w, cfg.w_base)
    return out if out.ndim else float(out)


def path_arc_annotations(graph: TimingGraph, paths):
    """Per-arc (on_path, c_forward, c_max), taking the largest bonus if arcs are shared."""
    on = np.zeros(graph.n_arcs, dtype=bool)
    cf = np.zeros(graph.n_arcs)
    cm = np.ones(graph.n_arcs)
    best = np.full(graph.n_arcs, -1.0)
    for path in paths:
        n = path.c_max
        for k, a in enumerate(path.arcs):
            r = (n - 1 - k) / n
            if r > best[a]:
                best[a] = r
                on[a], cf[a], cm[a] = True, n - 1 - k, n
    return on, cf, cm


def path_instances(graph: TimingGraph, path) -> list[int]:
    if not path.arcs:
        return []
    verts = [int(graph.arc_src[path.arcs[0]])] + [int(graph.arc_dst[a]) for a in path.arcs]
    return list(dict.fromkeys(int(graph.vert_inst[v]) for v in verts))


def clock_region_pseudo_nets(paths: Sequence[Sequence[int]], placement: Placement,
                             device: Device, threshold: float = 0.5, min_arcs: int = 8,
                             weight: float = 1.0, arc_counts: Optional[Sequence[int]] = None
                             ) -> list[PseudoNet]:
    """Pull every instance of a long path toward the horizontal center of the
    clock region holding more than ``threshold`` of the path's instances.

    ``paths`` are instance lists; ``arc_counts`` gives each path's arc count
    (default: instances - 1).
    """
    rects = device.regions
    out = []
    for k, insts in enumerate(paths):
        insts = list(insts)
        n_arcs = arc_counts[k] if arc_counts is not None else len(insts) - 1
        if n_arcs < min_arcs or not insts:
            continue
        reg = device.region_of(placement.x[insts], placement.y[insts])
        reg = reg[reg >= 0]
        if not len(reg):
            continue
        counts = np.bincount(reg, minlength=len(rects))
        r = int(np.argmax(counts))
        if counts[r] / len(insts) <= threshold:
            continue
        x0, _, x1, _ = rects[r]
        cx = 0.5 * (x0 + x1)
        out += [PseudoNet(int(i), cx, None, weight, "clock_region") for i in insts]
    return out


# ---------------------------------------------------------------------------
# quadratic system

@dataclass
class QuadraticSystem:
    movable: np.ndarray  # instance ids, row order
    index: np.ndarray  # instance -> row, -1 for fixed
    A: list  # [Ax, Ay] csr matrices
    b: list  # [bx, by]
    # objective terms per dim: w * (pos[a] + ca - pos[b] - cb)^2 with b = -1 meaning target t
    terms: list = field(default_factory=list)
    singular: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def objective(self, placement: Placement) -> float:
        total = 0.0
        for dim, pos in enumerate((placement.x, placement.y)):
            ia, ib, ca, cb, t, w = self.terms[dim]
            pa = pos[ia] + ca
            pb = np.where(ib >= 0, pos[np.maximum(ib, 0)] + cb, t)
            total += float(np.sum(w * (pa - pb) ** 2))
        return total




def _term_arrays(parts):
    if not parts:
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0)
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(6))


def _stamp(index: np.ndarray, n_mov: int, pos: np.ndarray, terms):
    """Build (A, b, grounded) for sum w * (X_a - X_b)^2.

    X_a = pos[a] + ca (a movable row or fixed instance); X_b likewise, or
    the constant target t when ib = -1.
    """
    ia, ib, ca, cb, t, w = terms
    ra = index[ia]
    rb = np.where(ib >= 0, index[np.maximum(ib, 0)], -1)
    va = pos[ia] + ca  # only used where a is fixed
    vb = np.where(ib >= 0, pos[np.maximum(ib, 0)] + cb, t)
    rows, cols, vals = [], [], []
    rhs = np.zeros(n_mov)
    grounded = np.zeros(n_mov, dtype=bool)

    mm = (ra >= 0) & (rb >= 0) & (ra != rb)
    c = ca[mm] - cb[mm]
    ww = w[mm]
    rows += [ra[mm], rb[mm], ra[mm], rb[mm]]
    cols += [ra[mm], rb[mm], rb[mm], ra[mm]]
    vals += [ww, ww, -ww, -ww]
    np.add.at(rhs, ra[mm], -ww * c)
    np.add.at(rhs, rb[mm], ww * c)

    for r, own, other, m in (((ra, ca, vb, (ra >= 0) & (rb < 0))),
                             ((rb, cb, va, (rb >= 0) & (ra < 0)))):
        rows.append(r[m])
        cols.append(r[m])
        vals.append(w[m])
        grounded[r[m]] = True
        np.add.at(rhs, r[m], w[m] * (other[m] - own[m]))

    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_mov, n_mov)).tocsr()
    A.sum_duplicates()
    return A, rhs, grounded


def _floating_rows(A, grounded: np.ndarray) -> np.ndarray:
    """Rows in connected components with no fixed connection or pseudo-net."""
    if not len(grounded):
        return np.zeros(0, dtype=np.int64)
    n_comp, label = csgraph.connected_components(A, directed=False)
    ok = np.zeros(n_comp, dtype=bool)
    ok[label[grounded]] = True
    return np.flatnonzero(~ok[label])


def timing_arc_pins(netlist: Netlist) -> tuple[np.ndarray, np.ndarray]:
    """(driver pin, load pin) per timing arc, in timing-graph arc order."""
    nets = np.asarray(netlist.timing_nets, dtype=np.int64)
    ptr = netlist.net_ptr
    fan = ptr[nets + 1] - ptr[nets] - 1
    return np.repeat(ptr[nets], fan), _ranges(ptr[nets] + 1, fan)


def assemble_quadratic_system(netlist: Netlist, placement: Placement,
                              pseudo_nets: Sequence[PseudoNet] = (),
                              arc_weights: Optional[np.ndarray] = None, lam: float = 0.0,
                              config: Optional[PlacerConfig] = None,
                              min_distance: Optional[float] = None) -> QuadraticSystem:
    """Stamp (1-lam)*(B2B + anchors) + lam*(timing arcs + clock-region pseudo-nets).

    All pairwise weights are linearised at ``placement`` (B2B style, divided
    by the current distance clamped at ``min_distance``).
    """
    cfg = config or PlacerConfig()
    dmin = cfg.min_pin_distance if min_distance is None else min_distance
    n = netlist.num_instances
    fixed = netlist.fixed_mask
    movable = np.flatnonzero(~fixed)
    index = np.full(n, -1, dtype=np.int64)
    index[movable] = np.arange(len(movable))
    px, py = netlist.pin_positions(placement)
    dx, dy = netlist.pin_offset
    pin_inst = netlist.pin_inst
    clock = netlist.clock_nets
    nets = np.array([k for k in range(netlist.num_nets) if k not in clock], dtype=np.int64)

    systems, all_terms, floating = [], [], []
    for dim, (pos_pin, off, pos) in enumerate(((px, dx, placement.x), (py, dy, placement.y))):
        parts = []
        i, j, w = _b2b_dim(pos_pin, netlist.net_ptr, nets, dmin)
        parts.append((pin_inst[i], pin_inst[j], off[i], off[j], np.zeros(len(i)), (1 - lam) * w))

        if lam > 0 and arc_weights is not None:
            aw = np.asarray(arc_weights, dtype=float)
            dp, lp = timing_arc_pins(netlist)
            sel = aw > 0
            dp, lp, aw = dp[sel], lp[sel], aw[sel]
            dist = np.maximum(np.abs(pos_pin[dp] - pos_pin[lp]), dmin)
            parts.append((pin_inst[dp], pin_inst[lp], off[dp], off[lp], np.zeros(len(dp)),
                          lam * cfg.timing_scale * aw / dist))

        ps = [p for p in pseudo_nets if (p.x if dim == 0 else p.y) is not None]
        if ps:
            inst = np.array([p.inst for p in ps], dtype=np.int64)
            tgt = np.array([p.x if dim == 0 else p.y for p in ps], dtype=float)
            wt = np.array([p.weight for p in ps], dtype=float)
            scale = np.array([lam if p.kind == "clock_region" else 1 - lam for p in ps])
            dist = np.maximum(np.abs(pos[inst] - tgt), dmin)
            keep = scale > 0
            parts.append((inst[keep], np.full(keep.sum(), -1), np.zeros(keep.sum()),
                          np.zeros(keep.sum()), tgt[keep], (scale * wt / dist)[keep]))

        terms = _term_arrays(parts)
        A, rhs, grounded = _stamp(index, len(movable), pos, terms)
        systems.append((A, rhs))
        all_terms.append(terms)
        floating.append(_floating_rows(A, grounded))
    # each dimension's matrix must be SPD on its own, so floating in either counts
    floating = np.union1d(*floating)
    return QuadraticSystem(movable=movable, index=index, A=[s[0] for s in systems],
                           b=[s[1] for s in systems], terms=all_terms,
                           singular=movable[floating])


def pcg(A, b: np.ndarray, x0: np.ndarray, tol: float = 1e-6, maxiter: int = 1000):
    """Jacobi-preconditioned CG; returns (x, iterations, relative residual, converged)."""
    nb = float(np.linalg.norm(b))
    if A.shape[0] == 0:
        return x0.copy(), 0, 0.0, True
    if nb == 0.0:
        return np.zeros_like(b), 0, 0.0, True
    d = A.diagonal()
    M = sp.diags(1.0 / np.where(d > 0, d, 1.0))
    count = [0]

    def tick(_):
        count[0] += 1

    x, info = cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=tick)
    res = float(np.linalg.norm(b - A @ x)) / nb
    return x, count[0], res, info == 0


def solve_quadratic(system: QuadraticSystem, placement: Placement, device: Optional[Device] = None,
                    tol: float = 1e-6, maxiter: int = 1000) -> Placement:
    """Minimise both dimensions from ``placement``; movables are clamped to the die."""
    if len(system.singular):
        raise ValueError(f"{len(system.singular)} movable instances have no connection to a "
                         "fixed instance or anchor")
    out = placement.copy()
    info = {}
    for dim, pos in enumerate((out.x, out.y)):
        x0 = pos[system.movable]
        x, iters, res, ok = pcg(system.A[dim], system.b[dim], x0, tol, maxiter)
        if not ok:
            warnings.warn(f"CG did not converge in {maxiter} iterations (residual {res:.2e})",
                          RuntimeWarning, stacklevel=2)
        if device is not None:
            hi = (device.width if dim == 0 else device.height) - 1e-6
            x = np.clip(x, 0.0, hi)
        pos[system.movable] = x
        info["xy"[dim]] = (iters, res)
    system.last_info = info
    return out


# ---------------------------------------------------------------------------
# iteration loop

@dataclass
class TimingState:
    t_thr: float
    clock_period: float
    arc_weights: np.ndarray
    region_nets: list


def timing_weights(graph: TimingGraph, placement: Placement, device: Device,
                   cfg: PlacerConfig) -> TimingState:
    """Arc weights and clock-region pseudo-nets from an analysed timing graph."""
    slack = graph.arc_slack
    finite = np.isfinite(slack)
    w = np.zeros(graph.n_arcs)
    if not finite.any():
        return TimingState(0.0, graph.clock_period, w, [])
    t_thr = estimate_timing_threshold(slack[finite], cfg.percentile)
    paths = critical_paths(graph, cfg.critical_paths)
    on, cf, cm = path_arc_annotations(graph, paths)
    w[finite] = timing_arc_weight(slack[finite], on[finite], cf[finite], cm[finite], t_thr,
                                  cfg, graph.clock_period)
    region = clock_region_pseudo_nets(
        [path_instances(graph, p) for p in paths], placement, device, cfg.region_threshold,
        cfg.long_path_arcs, cfg.region_weight, [p.c_max for p in paths])
    return TimingState(t_thr, graph.clock_period, w, region)


def global_place(netlist: Netlist, device: Device, config: Optional[PlacerConfig] = None,
                 model=None, table: Optional[LogicDelayTable] = None,
                 callback: Optional[Callable[[dict], None]] = None):
    """Run the placement loop; returns ``(placement, trace)``.

    ``model`` is anything with ``predict(features, batch_size)``; without it
    (or with lam = 0) the run is purely wirelength driven.  With
    ``keep_best`` the lowest-CPD iterate (by the model's own STA) is
    returned and repeated as the last trace row.
    """
    cfg = config or PlacerConfig()
    rng = np.random.default_rng(cfg.seed)
    n = netlist.num_instances
    mov = ~netlist.fixed_mask
    pl = netlist.initial_placement(device)
    pl.x[mov] += rng.uniform(-1.0, 1.0, mov.sum())
    pl.y[mov] += rng.uniform(-1.0, 1.0, mov.sum())
    np.clip(pl.x, 0, device.width - 1e-6, out=pl.x)
    np.clip(pl.y, 0, device.height - 1e-6, out=pl.y)
    lower = pl.copy()
    bins = make_bins(device, cfg.bin_size)
    demand = np.ones(n)
    anchor_pos: Optional[Placement] = None
    use_timing = model is not None and (cfg.lam > 0 or cfg.report_timing)
    graph = build_timing_graph(netlist, table, cfg.clock_period or 1.0) if use_timing else None
    min_iters = cfg.min_iterations if cfg.min_iterations is not None else cfg.lam_warmup + cfg.hpwl_window
    center = (device.width / 2.0, device.height / 2.0)
    trace: list[dict] = []
    timing: Optional[TimingState] = None
    hist: list[float] = []
    best: Optional[tuple[float, Placement, dict]] = None

    for it in range(cfg.max_iterations):
        lam = cfg.lam_at(it)
        arc_w, region = None, []
        if lam > 0 and graph is not None and timing is not None:
            arc_w, region = timing.arc_weights, timing.region_nets

        pseudo: list[PseudoNet] = list(region)
        if anchor_pos is not None:
            # anchor weight relative to the mean B2B weight at the current placement
            px, _ = netlist.pin_positions(lower)
            _, _, wb = _b2b_dim(px, netlist.net_ptr, np.arange(netlist.num_nets), cfg.min_pin_distance)
            w_mp = cfg.anchor_fraction * float(wb.mean()) * (1.0 + it / cfg.anchor_growth)
            pseudo += [PseudoNet(int(i), float(anchor_pos.x[i]), float(anchor_pos.y[i]), w_mp)
                       for i in anchor_ids]
        system = assemble_quadratic_system(netlist, lower, pseudo, arc_w, lam, cfg)
        if len(system.singular):
            pseudo += [PseudoNet(int(i), center[0], center[1], 1e-3) for i in system.singular]
            system = assemble_quadratic_system(netlist, lower, pseudo, arc_w, lam, cfg)
        lower = solve_quadratic(system, lower, device, cfg.cg_tolerance, cfg.cg_max_iters)

        grid = compute_routing_density(netlist, lower, device, cfg.gcell_size)
        ramp = min(1.0, (it - cfg.congestion_start + 1) / max(cfg.congestion_ramp, 1))
        demand = adjust_resources(lower, netlist, device, bins, grid, cfg.kappa, cfg.clock_limit,
                                  cfg.congestion_strength * ramp, ramp > 0, demand)
        pl, _, moved = spread_instances(lower, netlist, bins, demand)
        anchor_pos = pl
        anchor_ids = np.flatnonzero(mov if cfg.anchor_all else moved)

        row = {"iteration": it, "lambda": lam, "hpwl": total_hpwl(netlist, pl),
               "hpwl_lower": total_hpwl(netlist, lower), "wns": float("nan"),
               "tns": float("nan"), "cpd": float("nan"), "t_thr": float("nan"),
               "max_util": bin_utilization(bins), "moved": int(moved.sum()),
               "cg_iters": int(sum(v[0] for v in system.last_info.values()))}
        if graph is not None:
            grid_pl = compute_routing_density(netlist, pl, device, cfg.gcell_size)
            run_sta(graph, netlist, pl, grid_pl, model, cfg.batch_size)
            if cfg.clock_period is None:
                # moving target: keep the worst paths violating as the layout changes
                graph.clock_period = max(cfg.auto_period_factor * graph.cpd, 1e-6)
                backward_propagate(graph)
                compute_slacks(graph)
            if cfg.lam > 0:
                timing = timing_weights(graph, pl, device, cfg)
                row["t_thr"] = timing.t_thr
            row.update(wns=graph.wns, tns=graph.tns, cpd=graph.cpd)
        trace.append(row)
        if callback:
            callback(row)
        if (cfg.keep_best and cfg.lam > 0 and lam >= cfg.lam and np.isfinite(row["cpd"])
                and (best is None or row["cpd"] < best[0])):
            best = (row["cpd"], pl.copy(), row)
        log.debug("iter %d lam %.3f hpwl %.1f cpd %.4f", it, lam, row["hpwl"], row["cpd"])

        hist.append(row["hpwl"])
        if it + 1 >= min_iters and len(hist) > cfg.hpwl_window:
            recent = np.array(hist[-cfg.hpwl_window - 1:])
            change = np.abs(np.diff(recent)) / np.maximum(recent[:-1], 1e-12)
            if change.max() < cfg.hpwl_tol:
                break
    if best is not None and best[2] is not trace[-1]:
        # the trace ends on the returned placement
        pl = best[1]
        restored = dict(best[2], iteration=len(trace), moved=0, cg_iters=0)
        trace.append(restored)
        if callback:
            callback(restored)
    return pl, trace
