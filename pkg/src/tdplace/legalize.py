"""Rough legalization: bin demand/capacity bookkeeping, overflow spreading,
and the clock / congestion demand-supply adjustments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .congestion import GCellGrid
from .netlist import Device, InstanceKind, Netlist, Placement

# resource classes whose supply shrinks in congested bins
CONGESTION_SCALED = ("LUT", "FF")


class LegalizationError(RuntimeError):
    pass


@dataclass
class PseudoNet:
    inst: int
    x: Optional[float]
    y: Optional[float]
    weight: float = 1.0
    kind: str = "anchor"  # or "clock_region"

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError("pseudo-net weight must be positive")


@dataclass
class BinGrid:
    bin_size: float
    nx: int
    ny: int
    width: float
    height: float
    capacity: dict[str, np.ndarray]  # base supply per bin, shape (ny, nx)
    scale: np.ndarray  # congestion factor applied to CONGESTION_SCALED classes
    demand: Optional[dict[str, np.ndarray]] = None

    def effective_capacity(self, res: str) -> np.ndarray:
        cap = self.capacity.get(res)
        if cap is None:
            return np.zeros((self.ny, self.nx))
        return cap * self.scale if res in CONGESTION_SCALED else cap

    def bin_of(self, x, y):
        bx = np.clip(np.floor(np.asarray(x) / self.bin_size).astype(np.int64), 0, self.nx - 1)
        by = np.clip(np.floor(np.asarray(y) / self.bin_size).astype(np.int64), 0, self.ny - 1)
        return by, bx

    def bin_rect(self, flat: int):
        by, bx = divmod(int(flat), self.nx)
        x0, y0 = bx * self.bin_size, by * self.bin_size
        return x0, min(x0 + self.bin_size, self.width), y0, min(y0 + self.bin_size, self.height)


def make_bins(device: Device, bin_size: float = 2.0) -> BinGrid:
    nx = int(np.ceil(device.width / bin_size))
    ny = int(np.ceil(device.height / bin_size))
    wx = np.minimum(bin_size, device.width - np.arange(nx) * bin_size)
    wy = np.minimum(bin_size, device.height - np.arange(ny) * bin_size)
    area = np.outer(wy, wx)
    cap = {res: float(c) * area for res, c in device.capacity.items()}
    return BinGrid(float(bin_size), nx, ny, float(device.width), float(device.height), cap,
                   np.ones((ny, nx)))


def instance_classes(netlist: Netlist) -> np.ndarray:
    return netlist.resource_classes


def accumulate_demand(bins: BinGrid, netlist: Netlist, placement: Placement,
                      inst_demand: np.ndarray) -> dict[str, np.ndarray]:
    """Per-class bin demand of movable instances (fixed ones are pre-legalised)."""
    classes = instance_classes(netlist)
    movable = ~netlist.fixed_mask
    by, bx = bins.bin_of(placement.x, placement.y)
    flat = by * bins.nx + bx
    out = {}
    for res in sorted(set(classes[movable])):
        sel = movable & (classes == res)
        out[res] = np.bincount(flat[sel], weights=inst_demand[sel],
                               minlength=bins.nx * bins.ny).reshape(bins.ny, bins.nx)
    bins.demand = out
    return out


def detect_overflow(bins: BinGrid, tol: float = 1e-9) -> list[tuple[str, int, int]]:
    """(class, by, bx) for every bin whose demand exceeds effective capacity."""
    out = []
    for res in sorted(bins.demand):
        over = bins.demand[res] > bins.effective_capacity(res) + tol
        out += [(res, int(r), int(c)) for r, c in zip(*np.nonzero(over))]
    return out


def _grow_window(dem: np.ndarray, cap: np.ndarray, by: int, bx: int, tol: float):
    """Smallest window grown ring by ring around (by, bx) whose capacity holds its demand."""
    ny, nx = dem.shape
    r0, r1, c0, c1 = by, by + 1, bx, bx + 1
    while True:
        if dem[r0:r1, c0:c1].sum() <= cap[r0:r1, c0:c1].sum() + tol:
            return r0, r1, c0, c1
        if r0 == 0 and c0 == 0 and r1 == ny and c1 == nx:
            return r0, r1, c0, c1
        r0, r1 = max(r0 - 1, 0), min(r1 + 1, ny)
        c0, c1 = max(c0 - 1, 0), min(c1 + 1, nx)


def _bipartition(ids, coord_x, coord_y, demand, cap, r0, r1, c0, c1, out):
    """Recursively split ``ids`` over bin window [r0,r1) x [c0,c1) in
    proportion to capacity, preserving coordinate order along each cut."""
    if not len(ids):
        return
    if r1 - r0 == 1 and c1 - c0 == 1:
        out.append((ids, r0, c0))
        return
    if c1 - c0 >= r1 - r0:
        mid = (c0 + c1) // 2
        c_lo, c_hi = cap[r0:r1, c0:mid].sum(), cap[r0:r1, mid:c1].sum()
        key = coord_x[ids]
        halves = ((r0, r1, c0, mid), (r0, r1, mid, c1))
    else:
        mid = (r0 + r1) // 2
        c_lo, c_hi = cap[r0:mid, c0:c1].sum(), cap[mid:r1, c0:c1].sum()
        key = coord_y[ids]
        halves = ((r0, mid, c0, c1), (mid, r1, c0, c1))
    ids = ids[np.lexsort((ids, key))]
    cum = np.concatenate([[0.0], np.cumsum(demand[ids])])
    total = cum[-1]
    share = total * c_lo / (c_lo + c_hi) if c_lo + c_hi > 0 else total / 2
    # prefix length closest to the proportional share, keeping both halves within capacity
    ok = (cum <= c_lo + 1e-9) & (total - cum <= c_hi + 1e-9)
    cand = np.flatnonzero(ok)
    if len(cand):
        k = int(cand[np.argmin(np.abs(cum[cand] - share))])
    else:
        k = int(np.argmin(np.abs(cum - share)))
    _bipartition(ids[:k], coord_x, coord_y, demand, cap, *halves[0], out)
    _bipartition(ids[k:], coord_x, coord_y, demand, cap, *halves[1], out)


def _nearest_bin_moves(res, dem, cap, members_of, new, inst_demand, bins, cx, cy, moved, tol):
    """Move instances out of any still-overflowed bin into the nearest bin with room."""
    nb = len(dem)
    margin = 1e-6 * bins.bin_size
    over = np.flatnonzero(dem > cap + tol)
    over = over[np.lexsort((over, -(dem[over] - cap[over])))]
    for ob in over:
        members = list(members_of(ob))
        dist = np.abs(cx - cx[ob]) + np.abs(cy - cy[ob])
        ring = np.lexsort((np.arange(nb), dist))
        ptr = 1  # ring[0] is ob itself
        while dem[ob] > cap[ob] + tol:
            if not members:
                raise LegalizationError(f"{res} overflow in bin {ob} cannot be resolved")
            dmin = min(inst_demand[i] for i in members)
            while ptr < nb and cap[ring[ptr]] - dem[ring[ptr]] < dmin - tol:
                ptr += 1
            if ptr >= nb:
                raise LegalizationError(f"no {res} bin with spare capacity near bin {ob}")
            tgt = ring[ptr]
            spare = cap[tgt] - dem[tgt]
            fits = [i for i in members if inst_demand[i] <= spare + tol]
            d2 = [abs(new.x[i] - cx[tgt]) + abs(new.y[i] - cy[tgt]) for i in fits]
            i = fits[int(np.argmin(d2))]
            members.remove(i)
            x0, x1, y0, y1 = bins.bin_rect(tgt)
            new.x[i] = min(max(new.x[i], x0 + margin), x1 - margin)
            new.y[i] = min(max(new.y[i], y0 + margin), y1 - margin)
            dem[ob] -= inst_demand[i]
            dem[tgt] += inst_demand[i]
            moved[i] = True


def spread_instances(placement: Placement, netlist: Netlist, bins: BinGrid,
                     inst_demand: Optional[np.ndarray] = None, tol: float = 1e-9):
    """Resolve bin overflow; returns ``(new_placement, anchors, moved_mask)``.

    Each overflowed bin grows into the smallest surrounding window whose
    capacity holds its demand; the window's instances are then split
    recursively along alternating cuts in proportion to capacity, keeping
    their relative order.  Any overflow left by demand granularity is moved
    to the nearest bins with room.  Every moved instance gets an anchor
    pseudo-net at its new position.
    """
    n = netlist.num_instances
    if inst_demand is None:
        inst_demand = np.ones(n)
    inst_demand = np.asarray(inst_demand, dtype=float)
    accumulate_demand(bins, netlist, placement, inst_demand)
    new = placement.copy()
    moved = np.zeros(n, dtype=bool)
    classes = instance_classes(netlist)
    movable = ~netlist.fixed_mask
    nb = bins.nx * bins.ny
    cy, cx = np.divmod(np.arange(nb), bins.nx)
    cx = (cx + 0.5) * bins.bin_size
    cy = (cy + 0.5) * bins.bin_size
    margin = 1e-6 * bins.bin_size

    for res in sorted(bins.demand):
        cap2 = bins.effective_capacity(res)
        dem2 = bins.demand[res].copy()
        if dem2.sum() > cap2.sum() + tol:
            raise LegalizationError(
                f"{res} demand {dem2.sum():g} exceeds total supply {cap2.sum():g}; run validate")
        sel = np.flatnonzero(movable & (classes == res))
        by, bx = bins.bin_of(new.x[sel], new.y[sel])
        for _ in range(nb):
            over = np.argwhere(dem2 > cap2 + tol)
            if not len(over):
                break
            worst = np.argmax(dem2[over[:, 0], over[:, 1]] - cap2[over[:, 0], over[:, 1]])
            r0, r1, c0, c1 = _grow_window(dem2, cap2, *over[worst], tol)
            inside = (by >= r0) & (by < r1) & (bx >= c0) & (bx < c1)
            ids = sel[inside]
            leaves = []
            _bipartition(ids, new.x, new.y, inst_demand, cap2, r0, r1, c0, c1, leaves)
            for leaf, r, c in leaves:
                x0, x1, y0, y1 = bins.bin_rect(r * bins.nx + c)
                nx_ = np.clip(new.x[leaf], x0 + margin, x1 - margin)
                ny_ = np.clip(new.y[leaf], y0 + margin, y1 - margin)
                moved[leaf] |= (nx_ != new.x[leaf]) | (ny_ != new.y[leaf])
                new.x[leaf], new.y[leaf] = nx_, ny_
            by, bx = bins.bin_of(new.x[sel], new.y[sel])
            before = dem2.copy()
            dem2 = np.bincount(by * bins.nx + bx, weights=inst_demand[sel],
                               minlength=nb).reshape(bins.ny, bins.nx)
            if np.array_equal(before, dem2):
                break  # granularity leftovers; handled below
        dem = dem2.ravel().copy()
        cap = cap2.ravel()
        flat = by * bins.nx + bx
        def members_of(b, sel=sel, flat=flat):
            return sel[flat == b]

        _nearest_bin_moves(res, dem, cap, members_of, new, inst_demand, bins, cx, cy, moved, tol)
        bins.demand[res] = dem.reshape(bins.ny, bins.nx)

    anchors = [PseudoNet(int(i), float(new.x[i]), float(new.y[i])) for i in np.flatnonzero(moved)]
    return new, anchors, moved


def bin_utilization(bins: BinGrid) -> float:
    """Max demand / effective capacity over bins that have capacity."""
    worst = 0.0
    for res, dem in bins.demand.items():
        cap = bins.effective_capacity(res)
        has = cap > 0
        if has.any():
            worst = max(worst, float((dem[has] / cap[has]).max()))
        if (dem[~has] > 0).any():
            worst = float("inf")
    return worst


def clock_half_column_usage(netlist: Netlist, placement: Placement, device: Device,
                            bins: BinGrid):
    """Distinct clock nets per (clock region, bin column, region half) unit.

    Returns ``(unit_of_instance, usage_per_unit)``; instances without a clock get -1.
    """
    n = netlist.num_instances
    unit = np.full(n, -1, dtype=np.int64)
    clocked = np.array([i.clock_net is not None for i in netlist.instances], dtype=bool)
    if not clocked.any():
        return unit, {}
    idx = np.flatnonzero(clocked)
    x, y = placement.x[idx], placement.y[idx]
    reg = device.region_of(x, y)
    rects = np.asarray(device.regions)
    mid = (rects[reg, 1] + rects[reg, 3]) / 2.0
    half = (y >= mid).astype(np.int64)
    _, bx = bins.bin_of(x, y)
    unit[idx] = (reg * bins.nx + bx) * 2 + half
    clk = np.array([netlist.instances[i].clock_net for i in idx])
    usage: dict[int, int] = {}
    for u in np.unique(unit[idx]):
        usage[int(u)] = len(set(clk[unit[idx] == u].tolist()))
    return unit, usage


def congestion_scale(bins: BinGrid, grid: GCellGrid, strength: float = 0.1) -> np.ndarray:
    """f(c) = 1 / (1 + strength * c / median) from the g-cell under each bin center."""
    cy = (np.arange(bins.ny) + 0.5) * bins.bin_size
    cx = (np.arange(bins.nx) + 0.5) * bins.bin_size
    r = np.clip((cy / grid.cell_size).astype(np.int64), 0, grid.shape[0] - 1)
    c = np.clip((cx / grid.cell_size).astype(np.int64), 0, grid.shape[1] - 1)
    dens = grid.cells[np.ix_(r, c)]
    pos = grid.cells[grid.cells > 0]
    if not len(pos):
        return np.ones((bins.ny, bins.nx))
    med = float(np.median(pos))
    return 1.0 / (1.0 + strength * dens / med)


def adjust_resources(placement: Placement, netlist: Netlist, device: Device, bins: BinGrid,
                     grid: Optional[GCellGrid], kappa: float = 1.5, clock_limit: float = 0.8,
                     congestion_strength: float = 0.1, use_congestion: bool = True,
                     inst_demand: Optional[np.ndarray] = None) -> np.ndarray:
    """Update per-instance demand (clock rule) and bin supply scaling (congestion).

    FFs in a clock half-column whose distinct clock count exceeds
    ``clock_limit * clock_capacity`` get demand ``kappa``.  Bin supply for
    LUT/FF is scaled by the congestion factor, backed off toward 1 if the
    scaled supply could no longer hold the demand.
    """
    n = netlist.num_instances
    demand = np.ones(n) if inst_demand is None else np.asarray(inst_demand, float).copy()
    is_ff = netlist.kinds == int(InstanceKind.FF)
    demand[is_ff] = 1.0
    unit, usage = clock_half_column_usage(netlist, placement, device, bins)
    limit = clock_limit * device.clock_capacity
    hot = [u for u, cnt in usage.items() if cnt > limit]
    if hot:
        demand[is_ff & np.isin(unit, hot)] = kappa

    bins.scale = np.ones((bins.ny, bins.nx))
    if use_congestion and grid is not None:
        f = congestion_scale(bins, grid, congestion_strength)
        accumulate_demand(bins, netlist, placement, demand)

        classes = instance_classes(netlist)
        movable = ~netlist.fixed_mask
        unit_d = {res: float(demand[movable & (classes == res)].max(initial=1.0))
                  for res in CONGESTION_SCALED}

        def feasible(t):
            s = 1.0 - t * (1.0 - f)
            for res in CONGESTION_SCALED:
                if res not in bins.demand or res not in bins.capacity:
                    continue
                usable = np.floor(bins.capacity[res] * s / unit_d[res] + 1e-9) * unit_d[res]
                if usable.sum() < bins.demand[res].sum():
                    return False
            return True

        t = 1.0
        if not feasible(1.0):
            lo, hi = 0.0, 1.0
            for _ in range(30):
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
            t = lo
        bins.scale = 1.0 - t * (1.0 - f)
    return demand
