"""G-cell routing density and pin density estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netlist import Device, Netlist, Placement, all_net_bboxes


def pin_count_weight(p, step: float = 0.2):
    """NW(m): 1 for nets up to 3 pins, growing linearly beyond."""
    return 1.0 + step * np.maximum(0, np.asarray(p) - 3)


@dataclass
class GCellGrid:
    cell_size: float
    cells: np.ndarray  # [row (y), col (x)]

    @property
    def shape(self):
        return self.cells.shape

    def cell_range(self, lo, hi, axis: int):
        """Inclusive g-cell index range covered by [lo, hi] along x (axis=1) or y (axis=0)."""
        n = self.cells.shape[axis]
        a = np.clip(np.floor(np.asarray(lo) / self.cell_size).astype(np.int64), 0, n - 1)
        b = np.clip(np.floor(np.asarray(hi) / self.cell_size).astype(np.int64), 0, n - 1)
        return a, b

    def box_cells(self, x0, x1, y0, y1):
        c0, c1 = self.cell_range(x0, x1, 1)
        r0, r1 = self.cell_range(y0, y1, 0)
        return r0, r1, c0, c1

    def integral(self) -> np.ndarray:
        s = np.zeros((self.cells.shape[0] + 1, self.cells.shape[1] + 1))
        s[1:, 1:] = self.cells.cumsum(0).cumsum(1)
        return s

    def to_csv(self) -> str:
        return "\n".join(",".join(f"{v:.6g}" for v in row) for row in self.cells) + "\n"


def empty_grid(device: Device, cell_size: float) -> GCellGrid:
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    rows = int(np.ceil(device.height / cell_size))
    cols = int(np.ceil(device.width / cell_size))
    return GCellGrid(float(cell_size), np.zeros((rows, cols)))


def compute_routing_density(netlist: Netlist, placement: Placement, device: Device,
                            cell_size: float = 4.0, nw_step: float = 0.2) -> GCellGrid:
    """Spread NW(m)*HPWL(m)/A_m of every signal net over the g-cells its bounding box touches."""
    grid = empty_grid(device, cell_size)
    nets = np.array(netlist.timing_nets, dtype=np.int64)
    if len(nets) == 0:
        return grid
    x0, x1, y0, y1 = (a[nets] for a in all_net_bboxes(netlist, placement))
    r0, r1, c0, c1 = grid.box_cells(x0, x1, y0, y1)
    area = (r1 - r0 + 1) * (c1 - c0 + 1)
    pcount = netlist.net_ptr[nets + 1] - netlist.net_ptr[nets]
    val = pin_count_weight(pcount, nw_step) * ((x1 - x0) + (y1 - y0)) / area

    rows, cols = grid.shape
    diff = np.zeros((rows + 1, cols + 1))
    np.add.at(diff, (r0, c0), val)
    np.add.at(diff, (r0, c1 + 1), -val)
    np.add.at(diff, (r1 + 1, c0), -val)
    np.add.at(diff, (r1 + 1, c1 + 1), val)
    dens = diff.cumsum(0).cumsum(1)[:rows, :cols]
    # cancellation leaves ~1e-16 residue in untouched cells
    scale = max(1.0, float(np.abs(val).max()))
    dens[np.abs(dens) < 1e-12 * scale] = 0.0
    grid.cells = np.maximum(dens, 0.0)
    return grid


def net_avg_routing_density(netlist: Netlist, net: int, placement: Placement,
                            grid: GCellGrid) -> float:
    idx = np.asarray(netlist.nets[net].pins)
    px, py = netlist.pin_positions(placement)
    r0, r1, c0, c1 = grid.box_cells(px[idx].min(), px[idx].max(), py[idx].min(), py[idx].max())
    return float(grid.cells[r0:r1 + 1, c0:c1 + 1].mean())


def box_mean_density(grid: GCellGrid, x0, x1, y0, y1, integral=None) -> np.ndarray:
    """Vectorised mean g-cell density over many bounding boxes."""
    s = grid.integral() if integral is None else integral
    r0, r1, c0, c1 = grid.box_cells(x0, x1, y0, y1)
    tot = s[r1 + 1, c1 + 1] - s[r0, c1 + 1] - s[r1 + 1, c0] + s[r0, c0]
    return tot / ((r1 - r0 + 1) * (c1 - c0 + 1))


class PointCounter:
    """Exact closed-rectangle point counting for batches of queries.

    Points are sorted by x; a Fenwick tree over that order keeps, per node,
    the sorted y-ranks of its block, so a prefix count is one searchsorted
    per set bit of the prefix length.
    """

    def __init__(self, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        n = self.n = len(xs)
        order = np.argsort(xs, kind="stable")
        self.sx = xs[order]
        self.sy = np.sort(ys)
        yr = np.empty(n, dtype=np.int64)
        yr[np.argsort(ys[order], kind="stable")] = np.arange(n)
        self.levels = []
        k = 0
        while (1 << k) <= n:
            size = 1 << k
            starts = np.arange(0, n - size + 1, 2 * size)
            block = np.sort(yr[starts[:, None] + np.arange(size)], axis=1)
            keys = (np.arange(len(starts))[:, None] * (n + 1) + block).ravel()
            self.levels.append(keys)
            k += 1

    def _prefix(self, kx: np.ndarray, ty: np.ndarray) -> np.ndarray:
        """#points among the first kx (x-sorted) whose y-rank is below ty."""
        out = np.zeros(len(kx), dtype=np.int64)
        n1 = self.n + 1
        for k, keys in enumerate(self.levels):
            sel = ((kx >> k) & 1).astype(bool)
            if not sel.any():
                continue
            m = kx[sel] >> (k + 1)
            out[sel] += np.searchsorted(keys, m * n1 + ty[sel], side="left") - m * (1 << k)
        return out

    def count(self, x0, x1, y0, y1) -> np.ndarray:
        """Points with x0 <= x <= x1 and y0 <= y <= y1 (arguments broadcast)."""
        x0, x1, y0, y1 = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, float))
                                               for a in (x0, x1, y0, y1)))
        if self.n == 0:
            return np.zeros(x0.shape, dtype=np.int64)
        kx_hi = np.searchsorted(self.sx, x1.ravel(), side="right")
        kx_lo = np.searchsorted(self.sx, x0.ravel(), side="left")
        ty_hi = np.searchsorted(self.sy, y1.ravel(), side="right")
        ty_lo = np.searchsorted(self.sy, y0.ravel(), side="left")
        c = (self._prefix(kx_hi, ty_hi) - self._prefix(kx_lo, ty_hi)
             - self._prefix(kx_hi, ty_lo) + self._prefix(kx_lo, ty_lo))
        return c.reshape(x0.shape)


def pin_counter(netlist: Netlist, placement: Placement) -> PointCounter:
    px, py = netlist.pin_positions(placement)
    return PointCounter(px, py)


def pair_pin_density(counter: PointCounter, ax, ay, bx, by, cell_size: float) -> np.ndarray:
    """Pins inside the closed rectangle spanned by two points, per g-cell of its area."""
    ax, ay, bx, by = (np.asarray(v, float) for v in (ax, ay, bx, by))
    cnt = counter.count(np.minimum(ax, bx), np.maximum(ax, bx), np.minimum(ay, by), np.maximum(ay, by))
    area = np.abs(ax - bx) * np.abs(ay - by) / (cell_size * cell_size)
    return cnt / np.maximum(area, 1.0)


def avg_pin_density(netlist: Netlist, driver_pin: int, load_pin: int, placement: Placement,
                    cell_size: float = 4.0, counter: PointCounter | None = None) -> float:
    if counter is None:
        counter = pin_counter(netlist, placement)
    px, py = netlist.pin_positions(placement)
    return float(pair_pin_density(counter, px[driver_pin], py[driver_pin],
                                  px[load_pin], py[load_pin], cell_size)[0])
