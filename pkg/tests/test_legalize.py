import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tdplace.congestion import GCellGrid, compute_routing_density
from tdplace.legalize import (CONGESTION_SCALED, LegalizationError, PseudoNet, accumulate_demand,
                              adjust_resources, bin_utilization, clock_half_column_usage,
                              congestion_scale, detect_overflow, make_bins, spread_instances)
from tdplace.netlist import Device, Placement, netlist_from_dict

from conftest import make_netlist, random_placement


def _luts(k):
    return make_netlist([(f"l{i}", "LUT") for i in range(k)], [])


def test_capacity_boundary():
    dev = Device(width=2, height=2, capacity={"LUT": 2.0})
    bins = make_bins(dev, 2.0)
    assert bins.capacity["LUT"][0, 0] == 8
    for k, over in ((8, False), (9, True)):
        nl = _luts(k)
        accumulate_demand(bins, nl, Placement(np.full(k, 0.5), np.full(k, 0.5)), np.ones(k))
        assert bool(detect_overflow(bins)) is over


def test_overflow_moves_into_empty_neighbour():
    dev = Device(width=4, height=2, capacity={"LUT": 1.0})
    bins = make_bins(dev, 2.0)
    nl = _luts(6)
    pl = Placement(np.linspace(0.2, 1.8, 6), np.full(6, 1.0))
    new, anchors, moved = spread_instances(pl, nl, bins)
    dem = bins.demand["LUT"]
    assert (dem <= 4).all() and dem.sum() == 6
    assert moved.sum() == len(anchors) >= 2
    for a in anchors:
        assert (a.x, a.y) == (new.x[a.inst], new.y[a.inst])
    # the instances that stay are the ones nearest the left edge
    assert not moved[:2].any()


def test_no_overflow_is_a_fixpoint():
    dev = Device(width=8, height=8, capacity={"LUT": 1.0})
    bins = make_bins(dev, 2.0)
    nl = _luts(10)
    rng = np.random.default_rng(0)
    pl = Placement(rng.uniform(0, 8, 10), rng.uniform(0, 8, 10))
    new, anchors, moved = spread_instances(pl, nl, bins)
    assert anchors == [] and not moved.any()
    np.testing.assert_array_equal(new.x, pl.x)
    np.testing.assert_array_equal(new.y, pl.y)


def test_unfixable_demand_raises():
    dev = Device(width=2, height=2, capacity={"LUT": 1.0})
    with pytest.raises(LegalizationError, match="validate"):
        spread_instances(Placement(np.ones(5), np.ones(5)), _luts(5), make_bins(dev, 2.0))


def _scan_demand(nl, pl, bins, demand):
    """Per-instance loop: {(class, by, bx): demand}."""
    out = {}
    classes = nl.resource_classes
    for i in range(nl.num_instances):
        if nl.fixed_mask[i]:
            continue
        bx = min(max(int(np.floor(pl.x[i] / bins.bin_size)), 0), bins.nx - 1)
        by = min(max(int(np.floor(pl.y[i] / bins.bin_size)), 0), bins.ny - 1)
        key = (classes[i], by, bx)
        out[key] = out.get(key, 0.0) + demand[i]
    return out


def test_overflow_list_matches_scan(design2000):
    nl, _, dev = design2000
    pl = random_placement(nl, dev, seed=2)
    # crowd the lower-left quarter so many bins overflow
    pl.x[~nl.fixed_mask] *= 0.5
    pl.y[~nl.fixed_mask] *= 0.5
    bins = make_bins(dev, 4.0)
    demand = np.ones(nl.num_instances)
    accumulate_demand(bins, nl, pl, demand)
    scan = _scan_demand(nl, pl, bins, demand)
    expect = sorted((res, by, bx) for (res, by, bx), d in scan.items()
                    if d > bins.effective_capacity(res)[by, bx] + 1e-9)
    assert sorted(detect_overflow(bins)) == expect and expect


def test_spreading_conserves_demand_and_clears_overflow(design2000):
    nl, _, dev = design2000
    pl = random_placement(nl, dev, seed=3)
    pl.x[~nl.fixed_mask] = 0.3 * pl.x[~nl.fixed_mask] + 5
    pl.y[~nl.fixed_mask] = 0.3 * pl.y[~nl.fixed_mask] + 5
    bins = make_bins(dev, 4.0)
    demand = np.ones(nl.num_instances)
    before = accumulate_demand(bins, nl, pl, demand)
    totals = {res: d.sum() for res, d in before.items()}
    new, anchors, moved = spread_instances(pl, nl, bins, demand)
    assert bin_utilization(bins) <= 1.0 + 1e-9
    after = accumulate_demand(bins, nl, new, demand)
    assert {res: d.sum() for res, d in after.items()} == totals
    assert not detect_overflow(bins)
    np.testing.assert_array_equal(new.x[nl.fixed_mask], pl.x[nl.fixed_mask])
    # idempotence
    again, anchors2, moved2 = spread_instances(new, nl, bins, demand)
    assert not moved2.any() and anchors2 == []
    np.testing.assert_array_equal(again.x, new.x)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(5, 60))
def test_spreading_properties_on_random_clusters(seed, n):
    rng = np.random.default_rng(seed)
    dev = Device(width=12, height=12, capacity={"LUT": 1.0, "FF": 1.0})
    nl = make_netlist([(f"i{k}", "LUT" if k % 3 else "FF") for k in range(n)], [])
    c = rng.uniform(0, 12, 2)
    pl = Placement(np.clip(c[0] + rng.normal(0, 1.5, n), 0, 11.99),
                   np.clip(c[1] + rng.normal(0, 1.5, n), 0, 11.99))
    bins = make_bins(dev, 2.0)
    new, _, _ = spread_instances(pl, nl, bins)
    assert not detect_overflow(bins)
    assert (new.x >= 0).all() and (new.x < 12).all() and (new.y >= 0).all() and (new.y < 12).all()
    _, _, moved = spread_instances(new, nl, bins)
    assert not moved.any()


def test_pseudo_net_weight_must_be_positive():
    with pytest.raises(ValueError):
        PseudoNet(0, 1.0, 1.0, 0.0)


# -- clock rule -------------------------------------------------------------

def _clocked_ffs(n_clocks):
    insts = [{"name": f"b{k}", "kind": "ClockBuffer", "fixed": True, "x": 7.5, "y": 7.5}
             for k in range(n_clocks)]
    insts += [{"name": f"f{k}", "kind": "FF", "clock": f"clk{k}"} for k in range(n_clocks)]
    nets = [{"name": f"clk{k}", "driver": {"inst": f"b{k}"}, "loads": [{"inst": f"f{k}"}]}
            for k in range(n_clocks)]
    return netlist_from_dict({"instances": insts, "nets": nets})


@pytest.mark.parametrize("n_clocks, inflated", [(19, False), (20, True)])
def test_clock_half_column_rule(n_clocks, inflated):
    dev = Device(width=8, height=8, capacity={"FF": 8.0, "ClockBuffer": 1.0}, clock_capacity=24)
    nl = _clocked_ffs(n_clocks)
    pl = nl.initial_placement(dev)
    ff = np.flatnonzero(nl.kinds == 1)
    pl.x[ff], pl.y[ff] = 0.5, 0.5
    bins = make_bins(dev, 2.0)
    unit, usage = clock_half_column_usage(nl, pl, dev, bins)
    assert usage[int(unit[ff[0]])] == n_clocks
    demand = adjust_resources(pl, nl, dev, bins, None, kappa=1.5)
    np.testing.assert_array_equal(demand[ff], 1.5 if inflated else 1.0)
    assert (demand[nl.kinds != 1] == 1.0).all()


def test_clock_units_split_by_half_and_column():
    dev = Device(width=8, height=8, capacity={"FF": 8.0, "ClockBuffer": 1.0})
    nl = _clocked_ffs(4)
    pl = nl.initial_placement(dev)
    ff = np.flatnonzero(nl.kinds == 1)
    pl.x[ff] = [0.5, 0.5, 3.0, 0.5]
    pl.y[ff] = [0.5, 1.0, 0.5, 6.0]
    bins = make_bins(dev, 2.0)
    unit, usage = clock_half_column_usage(nl, pl, dev, bins)
    assert unit[ff[0]] == unit[ff[1]] != unit[ff[2]]
    assert unit[ff[3]] not in (unit[ff[0]], unit[ff[2]])
    assert usage[int(unit[ff[0]])] == 2


# -- congestion-aware supply ------------------------------------------------

def test_congestion_scale_formula_pointwise():
    dev = Device(width=8, height=8, capacity={"LUT": 1.0})
    bins = make_bins(dev, 2.0)
    cells = np.array([[1.0, 2.0], [3.0, 4.0]])
    grid = GCellGrid(4.0, cells)
    f = congestion_scale(bins, grid, 0.1)
    med = np.median(cells)
    for by in range(4):
        for bx in range(4):
            c = cells[by // 2, bx // 2]
            assert f[by, bx] == pytest.approx(1.0 / (1.0 + 0.1 * c / med))
    # a bin at twice the median density loses a sixth of its supply
    grid2 = GCellGrid(4.0, np.array([[2.0, 4.0], [2.0, 2.0]]))
    f2 = congestion_scale(bins, grid2, 0.1)
    assert f2[0, 2] == pytest.approx(1 / 1.2)


@settings(max_examples=40, deadline=None)
@given(arrays(float, (3, 3), elements=st.floats(0, 1e4)), st.floats(0, 5))
def test_scaled_capacity_never_negative(cells, strength):
    dev = Device(width=12, height=12, capacity={"LUT": 1.0, "FF": 2.0})
    bins = make_bins(dev, 2.0)
    f = congestion_scale(bins, GCellGrid(4.0, cells), strength)
    assert ((f > 0) & (f <= 1)).all()
    bins.scale = f
    for res in CONGESTION_SCALED:
        assert (bins.effective_capacity(res) >= 0).all()


def test_adjusted_supply_stays_feasible(design2000):
    nl, _, dev = design2000
    pl = random_placement(nl, dev, seed=8)
    bins = make_bins(dev, 4.0)
    grid = compute_routing_density(nl, pl, dev, 4.0)
    demand = adjust_resources(pl, nl, dev, bins, grid, congestion_strength=5.0)
    assert (bins.scale > 0).all() and (bins.scale <= 1).all()
    accumulate_demand(bins, nl, pl, demand)
    for res in CONGESTION_SCALED:
        if res in bins.demand:
            assert bins.effective_capacity(res).sum() >= bins.demand[res].sum()
    spread_instances(pl, nl, bins, demand)
    assert bin_utilization(bins) <= 1.0 + 1e-9
