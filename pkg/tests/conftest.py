import numpy as np
import pytest

from tdplace.netlist import Device, netlist_from_dict
from tdplace.synth import synth_design


def make_netlist(instances, nets, name="t"):
    """Compact builder: instances as (name, kind[, fixed, x, y]) tuples,
    nets as (name, driver, [loads]) tuples."""
    insts = []
    for rec in instances:
        d = {"name": rec[0], "kind": rec[1]}
        if len(rec) > 2:
            d.update(fixed=rec[2], x=rec[3], y=rec[4])
        insts.append(d)
    return netlist_from_dict({
        "instances": insts,
        "nets": [{"name": n, "driver": {"inst": d}, "loads": [{"inst": l} for l in loads]}
                 for n, d, loads in nets]}, name)


@pytest.fixture(scope="session")
def design500():
    return synth_design(500, seed=7)


@pytest.fixture(scope="session")
def design2000():
    return synth_design(2000, seed=11)


@pytest.fixture
def open_device():
    return Device(width=32, height=32, clock_rows=2, clock_cols=2,
                  capacity={"LUT": 1.0, "FF": 1.0, "DSP": 0.25, "RAMB": 0.25, "IO": 1.0,
                            "ClockBuffer": 1.0})


def random_placement(netlist, device, seed=0):
    from tdplace.netlist import Placement
    rng = np.random.default_rng(seed)
    pl = netlist.initial_placement(device)
    mov = ~netlist.fixed_mask
    x, y = pl.x.copy(), pl.y.copy()
    x[mov] = rng.uniform(0, device.width - 1e-6, mov.sum())
    y[mov] = rng.uniform(0, device.height - 1e-6, mov.sum())
    return Placement(x, y)
