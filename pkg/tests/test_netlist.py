import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdplace.netlist import (Device, NetlistError, Placement, device_from_dict, net_hpwl,
                             parse_device, parse_netlist, placement_from_dict,
                             placement_to_dict, serialize_netlist, validate)

from conftest import make_netlist


def test_parse_minimal_two_instance_net():
    text = json.dumps({"instances": [{"name": "a", "kind": "LUT"}, {"name": "b", "kind": "FF"}],
                       "nets": [{"name": "n", "driver": {"inst": "a"}, "loads": [{"inst": "b"}]}]})
    nl = parse_netlist(text)
    assert nl.num_instances == 2 and nl.num_nets == 1
    net = nl.nets[0]
    assert net.pin_count == 2
    assert nl.pins[net.driver].is_driver and not nl.pins[net.loads[0]].is_driver


def test_multiple_drivers_rejected():
    text = json.dumps({"instances": [{"name": "a", "kind": "LUT"}, {"name": "b", "kind": "LUT"}],
                       "nets": [{"name": "n", "driver": [{"inst": "a"}, {"inst": "b"}],
                                 "loads": []}]})
    with pytest.raises(NetlistError, match="multiple drivers"):
        parse_netlist(text)


@pytest.mark.parametrize("bad", [
    "{not json",
    json.dumps({"instances": [{"name": "a", "kind": "LUT"}],
                "nets": [{"name": "n", "driver": {"inst": "zz"}, "loads": []}]}),
    json.dumps({"instances": [{"name": "a", "kind": "LUT"}],
                "nets": [{"name": "n", "loads": [{"inst": "a"}]}]}),
    json.dumps({"instances": [{"name": "a", "kind": "WIDGET"}], "nets": []}),
])
def test_malformed_netlists_rejected(bad):
    with pytest.raises(NetlistError):
        parse_netlist(bad)


def test_synthetic_design_round_trips_byte_identically(design500):
    from tdplace.synth import synth_design
    nl, _, _ = synth_design(500, seed=7)
    text = serialize_netlist(nl)
    assert serialize_netlist(parse_netlist(text)) == text


def test_device_2x2_regions():
    dev = parse_device(json.dumps({"width": 100, "height": 100,
                                   "clock_regions": {"rows": 2, "cols": 2}}))
    assert dev.num_regions == 4
    assert all((x1 - x0, y1 - y0) == (50, 50) for x0, y0, x1, y1 in dev.regions)


def test_overlapping_regions_rejected():
    with pytest.raises(NetlistError, match="overlap"):
        device_from_dict({"width": 10, "height": 10,
                          "clock_regions": {"rects": [[0, 0, 6, 10], [5, 0, 10, 10]]}})


@pytest.mark.parametrize("data", [{"width": 0, "height": 5}, {"height": 5},
                                  {"width": 10, "height": 10,
                                   "clock_regions": {"rects": [[0, 0, 5, 10]]}}])
def test_bad_devices_rejected(data):
    with pytest.raises(NetlistError):
        device_from_dict(data)


def test_bundled_small_device():
    dev = parse_device(resources.files("tdplace").joinpath("data/device_small.json").read_text())
    assert (dev.width, dev.height) == (64, 64)
    assert dev.num_regions == 8
    assert dev.capacity == {"LUT": 8, "FF": 8}


def test_hpwl_examples():
    nl = make_netlist([("a", "LUT"), ("b", "LUT"), ("c", "LUT")],
                      [("n", "a", ["b"]), ("solo", "c", [])])
    pl = Placement([0.0, 3.0, 1.0], [0.0, 4.0, 1.0])
    assert net_hpwl(nl, 0, pl) == 7.0
    assert net_hpwl(nl, 1, pl) == 0.0


def test_hpwl_matches_scan_on_random_net():
    rng = np.random.default_rng(3)
    nl = make_netlist([(f"i{k}", "LUT") for k in range(5)], [("n", "i0", [f"i{k}" for k in range(1, 5)])])
    x, y = rng.uniform(0, 50, 5), rng.uniform(0, 50, 5)
    xs, ys = list(x), list(y)
    expect = (max(xs) - min(xs)) + (max(ys) - min(ys))
    assert net_hpwl(nl, 0, Placement(x, y)) == pytest.approx(expect, abs=1e-12)


def test_hpwl_uses_pin_offsets():
    nl = parse_netlist(json.dumps({
        "instances": [{"name": "a", "kind": "LUT"}, {"name": "b", "kind": "LUT"}],
        "nets": [{"name": "n", "driver": {"inst": "a", "offset": [0.5, 0]},
                  "loads": [{"inst": "b"}]}]}))
    assert net_hpwl(nl, 0, Placement([0.0, 2.0], [0.0, 0.0])) == 1.5


def test_validate_reports_capacity_and_cycle():
    nl = make_netlist([("a", "LUT"), ("b", "LUT"), ("c", "LUT")],
                      [("n0", "a", ["b"]), ("n1", "b", ["c"]), ("n2", "c", ["a"])])
    dev = Device(width=1, height=1, capacity={"LUT": 2})
    problems = validate(nl, dev)
    assert "combinational cycle" in problems
    assert any(p.startswith("insufficient LUT capacity") for p in problems)


def test_validate_accepts_registered_loop_and_flags_unplaced_fixed():
    nl = make_netlist([("a", "LUT"), ("f", "FF"), ("io", "IO", True, None, None)],
                      [("n0", "a", ["f"]), ("n1", "f", ["a"]), ("n2", "io", ["a"])])
    dev = Device(width=4, height=4, capacity={"LUT": 1, "FF": 1, "IO": 1})
    assert validate(nl, dev) == ["fixed instance io is unplaced"]


def test_valid_synthetic_design_has_empty_report(design500):
    nl, _, dev = design500
    assert validate(nl, dev) == []


def test_placement_round_trip_and_missing_instance(design500):
    nl, _, dev = design500
    pl = nl.initial_placement(dev)
    back = placement_from_dict(nl, placement_to_dict(nl, pl))
    np.testing.assert_array_equal(back.x, pl.x)
    data = placement_to_dict(nl, pl)
    movable = [k for k, i in enumerate(nl.instances) if not i.fixed][0]
    del data["placements"][movable]
    with pytest.raises(NetlistError, match="lacks"):
        placement_from_dict(nl, data)


coords = st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=12)


def _net_of(points):
    k = len(points)
    nl = make_netlist([(f"i{j}", "LUT") for j in range(k)],
                      [("n", "i0", [f"i{j}" for j in range(1, k)])])
    pts = np.asarray(points, dtype=float)
    return nl, Placement(pts[:, 0], pts[:, 1])


@given(coords, st.floats(-1e3, 1e3))
def test_hpwl_translation_invariant(points, c):
    nl, pl = _net_of(points)
    shifted = Placement(pl.x + c, pl.y + c)
    assert net_hpwl(nl, 0, shifted) == pytest.approx(net_hpwl(nl, 0, pl), rel=1e-9, abs=1e-6)


@given(coords)
def test_hpwl_nonnegative_zero_iff_coincident(points):
    nl, pl = _net_of(points)
    h = net_hpwl(nl, 0, pl)
    assert h >= 0
    coincident = len(set(map(tuple, np.column_stack([pl.x, pl.y]).tolist()))) == 1
    assert (h == 0) == coincident


@settings(max_examples=25, deadline=None)
@given(st.integers(10, 120), st.integers(0, 10_000))
def test_parse_serialize_round_trip(cells, seed):
    from tdplace.synth import synth_design
    nl, _, _ = synth_design(cells, seed)
    text = serialize_netlist(nl)
    again = parse_netlist(text)
    assert serialize_netlist(again) == text
    assert [i.kind for i in again.instances] == [i.kind for i in nl.instances]
