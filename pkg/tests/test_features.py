import numpy as np
import pytest

from tdplace.congestion import compute_routing_density
from tdplace.features import (DRIVER_SELF, DRIVER_TO_LOAD, LOAD_SELF, LOAD_TO_DRIVER,
                              N_VERTEX_FEATURES, FeatureExtractor, FeatureSet, build_net_graph)
from tdplace.netlist import InstanceKind, Placement, all_net_hpwl

from conftest import make_netlist, random_placement


def _fan_net(k):
    names = [f"i{j}" for j in range(k + 1)]
    return make_netlist([(n, "LUT") for n in names], [("n", names[0], names[1:])])


def test_two_pin_graph():
    nl = _fan_net(1)
    g = build_net_graph(nl, 0, Placement([0.0, 1.0], [0.0, 0.0]))
    assert g.num_vertices == 2
    assert sorted(g.edges) == sorted([(0, 1, DRIVER_TO_LOAD), (1, 0, LOAD_TO_DRIVER),
                                      (0, 0, DRIVER_SELF), (1, 1, LOAD_SELF)])


def test_fanout3_edge_count():
    nl = _fan_net(3)
    g = build_net_graph(nl, 0, Placement(np.zeros(4), np.zeros(4)))
    assert g.num_vertices == 4 and len(g.edges) == 3 + 3 + 4


def test_fanout10_adjacency_matches_independent_constructor():
    nl = _fan_net(10)
    rng = np.random.default_rng(0)
    g = build_net_graph(nl, 0, Placement(rng.uniform(0, 9, 11), rng.uniform(0, 9, 11)))
    expect = {(0, k, 0) for k in range(1, 11)} | {(k, 0, 1) for k in range(1, 11)}
    expect |= {(0, 0, 2)} | {(k, k, 3) for k in range(1, 11)}
    assert set(g.edges) == expect
    # every vertex has exactly one self-loop
    assert sorted(s for s, d, _ in g.edges if s == d) == list(range(11))


def test_vertex_features():
    nl = make_netlist([("d", "DSP"), ("l", "LUT")], [("n", "d", ["l"])])
    g = build_net_graph(nl, 0, Placement([2.0, 5.0], [3.0, 7.0]))
    assert g.vertices.shape == (2, N_VERTEX_FEATURES)
    np.testing.assert_array_equal(g.vertices[:, :2], [[2, 3], [5, 7]])
    assert g.vertices[0, 2 + InstanceKind.DSP] == 1 and g.vertices[1, 2 + InstanceKind.LUT] == 1
    assert (g.vertices[:, 2:12].sum(axis=1) == 1).all()
    assert list(g.vertices[:, -1]) == [0.0, 1.0]


def test_unplaced_instance_rejected():
    nl = _fan_net(1)
    with pytest.raises(ValueError, match="unplaced"):
        build_net_graph(nl, 0, Placement([0.0, np.nan], [0.0, 0.0]))


def test_extractor_matches_per_net_graphs_and_invariants(design500):
    nl, _, dev = design500
    pl = random_placement(nl, dev, seed=1)
    grid = compute_routing_density(nl, pl, dev, 4.0)
    fs = FeatureExtractor(nl, pl, grid).extract()
    assert fs.n_nets == len(nl.timing_nets)
    for k in (0, 5, fs.n_nets - 1):
        g = build_net_graph(nl, int(fs.net_ids[k]), pl)
        ref = fs.graph(k)
        np.testing.assert_array_equal(ref.vertices, g.vertices)
        assert sorted(ref.edges) == sorted(g.edges)
    env = fs.env
    np.testing.assert_allclose(env[:, 1] + env[:, 2], env[:, 0])
    np.testing.assert_allclose(env[:, 0], all_net_hpwl(nl, pl)[fs.net_ids])
    np.testing.assert_array_equal(env[:, 3], np.diff(fs.pair_ptr))
    flags = fs.pin_feat[:, 3:6]
    assert set(np.unique(flags)) <= {0.0, 1.0}
    idx = fs.pin_feat[:, 2]
    assert (idx >= 0).all() and (idx < env[fs.pair_net, 3]).all()


def test_crossing_flag_counts_third_party_instances():
    nl = make_netlist([("a", "LUT"), ("b", "LUT"), ("m", "RAMB"), ("q", "DSP")],
                      [("n", "a", ["b"]), ("o", "q", ["a"])])
    pl = Placement([0.0, 10.0, 5.0, 20.0], [0.0, 10.0, 5.0, 20.0])
    from tdplace.netlist import Device
    grid = compute_routing_density(nl, pl, Device(width=32, height=32), 4.0)
    fs = FeatureExtractor(nl, pl, grid).extract()
    first = fs.pin_feat[fs.pair_ptr[0]]
    assert tuple(first[3:6]) == (0.0, 0.0, 1.0)  # RAMB inside the a-b box
    second = fs.pin_feat[fs.pair_ptr[1]]
    assert second[4] == 0.0  # the driver's own DSP does not count as crossing


def test_select_and_concat_round_trip(design500):
    nl, _, dev = design500
    pl = random_placement(nl, dev, seed=4)
    fs = FeatureExtractor(nl, pl, compute_routing_density(nl, pl, dev)).extract()
    fs.labels = np.arange(fs.n_pairs, dtype=float)
    a = fs.select(np.arange(0, fs.n_nets, 2))
    b = fs.select(np.arange(1, fs.n_nets, 2))
    both = FeatureSet.concat([a, b])
    assert both.n_pairs == fs.n_pairs and both.n_nets == fs.n_nets
    k = 3
    np.testing.assert_array_equal(both.graph(k).vertices, fs.graph(2 * k).vertices)
    np.testing.assert_array_equal(np.sort(both.labels), fs.labels)
