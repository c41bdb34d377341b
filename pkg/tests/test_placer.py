import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from tdplace.legalize import PseudoNet
from tdplace.netlist import Device, Placement, net_hpwl, total_hpwl
from tdplace.placer import (PlacerConfig, arc_weight_formula, assemble_quadratic_system,
                            b2b_coefficients, clock_region_pseudo_nets,
                            estimate_timing_threshold, global_place, pcg, solve_quadratic,
                            timing_arc_weight)
from tdplace.synth import synth_design

from conftest import make_netlist, random_placement


# -- B2B --------------------------------------------------------------------

def _b2b_quadratic(nl, net, pl, eps=1e-4):
    px, py = nl.pin_positions(pl)
    qx = qy = 0.0
    for i, j, wx, wy in b2b_coefficients(nl, net, pl, eps):
        qx += wx * (px[i] - px[j]) ** 2
        qy += wy * (py[i] - py[j]) ** 2
    return qx, qy


def test_two_pin_b2b():
    nl = make_netlist([("a", "LUT"), ("b", "LUT")], [("n", "a", ["b"])])
    pl = Placement([0.0, 5.0], [1.0, 1.0])
    pairs = b2b_coefficients(nl, 0, pl)
    assert len(pairs) == 1
    assert _b2b_quadratic(nl, 0, pl)[0] == pytest.approx(5.0)


def test_coincident_pins_clamped():
    nl = make_netlist([("a", "LUT"), ("b", "LUT"), ("c", "LUT")], [("n", "a", ["b", "c"])])
    pl = Placement([2.0, 2.0, 2.0], [3.0, 3.0, 3.0])
    pairs = b2b_coefficients(nl, 0, pl, eps=1e-4)
    assert all(np.isfinite([wx, wy]).all() for _, _, wx, wy in pairs)
    assert _b2b_quadratic(nl, 0, pl) == (0.0, 0.0)


def test_b2b_exact_on_random_nets():
    rng = np.random.default_rng(0)
    n_inst = 400
    insts = [(f"i{k}", "LUT") for k in range(n_inst)]
    nets = []
    for k in range(1000):
        p = int(rng.integers(3, 21))
        members = rng.choice(n_inst, size=p, replace=False)
        nets.append((f"n{k}", f"i{members[0]}", [f"i{m}" for m in members[1:]]))
    nl = make_netlist(insts, nets)
    pl = Placement(rng.uniform(0, 100, n_inst), rng.uniform(0, 100, n_inst))
    px, py = nl.pin_positions(pl)
    for net in range(nl.num_nets):
        pins = slice(nl.net_ptr[net], nl.net_ptr[net + 1])
        qx, qy = _b2b_quadratic(nl, net, pl)
        assert qx == pytest.approx(np.ptp(px[pins]), rel=1e-9)
        assert qy == pytest.approx(np.ptp(py[pins]), rel=1e-9)
        assert qx + qy == pytest.approx(net_hpwl(nl, net, pl), rel=1e-9)


# -- timing threshold and weights -------------------------------------------

def test_threshold_examples():
    assert estimate_timing_threshold([-1.5] * 7, 5) == -1.5
    assert estimate_timing_threshold([-4, -3, -2, -1, 0], 20) == -4
    assert estimate_timing_threshold([0, -1, -4, -2, -3], 20) == -4
    assert estimate_timing_threshold([-4, -3, -2, -1, 0], 40) == -3
    with pytest.raises(ValueError):
        estimate_timing_threshold([], 5)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=60), st.floats(0.5, 99.5),
       st.randoms(use_true_random=False))
def test_threshold_is_order_invariant_nearest_rank(values, pct, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    t = estimate_timing_threshold(shuffled, pct)
    assert t == estimate_timing_threshold(values, pct)
    s = sorted(values)
    k = next(i for i in range(1, len(s) + 1) if i / len(s) * 100 >= pct - 1e-9)
    assert t == s[k - 1]


def test_zero_slack_formula_gives_unit_weight():
    cfg = PlacerConfig(beta=0.0)
    assert arc_weight_formula(0.0, 0, 1, False, -1.0, cfg, 5.0) == 1.0
    # gated: zero slack is not below the threshold, so it gets the base weight
    assert timing_arc_weight(0.0, False, 0, 1, -1.0, cfg, 5.0) == cfg.w_base


def test_on_path_weight_strictly_greater():
    cfg = PlacerConfig()
    on, off = timing_arc_weight(np.array([-1.0, -1.0]), np.array([True, False]),
                                np.array([3.0, 0.0]), np.array([5.0, 1.0]), -0.5, cfg, 5.0)
    assert on > off > 0


def test_weight_non_increasing_over_threshold_range():
    cfg = PlacerConfig()
    t_thr, cl = -1.2, 4.0
    slack = np.linspace(t_thr, 0.0, 1000)
    for on_path in (False, True):
        w = arc_weight_formula(slack, 2.0, 5.0, on_path, t_thr, cfg, cl)
        assert (np.diff(w) <= 1e-15).all()
        gated = timing_arc_weight(slack, np.full(1000, on_path), np.full(1000, 2.0),
                                  np.full(1000, 5.0), t_thr, cfg, cl)
        assert (np.diff(gated) <= 1e-15).all()


def test_weight_grows_toward_path_start():
    cfg = PlacerConfig()
    c_max = 9
    c_fwd = np.arange(c_max - 1, -1, -1, dtype=float)  # start -> endpoint
    w = timing_arc_weight(np.full(c_max, -0.7), np.ones(c_max, bool), c_fwd,
                          np.full(c_max, c_max), -0.3, cfg, 5.0)
    assert (np.diff(w) <= 0).all() and w[0] > w[-1]


@given(st.floats(-20, -1e-3), st.floats(-20, -1e-3), st.floats(0.5, 30), st.integers(1, 40))
def test_on_path_dominates_for_negative_slack(slack, t_thr, cl, c_max):
    cfg = PlacerConfig(slack_threshold=0.0)
    c_fwd = np.array([float(c_max - 1), float(c_max - 1)])
    w = timing_arc_weight(np.array([slack, slack]), np.array([True, False]), c_fwd,
                          np.array([c_max, c_max]), t_thr, cfg, cl)
    if c_max > 1:
        assert w[0] > w[1] or w[1] == cfg.w_max
    else:
        assert w[0] == w[1]


def test_clock_period_required():
    with pytest.raises(ValueError):
        timing_arc_weight(-1.0, False, 0, 1, -1.0, PlacerConfig(), None)


def test_config_validation():
    for bad in (dict(lam=1.5), dict(alpha=-1), dict(percentile=0), dict(percentile=100),
                dict(clock_period=0.0)):
        with pytest.raises(ValueError):
            PlacerConfig(**bad)


# -- clock-region pseudo-nets -----------------------------------------------

def _two_region_device():
    return Device(width=20, height=10, clock_rows=1, clock_cols=2)


def test_majority_region_attracts_whole_path():
    dev = _two_region_device()
    xs = [1.0] * 6 + [15.0] * 4
    pl = Placement(xs, [5.0] * 10)
    nets = clock_region_pseudo_nets([list(range(10))], pl, dev, threshold=0.5, min_arcs=8)
    assert sorted(p.inst for p in nets) == list(range(10))
    assert {p.x for p in nets} == {5.0} and all(p.y is None for p in nets)
    assert all(p.kind == "clock_region" for p in nets)


def test_even_split_emits_nothing():
    dev = _two_region_device()
    pl = Placement([1.0] * 5 + [15.0] * 5, [5.0] * 10)
    assert clock_region_pseudo_nets([list(range(10))], pl, dev, 0.5, 8) == []


def test_short_paths_are_ignored():
    dev = _two_region_device()
    pl = Placement([1.0] * 5, [5.0] * 5)
    assert clock_region_pseudo_nets([list(range(5))], pl, dev, 0.5, 8) == []


def test_region_pseudo_nets_match_counting_oracle():
    rng = np.random.default_rng(3)
    dev = Device(width=40, height=40, clock_rows=2, clock_cols=3)
    n = 300
    pl = Placement(rng.uniform(0, 40, n), rng.uniform(0, 40, n))
    # cluster each path around a random point so majorities occur
    paths = []
    for _ in range(40):
        k = int(rng.integers(5, 20))
        cx, cy = rng.uniform(0, 40, 2)
        ids = rng.choice(n, size=k, replace=False)
        pl.x[ids] = np.clip(cx + rng.normal(0, 6, k), 0, 39.99)
        pl.y[ids] = np.clip(cy + rng.normal(0, 6, k), 0, 39.99)
        paths.append([int(i) for i in ids])
    # disjointness is not guaranteed; freeze positions before both passes
    expect = []
    for ids in paths:
        if len(ids) - 1 < 8:
            continue
        counts = {}
        for i in ids:
            for r, (x0, y0, x1, y1) in enumerate(dev.regions):
                if x0 <= pl.x[i] < x1 and y0 <= pl.y[i] < y1:
                    counts[r] = counts.get(r, 0) + 1
        best = max(sorted(counts), key=lambda r: counts[r])
        if counts[best] * 2 > len(ids):
            x0, _, x1, _ = dev.regions[best]
            expect += [(i, (x0 + x1) / 2) for i in ids]
    got = [(p.inst, p.x) for p in clock_region_pseudo_nets(paths, pl, dev, 0.5, 8)]
    assert got == expect and len(expect) > 0


# -- quadratic system and solver -------------------------------------------

def _one_movable():
    nl = make_netlist([("a", "IO", True, 0.0, 0.0), ("m", "LUT"), ("b", "IO", True, 10.0, 0.0)],
                      [("n1", "a", ["m"]), ("n2", "m", ["b"])])
    return nl, Placement([0.0, 5.0, 10.0], [0.0, 0.0, 0.0])


def test_one_movable_between_fixed_pins():
    nl, pl = _one_movable()
    system = assemble_quadratic_system(nl, pl, lam=0.0)
    out = solve_quadratic(system, pl)
    assert out.x[1] == pytest.approx(5.0, abs=1e-9)
    assert out.x[0] == 0.0 and out.x[2] == 10.0


def test_unconnected_movable_is_flagged_singular():
    nl = make_netlist([("a", "LUT"), ("b", "LUT")], [("n", "a", ["b"])])
    system = assemble_quadratic_system(nl, Placement([0.0, 3.0], [0.0, 0.0]))
    assert sorted(system.singular.tolist()) == [0, 1]
    with pytest.raises(ValueError):
        solve_quadratic(system, Placement([0.0, 3.0], [0.0, 0.0]))


def _design_state(seed=0):
    nl, oracle, dev = synth_design(300, seed=seed)
    pl = random_placement(nl, dev, seed)
    mov = np.flatnonzero(~nl.fixed_mask)
    anchors = [PseudoNet(int(i), float(pl.x[i]) + 1, float(pl.y[i]) - 1, 0.2) for i in mov]
    return nl, dev, pl, anchors


def test_lambda_zero_ignores_arc_weights():
    nl, _, pl, anchors = _design_state()
    n_arcs = sum(nl.nets[k].fanout for k in nl.timing_nets)
    a = assemble_quadratic_system(nl, pl, anchors, None, 0.0)
    b = assemble_quadratic_system(nl, pl, anchors, np.random.default_rng(0).uniform(1, 5, n_arcs), 0.0)
    for d in range(2):
        assert (a.A[d] != b.A[d]).nnz == 0
        np.testing.assert_array_equal(a.b[d], b.b[d])


def test_objective_gradient_matches_residual():
    nl, dev, pl, anchors = _design_state(1)
    n_arcs = sum(nl.nets[k].fanout for k in nl.timing_nets)
    rng = np.random.default_rng(5)
    region = [PseudoNet(int(i), 7.0, None, 0.5, "clock_region") for i in range(0, 40, 3)
              if not nl.fixed_mask[i]]
    system = assemble_quadratic_system(nl, pl, anchors + region, rng.uniform(0, 3, n_arcs), 0.4)
    h = 1e-2  # central differences are exact on a quadratic; h only sets roundoff
    for dim in range(2):
        pos = (pl.x, pl.y)[dim]
        grad = 2 * (system.A[dim] @ pos[system.movable] - system.b[dim])
        for r in rng.choice(len(system.movable), 25, replace=False):
            i = system.movable[r]
            up, dn = pl.copy(), pl.copy()
            (up.x, up.y)[dim][i] += h
            (dn.x, dn.y)[dim][i] -= h
            fd = (system.objective(up) - system.objective(dn)) / (2 * h)
            assert fd == pytest.approx(grad[r], rel=1e-8, abs=1e-8 * np.abs(grad).max())


def test_matrices_symmetric_and_positive_definite():
    nl, _, pl, anchors = _design_state(2)
    system = assemble_quadratic_system(nl, pl, anchors)
    for A in system.A:
        dense = A.toarray()
        assert np.abs(dense - dense.T).max() <= 1e-12 * np.abs(dense).max()
        np.linalg.cholesky(dense)


def test_solve_decreases_objective():
    nl, dev, pl, anchors = _design_state(3)
    system = assemble_quadratic_system(nl, pl, anchors, None, 0.0)
    out = solve_quadratic(system, pl, None)
    assert system.objective(out) <= system.objective(pl)


def test_pcg_identity_and_random_spd():
    b = np.arange(1.0, 11.0)
    x, _, res, ok = pcg(sp.identity(10, format="csr"), b, np.zeros(10))
    np.testing.assert_allclose(x, b)
    rng = np.random.default_rng(0)
    n = 500
    i = rng.integers(0, n, 3000)
    j = rng.integers(0, n, 3000)
    w = rng.uniform(0.1, 2.0, 3000)
    keep = i != j
    L = sp.coo_matrix((np.r_[w[keep], w[keep], -w[keep], -w[keep]],
                       (np.r_[i[keep], j[keep], i[keep], j[keep]],
                        np.r_[i[keep], j[keep], j[keep], i[keep]])), shape=(n, n)).tocsr()
    A = L + sp.diags(rng.uniform(0.01, 0.5, n))
    rhs = rng.normal(size=n)
    x, iters, res, ok = pcg(A, rhs, np.zeros(n), tol=1e-6)
    assert ok and np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs) <= 1e-6


def test_non_convergence_warns():
    nl, _, pl, anchors = _design_state(4)
    system = assemble_quadratic_system(nl, pl, anchors)
    with pytest.warns(RuntimeWarning, match="did not converge"):
        solve_quadratic(system, pl, None, tol=1e-14, maxiter=2)


# -- iteration loop ---------------------------------------------------------

class _Exploding:
    def predict(self, *_args, **_kw):
        raise AssertionError("timing model must not be evaluated")


def test_lambda_zero_never_evaluates_timing(design500):
    nl, oracle, dev = design500
    cfg = PlacerConfig(lam=0.0, report_timing=False, max_iterations=12)
    pl1, t1 = global_place(nl, dev, cfg, model=_Exploding())
    pl2, t2 = global_place(nl, dev, cfg, model=None)
    np.testing.assert_array_equal(pl1.x, pl2.x)
    assert all(np.isnan(r["cpd"]) for r in t1)


def test_placement_is_deterministic_and_traced(design500):
    nl, oracle, dev = design500
    cfg = PlacerConfig(max_iterations=14, seed=3, report_timing=False)
    model = oracle.as_model(nl)
    pl1, t1 = global_place(nl, dev, cfg, model=model)
    pl2, t2 = global_place(nl, dev, cfg, model=model)
    np.testing.assert_array_equal(pl1.x, pl2.x)
    np.testing.assert_array_equal(pl1.y, pl2.y)
    np.testing.assert_equal(t1, t2)
    assert 1 <= len(t1) <= 15
    assert {"hpwl", "wns", "tns", "cpd"} <= set(t1[0])
    assert np.isfinite([r["cpd"] for r in t1]).all()
    assert t1[0]["lambda"] == 0.0
    # the last row describes the returned placement: the best full-lambda iterate
    full = [r for r in t1 if r["lambda"] == cfg.lam]
    assert t1[-1]["cpd"] == min(r["cpd"] for r in full)
    assert t1[-1]["cpd"] == pytest.approx(oracle.critical_path_delay(nl, pl1, dev))
    mov = ~nl.fixed_mask
    assert (pl1.x[mov] >= 0).all() and (pl1.x[mov] < dev.width).all()


def test_keep_best_off_returns_last_iterate(design500):
    nl, oracle, dev = design500
    cfg = PlacerConfig(max_iterations=13, seed=3, keep_best=False)
    pl, trace = global_place(nl, dev, cfg, model=oracle.as_model(nl))
    assert [r["iteration"] for r in trace] == list(range(len(trace)))
    assert trace[-1]["hpwl"] == pytest.approx(total_hpwl(nl, pl))
