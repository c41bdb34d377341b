"""Scaled synthetic experiments shared by the scripts and the acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .dataset import extract_dataset, merge_splits
from .delay_model import (DelayModel, LinearBaseline, ModelConfig, TrainConfig, evaluate,
                          train_model)
from .placer import PlacerConfig, global_place
from .synth import SyntheticOracle, synth_design


def design_suite(n: int = 20, lo: int = 500, hi: int = 5000, seed0: int = 100):
    """``n`` (cells, seed) pairs with sizes spread evenly over [lo, hi]."""
    sizes = np.linspace(lo, hi, n).round().astype(int)
    return [(int(c), seed0 + k) for k, c in enumerate(sizes)]


def wirelength_placement(netlist, device, seed: int = 0, iterations: int = 30):
    cfg = PlacerConfig(lam=0.0, report_timing=False, max_iterations=iterations, seed=seed)
    placement, _ = global_place(netlist, device, cfg)
    return placement


def build_corpus(designs, oracle_kwargs: Optional[dict] = None, split_seed: int = 0):
    """Oracle-labelled samples from wirelength-driven placements of ``designs``."""
    parts = []
    for cells, seed in designs:
        netlist, oracle, device = synth_design(cells, seed)
        if oracle_kwargs:
            oracle = SyntheticOracle(seed=seed, **oracle_kwargs)
        placement = wirelength_placement(netlist, device, seed)
        parts.append(extract_dataset(netlist, placement, device, oracle, seed=split_seed + seed))
    return merge_splits(parts)


@dataclass
class ModelComparison:
    graph: dict
    baseline: dict
    model: DelayModel
    linear: LinearBaseline
    sizes: dict = field(default_factory=dict)


def compare_models(splits, model_config: Optional[ModelConfig] = None,
                   train_config: Optional[TrainConfig] = None) -> ModelComparison:
    """Train the graph model and the least-squares baseline; score both on the test split."""
    train, val, test = splits["train"], splits["val"], splits["test"]
    model = train_model(train, val, model_config, train_config)
    linear = LinearBaseline().fit(train, train.labels)
    return ModelComparison(evaluate(model, test), evaluate(linear, test), model, linear,
                           {k: (v.n_nets, v.n_pairs) for k, v in splits.items()})


@dataclass
class DesignResult:
    cells: int
    seed: int
    cpd: dict  # variant -> oracle CPD
    hpwl: dict
    seconds: dict


def run_timing_suite(variants: dict[str, PlacerConfig], designs=None,
                     model_factory: Optional[Callable] = None,
                     progress: Optional[Callable[[DesignResult], None]] = None
                     ) -> list[DesignResult]:
    """Place every design under each config variant; score with the oracle.

    ``model_factory(netlist, oracle)`` returns the delay model the placer
    uses (default: the oracle itself).
    """
    designs = designs if designs is not None else design_suite()
    out = []
    for cells, seed in designs:
        netlist, oracle, device = synth_design(cells, seed)
        model = model_factory(netlist, oracle) if model_factory else oracle.as_model(netlist)
        res = DesignResult(cells, seed, {}, {}, {})
        for name, cfg in variants.items():
            t0 = time.perf_counter()
            placement, trace = global_place(netlist, device, replace(cfg, seed=seed),
                                            model=model if cfg.lam > 0 else None)
            res.seconds[name] = time.perf_counter() - t0
            res.cpd[name] = oracle.critical_path_delay(netlist, placement, device)
            res.hpwl[name] = trace[-1]["hpwl"]
        out.append(res)
        if progress:
            progress(res)
    return out


def standard_variants(**overrides) -> dict[str, PlacerConfig]:
    """Wirelength-only, full timing scheme, and the uniform-weight ablation."""
    base = dict(report_timing=False, **overrides)
    return {
        "wirelength": PlacerConfig(lam=0.0, **base),
        "timing": PlacerConfig(lam=0.5, **base),
        "uniform": PlacerConfig(lam=0.5, beta=0.0, gamma=0.0, **base),
    }


def summarize(results: list[DesignResult], ref: str = "wirelength", test: str = "timing") -> dict:
    a = np.array([r.cpd[ref] for r in results])
    b = np.array([r.cpd[test] for r in results])
    red = 1.0 - b / a
    return {"designs": len(results), "win_rate": float(np.mean(b <= a)),
            "mean_reduction": float(red.mean()), "mean_cpd_ref": float(a.mean()),
            "mean_cpd_test": float(b.mean())}
