"""Command-line interface: ``tdplace {synth,extract,train,place,sta,report}``.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure.
Errors are reported on stderr as one JSON object ``{"error", "message"}``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_MODEL = Path(__file__).parent / "data" / "default_model.json"
TRACE_FIELDS = ("iteration", "lambda", "hpwl", "hpwl_lower", "wns", "tns", "cpd", "t_thr",
                "max_util", "moved", "cg_iters")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID, kind: str = "InvalidInput"):
        super().__init__(message)
        self.code = code
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("UsageError", message)
        sys.exit(EXIT_USAGE)


def _emit_error(kind: str, message: str):
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


# ---------------------------------------------------------------------------
# file helpers

def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: malformed JSON: {exc}") from None


def _write_json(path, data):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)


def _load_design(args, need_device=True):
    from .netlist import device_from_dict, netlist_from_dict, validate
    from .synth import auto_device

    netlist = netlist_from_dict(_read_json(args.netlist), Path(args.netlist).stem)
    if args.device:
        device = device_from_dict(_read_json(args.device))
    elif need_device:
        device = auto_device(netlist.kinds)
    else:
        device = None
    if device is not None:
        problems = validate(netlist, device)
        if problems:
            raise CliError("; ".join(problems[:5]) + (" ..." if len(problems) > 5 else ""))
    return netlist, device


def _load_placement(path, netlist):
    from .netlist import placement_from_dict
    return placement_from_dict(netlist, _read_json(path))


def _section(config: dict, name: str, cls, **overrides):
    """Build dataclass ``cls`` from ``config[name]`` plus non-None overrides."""
    data = dict(config.get(name, {}))
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise CliError(f"config section {name!r}: unknown keys {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise CliError(f"config section {name!r}: {exc}") from None


def _delay_model(args, netlist, config):
    """Learned weights from --model, the synthetic oracle from --oracle, else the bundled weights."""
    from .delay_model import load_model
    from .synth import SyntheticOracle

    if getattr(args, "oracle", None):
        try:
            return SyntheticOracle.from_dict(_read_json(args.oracle)).as_model(netlist)
        except (TypeError, ValueError) as exc:
            raise CliError(f"{args.oracle}: {exc}") from None
    path = getattr(args, "model", None) or DEFAULT_MODEL
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CliError(f"{path}: no such file") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(f"{path}: bad weights file: {exc}") from None


def write_trace(path, trace):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(trace)


def read_trace(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or not {"iteration", "hpwl", "cpd"} <= set(reader.fieldnames):
                raise CliError(f"{path}: not a placement trace (need iteration, hpwl, cpd columns)")
            rows = [{k: float(v) if v not in ("", None) else math.nan for k, v in r.items()}
                    for r in reader]
    except FileNotFoundError:
        raise CliError(f"{path}: no such file") from None
    except ValueError as exc:
        raise CliError(f"{path}: corrupt trace: {exc}") from None
    if not rows:
        raise CliError(f"{path}: empty trace")
    return rows


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, config):
    from .netlist import device_to_dict, netlist_to_dict
    from .synth import SynthConfig, synth_design

    cfg = _section(config, "synth", SynthConfig)
    try:
        netlist, oracle, device = synth_design(args.cells, args.seed, config=cfg)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if config.get("oracle"):
        oracle = _section(config, "oracle", type(oracle), seed=args.seed)
    out = Path(args.out)
    _write_json(out / "netlist.json", netlist_to_dict(netlist))
    _write_json(out / "device.json", device_to_dict(device))
    _write_json(out / "oracle.json", oracle.to_dict())
    print(f"{netlist.num_instances} instances, {netlist.num_nets} nets, "
          f"device {device.width:g}x{device.height:g} -> {out}")


def cmd_extract(args, config):
    from .dataset import DatasetError, extract_dataset, write_dataset
    from .synth import SyntheticOracle

    netlist, device = _load_design(args)
    placement = _load_placement(args.placement, netlist)
    if args.oracle:
        labels = SyntheticOracle.from_dict(_read_json(args.oracle))
    else:
        labels = args.labels
    try:
        splits = extract_dataset(netlist, placement, device, labels, seed=args.seed)
    except (DatasetError, FileNotFoundError) as exc:
        raise CliError(str(exc)) from None
    paths = write_dataset(args.out, splits, netlist)
    for name, fs in splits.items():
        print(f"{name}: {fs.n_nets} nets, {fs.n_pairs} pairs -> {paths[name]}")


def cmd_train(args, config):
    import numpy as np

    from .dataset import DatasetError, read_jsonl
    from .delay_model import (LinearBaseline, ModelConfig, TrainConfig, TrainingError, evaluate,
                              save_model, train_model)

    data = Path(args.data)
    try:
        train = read_jsonl(data / "train.jsonl")
        val = read_jsonl(data / "val.jsonl")
        test = read_jsonl(data / "test.jsonl") if (data / "test.jsonl").exists() else None
    except FileNotFoundError as exc:
        raise CliError(f"{exc.filename}: no such file") from None
    except (DatasetError, KeyError) as exc:
        raise CliError(f"bad dataset: {exc}") from None
    for fs, name in ((train, "train"), (val, "val")):
        if fs.labels is None or np.isnan(fs.labels).any():
            raise CliError(f"{name} split has unlabelled samples")

    if args.linear:
        model = LinearBaseline().fit(train, train.labels)
    else:
        mcfg = _section(config, "model", ModelConfig, seed=args.seed,
                        use_topology=False if args.no_topology else None)
        tcfg = _section(config, "train", TrainConfig, seed=args.seed, max_epochs=args.epochs,
                        patience=args.patience, lr=args.lr)
        try:
            model = train_model(train, val, mcfg, tcfg,
                                progress=(lambda e, vm: print(f"epoch {e}: val MAE {vm:.5f}"))
                                if args.verbose else None)
        except TrainingError as exc:
            raise CliError(str(exc), EXIT_NUMERIC, "NumericalFailure") from None
    save_model(model, args.out)
    report = {"val": evaluate(model, val)}
    if test is not None and test.labels is not None:
        report["test"] = evaluate(model, test)
        if args.predictions:
            pred = model.predict(test)
            with open(args.predictions, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["pred", "truth"])
                w.writerows(zip(pred.tolist(), test.labels.tolist()))
    print(json.dumps(report))


def _final_timing(netlist, placement, device, model, cfg):
    from .congestion import compute_routing_density
    from .sta import build_timing_graph, run_sta, timing_report

    graph = build_timing_graph(netlist, None, cfg.clock_period or 1.0)
    grid = compute_routing_density(netlist, placement, device, cfg.gcell_size)
    graph, path = run_sta(graph, netlist, placement, grid, model, cfg.batch_size)
    if cfg.clock_period is None:
        # report against the achieved critical path delay
        from .sta import backward_propagate, compute_slacks, critical_paths
        graph.clock_period = graph.cpd
        backward_propagate(graph)
        compute_slacks(graph)
        path = critical_paths(graph, 1)[0]
    return timing_report(graph, path, netlist)


def cmd_place(args, config):
    import numpy as np

    from .legalize import LegalizationError
    from .netlist import placement_to_dict
    from .placer import PlacerConfig, global_place

    netlist, device = _load_design(args)
    cfg = _section(config, "placer", PlacerConfig, lam=args.lam, alpha=args.alpha,
                   beta=args.beta, gamma=args.gamma, percentile=args.percentile,
                   clock_period=args.clock_period, max_iterations=args.iters, seed=args.seed)
    needs_model = cfg.lam > 0 or args.timing
    model = _delay_model(args, netlist, config) if needs_model else None
    if model is None:
        cfg = replace(cfg, report_timing=False)

    def progress(row):
        if args.verbose:
            print(f"iter {row['iteration']:3d}  hpwl {row['hpwl']:10.1f}  cpd {row['cpd']:.4f}")

    try:
        placement, trace = global_place(netlist, device, cfg, model=model, callback=progress)
    except LegalizationError as exc:
        raise CliError(str(exc)) from None
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise CliError(str(exc), EXIT_NUMERIC, "NumericalFailure") from None
    if not (np.isfinite(placement.x).all() and np.isfinite(placement.y).all()):
        raise CliError("placement contains non-finite coordinates", EXIT_NUMERIC,
                       "NumericalFailure")
    _write_json(args.out, placement_to_dict(netlist, placement))
    write_trace(args.trace, trace)
    last = trace[-1]
    msg = f"{len(trace)} iterations, HPWL {last['hpwl']:.1f}"
    if args.timing:
        report = _final_timing(netlist, placement, device, model, cfg)
        _write_json(args.timing, report)
        msg += f", CPD {report['cpd']:.4f}"
    print(msg + f" -> {args.out}")


def cmd_sta(args, config):
    from .placer import PlacerConfig

    netlist, device = _load_design(args)
    placement = _load_placement(args.placement, netlist)
    cfg = _section(config, "placer", PlacerConfig, clock_period=args.clock_period)
    model = _delay_model(args, netlist, config)
    report = _final_timing(netlist, placement, device, model, cfg)
    if args.out:
        _write_json(args.out, report)
    print(f"WNS {report['wns']:.4f}  TNS {report['tns']:.4f}  CPD {report['cpd']:.4f}  "
          f"({len(report['critical_path'])} arcs on the critical path)")


def summarize_trace(rows: list[dict], timing: dict | None = None) -> dict:
    first, last = rows[0], rows[-1]
    out = {"iterations": len(rows), "hpwl_first": first["hpwl"], "hpwl": last["hpwl"],
           "wns": last.get("wns", math.nan), "tns": last.get("tns", math.nan),
           "cpd": last["cpd"]}
    if timing is not None:
        out["final_sta"] = {k: timing[k] for k in ("wns", "tns", "cpd") if k in timing}
    return out


def plot_trace(rows: list[dict], out_dir: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    it = [r["iteration"] for r in rows]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, key in zip(axes.flat, ("hpwl", "wns", "tns", "cpd")):
        ax.plot(it, [r.get(key, math.nan) for r in rows], marker="o", ms=3)
        ax.set_title(key.upper())
        ax.grid(alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("iteration")
    fig.tight_layout()
    paths = [out_dir / "convergence.png", out_dir / "convergence.svg"]
    for p in paths:
        fig.savefig(p)
    plt.close(fig)
    return paths


def cmd_report(args, config):
    rows = read_trace(args.trace)
    timing = _read_json(args.timing) if args.timing else None
    if timing is not None and not isinstance(timing, dict):
        raise CliError(f"{args.timing}: expected a timing report object")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize_trace(rows, timing)
    _write_json(out / "summary.json", summary)
    plots = plot_trace(rows, out)
    lines = [f"{'iter':>5} {'hpwl':>12} {'wns':>9} {'tns':>11} {'cpd':>8}"]
    for r in rows:
        lines.append(f"{int(r['iteration']):5d} {r['hpwl']:12.1f} {r.get('wns', math.nan):9.4f} "
                     f"{r.get('tns', math.nan):11.4f} {r['cpd']:8.4f}")
    lines.append(f"final: HPWL {summary['hpwl']:.1f}  WNS {summary['wns']:.4f}  "
                 f"TNS {summary['tns']:.4f}  CPD {summary['cpd']:.4f}")
    text = "\n".join(lines)
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    print("plots: " + ", ".join(str(p) for p in plots))


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="BLAS / OpenMP thread count")
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="JSON file with optional sections placer, model, train, synth, oracle")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = _Parser(prog="tdplace", parents=[common], description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic design and oracle")
    s.add_argument("--cells", type=int, required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    def design_args(q, placement=False):
        q.add_argument("--netlist", required=True)
        q.add_argument("--device", help="device JSON (default: sized from the netlist)")
        if placement:
            q.add_argument("--placement", required=True)

    def model_args(q):
        g = q.add_mutually_exclusive_group()
        g.add_argument("--model", help="delay-model weights (default: bundled weights)")
        g.add_argument("--oracle", help="synthetic oracle JSON used as the delay model")

    e = sub.add_parser("extract", parents=[common], help="build a labelled pin-pair dataset")
    design_args(e, placement=True)
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--oracle", help="synthetic oracle JSON")
    g.add_argument("--labels", help="CSV with columns net, load_index, delay")
    e.add_argument("--out", required=True, help="output directory for {train,val,test}.jsonl")
    e.set_defaults(func=cmd_extract)

    t = sub.add_parser("train", parents=[common], help="train the net-delay model")
    t.add_argument("--data", required=True, help="directory with train/val[/test].jsonl")
    t.add_argument("--out", required=True, help="weights JSON")
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--no-topology", action="store_true", help="drop the net-graph encoder")
    t.add_argument("--linear", action="store_true", help="fit the least-squares baseline instead")
    t.add_argument("--predictions", help="CSV of (pred, truth) on the test split")
    t.set_defaults(func=cmd_train)

    pl = sub.add_parser("place", parents=[common], help="timing-driven global placement")
    design_args(pl)
    model_args(pl)
    pl.add_argument("--lambda", dest="lam", type=float, help="timing weight in [0, 1]")
    pl.add_argument("--alpha", type=float)
    pl.add_argument("--beta", type=float)
    pl.add_argument("--gamma", type=float)
    pl.add_argument("--percentile", type=float)
    pl.add_argument("--clock-period", type=float)
    pl.add_argument("--iters", type=int)
    pl.add_argument("--out", default="placement.json")
    pl.add_argument("--trace", default="trace.csv")
    pl.add_argument("--timing", help="also write a final timing report JSON here")
    pl.set_defaults(func=cmd_place)

    st = sub.add_parser("sta", parents=[common], help="static timing analysis of a placement")
    design_args(st, placement=True)
    model_args(st)
    st.add_argument("--clock-period", type=float)
    st.add_argument("--out", help="timing report JSON")
    st.set_defaults(func=cmd_sta)

    r = sub.add_parser("report", parents=[common], help="summarize a placement trace")
    r.add_argument("--trace", required=True)
    r.add_argument("--timing")
    r.add_argument("--out", default="report")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("seed", 0), ("threads", None), ("config", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.threads is not None:
        if args.threads < 1:
            _emit_error("UsageError", "--threads must be positive")
            return EXIT_USAGE
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .netlist import NetlistError
    from .sta import TimingError

    try:
        config = _read_json(args.config) if args.config else {}
        if not isinstance(config, dict):
            raise CliError("config must be a JSON object")
        args.func(args, config)
    except CliError as exc:
        _emit_error(exc.kind, str(exc))
        return exc.code
    except (NetlistError, TimingError) as exc:
        _emit_error("InvalidInput", str(exc))
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
