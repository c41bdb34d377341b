"""Training-set extraction: per pin-pair samples, split by net, JSONL storage."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .congestion import compute_routing_density
from .features import FeatureExtractor, FeatureSet, _ptr
from .netlist import Device, Netlist, Placement

SPLITS = ("train", "val", "test")
SPLIT_RATIOS = (0.7, 0.15, 0.15)


class DatasetError(ValueError):
    pass


def split_nets(net_ids, seed: int = 0, ratios=SPLIT_RATIOS) -> dict[str, np.ndarray]:
    """Shuffle nets and cut them into train / val / test by the given ratios."""
    net_ids = np.asarray(net_ids, dtype=np.int64)
    n = len(net_ids)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    cut = [0, n_train, n_train + n_val, n]
    return {name: np.sort(net_ids[perm[cut[k]:cut[k + 1]]]) for k, name in enumerate(SPLITS)}


def read_delay_csv(path: Union[str, Path]) -> dict[tuple[str, int], float]:
    """External labels: CSV with columns ``net, load_index, delay``."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"net", "load_index", "delay"} - set(reader.fieldnames or [])
        if missing:
            raise DatasetError(f"delay CSV lacks columns {sorted(missing)}")
        for row in reader:
            out[(row["net"], int(row["load_index"]))] = float(row["delay"])
    return out


def label_features(fs: FeatureSet, netlist: Netlist, labels) -> np.ndarray:
    """Labels for every pair of ``fs`` from an oracle or a (net name, load index) map."""
    if hasattr(labels, "pair_delays"):
        return labels.pair_delays(fs, netlist)
    if isinstance(labels, (str, Path)):
        labels = read_delay_csv(labels)
    out = np.empty(fs.n_pairs)
    for k, net in enumerate(fs.net_ids):
        name = netlist.nets[int(net)].name
        for j in range(fs.pair_ptr[k + 1] - fs.pair_ptr[k]):
            try:
                out[fs.pair_ptr[k] + j] = labels[(name, j)]
            except KeyError:
                raise DatasetError(f"missing label for net {name!r} load {j}") from None
    return out


def extract_dataset(netlist: Netlist, placement: Placement, device: Device,
                    labels: Union[Mapping, str, Path, object], seed: int = 0,
                    cell_size: float = 4.0) -> dict[str, FeatureSet]:
    """One labelled sample per timing pin pair, split 70/15/15 by net."""
    grid = compute_routing_density(netlist, placement, device, cell_size)
    fs = FeatureExtractor(netlist, placement, grid).extract()
    fs.labels = label_features(fs, netlist, labels)
    parts = split_nets(np.arange(fs.n_nets), seed)
    return {name: fs.select(idx) for name, idx in parts.items()}


def merge_splits(datasets) -> dict[str, FeatureSet]:
    return {name: FeatureSet.concat([d[name] for d in datasets]) for name in SPLITS}


def write_jsonl(path: Union[str, Path], fs: FeatureSet, netlist: Optional[Netlist] = None):
    """One JSON object per pin pair; each carries its whole net graph."""
    with open(path, "w") as fh:
        for k in range(fs.n_nets):
            g = fs.graph(k)
            env = fs.env[k].tolist()
            net = int(fs.net_ids[k])
            name = netlist.nets[net].name if netlist is not None else str(net)
            for j in range(fs.pair_ptr[k], fs.pair_ptr[k + 1]):
                rec = {"net": name, "net_id": net, "load_index": int(j - fs.pair_ptr[k]),
                       "vertices": g.vertices.tolist(), "edges": [list(e) for e in g.edges],
                       "env": env, "pin": fs.pin_feat[j].tolist()}
                if fs.labels is not None:
                    rec["label"] = float(fs.labels[j])
                fh.write(json.dumps(rec) + "\n")


def read_jsonl(path: Union[str, Path]) -> FeatureSet:
    """Inverse of :func:`write_jsonl`; consecutive records of one net are regrouped."""
    nets, verts, edges, envs, pins, labels, fan = [], [], [], [], [], [], []
    last = None
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{line_no}: {exc}") from None
            key = (rec["net_id"], rec["net"])
            if key != last or rec["load_index"] == 0:
                nets.append(rec["net_id"])
                verts.append(np.asarray(rec["vertices"], dtype=float))
                edges.append(np.asarray(rec["edges"], dtype=np.int64).reshape(-1, 3))
                envs.append(rec["env"])
                fan.append(0)
                last = key
            pins.append(rec["pin"])
            labels.append(rec.get("label", np.nan))
            fan[-1] += 1
    if not nets:
        raise DatasetError(f"{path}: no samples")
    vert_ptr = _ptr([len(v) for v in verts])
    edge_ptr = _ptr([len(e) for e in edges])
    offs = np.repeat(vert_ptr[:-1], [len(e) for e in edges])
    all_edges = np.concatenate(edges)
    lab = np.asarray(labels, dtype=float)
    return FeatureSet(
        net_ids=np.asarray(nets, dtype=np.int64), vert_feat=np.concatenate(verts),
        vert_ptr=vert_ptr, edge_src=all_edges[:, 0] + offs, edge_dst=all_edges[:, 1] + offs,
        edge_type=all_edges[:, 2], edge_ptr=edge_ptr, env=np.asarray(envs, dtype=float),
        pin_feat=np.asarray(pins, dtype=float), pair_ptr=_ptr(fan),
        labels=None if np.isnan(lab).all() else lab)


def write_dataset(directory: Union[str, Path], splits: Mapping[str, FeatureSet],
                  netlist: Optional[Netlist] = None) -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = {}
    for name, fs in splits.items():
        out[name] = d / f"{name}.jsonl"
        write_jsonl(out[name], fs, netlist)
    return out
