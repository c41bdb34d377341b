"""Net-delay predictor: relational graph convolution over each net, pooled to a
topology vector, fused with environment and pin features by a residual MLP.

Forward and backward passes are written out by hand in numpy (float64) so
gradients can be checked against finite differences term by term.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .features import (N_EDGE_TYPES, N_ENV_FEATURES, N_PIN_FEATURES, N_VERTEX_FEATURES,
                       FeatureExtractor, FeatureSet, NetGraph)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    conv_layers: int = 2
    hidden: int = 64
    reduced: int = 16
    res_blocks: int = 2
    res_dim: int = 32
    use_topology: bool = True
    delta: float = 1.0
    delay_floor: float = 0.01
    seed: int = 0


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_pairs: int = 256
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0


def huber_loss(pred, truth, delta: float = 1.0):
    """Elementwise Huber loss of e = truth - pred."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    e = np.abs(np.asarray(truth, float) - np.asarray(pred, float))
    return np.where(e <= delta, 0.5 * e * e, delta * e - 0.5 * delta * delta)


def huber_grad(pred, truth, delta: float = 1.0):
    """d loss / d pred."""
    return np.clip(np.asarray(pred, float) - np.asarray(truth, float), -delta, delta)


# ---------------------------------------------------------------------------
# batched graph structure

@dataclass
class GraphBatch:
    adj: list  # per edge type, sparse (N, N): adj[t][i, j] = w_ji for edge j->i of type t
    pool: sp.csr_matrix  # (n_nets, N) mean pooling
    pair_net: np.ndarray
    vert: np.ndarray
    env: np.ndarray
    pins: np.ndarray

    @property
    def n_nets(self):
        return self.pool.shape[0]


def edge_norm(src, dst, n_vertices):
    """w_ji = 1 / sqrt(indeg(i) * outdeg(j)) for every edge j -> i."""
    indeg = np.bincount(dst, minlength=n_vertices)
    outdeg = np.bincount(src, minlength=n_vertices)
    return 1.0 / np.sqrt(indeg[dst] * outdeg[src])


def make_batch(fs: FeatureSet, stats: dict) -> GraphBatch:
    n = len(fs.vert_feat)
    w = edge_norm(fs.edge_src, fs.edge_dst, n)
    adj = []
    for t in range(N_EDGE_TYPES):
        sel = fs.edge_type == t
        adj.append(sp.csr_matrix((w[sel], (fs.edge_dst[sel], fs.edge_src[sel])), shape=(n, n)))
    counts = np.diff(fs.vert_ptr)
    vn = fs.vert_net
    pool = sp.csr_matrix((1.0 / counts[vn], (vn, np.arange(n))), shape=(fs.n_nets, n))
    return GraphBatch(
        adj=adj, pool=pool, pair_net=fs.pair_net,
        vert=(fs.vert_feat - stats["vert_mean"]) / stats["vert_std"],
        env=(fs.env - stats["env_mean"]) / stats["env_std"],
        pins=(fs.pin_feat - stats["pin_mean"]) / stats["pin_std"])


def feature_stats(fs: FeatureSet) -> dict:
    def ms(a):
        m = a.mean(axis=0) if len(a) else np.zeros(a.shape[1])
        s = a.std(axis=0) if len(a) else np.ones(a.shape[1])
        return m, np.where(s > 1e-12, s, 1.0)

    out = {}
    for key, arr in (("vert", fs.vert_feat), ("env", fs.env), ("pin", fs.pin_feat)):
        out[key + "_mean"], out[key + "_std"] = ms(arr)
    return out


def identity_stats() -> dict:
    return {"vert_mean": np.zeros(N_VERTEX_FEATURES), "vert_std": np.ones(N_VERTEX_FEATURES),
            "env_mean": np.zeros(N_ENV_FEATURES), "env_std": np.ones(N_ENV_FEATURES),
            "pin_mean": np.zeros(N_PIN_FEATURES), "pin_std": np.ones(N_PIN_FEATURES)}


def _relu(z):
    return np.maximum(z, 0.0)


# ---------------------------------------------------------------------------

class DelayModel:
    """Graph-convolution + residual-MLP delay regressor."""

    kind = "graph"

    def __init__(self, config: Optional[ModelConfig] = None, params: Optional[dict] = None,
                 stats: Optional[dict] = None):
        self.config = config or ModelConfig()
        self.params = params if params is not None else self.init_params(self.config)
        self.stats = stats if stats is not None else identity_stats()
        self.encoded_nets = 0  # topology encodings performed (one per net)

    # parameters -------------------------------------------------------
    @staticmethod
    def init_params(cfg: ModelConfig) -> dict:
        rng = np.random.default_rng(cfg.seed)

        def he(fan_in, shape):
            return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)

        p = {}
        if cfg.use_topology:
            d_in = N_VERTEX_FEATURES
            for layer in range(cfg.conv_layers):
                for t in range(N_EDGE_TYPES):
                    # four typed matrices share the incoming signal; scale down accordingly
                    p[f"conv{layer}_t{t}"] = he(d_in, (d_in, cfg.hidden)) / math.sqrt(2.0)
                d_in = cfg.hidden
            p["reduce_w"] = he(cfg.hidden, (cfg.hidden, cfg.reduced))
            p["reduce_b"] = np.zeros(cfg.reduced)
        cat = (cfg.reduced if cfg.use_topology else 0) + N_ENV_FEATURES + N_PIN_FEATURES
        p["in_w"] = he(cat, (cat, cfg.res_dim))
        p["in_b"] = np.zeros(cfg.res_dim)
        for k in range(cfg.res_blocks):
            p[f"res{k}_w"] = he(cfg.res_dim, (cfg.res_dim, cfg.res_dim)) * 0.5
            p[f"res{k}_b"] = np.zeros(cfg.res_dim)
        p["out_w"] = rng.normal(0.0, 1.0 / math.sqrt(cfg.res_dim), size=cfg.res_dim) * 0.1
        p["out_b"] = np.zeros(1)
        return p

    def zero_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # forward ----------------------------------------------------------
    def _conv_forward(self, batch: GraphBatch, cache: Optional[dict]):
        v = batch.vert
        if cache is not None:
            cache["conv"] = []
        for layer in range(self.config.conv_layers):
            av = [a @ v for a in batch.adj]
            z = sum(av[t] @ self.params[f"conv{layer}_t{t}"] for t in range(N_EDGE_TYPES))
            if cache is not None:
                cache["conv"].append((av, z))
            v = _relu(z)
        return v

    def encode_topology(self, batch: GraphBatch, cache: Optional[dict] = None) -> np.ndarray:
        """Pooled per-net topology vectors, (n_nets, hidden)."""
        self.encoded_nets += batch.n_nets
        v = self._conv_forward(batch, cache)
        y = batch.pool @ v
        if cache is not None:
            cache["y"] = y
        return y

    def regress(self, topo: Optional[np.ndarray], env: np.ndarray, pins: np.ndarray,
                pair_net: np.ndarray, cache: Optional[dict] = None) -> np.ndarray:
        """Raw (unclamped) per-pair delays from pooled topology and standardised features."""
        p = self.params
        parts = []
        r = None
        if self.config.use_topology:
            r = topo @ p["reduce_w"] + p["reduce_b"]
            parts.append(r[pair_net])
        parts += [env[pair_net], pins]
        x = np.concatenate(parts, axis=1)
        h = x @ p["in_w"] + p["in_b"]
        hs = [h]
        zs = []
        for k in range(self.config.res_blocks):
            z = h @ p[f"res{k}_w"] + p[f"res{k}_b"]
            h = _relu(z) + h
            zs.append(z)
            hs.append(h)
        out = h @ p["out_w"] + p["out_b"][0]
        if cache is not None:
            cache.update(x=x, hs=hs, zs=zs, pair_net=pair_net)
        return out

    def forward(self, batch: GraphBatch, cache: Optional[dict] = None) -> np.ndarray:
        topo = self.encode_topology(batch, cache) if self.config.use_topology else None
        return self.regress(topo, batch.env, batch.pins, batch.pair_net, cache)

    # backward ---------------------------------------------------------
    def backward(self, batch: GraphBatch, cache: dict, d_out: np.ndarray) -> dict:
        p, cfg = self.params, self.config
        g = {}
        hs, zs = cache["hs"], cache["zs"]
        g["out_w"] = hs[-1].T @ d_out
        g["out_b"] = np.array([d_out.sum()])
        dh = np.outer(d_out, p["out_w"])
        for k in reversed(range(cfg.res_blocks)):
            dz = dh * (zs[k] > 0)
            g[f"res{k}_w"] = hs[k].T @ dz
            g[f"res{k}_b"] = dz.sum(axis=0)
            dh = dh + dz @ p[f"res{k}_w"].T
        x = cache["x"]
        g["in_w"] = x.T @ dh
        g["in_b"] = dh.sum(axis=0)
        if not cfg.use_topology:
            return g
        dx = dh @ p["in_w"].T
        d_rpair = dx[:, :cfg.reduced]
        n_nets = batch.n_nets
        gather = sp.csr_matrix((np.ones(len(batch.pair_net)),
                                (batch.pair_net, np.arange(len(batch.pair_net)))),
                               shape=(n_nets, len(batch.pair_net)))
        dr = gather @ d_rpair
        g["reduce_w"] = cache["y"].T @ dr
        g["reduce_b"] = dr.sum(axis=0)
        dy = dr @ p["reduce_w"].T
        dv = batch.pool.T @ dy
        for layer in reversed(range(cfg.conv_layers)):
            av, z = cache["conv"][layer]
            dz = dv * (z > 0)
            dv = 0.0
            for t in range(N_EDGE_TYPES):
                w = p[f"conv{layer}_t{t}"]
                g[f"conv{layer}_t{t}"] = av[t].T @ dz
                if layer > 0:
                    dv = dv + batch.adj[t].T @ (dz @ w.T)
        return g

    def loss_and_grad(self, batch: GraphBatch, labels: np.ndarray):
        cache = {}
        pred = self.forward(batch, cache)
        n = len(labels)
        loss = float(huber_loss(pred, labels, self.config.delta).mean())
        d_out = huber_grad(pred, labels, self.config.delta) / n
        return loss, self.backward(batch, cache, d_out)

    def loss(self, batch: GraphBatch, labels: np.ndarray) -> float:
        pred = self.forward(batch)
        return float(huber_loss(pred, labels, self.config.delta).mean())

    # inference --------------------------------------------------------
    def clamp(self, raw):
        return np.maximum(raw, self.config.delay_floor)

    def predict(self, fs: FeatureSet, batch_size: int = 256) -> np.ndarray:
        """Clamped per-pair delays.  Topology is encoded once per net in batches of
        ``batch_size`` nets, then pairs are regressed in batches of ``batch_size``."""
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if fs.n_pairs == 0:
            return np.zeros(0)
        st = self.stats
        topo = None
        if self.config.use_topology:
            chunks = []
            for a in range(0, fs.n_nets, batch_size):
                sub = fs.select(np.arange(a, min(a + batch_size, fs.n_nets)))
                chunks.append(self.encode_topology(make_batch(sub, st)))
            topo = np.concatenate(chunks)
        env = (fs.env - st["env_mean"]) / st["env_std"]
        pins = (fs.pin_feat - st["pin_mean"]) / st["pin_std"]
        pair_net = fs.pair_net
        out = np.empty(fs.n_pairs)
        for a in range(0, fs.n_pairs, batch_size):
            b = min(a + batch_size, fs.n_pairs)
            out[a:b] = self.regress(topo, env, pins[a:b], pair_net[a:b])
        return self.clamp(out)

    # single-net API ---------------------------------------------------
    def encode_net_topology(self, graph: NetGraph) -> np.ndarray:
        """Topology vector of one net graph (standardised vertex features)."""
        fs = _graph_feature_set(graph)
        return self.encode_topology(make_batch(fs, self.stats))[0]

    def predict_net_delays(self, topo: Optional[np.ndarray], env: np.ndarray,
                           pins: np.ndarray) -> np.ndarray:
        st = self.stats
        env = ((np.asarray(env, float) - st["env_mean"]) / st["env_std"])[None, :]
        pins = (np.atleast_2d(np.asarray(pins, float)) - st["pin_mean"]) / st["pin_std"]
        t = None if topo is None else np.asarray(topo)[None, :]
        raw = self.regress(t, env, pins, np.zeros(len(pins), dtype=np.int64))
        return self.clamp(raw)

    # persistence ------------------------------------------------------
    def to_dict(self) -> dict:
        tensors = {k: [list(v.shape), v.ravel().tolist()] for k, v in self.params.items()}
        tensors.update({"stats." + k: [list(v.shape), v.ravel().tolist()]
                        for k, v in self.stats.items()})
        return {"format_version": FORMAT_VERSION, "kind": self.kind,
                "config": asdict(self.config), "tensors": tensors}

    @classmethod
    def from_dict(cls, data: dict) -> "DelayModel":
        cfg = ModelConfig(**data["config"])
        params, stats = {}, {}
        for k, (dims, vals) in data["tensors"].items():
            arr = np.asarray(vals, dtype=float).reshape(dims)
            if k.startswith("stats."):
                stats[k[6:]] = arr
            else:
                params[k] = arr
        model = cls(cfg, params, stats)
        ref = cls.init_params(cfg)
        for k, v in ref.items():
            if k not in params or params[k].shape != v.shape:
                raise ValueError(f"weights file: tensor {k} missing or mis-shaped")
        return model


def _graph_feature_set(graph: NetGraph) -> FeatureSet:
    e = np.asarray(graph.edges, dtype=np.int64).reshape(-1, 3)
    n = graph.num_vertices
    z = np.zeros((1, 0))
    return FeatureSet(
        net_ids=np.zeros(1, np.int64), vert_feat=np.asarray(graph.vertices, float),
        vert_ptr=np.array([0, n]), edge_src=e[:, 0], edge_dst=e[:, 1], edge_type=e[:, 2],
        edge_ptr=np.array([0, len(e)]), env=np.zeros((1, N_ENV_FEATURES)),
        pin_feat=np.zeros((0, N_PIN_FEATURES)), pair_ptr=np.array([0, 0]))


# ---------------------------------------------------------------------------

class LinearBaseline:
    """Affine delay model over (|dx|+|dy|, fanout, routing density, pin density)."""

    kind = "linear"

    def __init__(self, coef: Optional[np.ndarray] = None, delay_floor: float = 0.01):
        self.coef = np.zeros(5) if coef is None else np.asarray(coef, float)
        self.delay_floor = delay_floor

    @staticmethod
    def design(env: np.ndarray, pins: np.ndarray) -> np.ndarray:
        dist = pins[:, 0] + pins[:, 1]
        return np.column_stack([np.ones(len(pins)), dist, env[:, 3], env[:, 4], pins[:, 6]])

    def fit(self, fs: FeatureSet, labels: np.ndarray) -> "LinearBaseline":
        a = self.design(fs.env[fs.pair_net], fs.pin_feat)
        self.coef = np.linalg.lstsq(a, labels, rcond=None)[0]
        return self

    def raw(self, env, pins):
        return self.design(np.atleast_2d(env), np.atleast_2d(pins)) @ self.coef

    def predict(self, fs: FeatureSet, batch_size: int = 256) -> np.ndarray:
        if fs.n_pairs == 0:
            return np.zeros(0)
        return np.maximum(self.raw(fs.env[fs.pair_net], fs.pin_feat), self.delay_floor)

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": self.kind,
                "config": {"delay_floor": self.delay_floor},
                "tensors": {"coef": [[5], self.coef.tolist()]}}

    @classmethod
    def from_dict(cls, data: dict) -> "LinearBaseline":
        return cls(np.asarray(data["tensors"]["coef"][1]), data["config"]["delay_floor"])


def linear_baseline_delay(model: LinearBaseline, env, pin) -> float:
    return float(model.raw(np.asarray(env, float), np.asarray(pin, float))[0])


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path):
    with open(path) as fh:
        data = json.load(fh)
    if data.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported weights format {data.get('format_version')!r}")
    return LinearBaseline.from_dict(data) if data.get("kind") == "linear" else DelayModel.from_dict(data)


# ---------------------------------------------------------------------------
# training

def _net_batches(fs: FeatureSet, order: np.ndarray, batch_pairs: int) -> list[np.ndarray]:
    counts = np.diff(fs.pair_ptr)[order]
    batches, cur, acc = [], [], 0
    for k, c in zip(order, counts):
        cur.append(k)
        acc += c
        if acc >= batch_pairs:
            batches.append(np.array(cur))
            cur, acc = [], 0
    if cur:
        batches.append(np.array(cur))
    return batches


def evaluate(model, fs: FeatureSet) -> dict:
    """MAE / RMSE / R^2 of clamped predictions against fs.labels."""
    pred = model.predict(fs, batch_size=1024)
    y = fs.labels
    err = pred - y
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return {"mae": float(np.abs(err).mean()), "rmse": float(np.sqrt((err ** 2).mean())),
            "r2": 1.0 - float((err ** 2).sum()) / ss_tot if ss_tot > 0 else 0.0, "n": len(y)}


def train_model(train: FeatureSet, val: FeatureSet, config: Optional[ModelConfig] = None,
                hyper: Optional[TrainConfig] = None, progress=None) -> DelayModel:
    """Adam on mean Huber loss; returns the checkpoint with best validation MAE."""
    config = config or ModelConfig()
    hyper = hyper or TrainConfig()
    if train.n_pairs == 0 or val.n_pairs == 0:
        raise ValueError("training and validation sets must be non-empty")
    model = DelayModel(config, stats=feature_stats(train))
    # start the output at the mean label so early epochs fit residual structure
    model.params["out_b"][0] = float(train.labels.mean())
    rng = np.random.default_rng(hyper.seed)
    m = model.zero_like()
    v = model.zero_like()
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    best = (math.inf, None, -1)
    # batches are rebuilt per epoch from a shuffled net order
    for epoch in range(hyper.max_epochs):
        order = rng.permutation(train.n_nets)
        for nets in _net_batches(train, order, hyper.batch_pairs):
            sub = train.select(nets)
            loss, grads = model.loss_and_grad(make_batch(sub, model.stats), sub.labels)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            step += 1
            for k, gk in grads.items():
                m[k] = b1 * m[k] + (1 - b1) * gk
                v[k] = b2 * v[k] + (1 - b2) * gk * gk
                mh = m[k] / (1 - b1 ** step)
                vh = v[k] / (1 - b2 ** step)
                model.params[k] = model.params[k] - hyper.lr * mh / (np.sqrt(vh) + eps)
        val_mae = evaluate(model, val)["mae"]
        if progress:
            progress(epoch, val_mae)
        if val_mae < best[0] - 1e-12:
            best = (val_mae, {k: a.copy() for k, a in model.params.items()}, epoch)
        elif epoch - best[2] >= hyper.patience:
            break
    model.params = best[1]
    model.encoded_nets = 0
    log.info("training stopped; best val MAE %.5f at epoch %d", best[0], best[2])
    return model


# ---------------------------------------------------------------------------

def batched_net_delays(nets: Sequence[int], netlist, placement, grid, model,
                       batch_size: int = 256, extractor: Optional[FeatureExtractor] = None
                       ) -> dict[int, np.ndarray]:
    """Per-net arrays of load delays (ns), keyed by net id."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    nets = list(nets)
    if not nets:
        return {}
    ex = extractor or FeatureExtractor(netlist, placement, grid)
    fs = ex.extract(nets)
    flat = model.predict(fs, batch_size)
    return {int(n): flat[fs.pair_ptr[k]:fs.pair_ptr[k + 1]] for k, n in enumerate(fs.net_ids)}


def sequential_net_delays(nets: Sequence[int], netlist, placement, grid, model
                          ) -> dict[int, np.ndarray]:
    """Reference path: one net at a time through the single-net API."""
    from .features import build_net_graph

    ex = FeatureExtractor(netlist, placement, grid)
    out = {}
    for n in nets:
        fs = ex.extract([n])
        if isinstance(model, DelayModel):
            topo = None
            if model.config.use_topology:
                topo = model.encode_net_topology(build_net_graph(netlist, n, placement))
            out[int(n)] = model.predict_net_delays(topo, fs.env[0], fs.pin_feat)
        else:
            out[int(n)] = model.predict(fs)
    return out
