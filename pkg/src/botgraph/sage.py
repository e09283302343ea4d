"""Inductive two-layer GraphSAGE classifier over the bipartite graph.

Each layer computes h_v = relu(W . mean({h_v} u {h_u : u sampled neighbor}))
with the node's own previous-layer vector included in the mean. Type-specific
input encoders map 11-dim session rows and 12-dim URL rows into a shared
space; an MLP head turns target-session embeddings into bot logits. Only
session nodes are supervised; URL nodes carry signal through message passing
alone. Scoring a new session mutates the graph, never the parameters.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator

from . import evaluation
from .errors import (CorruptCheckpoint, MissingFeatures, NoPositiveLabels,
                     SchemaVersionMismatch)
from .features import (FeaturePack, NormStats, extract_session_features,
                       fit_norm_stats, CategoryLookup)
from .graph import (BipartiteGraph, RefinementPolicy, SampledSubgraph,
                    add_session, k_hop_subgraph, k_hop_subgraph_keyed)
from .logs import Session
from .nn import (Adam, DenseLayer, EarlyStopper, dropout, positive_class_weight,
                 sigmoid, weighted_bce_logits)
from .util import derive_seed

CHECKPOINT_VERSION = 1


def aggregate_mean(self_vec: np.ndarray, neighbor_vecs: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean over the node's own vector and its neighbors.

    Sums are exactly rounded (math.fsum per dimension), so the result is
    bit-identical under any permutation of the neighbor list.
    """
    self_vec = np.asarray(self_vec, dtype=float)
    stack = [self_vec] + [np.asarray(v, dtype=float) for v in neighbor_vecs]
    for v in stack:
        if v.shape != self_vec.shape:
            raise ValueError(f"dimension mismatch: {v.shape} vs {self_vec.shape}")
    n = len(stack)
    return np.array([math.fsum(vec[d] for vec in stack) / n
                     for d in range(self_vec.shape[0])])


@dataclass
class ForwardBatch:
    """Gathered, standardized inputs plus mean-aggregation operators."""

    x_session: np.ndarray
    x_url: np.ndarray
    session_slots: np.ndarray
    url_slots: np.ndarray
    a1: sparse.csr_matrix  # (n_mid, n_base) row-stochastic, self included
    a2: sparse.csr_matrix  # (n_roots, n_mid)
    sub: SampledSubgraph


def _mean_matrix(targets: np.ndarray, samp: dict[int, tuple[int, ...]],
                 source_nodes: np.ndarray) -> sparse.csr_matrix:
    """Row-stochastic matrix averaging each target with its sampled
    neighbors; column order per row is ascending node id, so summation
    order is canonical."""
    from bisect import bisect_left
    groups = []
    lengths = np.empty(len(targets), dtype=np.int64)
    for i, v in enumerate(targets):
        v = int(v)
        neigh = samp[v]
        merged = list(neigh)
        merged.insert(bisect_left(merged, v), v)  # v never neighbors itself
        groups.append(merged)
        lengths[i] = len(merged)
    flat = np.concatenate([np.asarray(grp, dtype=np.int64) for grp in groups]) \
        if groups else np.zeros(0, dtype=np.int64)
    indices = np.searchsorted(source_nodes, flat).astype(np.int32)
    data = np.repeat(1.0 / lengths, lengths)
    indptr = np.zeros(len(targets) + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    return sparse.csr_matrix((data, indices, indptr),
                             shape=(len(targets), len(source_nodes)))


def assemble_batch(g: BipartiteGraph, pack: FeaturePack, norm: NormStats,
                   sub: SampledSubgraph) -> ForwardBatch:
    """Gather standardized feature rows for the sampled subgraph."""
    base = sub.base_nodes
    kind, kind_pos = g.arrays()
    kinds = kind[base]
    rows = kind_pos[base]
    sess_slots = np.flatnonzero(kinds == 0)
    url_slots = np.flatnonzero(kinds == 1)
    sess_rows = rows[sess_slots]
    url_rows = rows[url_slots]
    if sess_rows.size and sess_rows.max() >= pack.session_x.shape[0]:
        raise MissingFeatures("session node without a feature row")
    if url_rows.size and url_rows.max() >= pack.url_x.shape[0]:
        raise MissingFeatures("url node without a feature row")
    x_session = pack.session_x[sess_rows] if sess_rows.size \
        else np.zeros((0, pack.session_x.shape[1]))
    x_url = pack.url_x[url_rows] if url_rows.size \
        else np.zeros((0, pack.url_x.shape[1]))
    x_session = (x_session - norm.session_mean) / norm.session_scale
    x_url = (x_url - norm.url_mean) / norm.url_scale

    a1 = _mean_matrix(sub.mid_nodes, sub.samp_inner, base)
    a2 = _mean_matrix(sub.roots, sub.samp_outer, sub.mid_nodes)
    return ForwardBatch(
        x_session=x_session, x_url=x_url,
        session_slots=sess_slots, url_slots=url_slots,
        a1=a1, a2=a2, sub=sub)


@dataclass
class EmbeddingSet:
    """Per-node embeddings at every level of the forward pass."""

    h0: dict[int, np.ndarray]
    h1: dict[int, np.ndarray]
    h2: dict[int, np.ndarray]


class GraphSageNet:
    """Parameter container and manual forward/backward pass."""

    def __init__(self, session_dim: int, url_dim: int, encoder_dim: int,
                 hidden_dim: int, rng: np.random.Generator):
        self.session_dim = session_dim
        self.url_dim = url_dim
        self.encoder_dim = encoder_dim
        self.hidden_dim = hidden_dim
        self.enc_session = DenseLayer(session_dim, encoder_dim, "identity", rng)
        self.enc_url = DenseLayer(url_dim, encoder_dim, "identity", rng)
        self.sage1 = DenseLayer(encoder_dim, hidden_dim, "relu", rng)
        self.sage2 = DenseLayer(hidden_dim, hidden_dim, "relu", rng)
        self.head_hidden = DenseLayer(hidden_dim, hidden_dim, "relu", rng)
        self.head_out = DenseLayer(hidden_dim, 1, "identity", rng)

    def _layers(self) -> dict[str, DenseLayer]:
        return {"enc_session": self.enc_session, "enc_url": self.enc_url,
                "sage1": self.sage1, "sage2": self.sage2,
                "head_hidden": self.head_hidden, "head_out": self.head_out}

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._layers().items():
            out[f"{name}.W"] = layer.W
            out[f"{name}.b"] = layer.b
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._layers().items():
            out[f"{name}.W"] = layer.grad_W
            out[f"{name}.b"] = layer.grad_b
        return out

    def zero_grad(self):
        for layer in self._layers().values():
            layer.zero_grad()

    def forward(self, batch: ForwardBatch, training: bool = False,
                dropout_p: float = 0.0,
                rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        n_base = len(batch.sub.base_nodes)
        h0 = np.zeros((n_base, self.encoder_dim))
        if batch.session_slots.size:
            h0[batch.session_slots] = self.enc_session.forward(batch.x_session)
        if batch.url_slots.size:
            h0[batch.url_slots] = self.enc_url.forward(batch.x_url)
        g1 = batch.a1 @ h0
        h1 = self.sage1.forward(g1)
        h1d, mask1 = dropout(h1, dropout_p, rng, training)
        g2 = batch.a2 @ h1d
        h2 = self.sage2.forward(g2)
        h2d, mask2 = dropout(h2, dropout_p, rng, training)
        hh = self.head_hidden.forward(h2d)
        logits2d = self.head_out.forward(hh)
        cache = (batch, h0, g1, h1, mask1, g2, h2, mask2, h2d, hh, logits2d)
        return logits2d[:, 0], cache

    def backward(self, cache, dlogits: np.ndarray) -> None:
        batch, h0, g1, h1, mask1, g2, h2, mask2, h2d, hh, logits2d = cache
        dhh = self.head_out.backward(hh, logits2d, dlogits[:, None])
        dh2d = self.head_hidden.backward(h2d, hh, dhh)
        dh2 = dh2d * mask2
        dg2 = self.sage2.backward(g2, h2, dh2)
        dh1d = batch.a2.T @ dg2
        dh1 = dh1d * mask1
        dg1 = self.sage1.backward(g1, h1, dh1)
        dh0 = batch.a1.T @ dg1
        if batch.session_slots.size:
            self.enc_session.backward(batch.x_session,
                                      h0[batch.session_slots],
                                      dh0[batch.session_slots])
        if batch.url_slots.size:
            self.enc_url.backward(batch.x_url, h0[batch.url_slots],
                                  dh0[batch.url_slots])

    def embeddings(self, cache) -> EmbeddingSet:
        batch, h0, g1, h1, mask1, g2, h2, mask2, h2d, hh, logits2d = cache
        sub = batch.sub
        return EmbeddingSet(
            h0={int(v): h0[i] for i, v in enumerate(sub.base_nodes)},
            h1={int(v): h1[i] for i, v in enumerate(sub.mid_nodes)},
            h2={int(v): h2[i] for i, v in enumerate(sub.roots)},
        )


def params_digest(net: GraphSageNet) -> str:
    """Hash of all trainable parameters; used to assert inductiveness."""
    h = hashlib.sha256()
    for name in sorted(net.parameters()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(net.parameters()[name]).tobytes())
    return h.hexdigest()


class GraphSageClassifier(BaseEstimator):
    """Estimator-style wrapper: fit on a labeled graph, score session nodes.

    ``fit`` standardizes raw features with train-split statistics, trains
    with sampled mini-batches and weighted BCE, early-stops on validation
    AUC (sampling frozen to an eval seed), and restores the best epoch's
    weights.
    """

    def __init__(self, hidden_dim: int = 128, encoder_dim: int = 64,
                 fanout: int = 15, epochs_max: int = 200, patience: int = 10,
                 batch_size: int = 256, lr: float = 1e-3,
                 dropout: float = 0.3, weight_decay: float = 1e-4,
                 seed: int = 0):
        self.hidden_dim = hidden_dim
        self.encoder_dim = encoder_dim
        self.fanout = fanout
        self.epochs_max = epochs_max
        self.patience = patience
        self.batch_size = batch_size
        self.lr = lr
        self.dropout = dropout
        self.weight_decay = weight_decay
        self.seed = seed

    # -- helpers ----------------------------------------------------------

    def _label_arrays(self, y: dict[int, int], nodes: Sequence[int]) -> np.ndarray:
        return np.asarray([y[int(v)] for v in nodes], dtype=float)

    def _weights_for(self, yb: np.ndarray) -> np.ndarray:
        return np.where(yb == 1.0, self.w_pos_, 1.0)

    def _forward_subgraph(self, g, pack, sub, training=False, rng=None):
        batch = assemble_batch(g, pack, self.norm_stats_, sub)
        return self.net_.forward(batch, training=training,
                                 dropout_p=self.dropout if training else 0.0,
                                 rng=rng), batch

    def _scores_keyed(self, g, pack, nodes, chunk: int = 512) -> np.ndarray:
        """Logits under per-node keyed sampling (batch == one-at-a-time)."""
        out = np.empty(len(nodes))
        nodes = [int(v) for v in nodes]
        for lo in range(0, len(nodes), chunk):
            part = nodes[lo:lo + chunk]
            sub = k_hop_subgraph_keyed(g, part, 2, self.fanout,
                                       base_seed=self.infer_seed_)
            (logits, _), _ = self._forward_subgraph(g, pack, sub)
            out[lo:lo + len(part)] = logits
        return out

    # -- estimator API ------------------------------------------------------

    def fit(self, g: BipartiteGraph, pack: FeaturePack, y: dict[int, int],
            train_nodes: Sequence[int], val_nodes: Sequence[int] | None = None):
        train_nodes = [int(v) for v in train_nodes]
        if val_nodes is None:
            train_nodes, val_nodes = evaluation.stratified_holdout(
                train_nodes, [y[v] for v in train_nodes], frac=0.1,
                seed=derive_seed(self.seed, "val-holdout"))
        val_nodes = [int(v) for v in val_nodes]

        y_train = self._label_arrays(y, train_nodes)
        self.w_pos_ = positive_class_weight(y_train)
        self.norm_stats_ = fit_norm_stats(
            pack, [g.kind_pos(v) for v in train_nodes])
        self.infer_seed_ = derive_seed(self.seed, "inference")

        init_rng = np.random.default_rng(derive_seed(self.seed, "init"))
        shuffle_rng = np.random.default_rng(derive_seed(self.seed, "shuffle"))
        sample_rng = np.random.default_rng(derive_seed(self.seed, "sample"))
        drop_rng = np.random.default_rng(derive_seed(self.seed, "dropout"))

        self.net_ = GraphSageNet(pack.session_x.shape[1], pack.url_x.shape[1],
                                 self.encoder_dim, self.hidden_dim, init_rng)
        self.adam_ = Adam(lr=self.lr, weight_decay=self.weight_decay)

        # Validation neighborhoods frozen to the eval seed: early stopping
        # compares like with like across epochs.
        y_val = self._label_arrays(y, val_nodes)
        val_sub = k_hop_subgraph_keyed(g, val_nodes, 2, self.fanout,
                                       base_seed=derive_seed(self.seed, "eval"))
        val_batch = assemble_batch(g, pack, self.norm_stats_, val_sub)

        stopper = EarlyStopper(patience=self.patience)
        best_params = {k: v.copy() for k, v in self.net_.parameters().items()}
        best_loss = np.inf
        self.history_ = []
        order_pool = np.asarray(train_nodes, dtype=np.int64)

        for epoch in range(1, self.epochs_max + 1):
            order = shuffle_rng.permutation(order_pool)
            losses = []
            for lo in range(0, len(order), self.batch_size):
                chunk = order[lo:lo + self.batch_size]
                sub = k_hop_subgraph(g, chunk, 2, self.fanout, rng=sample_rng)
                (logits, cache), _ = self._forward_subgraph(
                    g, pack, sub, training=True, rng=drop_rng)
                yb = self._label_arrays(y, chunk)
                loss, dz = weighted_bce_logits(yb, logits, self._weights_for(yb))
                self.net_.zero_grad()
                self.net_.backward(cache, dz)
                params = self.net_.parameters()
                grads = self.net_.grads()
                if self.weight_decay:
                    for name in grads:
                        grads[name] = grads[name] + self.weight_decay * params[name]
                self.adam_.step(params, grads)
                losses.append(loss)

            val_logits, _ = self.net_.forward(val_batch)
            val_auc = evaluation.auc(val_logits, y_val)
            val_loss, _ = weighted_bce_logits(y_val, val_logits,
                                              self._weights_for(y_val))
            self.history_.append({"epoch": epoch,
                                  "train_loss": float(np.mean(losses)),
                                  "val_auc": float(val_auc),
                                  "val_loss": float(val_loss)})
            improved = stopper.update(epoch, val_auc)
            # AUC ties (common once validation saturates) break toward the
            # lower-loss epoch; the patience clock still follows AUC only.
            if improved or (val_auc == stopper.best and val_loss < best_loss):
                best_loss = val_loss
                best_params = {k: v.copy()
                               for k, v in self.net_.parameters().items()}
            if stopper.should_stop(epoch):
                break

        for name, value in self.net_.parameters().items():
            value[...] = best_params[name]
        self.best_val_auc_ = stopper.best
        self.val_nodes_ = list(val_nodes)
        self.threshold_ = None
        return self

    def fine_tune(self, g: BipartiteGraph, pack: FeaturePack,
                  y: dict[int, int], train_nodes: Sequence[int],
                  epochs: int = 20, lr: float | None = None):
        """Continue training on new labeled sessions (fixed epoch budget)."""
        train_nodes = [int(v) for v in train_nodes]
        y_train = self._label_arrays(y, train_nodes)
        self.w_pos_ = positive_class_weight(y_train)
        self.adam_.lr = lr if lr is not None else self.adam_.lr
        shuffle_rng = np.random.default_rng(derive_seed(self.seed, "ft-shuffle"))
        sample_rng = np.random.default_rng(derive_seed(self.seed, "ft-sample"))
        drop_rng = np.random.default_rng(derive_seed(self.seed, "ft-dropout"))
        order_pool = np.asarray(train_nodes, dtype=np.int64)
        for _ in range(epochs):
            order = shuffle_rng.permutation(order_pool)
            for lo in range(0, len(order), self.batch_size):
                chunk = order[lo:lo + self.batch_size]
                sub = k_hop_subgraph(g, chunk, 2, self.fanout, rng=sample_rng)
                (logits, cache), _ = self._forward_subgraph(
                    g, pack, sub, training=True, rng=drop_rng)
                yb = self._label_arrays(y, chunk)
                _, dz = weighted_bce_logits(yb, logits, self._weights_for(yb))
                self.net_.zero_grad()
                self.net_.backward(cache, dz)
                params = self.net_.parameters()
                grads = self.net_.grads()
                if self.weight_decay:
                    for name in grads:
                        grads[name] = grads[name] + self.weight_decay * params[name]
                self.adam_.step(params, grads)
        return self

    def decision_function(self, g: BipartiteGraph, pack: FeaturePack,
                          nodes: Sequence[int]) -> np.ndarray:
        return self._scores_keyed(g, pack, nodes)

    def predict_proba(self, g: BipartiteGraph, pack: FeaturePack,
                      nodes: Sequence[int]) -> np.ndarray:
        p = sigmoid(self._scores_keyed(g, pack, nodes))
        return np.column_stack([1.0 - p, p])

    def predict(self, g: BipartiteGraph, pack: FeaturePack,
                nodes: Sequence[int]) -> np.ndarray:
        t = self.threshold_ if self.threshold_ is not None else 0.5
        return (self.predict_proba(g, pack, nodes)[:, 1] >= t).astype(int)

    def embed(self, g: BipartiteGraph, pack: FeaturePack,
              nodes: Sequence[int]) -> EmbeddingSet:
        sub = k_hop_subgraph_keyed(g, [int(v) for v in nodes], 2, self.fanout,
                                   base_seed=self.infer_seed_)
        (_, cache), _ = self._forward_subgraph(g, pack, sub)
        return self.net_.embeddings(cache)


def score_session(clf: GraphSageClassifier, g: BipartiteGraph,
                  pack: FeaturePack, s: Session,
                  category_of: CategoryLookup | None = None,
                  policy: RefinementPolicy | None = None
                  ) -> tuple[float, int]:
    """Insert one session and return its bot probability inductively.

    New URL nodes get fallback feature rows with popularity 0 (training
    statistics are frozen). Model parameters are never touched.
    """
    v = add_session(g, s, policy=policy, category_of=category_of)
    row = extract_session_features(s, category_of)
    pos = pack.append_session(row)
    assert pos == g.kind_pos(v)
    _append_missing_url_rows(g, pack, category_of)
    prob = float(clf.predict_proba(g, pack, [v])[0, 1])
    return prob, v


def _append_missing_url_rows(g: BipartiteGraph, pack: FeaturePack,
                             category_of: CategoryLookup | None) -> None:
    from .features import extract_url_features
    n_have = pack.url_x.shape[0]
    n_need = g.n_urls
    if n_need <= n_have:
        return
    by_pos = {g.kind_pos(v): v for v in g.url_nodes() if g.kind_pos(v) >= n_have}
    for pos in range(n_have, n_need):
        url = g.node_key(by_pos[pos])
        pack.append_url(extract_url_features(url, 0, category_of))


# --- checkpointing ---------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_checkpoint(model, path: str | Path, threshold: float | None = None,
                    extra: dict | None = None) -> None:
    """Single JSON document: header with content digest, then weights.

    Works for both model kinds; the MLP baseline stores the same container
    with its own kind tag.
    """
    from .baseline import MlpClassifier  # local import to avoid a cycle
    if isinstance(model, GraphSageClassifier):
        kind = "graphsage"
        dims = {"session_dim": model.net_.session_dim,
                "url_dim": model.net_.url_dim,
                "encoder_dim": model.net_.encoder_dim,
                "hidden_dim": model.net_.hidden_dim}
        norm = model.norm_stats_.to_json()
        net = model.net_
    elif isinstance(model, MlpClassifier):
        kind = "mlp"
        dims = {"input_dim": model.net_.input_dim,
                "hidden_dim": model.net_.hidden_dim}
        norm = {"mean": model.scaler_.mean_.tolist(),
                "scale": model.scaler_.scale_.tolist()}
        net = model.net_
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")

    if threshold is None:
        threshold = getattr(model, "threshold_", None)
    body = {
        "kind": kind,
        "params": model.get_params(),
        "dims": dims,
        "weights": {k: v.tolist() for k, v in net.parameters().items()},
        "adam": model.adam_.state_dict(),
        "norm_stats": norm,
        "threshold": threshold,
        "infer_seed": getattr(model, "infer_seed_", 0),
        "w_pos": getattr(model, "w_pos_", 1.0),
        "extra": extra or {},
    }
    doc = {
        "version": CHECKPOINT_VERSION,
        "created_unix": int(time.time()),
        "digest": hashlib.sha256(_canonical(body).encode()).hexdigest(),
        "body": body,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: str | Path):
    """Round-trip counterpart of :func:`save_checkpoint`.

    Raises SchemaVersionMismatch for unknown versions and CorruptCheckpoint
    when the file does not parse or the digest does not match.
    """
    from .baseline import MlpClassifier, MlpNet
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"unparseable checkpoint: {exc}") from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise CorruptCheckpoint("missing checkpoint header")
    if doc["version"] != CHECKPOINT_VERSION:
        raise SchemaVersionMismatch(
            f"checkpoint version {doc['version']!r}, "
            f"reader supports {CHECKPOINT_VERSION}")
    body = doc.get("body")
    if body is None or hashlib.sha256(
            _canonical(body).encode()).hexdigest() != doc.get("digest"):
        raise CorruptCheckpoint("content digest mismatch")

    kind = body["kind"]
    weights = {k: np.asarray(v, dtype=float) for k, v in body["weights"].items()}
    if kind == "graphsage":
        clf = GraphSageClassifier(**body["params"])
        dims = body["dims"]
        rng = np.random.default_rng(0)
        clf.net_ = GraphSageNet(dims["session_dim"], dims["url_dim"],
                                dims["encoder_dim"], dims["hidden_dim"], rng)
        clf.norm_stats_ = NormStats.from_json(body["norm_stats"])
    elif kind == "mlp":
        clf = MlpClassifier(**body["params"])
        dims = body["dims"]
        clf.net_ = MlpNet(dims["input_dim"], dims["hidden_dim"],
                          np.random.default_rng(0))
        from .features import ColumnStandardizer
        clf.scaler_ = ColumnStandardizer.from_arrays(
            body["norm_stats"]["mean"], body["norm_stats"]["scale"])
    else:
        raise CorruptCheckpoint(f"unknown model kind {kind!r}")

    for name, value in clf.net_.parameters().items():
        value[...] = weights[name]
    clf.adam_ = Adam.from_state_dict(body["adam"])
    clf.threshold_ = body.get("threshold")
    clf.infer_seed_ = body.get("infer_seed", 0)
    clf.w_pos_ = body.get("w_pos", 1.0)
    return clf
