"""Two-layer GraphSAGE with concat-mean aggregation, an MLP classifier
head, and the phase-1 training loop emitting 1-hop and 2-hop embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Parameter
from .metrics import split_metric
from .optim import AdamW


@dataclass
class SageTrainConfig:
    lr: float = 1e-2
    weight_decay: float = 1e-2
    epochs: int = 500
    patience: int = 20
    seed: int = 0


class SageModel:
    """Trainable in phase-1, frozen afterwards. Layer weights follow the
    concat convention: W has shape (g, 2*k) for input width k."""

    def __init__(self, in_dim, embed_dim, hidden, num_classes, seed=0,
                 dtype=np.float64):
        rng = np.random.default_rng(seed)
        g = embed_dim

        def w(shape, name):
            return Parameter(rng.normal(0.0, 0.02, shape).astype(dtype),
                             name=name)

        def zeros(shape, name):
            return Parameter(np.zeros(shape, dtype=dtype), name=name)

        self.w0 = w((g, 2 * in_dim), "sage.w0")
        self.b0 = zeros(g, "sage.b0")
        self.w1 = w((g, 2 * g), "sage.w1")
        self.b1 = zeros(g, "sage.b1")
        self.cls_w1 = w((hidden, g), "sage.cls_w1")
        self.cls_b1 = zeros(hidden, "sage.cls_b1")
        self.cls_w2 = w((num_classes, hidden), "sage.cls_w2")
        self.cls_b2 = zeros(num_classes, "sage.cls_b2")
        self.embed_dim = g

    def parameters(self):
        return [self.w0, self.b0, self.w1, self.b1,
                self.cls_w1, self.cls_b1, self.cls_w2, self.cls_b2]

    def freeze(self):
        for p in self.parameters():
            p.frozen = True
        return self

    def snapshot(self):
        return [p.value.copy() for p in self.parameters()]

    def restore(self, snap):
        for p, v in zip(self.parameters(), snap):
            p.value[...] = v

    def classify(self, embeddings):
        h = ad.relu(ad.linear(embeddings, self.cls_w1, self.cls_b1))
        return ad.linear(h, self.cls_w2, self.cls_b2)


def mean_aggregation_matrix(graph, dtype=np.float64):
    """Sparse N x N matrix whose row v averages over N(v); all-zero rows
    for isolated nodes, so the empty-neighborhood mean is the zero vector."""
    n = graph.num_nodes
    rows, cols, vals = [], [], []
    for v in range(n):
        nbrs = graph.adjacency[v]
        if not nbrs:
            continue
        inv = 1.0 / len(nbrs)
        rows.extend([v] * len(nbrs))
        cols.extend(nbrs)
        vals.extend([inv] * len(nbrs))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=dtype)


def sage_pass(x, agg, w, b):
    """ReLU(W . concat(x_v, mean_{u in N(v)} x_u) + b) for every node.

    `agg` is the graph's mean-aggregation matrix (or a graph, from which
    one is built).
    """
    if not sp.issparse(agg):
        agg = mean_aggregation_matrix(agg, dtype=ad.val(x).dtype)
    k = ad.val(x).shape[-1]
    if ad.val(w).shape[-1] != 2 * k:
        raise ad.ShapeError("sage_pass", ad.val(w).shape, (..., 2 * k))
    neighbor_mean = ad.sparse_matmul(agg, x)
    return ad.relu(ad.linear(ad.concat_cols(x, neighbor_mean), w, b))


def forward_embeddings(model, x, graph_or_agg):
    """(pass1, pass2): 1-hop then 2-hop aggregation, the second pass
    consuming the first pass's states."""
    agg = graph_or_agg
    if not sp.issparse(agg):
        agg = mean_aggregation_matrix(agg, dtype=ad.val(x).dtype)
    pass1 = sage_pass(x, agg, model.w0, model.b0)
    pass2 = sage_pass(pass1, agg, model.w1, model.b1)
    return pass1, pass2


@dataclass
class SageEmbeddings:
    pass1: np.ndarray
    pass2: np.ndarray

    def validate(self, graph):
        for name, m in (("pass1", self.pass1), ("pass2", self.pass2)):
            if m.shape[0] != graph.num_nodes:
                raise ad.ShapeError(f"embeddings.{name}", m.shape,
                                    (graph.num_nodes, ...))
            if not np.all(np.isfinite(m)):
                raise ad.NumericsError(f"non-finite entries in {name}")
        return self


@dataclass
class Phase1Result:
    model: SageModel
    embeddings: SageEmbeddings
    best_epoch: int
    val_metric: float
    metric_name: str
    loss_trace: list = field(default_factory=list)
    val_trace: list = field(default_factory=list)


def train_phase1(model, x, graph, config):
    """Full-batch AdamW on cross-entropy over the train nodes' pass-2
    classifier logits, early-stopped on the validation metric. Returns the
    best-validation checkpoint's model and embeddings; the model comes back
    frozen, ready for phase-2."""
    agg = mean_aggregation_matrix(graph, dtype=ad.val(x).dtype)
    labels = graph.labels()
    train_idx = graph.split_ids("train")
    val_idx = graph.split_ids("val")
    opt = AdamW(model.parameters(), lr=config.lr,
                weight_decay=config.weight_decay)
    metric_name = "roc_auc" if graph.num_classes == 2 else "accuracy"

    def eval_val():
        with ad.no_grad():
            _, pass2 = forward_embeddings(model, x, agg)
            logits = np.asarray(model.classify(pass2))
        return split_metric(logits[val_idx], labels[val_idx], graph.num_classes)

    best = (eval_val(), 0, model.snapshot())
    result = Phase1Result(model=model, embeddings=None, best_epoch=0,
                          val_metric=best[0], metric_name=metric_name)
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        opt.zero_grad()
        _, pass2 = forward_embeddings(model, x, agg)
        logits = model.classify(pass2)
        loss = ad.cross_entropy(ad.gather_rows(logits, train_idx),
                                labels[train_idx])
        if not np.isfinite(ad.val(loss)):
            raise ad.NumericsError(f"non-finite phase-1 loss at epoch {epoch}")
        ad.backward(loss)
        opt.step()
        val_metric = eval_val()
        result.loss_trace.append(float(ad.val(loss)))
        result.val_trace.append(float(val_metric))
        if val_metric > best[0]:
            best = (val_metric, epoch, model.snapshot())
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    model.restore(best[2])
    model.freeze()
    with ad.no_grad():
        pass1, pass2 = forward_embeddings(model, x, agg)
    result.embeddings = SageEmbeddings(pass1=np.asarray(pass1),
                                       pass2=np.asarray(pass2)).validate(graph)
    result.best_epoch = best[1]
    result.val_metric = float(best[0])
    return result
