"""Phase-2 fine-tuning over node texts with structural injection, plus
evaluation, seed sweeps, and the rank/prompt ablation harnesses."""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .fusion import (LoraPair, audit_parameters, build_adapter_set,
                     default_placement)
from .metrics import metric_name, split_metric
from .optim import AdamW
from .textenc import PromptSpec, encode, pool_states, tokenize_graph

BASELINES = ("fused", "text_only", "lora_only")
LORA_TARGETS = ("q", "k", "v", "o")


class TrainerConfigError(ValueError):
    pass


def derive_seed(*keys):
    """Stable 64-bit stream seed from a tuple of keys. Keeps component
    inits independent, so disabling one arm never shifts another's draws."""
    digest = hashlib.sha256("/".join(map(str, keys)).encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class RunConfig:
    lr: float = 3e-4
    weight_decay: float = 1e-2
    batch_size: int = 32
    epochs: int = 100
    patience: int = 10
    seeds: tuple = (0, 1, 2, 3, 4)
    seq_len: int = 32
    prompt: str = ""
    rank: int = 4
    pass1_layers: tuple = ()     # empty: proportional default placement
    pass2_layers: tuple = ()
    enable_fusion: bool = True
    enable_lora: bool = True
    baseline: str = "fused"
    lora_targets: tuple = LORA_TARGETS
    fusion_mode: str = "residual"
    fusion_tying: str = "separate"
    pooling: str = "mean"

    def __post_init__(self):
        if self.baseline not in BASELINES:
            raise TrainerConfigError(f"unknown baseline {self.baseline!r}; "
                                     f"choose from {BASELINES}")
        if self.rank < 1:
            raise TrainerConfigError(f"rank must be >= 1, got {self.rank}")
        bad = set(self.lora_targets) - set(LORA_TARGETS)
        if bad:
            raise TrainerConfigError(f"unknown LoRA targets {sorted(bad)}")

    def toggles(self):
        """(fusion, lora) after applying the baseline mode."""
        if self.baseline == "text_only":
            return False, False
        if self.baseline == "lora_only":
            return False, self.enable_lora
        return self.enable_fusion, self.enable_lora

    def placement(self, num_layers):
        if self.pass1_layers and self.pass2_layers:
            return tuple(self.pass1_layers), tuple(self.pass2_layers)
        return default_placement(num_layers)


class Phase2Assembly:
    """Frozen backbone + frozen structural embeddings, with trainable
    fusion adapters, LoRA pairs, and a linear classification head."""

    def __init__(self, backbone, embeddings, num_classes, config, seed):
        self.backbone = backbone
        self.embeddings = embeddings
        self.config = config
        d = backbone.config.dim
        g = embeddings.pass1.shape[1]
        dtype = backbone.config.dtype
        use_fusion, use_lora = config.toggles()
        pass1_layers, pass2_layers = config.placement(backbone.config.layers)
        adapted = sorted(pass1_layers) + sorted(pass2_layers)

        self.lora = {}
        if use_lora:
            for layer in adapted:
                self.lora[layer] = {
                    t: LoraPair(d, d, config.rank, f"layer{layer}.{t}",
                                seed=derive_seed(seed, "lora", layer, t),
                                dtype=dtype)
                    for t in config.lora_targets}

        self.adapters = None
        if use_fusion:
            tie_pairs = None
            if config.fusion_tying == "shared":
                if not use_lora or "o" not in config.lora_targets:
                    raise TrainerConfigError(
                        "shared fusion tying needs LoRA pairs on the 'o' "
                        "projection to alias")
                tie_pairs = {layer: self.lora[layer]["o"] for layer in adapted}
            self.adapters = build_adapter_set(
                backbone.config.layers, pass1_layers, pass2_layers,
                config.rank, d, g, seed=derive_seed(seed, "fusion"),
                mode=config.fusion_mode, tie_pairs=tie_pairs, dtype=dtype)

        rng = np.random.default_rng(derive_seed(seed, "head"))
        self.head_w = Parameter(rng.normal(0.0, 0.02, (num_classes, d))
                                .astype(dtype), name="head.w")
        self.head_b = Parameter(np.zeros(num_classes, dtype=dtype),
                                name="head.b")

    def trainable_parameters(self):
        seen, out = set(), []
        for _, p in self.registry():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out

    def registry(self):
        """(component, Parameter) pairs for everything that trains in
        phase-2. Tied parameters appear once per owner; the auditor
        deduplicates by identity."""
        reg = []
        if self.adapters is not None:
            reg.extend(("fusion", p) for p in self.adapters.parameters())
        for pairs in self.lora.values():
            for pair in pairs.values():
                reg.extend(("lora_pairs", p) for p in pair.parameters())
        reg.extend(("classifier_head", p) for p in (self.head_w, self.head_b))
        return reg

    def snapshot(self):
        return [p.value.copy() for p in self.trainable_parameters()]

    def restore(self, snap):
        for p, v in zip(self.trainable_parameters(), snap):
            p.value[...] = v

    def logits(self, ids, mask, node_ids):
        h2 = {"pass1": self.embeddings.pass1[node_ids],
              "pass2": self.embeddings.pass2[node_ids]}
        hidden = encode(self.backbone, ids, mask, adapters=self.adapters,
                        node_embeddings=h2, lora=self.lora)
        pooled = pool_states(hidden, mask, self.config.pooling)
        return ad.linear(pooled, self.head_w, self.head_b)


def evaluate(assembly, graph, ids, mask, split, batch_size=128):
    """Headline metric of the assembly on one split: accuracy by argmax,
    or ROC-AUC over positive-class scores for binary tasks."""
    idx = graph.split_ids(split)
    if len(idx) == 0:
        raise TrainerConfigError(f"split {split!r} is empty")
    labels = graph.labels()
    logits = predict_logits(assembly, ids, mask, idx, batch_size)
    return split_metric(logits, labels[idx], graph.num_classes)


def predict_logits(assembly, ids, mask, node_ids, batch_size=128):
    rows = []
    with ad.no_grad():
        for start in range(0, len(node_ids), batch_size):
            b = node_ids[start:start + batch_size]
            rows.append(np.asarray(assembly.logits(ids[b], mask[b], b)))
    return np.concatenate(rows, axis=0)


@dataclass
class SeedResult:
    seed: int
    test_metric: float
    best_epoch: int
    loss_trace: list
    val_trace: list
    assembly: Phase2Assembly = None

    def as_dict(self):
        return {"seed": self.seed, "metric": self.test_metric,
                "best_epoch": self.best_epoch,
                "loss_trace": self.loss_trace, "val_trace": self.val_trace}


def run_phase2_seed(backbone, embeddings, graph, ids, mask, config, seed):
    """One deterministic phase-2 run: minibatch AdamW over train nodes,
    early stop on the validation metric, test metric from the best
    checkpoint."""
    embeddings.validate(graph)
    assembly = Phase2Assembly(backbone, embeddings, graph.num_classes,
                              config, seed)
    labels = graph.labels()
    train_idx = graph.split_ids("train")
    opt = AdamW(assembly.trainable_parameters(), lr=config.lr,
                weight_decay=config.weight_decay)
    rng = np.random.default_rng(derive_seed(seed, "shuffle"))

    best_val = evaluate(assembly, graph, ids, mask, "val")
    best = (best_val, 0, assembly.snapshot())
    loss_trace, val_trace = [], [float(best_val)]
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            opt.zero_grad()
            logits = assembly.logits(ids[batch], mask[batch], batch)
            loss = ad.cross_entropy(logits, labels[batch])
            if not np.isfinite(ad.val(loss)):
                raise ad.NumericsError(f"non-finite phase-2 loss at epoch "
                                       f"{epoch}")
            ad.backward(loss)
            opt.step()
            epoch_loss += float(ad.val(loss)) * len(batch)
        loss_trace.append(epoch_loss / len(order))
        val = evaluate(assembly, graph, ids, mask, "val")
        val_trace.append(float(val))
        if val > best[0]:
            best = (val, epoch, assembly.snapshot())
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    assembly.restore(best[2])
    test = evaluate(assembly, graph, ids, mask, "test")
    return SeedResult(seed=seed, test_metric=float(test), best_epoch=best[1],
                      loss_trace=loss_trace, val_trace=val_trace,
                      assembly=assembly)


@dataclass
class RunReport:
    baseline: str
    metric_name: str
    per_seed: list
    metric_mean: float
    metric_std: float | None
    audit: dict | None = None
    wall_clock_sec: float | None = None

    def as_dict(self, include_wall_clock=True):
        d = {"baseline": self.baseline, "metric_name": self.metric_name,
             "per_seed": [s if isinstance(s, dict) else s.as_dict()
                          for s in self.per_seed],
             "metric_mean": self.metric_mean, "metric_std": self.metric_std,
             "audit": self.audit}
        if include_wall_clock:
            d["wall_clock_sec"] = self.wall_clock_sec
        return d


def seed_sweep(runner, seeds, baseline, metric, audit=None):
    """Independent runs per seed; the aggregate is an order-independent
    fold (sorted by seed)."""
    if len(seeds) == 0:
        raise TrainerConfigError("need at least one seed")
    started = time.perf_counter()
    results = sorted((runner(seed) for seed in seeds), key=lambda r: r.seed)
    metrics = np.array([r.test_metric for r in results])
    std = float(np.std(metrics, ddof=1)) if len(metrics) >= 2 else None
    return RunReport(baseline=baseline, metric_name=metric,
                     per_seed=list(results),
                     metric_mean=float(metrics.mean()), metric_std=std,
                     audit=audit,
                     wall_clock_sec=time.perf_counter() - started)


def train_phase2(backbone, embeddings, graph, vocab, config,
                 gnn_params=()):
    """Seed sweep of phase-2 fine-tuning; tokenization is shared across
    seeds. `gnn_params` (the phase-1 model's weights) are included in the
    report's parameter audit."""
    ids, mask = tokenize_graph(graph, vocab, PromptSpec(config.prompt),
                               config.seq_len)
    probe = Phase2Assembly(backbone, embeddings, graph.num_classes,
                           config, seed=0)
    audit = audit_parameters(
        [("gnn", p) for p in gnn_params] + probe.registry(),
        backbone.param_count()).as_dict()

    def runner(seed):
        return run_phase2_seed(backbone, embeddings, graph, ids, mask,
                               config, seed)

    return seed_sweep(runner, config.seeds, config.baseline,
                      metric_name(graph.num_classes), audit=audit)


# ---------------------------------------------------------------------------
# ablations

def rank_ablation(backbone, embeddings, graph, vocab, base_config,
                  ranks=(2, 4, 8)):
    """One seed sweep per rank; trainable counts must rise with the rank."""
    rows = []
    for r in ranks:
        if r < 1:
            raise TrainerConfigError(f"rank must be >= 1, got {r}")
        cfg = replace(base_config, rank=r)
        report = train_phase2(backbone, embeddings, graph, vocab, cfg)
        probe = Phase2Assembly(backbone, embeddings, graph.num_classes, cfg,
                               seed=0)
        trainable = sum(p.size for p in probe.trainable_parameters())
        rows.append({"rank": r, "metric_mean": report.metric_mean,
                     "metric_std": report.metric_std,
                     "trainable_params": trainable})
    return rows


def prompt_ablation(backbone, embeddings, graph, vocab, base_config, prompts):
    """One seed sweep per prompt, reported in the given order."""
    if not prompts:
        raise TrainerConfigError("prompt ablation needs at least one prompt")
    rows = []
    for prompt in prompts:
        cfg = replace(base_config, prompt=prompt)
        report = train_phase2(backbone, embeddings, graph, vocab, cfg)
        rows.append({"prompt": prompt, "metric_mean": report.metric_mean,
                     "metric_std": report.metric_std})
    return rows


def write_table_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})


def write_table_text(path, rows, columns):
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return "" if v is None else str(v)

    cells = [[fmt(row[c]) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) if cells else len(c)
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    for r in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return text
