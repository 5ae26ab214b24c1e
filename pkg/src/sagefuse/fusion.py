"""Gated low-rank fusion adapters, per-projection LoRA pairs, and the
trainable-parameter auditor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter


class AdapterConfigError(ValueError):
    pass


PASS1, PASS2 = "pass1", "pass2"


class LoraPair:
    """Additive low-rank delta on one frozen projection: W + scaling * B @ A.

    B starts at zero so the initial delta is exactly zero and the frozen
    weight dominates.
    """

    def __init__(self, d_in, d_out, rank, target, seed=0, scaling=1.0,
                 dtype=np.float64):
        if rank < 1:
            raise AdapterConfigError(f"LoRA rank must be >= 1, got {rank}")
        rng = np.random.default_rng(seed)
        self.rank = rank
        self.target = target
        self.scaling = scaling
        self.a = Parameter(rng.normal(0.0, 0.02, (rank, d_in)).astype(dtype),
                           name=f"lora.{target}.a")
        self.b = Parameter(np.zeros((d_out, rank), dtype=dtype),
                           name=f"lora.{target}.b")

    def parameters(self):
        return [self.a, self.b]

    def delta_matrix(self):
        return self.scaling * (ad.val(self.b) @ ad.val(self.a))


def lora_apply(pair, frozen_w, x, bias=None):
    """(W + scaling * B @ A) @ x^T computed without touching the frozen W."""
    base = ad.linear(x, frozen_w, bias)
    low = ad.matmul(x, ad.transpose_last(ad.lift(pair.a)))
    delta = ad.matmul(low, ad.transpose_last(ad.lift(pair.b)))
    if pair.scaling != 1.0:
        delta = ad.mul(delta, pair.scaling)
    return ad.add(base, delta)


class FusionAdapter:
    """One gated low-rank fusion block on a layer input.

    The text hidden states and the broadcast structural embedding are each
    projected to rank r, blended by a learnable sigmoid gate, and projected
    back to width d. Applied residually by default; `mode="replace"` feeds
    the fused projection alone into the layer.

    With `tie=(a_param, b_param)` the down/up projections alias an existing
    LoRA pair's factors instead of owning separate W_A/W_C matrices.
    """

    def __init__(self, layer_index, source, rank, d, g, seed=0,
                 mode="residual", tie=None, dtype=np.float64):
        if source not in (PASS1, PASS2):
            raise AdapterConfigError(f"unknown source {source!r}")
        if mode not in ("residual", "replace"):
            raise AdapterConfigError(f"unknown fusion mode {mode!r}")
        if rank < 1:
            raise AdapterConfigError(f"fusion rank must be >= 1, got {rank}")
        rng = np.random.default_rng(seed)
        self.layer_index = layer_index
        self.source = source
        self.rank = rank
        self.mode = mode
        self.tied = tie is not None
        prefix = f"fusion.layer{layer_index}"
        if tie is None:
            self.w_a = Parameter(rng.normal(0.0, 0.02, (rank, d)).astype(dtype),
                                 name=f"{prefix}.w_a")
            self.w_c = Parameter(np.zeros((d, rank), dtype=dtype),
                                 name=f"{prefix}.w_c")
        else:
            a, c = tie
            if a.shape != (rank, d) or c.shape != (d, rank):
                raise AdapterConfigError(
                    f"tied projections have shapes {a.shape}/{c.shape}, "
                    f"need {(rank, d)}/{(d, rank)}")
            self.w_a, self.w_c = a, c
        self.w_b = Parameter(rng.normal(0.0, 0.02, (rank, g)).astype(dtype),
                             name=f"{prefix}.w_b")
        self.gate_logit = Parameter(np.zeros((), dtype=dtype),
                                    name=f"{prefix}.gate_logit")

    @property
    def gate(self):
        return float(1.0 / (1.0 + np.exp(-self.gate_logit.value)))

    def parameters(self):
        own = [self.w_b, self.gate_logit]
        if not self.tied:
            own = [self.w_a, self.w_c] + own
        return own


def fusion_apply(adapter, h1, h2):
    """Fuse hidden states h1 (B, T, d) with per-node embeddings h2 (B, g).

    h2 is broadcast across all T token positions (padded ones included).
    Returns h1 + Z in residual mode, Z alone in replace mode, where
    Z = W_C @ (alpha * W_A h1 + (1 - alpha) * W_B h2).
    """
    vh1, vh2 = ad.val(h1), np.asarray(h2)
    d = ad.val(adapter.w_a).shape[1]
    g = ad.val(adapter.w_b).shape[1]
    if vh1.shape[-1] != d:
        raise AdapterConfigError(f"hidden width {vh1.shape[-1]} != adapter d={d}")
    if vh2.shape[-1] != g:
        raise AdapterConfigError(f"embedding width {vh2.shape[-1]} != adapter g={g}")
    alpha = ad.sigmoid(ad.lift(adapter.gate_logit))
    text_part = ad.matmul(h1, ad.transpose_last(ad.lift(adapter.w_a)))
    struct_part = ad.matmul(h2, ad.transpose_last(ad.lift(adapter.w_b)))
    if vh1.ndim == 3:
        struct_part = ad.reshape(struct_part, (vh2.shape[0], 1, adapter.rank))
    fused = ad.add(ad.mul(alpha, text_part),
                   ad.mul(ad.sub(1.0, alpha), struct_part))
    z = ad.matmul(fused, ad.transpose_last(ad.lift(adapter.w_c)))
    if adapter.mode == "replace":
        return z
    return ad.add(h1, z)


def default_placement(num_layers):
    """Scale the 12-layer placement (pass1 at 5,6,7; pass2 at 9,10,11)
    proportionally: middle third and upper third."""
    pass1 = sorted({num_layers * k // 12 for k in (5, 6, 7)})
    pass2 = sorted({num_layers * k // 12 for k in (9, 10, 11)})
    return pass1, pass2


@dataclass
class FusionAdapterSet:
    adapters: list

    def by_layer(self):
        return {a.layer_index: a for a in self.adapters}

    def parameters(self):
        out = []
        for a in self.adapters:
            out.extend(a.parameters())
        return out


def build_adapter_set(num_layers, pass1_layers, pass2_layers, rank, d, g,
                      seed=0, mode="residual", tie_pairs=None,
                      dtype=np.float64):
    """Create one adapter per listed layer. Pass-1 layers must all sit
    strictly below every pass-2 layer. `tie_pairs` optionally maps layer
    index to a LoraPair whose factors the adapter reuses as W_A/W_C."""
    pass1_layers = sorted(pass1_layers)
    pass2_layers = sorted(pass2_layers)
    if not pass1_layers or not pass2_layers:
        raise AdapterConfigError("need at least one pass1 and one pass2 layer")
    overlap = set(pass1_layers) & set(pass2_layers)
    if overlap:
        raise AdapterConfigError(f"layers {sorted(overlap)} assigned to both "
                                 "sources")
    for layer in pass1_layers + pass2_layers:
        if not 0 <= layer < num_layers:
            raise AdapterConfigError(f"adapter layer {layer} outside "
                                     f"[0, {num_layers})")
    if max(pass1_layers) >= min(pass2_layers):
        raise AdapterConfigError(
            f"pass1 layers {pass1_layers} must all precede pass2 layers "
            f"{pass2_layers}")
    adapters = []
    for source, layers in ((PASS1, pass1_layers), (PASS2, pass2_layers)):
        for layer in layers:
            tie = None
            if tie_pairs and layer in tie_pairs:
                pair = tie_pairs[layer]
                tie = (pair.a, pair.b)
            adapters.append(FusionAdapter(
                layer_index=layer, source=source, rank=rank, d=d, g=g,
                seed=[seed, layer], mode=mode, tie=tie, dtype=dtype))
    return FusionAdapterSet(adapters=adapters)


# ---------------------------------------------------------------------------
# parameter audit

@dataclass
class ParamAudit:
    """Exact trainable-parameter counts by component.

    `phase2_trainable` covers the adapter stack (fusion + LoRA + head);
    `total_trainable` additionally includes the phase-1 GNN. The relative
    fraction is total trainable over the frozen backbone size.
    """
    gnn: int
    fusion: int
    lora_pairs: int
    classifier_head: int
    backbone_total: int

    @property
    def phase2_trainable(self):
        return self.fusion + self.lora_pairs + self.classifier_head

    @property
    def total_trainable(self):
        return self.gnn + self.phase2_trainable

    @property
    def relative_fraction(self):
        return self.total_trainable / self.backbone_total

    def as_dict(self):
        return {
            "gnn": self.gnn,
            "fusion": self.fusion,
            "lora_pairs": self.lora_pairs,
            "classifier_head": self.classifier_head,
            "phase2_trainable": self.phase2_trainable,
            "total_trainable": self.total_trainable,
            "backbone_total": self.backbone_total,
            "relative_fraction": self.relative_fraction,
        }

    def table(self):
        rows = [("gnn (phase-1)", self.gnn),
                ("fusion adapters", self.fusion),
                ("lora pairs", self.lora_pairs),
                ("classifier head", self.classifier_head),
                ("phase-2 trainable", self.phase2_trainable),
                ("total trainable", self.total_trainable),
                ("backbone (frozen)", self.backbone_total)]
        width = max(len(r[0]) for r in rows)
        lines = [f"{name:<{width}}  {count:>12,}" for name, count in rows]
        lines.append(f"{'relative to backbone':<{width}}  "
                     f"{100.0 * self.relative_fraction:>11.4f}%")
        return "\n".join(lines)


def audit_parameters(registry, backbone_total):
    """Count scalars from a list of (component, Parameter) pairs.

    The registry enumerates everything that trains in its phase (phase-1
    GNN weights count even though they arrive frozen into phase-2).
    Shared (tied) parameters are counted once, under the first component
    that registers them.
    """
    counts = {"gnn": 0, "fusion": 0, "lora_pairs": 0, "classifier_head": 0}
    seen = set()
    for component, p in registry:
        if component not in counts:
            raise AdapterConfigError(f"unknown component {component!r}")
        if id(p) in seen:
            continue
        seen.add(id(p))
        counts[component] += p.size
    return ParamAudit(backbone_total=backbone_total, **counts)


@dataclass
class BackboneShape:
    """Shape description of a transformer encoder, enough to count its
    parameters without instantiating weights. `fused_qkv` models backbones
    whose query/key/value projection is a single d -> 3d matrix."""
    vocab_size: int
    max_tokens: int
    dim: int
    layers: int
    mlp_width: int
    fused_qkv: bool = False

    def param_count(self):
        d, m = self.dim, self.mlp_width
        if self.fused_qkv:
            attn = (d * 3 * d + 3 * d) + (d * d + d)
        else:
            attn = 4 * (d * d + d)
        per_layer = attn + 2 * 2 * d + (d * m + m) + (m * d + d)
        return (self.vocab_size * d + self.max_tokens * d
                + self.layers * per_layer + 2 * d)

    def lora_target_shapes(self):
        """(d_in, d_out) per adapted projection within one layer."""
        d = self.dim
        if self.fused_qkv:
            return [(d, 3 * d), (d, d)]
        return [(d, d), (d, d), (d, d), (d, d)]


def audit_from_shapes(shape, adapted_layers, rank, g, num_classes,
                      gnn_hidden=64, gnn_input_dim=None,
                      enable_fusion=True, enable_lora=True,
                      fusion_tying="separate"):
    """Analytic audit for a backbone given only its shape.

    Mirrors exactly what a live assembly registry would report: used both
    for desk configurations (cross-checked against the registry walk in
    tests) and for backbones too large to instantiate.
    """
    d = shape.dim
    k = gnn_input_dim if gnn_input_dim is not None else d
    gnn = (g * 2 * k + g) + (g * 2 * g + g) \
        + (gnn_hidden * g + gnn_hidden) + (num_classes * gnn_hidden + num_classes)

    lora = 0
    if enable_lora:
        per_layer = sum(rank * (d_in + d_out)
                        for d_in, d_out in shape.lora_target_shapes())
        lora = len(adapted_layers) * per_layer

    fusion = 0
    if enable_fusion:
        if fusion_tying == "shared":
            if not enable_lora:
                raise AdapterConfigError("shared fusion tying requires LoRA "
                                         "pairs to tie to")
            per_adapter = rank * g + 1  # W_B and the gate; W_A/W_C are aliased
        elif fusion_tying == "separate":
            per_adapter = rank * d + rank * g + d * rank + 1
        else:
            raise AdapterConfigError(f"unknown fusion tying {fusion_tying!r}")
        fusion = len(adapted_layers) * per_adapter

    head = num_classes * d + num_classes
    return ParamAudit(gnn=gnn, fusion=fusion, lora_pairs=lora,
                      classifier_head=head,
                      backbone_total=shape.param_count())


GPT2_SHAPE = BackboneShape(vocab_size=50257, max_tokens=1024, dim=768,
                           layers=12, mlp_width=3072, fused_qkv=True)
