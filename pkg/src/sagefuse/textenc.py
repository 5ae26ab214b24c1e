"""Tokenizer, prompt prefixing, and a small frozen transformer encoder.

The backbone is a randomly initialized pre-norm transformer standing in
for a pretrained 12-layer model: the adapter mechanics depend on the
architecture shape, not on pretrained weights. It is frozen in both
phases; only adapters, LoRA pairs, and heads ever train.
"""

from __future__ import annotations

import re
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .fusion import BackboneShape, fusion_apply, lora_apply

PAD_ID, UNK_ID, CLS_ID = 0, 1, 2
RESERVED = {"<pad>": PAD_ID, "<unk>": UNK_ID, "<cls>": CLS_ID}

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class VocabError(ValueError):
    pass


def split_tokens(text):
    """Lowercased whitespace/punctuation tokenization."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    token_to_id: dict

    @property
    def size(self):
        return len(self.token_to_id) + len(RESERVED)

    def id_of(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, text):
        return [self.id_of(t) for t in split_tokens(text)]

    def to_dict(self):
        return dict(self.token_to_id)

    @classmethod
    def from_dict(cls, d):
        return cls(token_to_id={k: int(v) for k, v in d.items()})


def build_vocab(graph, split="train", max_size=8192):
    """Most-frequent tokens from the given split's texts only (no leakage);
    frequency ties break lexicographically."""
    counts = Counter()
    for rec in graph.nodes:
        if rec.split == split:
            counts.update(split_tokens(rec.text))
    if not counts:
        raise VocabError(f"no text in split {split!r}")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    base = len(RESERVED)
    return Vocabulary(token_to_id={tok: base + i for i, (tok, _) in
                                   enumerate(ranked)})


@dataclass
class PromptSpec:
    prefix: str = ""

    def ids(self, vocab):
        return vocab.encode(self.prefix)


def tokenize(text, prompt, vocab, seq_len):
    """[CLS] + prompt ids + text ids, truncated to seq_len and PAD-padded.

    Returns (ids, mask) as int64/float arrays of length seq_len.
    """
    if seq_len < 4:
        raise VocabError(f"seq_len {seq_len} < 4")
    prompt_ids = prompt.ids(vocab) if prompt else []
    text_ids = vocab.encode(text)
    if len(prompt_ids) >= seq_len - 1 and text_ids:
        warnings.warn("prompt fills the whole token budget; node text "
                      "contributes zero tokens", stacklevel=2)
    ids = [CLS_ID] + prompt_ids + text_ids
    ids = ids[:seq_len]
    n = len(ids)
    ids = ids + [PAD_ID] * (seq_len - n)
    mask = [1.0] * n + [0.0] * (seq_len - n)
    return np.array(ids, dtype=np.int64), np.array(mask)


def tokenize_graph(graph, vocab, prompt, seq_len):
    ids = np.empty((graph.num_nodes, seq_len), dtype=np.int64)
    mask = np.empty((graph.num_nodes, seq_len))
    for rec in graph.nodes:
        ids[rec.id], mask[rec.id] = tokenize(rec.text, prompt, vocab, seq_len)
    return ids, mask


@dataclass
class BackboneConfig:
    vocab_size: int
    dim: int = 64
    heads: int = 4
    layers: int = 12
    mlp_width: int = 256
    max_tokens: int = 128
    seed: int = 0
    dtype: object = np.float64

    def __post_init__(self):
        if self.layers < 2:
            raise VocabError(f"backbone needs >= 2 layers, got {self.layers}")
        if self.dim % self.heads != 0:
            raise VocabError(f"dim {self.dim} not divisible by {self.heads} heads")

    def shape(self):
        return BackboneShape(vocab_size=self.vocab_size,
                             max_tokens=self.max_tokens, dim=self.dim,
                             layers=self.layers, mlp_width=self.mlp_width)


class EncoderBackbone:
    """Pre-norm transformer encoder; every weight is frozen at creation.

    Init: normal(0, 0.02) embeddings and projections, zero biases, unit
    layernorm gains, fixed per seed.
    """

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, m, dt = config.dim, config.mlp_width, config.dtype

        def w(shape, name):
            return Parameter(rng.normal(0.0, 0.02, shape).astype(dt),
                             name=name, frozen=True)

        def zeros(shape, name):
            return Parameter(np.zeros(shape, dtype=dt), name=name, frozen=True)

        def ones(shape, name):
            return Parameter(np.ones(shape, dtype=dt), name=name, frozen=True)

        self.tok_emb = w((config.vocab_size, d), "backbone.tok_emb")
        self.pos_emb = w((config.max_tokens, d), "backbone.pos_emb")
        self.blocks = []
        for l in range(config.layers):
            p = f"backbone.layer{l}"
            self.blocks.append({
                "ln1_g": ones(d, f"{p}.ln1_g"), "ln1_b": zeros(d, f"{p}.ln1_b"),
                "q": w((d, d), f"{p}.q"), "q_b": zeros(d, f"{p}.q_b"),
                "k": w((d, d), f"{p}.k"), "k_b": zeros(d, f"{p}.k_b"),
                "v": w((d, d), f"{p}.v"), "v_b": zeros(d, f"{p}.v_b"),
                "o": w((d, d), f"{p}.o"), "o_b": zeros(d, f"{p}.o_b"),
                "ln2_g": ones(d, f"{p}.ln2_g"), "ln2_b": zeros(d, f"{p}.ln2_b"),
                "mlp1": w((m, d), f"{p}.mlp1"), "mlp1_b": zeros(m, f"{p}.mlp1_b"),
                "mlp2": w((d, m), f"{p}.mlp2"), "mlp2_b": zeros(d, f"{p}.mlp2_b"),
            })
        self.ln_f_g = ones(d, "backbone.ln_f_g")
        self.ln_f_b = zeros(d, "backbone.ln_f_b")

    def parameters(self):
        out = [self.tok_emb, self.pos_emb]
        for blk in self.blocks:
            out.extend(blk.values())
        out.extend([self.ln_f_g, self.ln_f_b])
        return out

    def param_count(self):
        return sum(p.size for p in self.parameters())


def _proj(x, w, b, pair):
    if pair is None:
        return ad.linear(x, w, b)
    return lora_apply(pair, w, x, bias=b)


def encode(backbone, ids, mask, adapters=None, node_embeddings=None,
           lora=None, collect_layers=False):
    """Forward pass over token ids (B, T) with attention masking of PADs.

    `adapters` is a FusionAdapterSet applied to the input of its layers;
    `node_embeddings` maps adapter source name to the batch's (B, g) rows.
    `lora` maps layer index to {target: LoraPair} for targets q/k/v/o.
    Returns final hidden states (B, T, d) after the closing layernorm
    (a list of per-layer states when collect_layers is set).
    """
    cfg = backbone.config
    ids = np.atleast_2d(np.asarray(ids))
    mask = np.atleast_2d(np.asarray(mask))
    bsz, seq = ids.shape
    if seq > cfg.max_tokens:
        raise VocabError(f"sequence length {seq} exceeds max_tokens "
                         f"{cfg.max_tokens}")
    by_layer = adapters.by_layer() if adapters is not None else {}
    for layer in by_layer:
        if layer >= cfg.layers:
            raise VocabError(f"adapter layer {layer} >= backbone layers "
                             f"{cfg.layers}")
    lora = lora or {}
    heads, dh = cfg.heads, cfg.dim // cfg.heads
    # Additive key mask: padded positions get a large negative score bias.
    neg = np.asarray(-1e9, dtype=cfg.dtype)
    mask_bias = ((1.0 - mask) * neg).reshape(bsz, 1, 1, seq).astype(cfg.dtype)

    x = ad.add(ad.gather_rows(ad.lift(backbone.tok_emb), ids),
               ad.val(backbone.pos_emb)[:seq])
    states = []
    for l, blk in enumerate(backbone.blocks):
        if l in by_layer:
            adapter = by_layer[l]
            x = fusion_apply(adapter, x, node_embeddings[adapter.source])
        pairs = lora.get(l, {})
        a = ad.layernorm(x, blk["ln1_g"], blk["ln1_b"])
        q = _proj(a, blk["q"], blk["q_b"], pairs.get("q"))
        k = _proj(a, blk["k"], blk["k_b"], pairs.get("k"))
        v = _proj(a, blk["v"], blk["v_b"], pairs.get("v"))

        def split_heads(t):
            return ad.transpose(ad.reshape(t, (bsz, seq, heads, dh)),
                                (0, 2, 1, 3))

        att = ad.attention(split_heads(q), split_heads(k), split_heads(v),
                           mask_bias=mask_bias)
        att = ad.reshape(ad.transpose(att, (0, 2, 1, 3)), (bsz, seq, cfg.dim))
        x = ad.add(x, _proj(att, blk["o"], blk["o_b"], pairs.get("o")))
        h = ad.layernorm(x, blk["ln2_g"], blk["ln2_b"])
        h = ad.linear(ad.relu(ad.linear(h, blk["mlp1"], blk["mlp1_b"])),
                      blk["mlp2"], blk["mlp2_b"])
        x = ad.add(x, h)
        if collect_layers:
            states.append(x)
    x = ad.layernorm(x, backbone.ln_f_g, backbone.ln_f_b)
    if collect_layers:
        states.append(x)
        return states
    return x


def pool_states(hidden, mask, pooling="mean"):
    """Reduce (B, T, d) hidden states to (B, d) per-node features."""
    if pooling == "cls":
        return hidden[:, 0, :] if not isinstance(hidden, ad.Node) \
            else ad.gather_rows(ad.transpose(hidden, (1, 0, 2)), 0)
    if pooling != "mean":
        raise VocabError(f"unknown pooling {pooling!r}")
    m = np.asarray(mask)
    weights = (m / m.sum(axis=1, keepdims=True))[..., None]
    return ad.sum_(ad.mul(hidden, weights.astype(ad.val(hidden).dtype)), axis=1)


def node_features(backbone, graph, vocab, prompt, seq_len, pooling="mean",
                  batch_size=64):
    """Per-node feature matrix X (N, d): pooled final hidden states of each
    node's tokenized text under the frozen backbone."""
    ids, mask = tokenize_graph(graph, vocab, prompt, seq_len)
    rows = []
    with ad.no_grad():
        for start in range(0, graph.num_nodes, batch_size):
            sl = slice(start, start + batch_size)
            hidden = encode(backbone, ids[sl], mask[sl])
            rows.append(np.asarray(pool_states(hidden, mask[sl], pooling)))
    return np.concatenate(rows, axis=0)
