"""Declarative experiment configuration: INI-style sections with key=value
entries, all defaults embedded, unknown keys rejected as typo guards."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields

import numpy as np

from .sage import SageTrainConfig
from .tag import GeneratorParams, GraphFormatError, SplitSpec
from .textenc import BackboneConfig
from .trainer import RunConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSection:
    source: str = "synthetic"          # synthetic | files
    nodes_path: str = ""
    edges_path: str = ""
    splits_path: str = ""
    n_nodes: int = 2000
    num_classes: int = 4
    avg_degree: float = 8.0
    topic_vocab_size: int = 50
    text_len: int = 16
    text_noise: float = 0.35
    structure_signal: float = 0.9
    seed: int = 0
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    split_seed: int = 0


@dataclass
class BackboneSection:
    layers: int = 12
    dim: int = 64
    heads: int = 4
    mlp_width: int = 256
    max_tokens: int = 128
    vocab_max: int = 8192
    pooling: str = "mean"
    seed: int = 0
    fused_qkv: bool = False   # audit-only shape variant (fused qkv projection)
    precision: str = "f32"    # f32 | f64


@dataclass
class SageSection:
    embed_dim: int = 64
    classifier_hidden: int = 64
    lr: float = 1e-2
    weight_decay: float = 1e-2
    epochs: int = 500
    patience: int = 20
    seed: int = 0


@dataclass
class FusionSection:
    rank: int = 4
    pass1_layers: tuple = ()
    pass2_layers: tuple = ()
    enable_fusion: bool = True
    enable_lora: bool = True
    lora_targets: tuple = ("q", "k", "v", "o")
    mode: str = "residual"     # residual | replace
    tying: str = "separate"    # separate | shared


@dataclass
class TrainerSection:
    lr: float = 3e-4
    weight_decay: float = 1e-2
    batch_size: int = 32
    epochs: int = 100
    patience: int = 10
    seeds: tuple = (0, 1, 2, 3, 4)
    seq_len: int = 32
    prompt: str = ""
    baseline: str = "fused"


@dataclass
class OutputSection:
    dir: str = "runs/default"


_SECTIONS = {
    "dataset": DatasetSection,
    "backbone": BackboneSection,
    "sage": SageSection,
    "fusion": FusionSection,
    "trainer": TrainerSection,
    "output": OutputSection,
}


def _parse_value(raw, template):
    raw = raw.strip()
    if isinstance(template, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if isinstance(template, tuple):
        if not raw:
            return ()
        items = [s.strip() for s in raw.split(",")]
        if template and isinstance(template[0], str):
            return tuple(items)
        return tuple(int(s) for s in items)
    return raw


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(map(str, value))
    return str(value)


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    sage: SageSection = field(default_factory=SageSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    output: OutputSection = field(default_factory=OutputSection)

    @classmethod
    def from_string(cls, text):
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"config parse error: {e}")
        cfg = cls()
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]; valid: "
                                  f"{sorted(_SECTIONS)}")
            target = getattr(cfg, section)
            known = {f.name: f for f in fields(target)}
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{section}]; "
                                      f"valid: {sorted(known)}")
                default = getattr(type(target)(), key)
                try:
                    setattr(target, key, _parse_value(raw, default))
                except (ValueError, TypeError) as e:
                    raise ConfigError(f"[{section}] {key}: {e}")
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as f:
                return cls.from_string(f.read())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")

    def to_string(self):
        out = io.StringIO()
        for name in _SECTIONS:
            section = getattr(self, name)
            out.write(f"[{name}]\n")
            for f in fields(section):
                out.write(f"{f.name} = {_format_value(getattr(section, f.name))}\n")
            out.write("\n")
        return out.getvalue()

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_string())

    def hash(self):
        return hashlib.sha256(self.to_string().encode()).hexdigest()

    def validate(self):
        if self.dataset.source not in ("synthetic", "files"):
            raise ConfigError(f"dataset.source {self.dataset.source!r} must "
                              "be 'synthetic' or 'files'")
        if self.backbone.precision not in ("f32", "f64"):
            raise ConfigError(f"backbone.precision {self.backbone.precision!r} "
                              "must be 'f32' or 'f64'")
        try:
            if self.dataset.source == "synthetic":
                self.generator_params().validate()
            self.split_spec()
        except GraphFormatError as e:
            raise ConfigError(str(e))
        self.run_config()
        return self

    # ------------------------------------------------------------------
    # typed views consumed by the pipeline modules

    @property
    def dtype(self):
        return np.float64 if self.backbone.precision == "f64" else np.float32

    def generator_params(self):
        d = self.dataset
        return GeneratorParams(n_nodes=d.n_nodes, num_classes=d.num_classes,
                               avg_degree=d.avg_degree,
                               topic_vocab_size=d.topic_vocab_size,
                               text_len=d.text_len, text_noise=d.text_noise,
                               structure_signal=d.structure_signal,
                               seed=d.seed)

    def split_spec(self):
        d = self.dataset
        return SplitSpec(train_frac=d.train_frac, val_frac=d.val_frac,
                         test_frac=d.test_frac, seed=d.split_seed)

    def backbone_config(self, vocab_size):
        b = self.backbone
        return BackboneConfig(vocab_size=vocab_size, dim=b.dim, heads=b.heads,
                              layers=b.layers, mlp_width=b.mlp_width,
                              max_tokens=b.max_tokens, seed=b.seed,
                              dtype=self.dtype)

    def sage_train_config(self):
        s = self.sage
        return SageTrainConfig(lr=s.lr, weight_decay=s.weight_decay,
                               epochs=s.epochs, patience=s.patience,
                               seed=s.seed)

    def run_config(self, **overrides):
        t, f = self.trainer, self.fusion
        kwargs = dict(lr=t.lr, weight_decay=t.weight_decay,
                      batch_size=t.batch_size, epochs=t.epochs,
                      patience=t.patience, seeds=tuple(t.seeds),
                      seq_len=t.seq_len, prompt=t.prompt, rank=f.rank,
                      pass1_layers=tuple(f.pass1_layers),
                      pass2_layers=tuple(f.pass2_layers),
                      enable_fusion=f.enable_fusion, enable_lora=f.enable_lora,
                      baseline=t.baseline, lora_targets=tuple(f.lora_targets),
                      fusion_mode=f.mode, fusion_tying=f.tying,
                      pooling=self.backbone.pooling)
        kwargs.update(overrides)
        try:
            return RunConfig(**kwargs)
        except ValueError as e:
            raise ConfigError(str(e))
