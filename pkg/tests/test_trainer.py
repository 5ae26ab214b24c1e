import dataclasses

import numpy as np
import pytest

from conftest import make_graph, random_graph
from sagefuse import autodiff as ad
from sagefuse.optim import grad_check
from sagefuse.sage import SageEmbeddings
from sagefuse.tag import SplitSpec, stratified_split
from sagefuse.textenc import (BackboneConfig, EncoderBackbone, PromptSpec,
                              build_vocab, tokenize_graph)
from sagefuse.trainer import (Phase2Assembly, RunConfig, TrainerConfigError,
                              derive_seed, evaluate, prompt_ablation,
                              rank_ablation, run_phase2_seed, seed_sweep,
                              train_phase2)


@dataclasses.dataclass
class Setup:
    graph: object
    vocab: object
    backbone: object
    embeddings: object
    ids: object
    mask: object
    config: RunConfig


def _setup(num_classes=3, n=48, seed=0, **config_overrides):
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % num_classes).tolist()
    base = random_graph(rng, n, edge_prob=0.1)
    texts = [f"w{labels[i] * 5 + int(rng.integers(5))} "
             f"w{labels[i] * 5 + int(rng.integers(5))}" for i in range(n)]
    graph = make_graph({i: base.adjacency[i] for i in range(n)},
                       labels=labels, texts=texts)
    graph = stratified_split(graph, SplitSpec(0.6, 0.2, 0.2, seed=0))
    vocab = build_vocab(graph)
    backbone = EncoderBackbone(BackboneConfig(
        vocab_size=vocab.size, dim=16, heads=2, layers=4, mlp_width=32,
        max_tokens=8, seed=0))
    g = 8
    emb_rng = np.random.default_rng(1)
    embeddings = SageEmbeddings(
        pass1=emb_rng.normal(0, 0.5, (n, g))
        + np.eye(num_classes, g)[labels] * 2.0,
        pass2=emb_rng.normal(0, 0.5, (n, g))
        + np.eye(num_classes, g)[labels] * 2.0)
    kwargs = dict(epochs=1, patience=2, seeds=(0,), seq_len=8, rank=2,
                  pass1_layers=(1,), pass2_layers=(3,), batch_size=16)
    kwargs.update(config_overrides)
    config = RunConfig(**kwargs)
    ids, mask = tokenize_graph(graph, vocab, PromptSpec(config.prompt),
                               config.seq_len)
    return Setup(graph, vocab, backbone, embeddings, ids, mask, config)


@pytest.fixture(scope="module")
def setup():
    return _setup()


class TestRunConfig:
    def test_defaults_match_training_protocol(self):
        cfg = RunConfig()
        assert cfg.lr == 3e-4
        assert cfg.weight_decay == 1e-2
        assert cfg.batch_size == 32
        assert cfg.seeds == (0, 1, 2, 3, 4)

    def test_unknown_baseline_rejected(self):
        with pytest.raises(TrainerConfigError):
            RunConfig(baseline="gnn_only")

    def test_text_only_disables_both_mechanisms(self):
        assert RunConfig(baseline="text_only").toggles() == (False, False)
        assert RunConfig(baseline="lora_only").toggles() == (False, True)
        assert RunConfig(baseline="fused").toggles() == (True, True)

    def test_explicit_placement_wins_over_default(self):
        cfg = RunConfig(pass1_layers=(2,), pass2_layers=(5,))
        assert cfg.placement(12) == ((2,), (5,))
        assert RunConfig().placement(12) == ([5, 6, 7], [9, 10, 11])

    def test_invalid_rank_rejected(self):
        with pytest.raises(TrainerConfigError):
            RunConfig(rank=0)


class TestDeriveSeed:
    def test_stable_and_distinct(self):
        assert derive_seed(0, "lora", 1, "q") == derive_seed(0, "lora", 1, "q")
        assert derive_seed(0, "lora", 1, "q") != derive_seed(0, "lora", 1, "k")
        assert derive_seed(0, "head") != derive_seed(1, "head")


class TestSeedSweep:
    def test_mean_and_sample_std(self):
        class R:
            def __init__(self, seed, m):
                self.seed, self.test_metric = seed, m

        values = {0: 0.6, 1: 0.7}
        report = seed_sweep(lambda s: R(s, values[s]), [0, 1], "fused",
                            "accuracy")
        assert report.metric_mean == pytest.approx(0.65, abs=1e-12)
        assert report.metric_std == pytest.approx(0.0707107, abs=1e-6)

    def test_identical_metrics_give_zero_std(self):
        class R:
            def __init__(self, seed):
                self.seed, self.test_metric = seed, 0.5

        report = seed_sweep(R, [0, 1, 2], "fused", "accuracy")
        assert report.metric_std == 0.0

    def test_single_seed_omits_std(self):
        class R:
            def __init__(self, seed):
                self.seed, self.test_metric = seed, 0.5

        assert seed_sweep(R, [0], "fused", "accuracy").metric_std is None

    def test_aggregation_is_seed_order_independent(self):
        class R:
            def __init__(self, seed):
                self.seed, self.test_metric = seed, seed / 10.0

        a = seed_sweep(R, [0, 1, 2], "fused", "accuracy")
        b = seed_sweep(R, [2, 0, 1], "fused", "accuracy")
        assert [r.seed for r in a.per_seed] == [r.seed for r in b.per_seed]
        assert a.metric_mean == b.metric_mean

    def test_empty_seed_list_rejected(self):
        with pytest.raises(TrainerConfigError):
            seed_sweep(lambda s: None, [], "fused", "accuracy")


class TestPhase2Training:
    def test_zero_epochs_reports_untrained_metric_and_leaves_frozen_bits(
            self, setup):
        cfg = dataclasses.replace(setup.config, epochs=0)
        backbone_before = [p.value.copy() for p in setup.backbone.parameters()]
        emb_before = (setup.embeddings.pass1.copy(),
                      setup.embeddings.pass2.copy())
        result = run_phase2_seed(setup.backbone, setup.embeddings, setup.graph,
                                 setup.ids, setup.mask, cfg, seed=0)
        assert 0.0 <= result.test_metric <= 1.0
        assert result.best_epoch == 0
        assert result.loss_trace == []
        for p, before in zip(setup.backbone.parameters(), backbone_before):
            assert np.array_equal(p.value, before)
        assert np.array_equal(setup.embeddings.pass1, emb_before[0])
        assert np.array_equal(setup.embeddings.pass2, emb_before[1])

    def test_frozen_tensors_unchanged_after_training(self, setup):
        backbone_before = [p.value.copy() for p in setup.backbone.parameters()]
        run_phase2_seed(setup.backbone, setup.embeddings, setup.graph,
                        setup.ids, setup.mask, setup.config, seed=0)
        for p, before in zip(setup.backbone.parameters(), backbone_before):
            assert np.array_equal(p.value, before)

    def test_deterministic_per_seed(self, setup):
        a = run_phase2_seed(setup.backbone, setup.embeddings, setup.graph,
                            setup.ids, setup.mask, setup.config, seed=3)
        b = run_phase2_seed(setup.backbone, setup.embeddings, setup.graph,
                            setup.ids, setup.mask, setup.config, seed=3)
        assert a.loss_trace == b.loss_trace
        assert a.val_trace == b.val_trace
        assert a.test_metric == b.test_metric

    def test_text_only_baseline_reports_finite_metric(self, setup):
        cfg = dataclasses.replace(setup.config, baseline="text_only")
        report = train_phase2(setup.backbone, setup.embeddings, setup.graph,
                              setup.vocab, cfg)
        assert report.baseline == "text_only"
        assert np.isfinite(report.metric_mean)

    def test_disabling_both_toggles_equals_text_only_bitwise(self, setup):
        runs = []
        for cfg in (dataclasses.replace(setup.config, baseline="fused",
                                        enable_fusion=False,
                                        enable_lora=False),
                    dataclasses.replace(setup.config, baseline="text_only")):
            runs.append(run_phase2_seed(setup.backbone, setup.embeddings,
                                        setup.graph, setup.ids, setup.mask,
                                        cfg, seed=0))
        assert runs[0].loss_trace == runs[1].loss_trace
        assert runs[0].test_metric == runs[1].test_metric

    def test_report_serializes_without_wall_clock(self, setup):
        report = train_phase2(setup.backbone, setup.embeddings, setup.graph,
                              setup.vocab, setup.config)
        d = report.as_dict(include_wall_clock=False)
        assert "wall_clock_sec" not in d
        assert report.audit["lora_pairs"] > 0
        assert d["metric_name"] == "accuracy"

    def test_evaluate_rejects_empty_split(self, setup):
        assembly = Phase2Assembly(setup.backbone, setup.embeddings,
                                  setup.graph.num_classes, setup.config, 0)
        bare = make_graph({0: [1], 1: [0]}, labels=[0, 1])
        with pytest.raises(TrainerConfigError):
            evaluate(assembly, bare, setup.ids, setup.mask, "val")

    def test_gate_receives_nonzero_gradient_on_task_loss(self, setup):
        assembly = Phase2Assembly(setup.backbone, setup.embeddings,
                                  setup.graph.num_classes, setup.config, 0)
        rng = np.random.default_rng(2)
        for p in assembly.trainable_parameters():
            p.value[...] = rng.normal(0, 0.05, p.value.shape)
        batch = setup.graph.split_ids("train")[:8]
        loss = ad.cross_entropy(
            assembly.logits(setup.ids[batch], setup.mask[batch], batch),
            setup.graph.labels()[batch])
        ad.backward(loss)
        grads = [abs(float(a.gate_logit.gradient))
                 for a in assembly.adapters.adapters]
        assert max(grads) > 1e-10


class TestAblations:
    def test_rank_table_has_strictly_increasing_counts(self, setup):
        rows = rank_ablation(setup.backbone, setup.embeddings, setup.graph,
                             setup.vocab, setup.config, ranks=(1, 2, 4))
        assert [r["rank"] for r in rows] == [1, 2, 4]
        counts = [r["trainable_params"] for r in rows]
        assert counts == sorted(counts) and len(set(counts)) == 3

    def test_rank_zero_rejected(self, setup):
        with pytest.raises(TrainerConfigError):
            rank_ablation(setup.backbone, setup.embeddings, setup.graph,
                          setup.vocab, setup.config, ranks=(0,))

    def test_single_empty_prompt_equals_base_run(self, setup):
        base = train_phase2(setup.backbone, setup.embeddings, setup.graph,
                            setup.vocab, setup.config)
        rows = prompt_ablation(setup.backbone, setup.embeddings, setup.graph,
                               setup.vocab, setup.config, prompts=[""])
        assert rows[0]["metric_mean"] == base.metric_mean

    def test_two_prompts_two_ordered_rows(self, setup):
        rows = prompt_ablation(setup.backbone, setup.embeddings, setup.graph,
                               setup.vocab, setup.config,
                               prompts=["classify:", ""])
        assert [r["prompt"] for r in rows] == ["classify:", ""]

    def test_empty_prompt_list_rejected(self, setup):
        with pytest.raises(TrainerConfigError):
            prompt_ablation(setup.backbone, setup.embeddings, setup.graph,
                            setup.vocab, setup.config, prompts=[])


def test_assembly_gradients_match_finite_differences(setup):
    assembly = Phase2Assembly(setup.backbone, setup.embeddings,
                              setup.graph.num_classes, setup.config, seed=0)
    rng = np.random.default_rng(0)
    # Randomize the zero-initialized factors so the check exercises every
    # parameter's gradient path, not just the identity point.
    for p in assembly.trainable_parameters():
        p.value[...] = rng.normal(0, 0.05, p.value.shape)
    batch = setup.graph.split_ids("train")[:8]
    labels = setup.graph.labels()

    def loss_fn():
        logits = assembly.logits(setup.ids[batch], setup.mask[batch], batch)
        return ad.cross_entropy(logits, labels[batch])

    report = grad_check(assembly.trainable_parameters(), loss_fn,
                        samples_per_tensor=8)
    assert report.ok, report.summary()
