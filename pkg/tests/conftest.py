import numpy as np
import pytest

# One line per acceptance criterion, echoed after the test summary so the
# pass/fail verdicts stay visible under pytest's output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from sagefuse.tag import (GeneratorParams, SplitSpec, TextAttributedGraph,
                          NodeRecord, generate_synthetic_tag, stratified_split)


def make_graph(adjacency, labels=None, texts=None, num_classes=None,
               splits=None):
    """Hand-rolled graph from an adjacency dict {node: [neighbors]}."""
    n = len(adjacency)
    labels = labels if labels is not None else [0] * n
    texts = texts if texts is not None else [f"node {i}" for i in range(n)]
    c = num_classes if num_classes is not None else max(labels) + 1
    nodes = [NodeRecord(id=i, text=texts[i], label=labels[i],
                        split=splits[i] if splits else None)
             for i in range(n)]
    adj = [sorted(adjacency[i]) for i in range(n)]
    return TextAttributedGraph(nodes=nodes, adjacency=adj, num_classes=c)


def random_graph(rng, n, edge_prob=0.15):
    adjacency = {i: set() for i in range(n)}
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < edge_prob:
                adjacency[u].add(v)
                adjacency[v].add(u)
    return make_graph({i: sorted(s) for i, s in adjacency.items()})


@pytest.fixture(scope="session")
def micro_tag():
    """Small synthetic graph with splits, shared across read-only tests."""
    graph = generate_synthetic_tag(GeneratorParams(
        n_nodes=200, num_classes=3, avg_degree=6, topic_vocab_size=20,
        text_len=8, text_noise=0.3, structure_signal=0.9, seed=7))
    return stratified_split(graph, SplitSpec(0.6, 0.2, 0.2, seed=0))
