import math

import numpy as np
import pytest

from abc_embed.autodiff import Graph, gradcheck, ops
from abc_embed.autodiff.ops import PRIMITIVES
from abc_embed.data.batching import BatchLayout
from abc_embed.training.objective import contrastive_loss, similarity_matrix


def _batch_loss(rng):
    graph = Graph()
    q = graph.leaf("q", rng.normal(size=(2, 3)))
    c = graph.leaf("c", rng.normal(size=(4, 3)))
    log_tau = graph.leaf("log_tau", math.log(0.07))
    layout = BatchLayout(n_queries=2, n_candidates=4, pos_index=np.array([0, 1]), owner=np.array([0, 1, 0, 1]))
    sims = similarity_matrix(ops.l2_normalize(q), ops.l2_normalize(c))
    return graph, contrastive_loss(sims, layout, ops.exp(log_tau))


def test_quadratic_passes():
    graph = Graph()
    w = graph.leaf("w", [0.5, -1.5, 2.0])
    report = gradcheck(graph, ops.dot(w, w), h=1e-5, rel_tol=1e-4)
    assert report.passed
    assert report.max_rel_err < 1e-6


def test_contrastive_batch_passes(rng):
    graph, loss = _batch_loss(rng)
    report = gradcheck(graph, loss, h=1e-5, rel_tol=1e-4, abs_tol=1e-8)
    assert report.passed, report.failures
    assert set(report.per_leaf) == {"q", "c", "log_tau"}


def test_corrupted_adjoint_fails_with_leaf_name(monkeypatch):
    original = PRIMITIVES["matmul"].vjp

    def doubled(g, out, a, b, transpose_b=False):
        ga, gb = original(g, out, a, b, transpose_b=transpose_b)
        return 2.0 * ga, gb

    monkeypatch.setattr(PRIMITIVES["matmul"], "vjp", doubled)
    graph = Graph()
    a = graph.leaf("a", [[1.0, 2.0], [3.0, -1.0]])
    x = np.array([0.5, -0.25])
    loss = ops.dot(ops.matmul(a, x), np.ones(2))
    report = gradcheck(graph, loss)
    assert not report.passed
    assert report.failed_leaves == ["a"]


def test_samples_limit_checked_coordinates(rng):
    graph, loss = _batch_loss(rng)
    report = gradcheck(graph, loss, samples=2, abs_tol=1e-8)
    assert report.passed


def test_leaves_restored_after_check(rng):
    graph, loss = _batch_loss(rng)
    before = {name: leaf.data.copy() for name, leaf in graph.parameters.items()}
    value = loss.item()
    gradcheck(graph, loss)
    for name, leaf in graph.parameters.items():
        np.testing.assert_array_equal(leaf.data, before[name])
    assert loss.item() == pytest.approx(value, abs=1e-15)
