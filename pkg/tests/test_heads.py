"""Tests for the MLP heads and exceptionality functions."""

import numpy as np
import pytest
from pydantic import ValidationError

from deep_arguing import autodiff as ad
from deep_arguing.errors import DimensionError, ParameterError
from deep_arguing.heads import (
    MLP,
    BaselineClassifier,
    DeepArguingModel,
    MLPSpec,
    base_score,
    edge_embedding,
    exceptionality,
    features,
    irrelevance,
    pairwise_exceptionality,
)


def test_mlp_spec_validation():
    """Specs need at least two positive widths."""
    with pytest.raises(ValidationError):
        MLPSpec(layer_widths=[4])
    with pytest.raises(ValidationError):
        MLPSpec(layer_widths=[4, 0])


def test_mlp_output_shape(rng):
    """An MLP maps (m, in) to (m, out)."""
    mlp = MLP.initialize(MLPSpec(layer_widths=[3, 5, 2]), rng)
    assert mlp(np.ones((7, 3))).shape == (7, 2)
    assert len(mlp.parameters()) == 4


def test_mlp_rejects_wrong_width(rng):
    """Inputs of the wrong width raise DimensionError."""
    mlp = MLP.initialize(MLPSpec(layer_widths=[3, 2]), rng)
    with pytest.raises(DimensionError):
        mlp(np.ones((2, 4)))


def test_model_creation_is_seeded():
    """Same seed, same weights."""
    a = DeepArguingModel.create(2, [8], [8], 4, 10.0, seed=3)
    b = DeepArguingModel.create(2, [8], [8], 4, 10.0, seed=3)
    for (name, p), q in zip(a.named_parameters().items(), b.parameters()):
        assert np.array_equal(p.data, q.data), name


def test_named_parameters(small_model):
    """Parameters are named by head, layer and kind."""
    names = list(small_model.named_parameters())
    assert "extractor.0.weight" in names
    assert "base_head.1.bias" in names
    assert "edge_head.1.weight" in names
    assert small_model.d == 4
    assert small_model.input_width == 2


def test_model_rejects_nonpositive_alpha(small_model):
    """alpha must be positive."""
    with pytest.raises(ParameterError):
        DeepArguingModel(small_model.extractor, small_model.base_head, small_model.edge_head, alpha=0.0)


def test_base_score_in_open_unit_interval(small_model, rng):
    """Base scores are sigmoid outputs, one per row."""
    scores = base_score(small_model, rng.normal(size=(10, 2)))
    assert scores.shape == (10,)
    assert np.all((scores.data > 0) & (scores.data < 1))


def test_edge_embedding_width(small_model, rng):
    """Edge embeddings are d-dimensional."""
    assert edge_embedding(small_model, rng.normal(size=(3, 2))).shape == (3, 4)


def test_exceptionality_range_and_diagonal(small_model, rng):
    """W lies in [0, 1] and a characterization is never exceptional over itself."""
    X = rng.normal(size=(6, 2))
    W = exceptionality(small_model, X, X).data
    assert np.all((W >= 0) & (W <= 1))
    assert np.all(np.diag(W) == 0.0)


def test_no_pairwise_cycles():
    """For any pair, exceptionality holds in at most one direction."""
    rng = np.random.default_rng(7)
    for seed in range(10):
        model = DeepArguingModel.create(3, [8], [8], 6, alpha=10.0, seed=seed)
        A = rng.normal(scale=2.0, size=(40, 3))
        B = rng.normal(scale=2.0, size=(25, 3))
        forward = exceptionality(model, A, B).data
        backward = exceptionality(model, B, A).data.T
        assert np.all(np.minimum(forward, backward) < 1e-9)


def test_pairwise_exceptionality_values():
    """A dominating embedding gives W near 1 one way and 0 the other."""
    E_a = ad.constant([[5.0, 5.0]])
    E_b = ad.constant([[0.0, 0.0]])
    assert pairwise_exceptionality(E_a, E_b, 10.0).item() == pytest.approx(1.0, abs=1e-9)
    assert pairwise_exceptionality(E_b, E_a, 10.0).item() == 0.0


def test_pairwise_exceptionality_width_mismatch():
    """Embeddings of different widths raise DimensionError."""
    with pytest.raises(DimensionError):
        pairwise_exceptionality(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 4))), 1.0)


def test_irrelevance_range(small_model, rng):
    """Irrelevance weights lie in [-1, 0]."""
    A_N = irrelevance(small_model, rng.normal(size=(4, 2)), rng.normal(size=(5, 2))).data
    assert A_N.shape == (4, 5)
    assert np.all((A_N >= -1) & (A_N <= 0))


def test_base_score_gradient_wrt_weights(small_model, rng, gradcheck):
    """Gradients reach the extractor weights through the base-score head."""
    X = rng.normal(size=(5, 2))
    w0 = small_model.extractor.weights[0].data.copy()

    def build(w):
        small_model.extractor.weights[0] = w
        return ad.reduce_sum(base_score(small_model, X))

    gradcheck(build, w0)


def test_extractor_is_shared_by_both_heads(small_model, rng):
    """Perturbing the extractor moves base scores and exceptionality together."""
    X = rng.normal(size=(6, 2))
    scores_before = base_score(small_model, X).data
    W_before = exceptionality(small_model, X, X).data
    head_weights = [p.data.copy() for p in small_model.base_head.parameters() + small_model.edge_head.parameters()]

    small_model.extractor.weights[0].data += rng.normal(scale=0.5, size=small_model.extractor.weights[0].shape)
    assert not np.allclose(base_score(small_model, X).data, scores_before)
    assert not np.allclose(exceptionality(small_model, X, X).data, W_before)
    for before, p in zip(head_weights, small_model.base_head.parameters() + small_model.edge_head.parameters()):
        assert np.array_equal(before, p.data)


def test_features_feed_both_heads(small_model, rng):
    """Base scores and embeddings are the heads applied to the same extractor output."""
    X = rng.normal(size=(4, 2))
    h = features(small_model, X)
    assert np.array_equal(edge_embedding(small_model, X).data, small_model.edge_head(h).data)
    logits = small_model.base_head(h).data[:, 0]
    assert base_score(small_model, X).data == pytest.approx(1 / (1 + np.exp(-logits)))


def test_baseline_classifier_shares_extractor_initialization():
    """A baseline and a model built from one seed start from the same extractor."""
    model = DeepArguingModel.create(3, [8, 6], [8], 4, 10.0, seed=5)
    baseline = BaselineClassifier.create(3, [8, 6], n_classes=4, seed=5)
    for p, q in zip(model.extractor.parameters(), baseline.extractor.parameters()):
        assert np.array_equal(p.data, q.data)
    assert baseline(np.ones((2, 3))).shape == (2, 4)
    assert baseline.n_classes == 4
    assert len(baseline.parameters()) == 6


def test_baseline_classifier_validation(rng):
    """The classifier is one linear layer over the extractor output, for two or more classes."""
    extractor = MLP.initialize(MLPSpec(layer_widths=[3, 5]), rng)
    with pytest.raises(DimensionError):
        BaselineClassifier(extractor, MLP.initialize(MLPSpec(layer_widths=[5, 4, 2]), rng))
    with pytest.raises(DimensionError):
        BaselineClassifier(extractor, MLP.initialize(MLPSpec(layer_widths=[4, 2]), rng))
    with pytest.raises(ParameterError):
        BaselineClassifier.create(3, [5], n_classes=1)
