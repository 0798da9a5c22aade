"""End-to-end checks on the synthetic blobs and, when available, the Glioma dataset."""

import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from deep_arguing.config import load_train_config
from deep_arguing.data import load_and_preprocess, make_blobs_frame
from deep_arguing.trainer import infer, train

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
GLIOMA_CSV = os.environ.get("DEEP_ARGUING_GLIOMA_CSV")


def _fit(config_name, csv_path, seed):
    config = load_train_config(CONFIGS / config_name).model_copy(update={"seed": seed})
    splits = load_and_preprocess(csv_path, config.dataset_schema, config.split_config, seed)
    _, _, report = train(config, splits.train, splits.val, splits.n_classes, splits.test)
    return report


@pytest.mark.slow
def test_blobs_are_separated(tmp_path):
    """Two blobs four sigma-units apart reach 95% test accuracy in at least 4 of 5 seeds."""
    path = tmp_path / "blobs.csv"
    make_blobs_frame(n_samples=400, distance=4.0, sigma=0.5, seed=0).to_csv(path, index=False)
    accuracies = [_fit("blobs.env", path, seed).test.accuracy for seed in range(5)]
    assert sum(a >= 0.95 for a in accuracies) >= 4, accuracies


@pytest.mark.slow
@pytest.mark.skipif(GLIOMA_CSV is None, reason="DEEP_ARGUING_GLIOMA_CSV not set")
def test_glioma_macro_f1():
    """Mean test macro-F1 over 5 seeds is at least 0.78."""
    scores = [_fit("glioma.env", GLIOMA_CSV, seed).test.macro_f1 for seed in range(5)]
    assert np.mean(scores) >= 0.78, scores


def test_explanations_agree_with_predictions(trained_toy):
    """For 20 rows the explained argmax is the predicted label and edge weights are the model's."""
    trained, _, _, csv_path = trained_toy
    frame = pd.read_csv(csv_path)
    rows = np.random.default_rng(7).choice(len(frame), size=20, replace=False)
    predictions = trained.predict_frame(frame)

    for row in rows:
        row = int(row)
        subgraph = trained.explain_frame(frame, row, threshold=0.0)
        assert subgraph.predicted == predictions[row].class_index

        qbaf, _, _, _ = infer(trained.model, trained.fullcasebase, trained.transform(frame.iloc[[row]]), trained.config)
        for edge in subgraph.edges:
            if edge.source == "N":
                assert edge.weight == qbaf.A_N.data[0, int(edge.target)]
            else:
                assert edge.weight == qbaf.A_cb.data[int(edge.source), int(edge.target)]


def test_training_reports_are_reproducible(tmp_path):
    """Identical config and seed give byte-identical JSON-lines reports."""
    path = tmp_path / "blobs.csv"
    make_blobs_frame(n_samples=120, seed=3).to_csv(path, index=False)
    config = load_train_config(CONFIGS / "blobs.env").model_copy(update={"epochs": 2})
    splits = load_and_preprocess(path, config.dataset_schema, config.split_config, config.seed)
    reports = [train(config, splits.train, splits.val, splits.n_classes, splits.test)[2] for _ in range(2)]
    assert reports[0].to_jsonl() == reports[1].to_jsonl()


@pytest.mark.parametrize(
    "name, lr, batch_size, alpha, iterations, extractor, heads, d, n_features",
    [
        ("adult.env", 0.003, 256, 85, 65, [64, 64], [64], 128, 14),
        ("bank.env", 0.003, 256, 125, 65, [64, 64], [64], 64, 16),
        ("chess.env", 0.007, 1024, 100, 90, [128, 64], [128, 64], 128, 6),
        ("covertype.env", 0.0005, 2048, 100, 10, [512, 256], [128], 128, 54),
        ("glioma.env", 0.003, 64, 10, 5, [64, 64], [64], 64, 23),
        ("higgs.env", 0.0005, 2048, 100, 10, [512, 256], [128], 128, 28),
    ],
)
def test_shipped_configs_load(name, lr, batch_size, alpha, iterations, extractor, heads, d, n_features):
    """Every shipped run config parses and carries its dataset's tuned settings."""
    config = load_train_config(CONFIGS / name)
    assert config.lr == lr
    assert config.batch_size == batch_size
    assert config.alpha == alpha
    assert config.iterations == iterations
    assert config.extractor_widths == extractor
    assert config.head_hidden_widths == heads
    assert config.embedding_dim == d
    assert config.clusters_per_class == 5
    assert config.lse_temperature == 0.025
    schema = config.dataset_schema
    assert len(schema.numeric_columns) + len(schema.categorical_columns) == n_features
    assert schema.label_column not in schema.numeric_columns + schema.categorical_columns
