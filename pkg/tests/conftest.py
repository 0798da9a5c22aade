"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from deep_arguing import autodiff as ad
from deep_arguing.checkpoint import TrainedModel
from deep_arguing.config import TrainConfig
from deep_arguing.data import DatasetSchema, SplitConfig, load_and_preprocess, make_blobs_frame
from deep_arguing.heads import DeepArguingModel
from deep_arguing.qbaf import Case, FullCasebase
from deep_arguing.trainer import train


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction checks")


def numeric_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x``."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (f(plus) - f(minus)) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.linalg.norm(a) + np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / scale) if scale > 1e-12 else 0.0


@pytest.fixture
def gradcheck():
    """
    Compare autodiff gradients of ``build(*tensors) -> scalar`` against
    central differences, one input at a time.
    """

    def check(build, *inputs, h=1e-5, tol=1e-4):
        inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
        params = [ad.parameter(x) for x in inputs]
        ad.backward(build(*params))
        for k, x in enumerate(inputs):

            def f(value, k=k):
                args = [ad.constant(v) for v in inputs]
                args[k] = ad.constant(value)
                return build(*args).item()

            expected = numeric_gradient(f, x, h)
            assert relative_error(params[k].grad, expected) < tol, f"input {k}"

    return check


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(0)


@pytest.fixture
def small_model():
    """Tiny model over 2-D inputs."""
    return DeepArguingModel.create(
        input_width=2,
        extractor_widths=[8],
        head_hidden_widths=[8],
        embedding_dim=4,
        alpha=10.0,
        seed=0,
    )


@pytest.fixture
def toy_casebase():
    """Three cases of class 0 and two of class 1, with both targets appended."""
    cases = [
        Case(x=[-2.0, 0.1], y=0, case_id=10),
        Case(x=[-1.5, -0.4], y=0, case_id=11),
        Case(x=[-2.4, 0.3], y=0, case_id=12),
        Case(x=[2.0, 0.0], y=1, case_id=20),
        Case(x=[1.7, 0.5], y=1, case_id=21),
    ]
    return FullCasebase.from_cases(cases, n_classes=2)


@pytest.fixture
def blobs_csv(tmp_path):
    """Two-blob dataset written to CSV."""
    path = tmp_path / "blobs.csv"
    make_blobs_frame(n_samples=200, seed=0).to_csv(path, index=False)
    return path


@pytest.fixture
def blobs_schema():
    return DatasetSchema(label_column="label", numeric_columns=["x0", "x1"])


def small_config(**overrides) -> TrainConfig:
    """Fast configuration for the two-blob toy problem."""
    values = dict(
        lr=0.01,
        epochs=4,
        batch_size=32,
        clusters_per_class=2,
        extractor_widths=[16],
        head_hidden_widths=[16],
        embedding_dim=8,
        label_column="label",
        numeric_columns=["x0", "x1"],
        seed=0,
    )
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture(scope="session")
def trained_toy(tmp_path_factory):
    """A briefly trained model on the two-blob problem, with its data splits."""
    path = tmp_path_factory.mktemp("toy") / "blobs.csv"
    make_blobs_frame(n_samples=200, seed=0).to_csv(path, index=False)
    config = small_config()
    splits = load_and_preprocess(path, config.dataset_schema, SplitConfig(), seed=0)
    model, fullcasebase, report = train(config, splits.train, splits.val, splits.n_classes, splits.test)
    trained = TrainedModel(
        model=model,
        fullcasebase=fullcasebase,
        preprocessor=splits.preprocessor,
        schema_=config.dataset_schema.model_copy(update={"label_vocabulary": splits.label_vocabulary}),
        config=config,
        label_vocabulary=splits.label_vocabulary,
    )
    return trained, splits, report, path


@pytest.fixture
def make_config():
    """Factory for the fast toy configuration, with keyword overrides."""
    return small_config
