"""Learnable base-score and exceptionality functions on a shared MLP feature extractor."""

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from deep_arguing import autodiff as ad
from deep_arguing.autodiff import Tensor
from deep_arguing.errors import DimensionError, ParameterError

logger = logging.getLogger(__name__)


class MLPSpec(BaseModel):
    """Layer widths of a ReLU MLP, input width first and output width last."""

    layer_widths: list[int] = Field(min_length=2)

    @field_validator("layer_widths")
    @classmethod
    def _positive(cls, widths: list[int]) -> list[int]:
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive: {widths}")
        return widths

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]


class MLP:
    """Dense layers with ReLU between them and no activation after the last."""

    def __init__(self, spec: MLPSpec, weights: list[Tensor], biases: list[Tensor]):
        if len(weights) != len(spec.layer_widths) - 1 or len(biases) != len(weights):
            raise DimensionError("layer count does not match the MLP spec")
        for i, (w, b) in enumerate(zip(weights, biases)):
            expected = (spec.layer_widths[i], spec.layer_widths[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape}, expected {expected}")
        self.spec = spec
        self.weights = weights
        self.biases = biases

    @classmethod
    def initialize(cls, spec: MLPSpec, rng: np.random.Generator, name: str = "mlp") -> "MLP":
        """Kaiming-uniform (fan-in) weights, zero biases."""
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(spec.layer_widths[:-1], spec.layer_widths[1:])):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(ad.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name=f"{name}.{i}.weight"))
            biases.append(ad.parameter(np.zeros(fan_out), name=f"{name}.{i}.bias"))
        return cls(spec, weights, biases)

    def parameters(self) -> list[Tensor]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def __call__(self, x: Tensor) -> Tensor:
        x = ad.constant(x)
        if x.ndim != 2 or x.shape[1] != self.spec.input_width:
            raise DimensionError(f"MLP expects width {self.spec.input_width}, got shape {x.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = ad.add(ad.matmul(x, w), b)
            if i < last:
                x = ad.relu(x)
        return x


class DeepArguingModel:
    """
    Shared feature extractor feeding a scalar base-score head and a
    d-dimensional edge-embedding head.
    """

    def __init__(self, extractor: MLP, base_head: MLP, edge_head: MLP, alpha: float):
        if alpha <= 0:
            raise ParameterError(f"alpha must be positive, got {alpha}")
        if base_head.spec.output_width != 1:
            raise DimensionError("base-score head must end in a width-1 layer")
        if base_head.spec.input_width != extractor.spec.output_width:
            raise DimensionError("base-score head input does not match extractor output")
        if edge_head.spec.input_width != extractor.spec.output_width:
            raise DimensionError("edge head input does not match extractor output")
        self.extractor = extractor
        self.base_head = base_head
        self.edge_head = edge_head
        self.alpha = float(alpha)

    @property
    def d(self) -> int:
        return self.edge_head.spec.output_width

    @property
    def input_width(self) -> int:
        return self.extractor.spec.input_width

    @classmethod
    def create(
        cls,
        input_width: int,
        extractor_widths: list[int],
        head_hidden_widths: list[int],
        embedding_dim: int,
        alpha: float,
        seed: Optional[int] = None,
    ) -> "DeepArguingModel":
        rng = np.random.default_rng(seed)
        hidden = extractor_widths[-1]
        extractor = MLP.initialize(MLPSpec(layer_widths=[input_width, *extractor_widths]), rng, "extractor")
        base_head = MLP.initialize(MLPSpec(layer_widths=[hidden, *head_hidden_widths, 1]), rng, "base_head")
        edge_head = MLP.initialize(MLPSpec(layer_widths=[hidden, *head_hidden_widths, embedding_dim]), rng, "edge_head")
        logger.info(
            f"Initialized model: input={input_width} extractor={extractor_widths} "
            f"heads={head_hidden_widths} d={embedding_dim} alpha={alpha}"
        )
        return cls(extractor, base_head, edge_head, alpha)

    def named_parameters(self) -> dict[str, Tensor]:
        named = {}
        for prefix, mlp in (("extractor", self.extractor), ("base_head", self.base_head), ("edge_head", self.edge_head)):
            for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
                named[f"{prefix}.{i}.weight"] = w
                named[f"{prefix}.{i}.bias"] = b
        return named

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


class BaselineClassifier:
    """The same feature extractor with a linear classification layer on top."""

    def __init__(self, extractor: MLP, classifier: MLP):
        if classifier.spec.layer_widths[:-1] != [extractor.spec.output_width]:
            raise DimensionError("classifier must be a single linear layer over the extractor output")
        self.extractor = extractor
        self.classifier = classifier

    @property
    def n_classes(self) -> int:
        return self.classifier.spec.output_width

    @classmethod
    def create(cls, input_width: int, extractor_widths: list[int], n_classes: int, seed: Optional[int] = None) -> "BaselineClassifier":
        """The extractor is drawn first and matches a DeepArguingModel created with the same seed."""
        if n_classes < 2:
            raise ParameterError(f"need at least two classes, got {n_classes}")
        rng = np.random.default_rng(seed)
        extractor = MLP.initialize(MLPSpec(layer_widths=[input_width, *extractor_widths]), rng, "extractor")
        classifier = MLP.initialize(MLPSpec(layer_widths=[extractor_widths[-1], n_classes]), rng, "classifier")
        logger.info(f"Initialized baseline: input={input_width} extractor={extractor_widths} classes={n_classes}")
        return cls(extractor, classifier)

    def parameters(self) -> list[Tensor]:
        return self.extractor.parameters() + self.classifier.parameters()

    def __call__(self, X) -> Tensor:
        """Class logits, one row per characterization."""
        return self.classifier(self.extractor(X))


def features(model: DeepArguingModel, X) -> Tensor:
    """Shared extractor output for a batch of characterizations."""
    return model.extractor(X)


def base_score(model: DeepArguingModel, X) -> Tensor:
    """Base scores in (0, 1), one per row."""
    h = features(model, X)
    logits = model.base_head(h)
    return ad.reshape(ad.sigmoid(logits), (logits.shape[0],))


def edge_embedding(model: DeepArguingModel, X) -> Tensor:
    return model.edge_head(features(model, X))


def pairwise_exceptionality(E_a: Tensor, E_b: Tensor, alpha: float) -> Tensor:
    """
    W[i, j] = ReLU(mean_l(2 * sigmoid(alpha * (E_a[i, l] - E_b[j, l])) - 1)).

    2*sigmoid(z) - 1 is odd in z, so W[i, j] and W[j, i] are never both positive.
    """
    if E_a.shape[1] != E_b.shape[1]:
        raise DimensionError(f"embedding widths differ: {E_a.shape[1]} vs {E_b.shape[1]}")
    m, d = E_a.shape
    q = E_b.shape[0]
    diff = ad.sub(ad.reshape(E_a, (m, 1, d)), ad.reshape(E_b, (1, q, d)))
    signed = ad.sub(ad.scale(ad.sigmoid(ad.scale(diff, alpha)), 2.0), 1.0)
    return ad.relu(ad.reduce_mean(signed, axis=2))


def exceptionality(model: DeepArguingModel, X_a, X_b) -> Tensor:
    """Degree to which each row of ``X_a`` is more exceptional than each row of ``X_b``."""
    return pairwise_exceptionality(edge_embedding(model, X_a), edge_embedding(model, X_b), model.alpha)


def irrelevance(model: DeepArguingModel, X_new, X_cb) -> Tensor:
    """-(1 - exceptionality(new, case)), in [-1, 0]: the new case's attack weight on each case."""
    return ad.sub(exceptionality(model, X_new, X_cb), 1.0)
