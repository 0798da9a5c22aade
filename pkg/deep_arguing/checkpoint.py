"""
Checkpoint container for a trained model and everything needed to use it.

A checkpoint is a NumPy ``.npz`` archive: one little-endian float64 member per
parameter tensor plus a ``__meta__`` member of UTF-8 JSON bytes describing the
architecture, data schema, fitted preprocessor, frozen casebase and run config.
"""

import json
import logging
import zipfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError

from deep_arguing import autodiff as ad
from deep_arguing.config import TrainConfig
from deep_arguing.data import DatasetSchema, Preprocessor, encode_labels
from deep_arguing.errors import CheckpointError, DeepArguingError, ParameterError
from deep_arguing.explain import DEFAULT_THRESHOLD, ExplanationSubgraph, extract_explanation
from deep_arguing.heads import MLP, DeepArguingModel, MLPSpec
from deep_arguing.qbaf import FullCasebase
from deep_arguing.trainer import EvaluationMetrics, classification_metrics, infer, predict_matrix

logger = logging.getLogger(__name__)

FORMAT_NAME = "deep-arguing-checkpoint"
FORMAT_VERSION = 1
META_KEY = "__meta__"
MLP_NAMES = ("extractor", "base_head", "edge_head")


class Prediction(BaseModel):
    label: str
    class_index: int
    target_strengths: list[float]


class TrainedModel(BaseModel):
    """A trained model bundled with its casebase, preprocessing and run config."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: DeepArguingModel
    fullcasebase: FullCasebase
    preprocessor: Preprocessor
    schema_: DatasetSchema
    config: TrainConfig
    label_vocabulary: list[str]

    @property
    def n_classes(self) -> int:
        return len(self.label_vocabulary)

    def class_indices(self, classes: Iterable[str | int]) -> list[int]:
        """Map label names (or class indices) to class indices."""
        lookup = {label: i for i, label in enumerate(self.label_vocabulary)}
        indices = []
        for c in classes:
            if isinstance(c, int) and 0 <= c < self.n_classes:
                indices.append(c)
            elif str(c) in lookup:
                indices.append(lookup[str(c)])
            else:
                raise ParameterError(f"unknown class {c!r}; known classes are {self.label_vocabulary}")
        return indices

    def transform(self, frame: pd.DataFrame) -> np.ndarray:
        return self.preprocessor.transform(frame)

    def predict_frame(self, frame: pd.DataFrame) -> list[Prediction]:
        labels, strengths = predict_matrix(self.model, self.fullcasebase, self.transform(frame), self.config)
        return [
            Prediction(label=self.label_vocabulary[int(c)], class_index=int(c), target_strengths=s.tolist())
            for c, s in zip(labels, strengths)
        ]

    def evaluate_frame(self, frame: pd.DataFrame) -> EvaluationMetrics:
        y = encode_labels(frame, self.schema_, self.label_vocabulary)
        predicted, _ = predict_matrix(self.model, self.fullcasebase, self.transform(frame), self.config)
        return classification_metrics(y, predicted, self.n_classes)

    def explain_frame(
        self,
        frame: pd.DataFrame,
        row: int,
        classes: Optional[Sequence[str | int]] = None,
        threshold: float = DEFAULT_THRESHOLD,
    ) -> ExplanationSubgraph:
        """Explanation subgraph for ``frame`` row ``row`` (0-based)."""
        if not 0 <= row < len(frame):
            raise ParameterError(f"row {row} outside a frame of {len(frame)} rows")
        class_filter = None if classes is None else self.class_indices(classes)
        qbaf, trace, _, _ = infer(self.model, self.fullcasebase, self.transform(frame.iloc[[row]]), self.config)
        subgraph = extract_explanation(qbaf, trace, self.fullcasebase, 0, class_filter, threshold)
        return subgraph.model_copy(update={"row": row})


def _meta(trained: TrainedModel) -> dict:
    model = trained.model
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "mlp_specs": {name: getattr(model, name).spec.model_dump() for name in MLP_NAMES},
        "alpha": model.alpha,
        "d": model.d,
        "schema": trained.schema_.model_dump(mode="json"),
        "preprocessor": trained.preprocessor.model_dump(mode="json"),
        "fullcasebase": trained.fullcasebase.model_dump(mode="json"),
        "config": trained.config.model_dump(mode="json"),
        "label_vocabulary": trained.label_vocabulary,
    }


def save_checkpoint(trained: TrainedModel, path: Path | str) -> None:
    path = Path(path)
    arrays = {name: np.ascontiguousarray(t.data, dtype="<f8") for name, t in trained.model.named_parameters().items()}
    arrays[META_KEY] = np.frombuffer(json.dumps(_meta(trained)).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    logger.info(f"Checkpoint written to {path}")


def _rebuild(meta: dict, arrays: dict[str, np.ndarray]) -> DeepArguingModel:
    mlps = {}
    for name in MLP_NAMES:
        spec = MLPSpec.model_validate(meta["mlp_specs"][name])
        n_layers = len(spec.layer_widths) - 1
        weights, biases = [], []
        for i in range(n_layers):
            for kind, target in (("weight", weights), ("bias", biases)):
                key = f"{name}.{i}.{kind}"
                if key not in arrays:
                    raise CheckpointError(f"missing parameter {key}")
                target.append(ad.parameter(arrays[key], name=key))
        mlps[name] = MLP(spec, weights, biases)
    return DeepArguingModel(mlps["extractor"], mlps["base_head"], mlps["edge_head"], meta["alpha"])


def load_checkpoint(path: Path | str) -> TrainedModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {key: archive[key] for key in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"{path} is not a readable checkpoint: {e}") from e
    if META_KEY not in arrays:
        raise CheckpointError(f"{path} has no {META_KEY} member")

    try:
        meta = json.loads(arrays.pop(META_KEY).tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable metadata: {e}") from e
    if meta.get("format") != FORMAT_NAME or meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {meta.get('format')!r} v{meta.get('format_version')}")

    try:
        trained = TrainedModel(
            model=_rebuild(meta, arrays),
            fullcasebase=FullCasebase.model_validate(meta["fullcasebase"]),
            preprocessor=Preprocessor.model_validate(meta["preprocessor"]),
            schema_=DatasetSchema.model_validate(meta["schema"]),
            config=TrainConfig(**meta["config"]),
            label_vocabulary=meta["label_vocabulary"],
        )
    except CheckpointError:
        raise
    except (KeyError, ValidationError, DeepArguingError) as e:
        logger.error(f"Corrupt checkpoint {path}: {e}")
        raise CheckpointError(f"{path}: inconsistent checkpoint contents: {e}") from e
    logger.info(f"Loaded checkpoint {path} ({len(trained.fullcasebase.cases)} cases, {trained.n_classes} classes)")
    return trained
