"""Checkpoint loading and inference shared by the HTTP endpoints."""

import logging
from pathlib import Path
from typing import Any, Optional, Sequence

import pandas as pd

from deep_arguing.checkpoint import Prediction, TrainedModel, load_checkpoint
from deep_arguing.config import settings
from deep_arguing.errors import DataError, DeepArguingError
from deep_arguing.explain import ExplanationSubgraph

logger = logging.getLogger(__name__)


class ModelNotLoadedError(DeepArguingError):
    """No checkpoint is available to serve."""


class ModelService:
    """Holds the served checkpoint; loaded once per process on first use."""

    def __init__(self, model_path: Optional[str] = None):
        """Remember where the checkpoint lives without touching the disk yet."""
        self.model_path = Path(model_path or settings.model_path)
        self.trained: Optional[TrainedModel] = None

    def load(self, path: Optional[Path | str] = None) -> TrainedModel:
        if path is not None:
            self.model_path = Path(path)
        self.trained = load_checkpoint(self.model_path)
        logger.info(f"Serving checkpoint {self.model_path}")
        return self.trained

    def is_loaded(self) -> bool:
        return self.trained is not None

    def ensure_loaded(self) -> TrainedModel:
        """Return the served model, loading it from ``model_path`` if needed."""
        if self.trained is None:
            if not self.model_path.exists():
                raise ModelNotLoadedError(f"no checkpoint at {self.model_path}; train one or set MODEL_PATH")
            self.load()
        return self.trained

    def summary(self) -> dict:
        if self.trained is None:
            return {"loaded": False, "model_path": str(self.model_path)}
        trained = self.trained
        return {
            "loaded": True,
            "model_path": str(self.model_path),
            "classes": trained.label_vocabulary,
            "casebase_size": len(trained.fullcasebase.cases),
            "d": trained.model.d,
            "alpha": trained.model.alpha,
            "iterations": trained.config.iterations,
            "lse_temperature": trained.config.lse_temperature,
            "semantics_mode": trained.config.semantics_mode.value,
        }

    @staticmethod
    def _frame(rows: Sequence[dict[str, Any]]) -> pd.DataFrame:
        if not rows:
            raise DataError("request contains no rows")
        return pd.DataFrame(list(rows))

    def predict(self, rows: Sequence[dict[str, Any]]) -> list[Prediction]:
        return self.ensure_loaded().predict_frame(self._frame(rows))

    def explain(
        self,
        rows: Sequence[dict[str, Any]],
        row: int,
        classes: Optional[Sequence[str]],
        threshold: float,
    ) -> ExplanationSubgraph:
        return self.ensure_loaded().explain_frame(self._frame(rows), row, classes, threshold)


# Global model service instance
model_service = ModelService()
