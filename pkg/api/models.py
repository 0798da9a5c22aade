"""Pydantic models for API requests and responses."""

from typing import Any, Optional

from pydantic import BaseModel, Field

from deep_arguing.checkpoint import Prediction
from deep_arguing.explain import DEFAULT_THRESHOLD, ExplanationSubgraph


class PredictRequest(BaseModel):
    """Raw feature records, one per case to classify."""

    rows: list[dict[str, Any]]


class PredictResponse(BaseModel):
    status: str = "success"
    predictions: list[Prediction]


class ExplainRequest(BaseModel):
    """A single case (or a list plus the row to explain) and the subgraph filter."""

    rows: list[dict[str, Any]]
    row: int = Field(0, ge=0)
    classes: Optional[list[str]] = None
    threshold: float = Field(DEFAULT_THRESHOLD, ge=0, le=1)


class ExplainResponse(BaseModel):
    status: str = "success"
    explanation: ExplanationSubgraph
