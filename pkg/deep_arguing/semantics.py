"""Batched MLP-based gradual semantics and target-argument prediction."""

from enum import Enum
from typing import TYPE_CHECKING, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from deep_arguing import autodiff as ad
from deep_arguing.autodiff import Tensor
from deep_arguing.errors import DimensionError, ParameterError

if TYPE_CHECKING:
    from deep_arguing.qbaf import QBAFBatch


class SemanticsMode(str, Enum):
    """How the new case's irrelevance attacks enter the iteration."""

    # Constant-strength new case attacks at every influence step.
    FOLDED = "folded"
    # New-case attacks only produce S(1); later steps use the casebase alone.
    ONE_SHOT = "one_shot"


class StrengthTrace(BaseModel):
    """Final strengths for a batch and the per-iteration max change."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    S_final: Tensor
    history: list[float] = Field(default_factory=list)

    def converged(self, tol: float = 1e-6) -> bool:
        return bool(self.history) and self.history[-1] <= tol


def _check(qbaf: "QBAFBatch", iterations: int) -> None:
    if iterations < 1:
        raise ParameterError(f"iterations must be >= 1, got {iterations}")
    if qbaf.A_N.shape != (qbaf.batch_size, qbaf.n):
        raise DimensionError(f"A_N shape {qbaf.A_N.shape} does not match batch {qbaf.batch_size} x {qbaf.n}")


def final_strengths(
    qbaf: "QBAFBatch",
    iterations: int,
    mode: SemanticsMode = SemanticsMode.FOLDED,
) -> StrengthTrace:
    """
    Iterate S <- ReLU(base + S @ A_cb) for ``iterations`` steps from tiled base scores.

    In FOLDED mode ``base`` is b_cb + A_N * b_new on every step. In ONE_SHOT
    mode the new-case term only enters the first step.
    """
    _check(qbaf, iterations)
    batch, n = qbaf.batch_size, qbaf.n
    tiled = ad.broadcast_to(ad.reshape(qbaf.b_cb, (1, n)), (batch, n))
    new_case_term = ad.hadamard(qbaf.A_N, ad.reshape(qbaf.b_new, (batch, 1)))
    effective = ad.add(tiled, new_case_term)

    history: list[float] = []
    S = tiled
    for step in range(iterations):
        base = effective if mode is SemanticsMode.FOLDED or step == 0 else tiled
        S_next = ad.relu(ad.add(base, ad.matmul(S, qbaf.A_cb)))
        history.append(float(np.max(np.abs(S_next.data - S.data))) if S_next.size else 0.0)
        S = S_next
    return StrengthTrace(S_final=S, history=history)


def predict(trace: StrengthTrace, target_indices: Sequence[int]) -> tuple[np.ndarray, Tensor]:
    """Target strengths as logits and the argmax class (lowest index on ties)."""
    logits = ad.take(trace.S_final, list(target_indices), axis=1)
    return np.argmax(logits.data, axis=1), logits


def reference_strengths(
    qbaf: "QBAFBatch",
    iterations: int,
    mode: SemanticsMode = SemanticsMode.FOLDED,
) -> np.ndarray:
    """
    Argument-by-argument evaluation of the same semantics, with the new case
    as an explicit extra node of constant strength.
    """
    _check(qbaf, iterations)
    A_cb = qbaf.A_cb.data
    A_N = qbaf.A_N.data
    b_cb = qbaf.b_cb.data
    b_new = qbaf.b_new.data
    n = qbaf.n
    out = np.zeros((qbaf.batch_size, n))

    for b in range(qbaf.batch_size):
        strength = [float(v) for v in b_cb]
        for step in range(iterations):
            include_new = mode is SemanticsMode.FOLDED or step == 0
            updated = []
            for i in range(n):
                # aggregation over incoming edges (j, i)
                total = 0.0
                for j in range(n):
                    total += A_cb[j, i] * strength[j]
                if include_new:
                    total += A_N[b, i] * b_new[b]
                updated.append(max(0.0, b_cb[i] + total))
            strength = updated
        out[b] = strength
    return out
