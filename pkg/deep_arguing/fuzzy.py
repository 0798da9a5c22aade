"""Fuzzy-logic connectives: Goedel T-norm, smooth universal aggregation, strong negation."""

from typing import Optional

import numpy as np

from deep_arguing import autodiff as ad
from deep_arguing.autodiff import Tensor
from deep_arguing.errors import DomainError, ParameterError

# Slack allowed on [0, 1] range checks for values produced by float arithmetic.
RANGE_TOLERANCE = 1e-9


def _check_unit_interval(*values: Tensor) -> None:
    for v in values:
        if v.size and (v.data.min() < -RANGE_TOLERANCE or v.data.max() > 1.0 + RANGE_TOLERANCE):
            raise DomainError(f"fuzzy value outside [0, 1]: range [{v.data.min()}, {v.data.max()}]")


def tnorm(a: Tensor, b: Tensor) -> Tensor:
    """Goedel T-norm T(a, b) = min(a, b)."""
    a, b = ad.constant(a), ad.constant(b)
    _check_unit_interval(a, b)
    return ad.elementwise_min(a, b)


def aggregate(
    values: Tensor,
    t: float,
    axis: Optional[int] = None,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Soft universal quantifier -t * log(sum(exp(-a_i / t))), clamped into [0, 1].

    Aggregating nothing yields 1. With ``mask`` the quantifier ranges only
    over entries where the mask is True; a fully masked slice also yields 1.
    """
    if t <= 0:
        raise ParameterError(f"aggregation temperature must be positive, got {t}")
    values = ad.constant(values)
    if values.size == 0:
        return ad.constant(1.0)
    _check_unit_interval(values)

    if mask is None:
        return ad.clip(ad.logsumexp_neg(values, t, axis=axis), 0.0, 1.0)

    keep = np.broadcast_to(np.asarray(mask, dtype=bool), values.shape)
    if axis is None:
        if not keep.any():
            return ad.constant(1.0)
        return ad.clip(ad.logsumexp_neg(values, t, mask=keep), 0.0, 1.0)

    empty = ~keep.any(axis=axis)
    if not empty.any():
        return ad.clip(ad.logsumexp_neg(values, t, axis=axis, mask=keep), 0.0, 1.0)
    # Empty slices are evaluated unmasked, then overwritten with 1.
    keep = keep | np.expand_dims(empty, axis)
    soft = ad.clip(ad.logsumexp_neg(values, t, axis=axis, mask=keep), 0.0, 1.0)
    filled = empty.astype(np.float64)
    return ad.add(ad.hadamard(soft, 1.0 - filled), filled)


def negate(a: Tensor) -> Tensor:
    """Strong negation 1 - a."""
    a = ad.constant(a)
    _check_unit_interval(a)
    return ad.sub(1.0, a)
