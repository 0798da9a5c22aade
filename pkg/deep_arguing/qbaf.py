"""
Mining the edge-weighted argumentation graph from a casebase and new cases.

Node order is fixed: casebase cases first, then one target argument per class.
Row/column ``i`` of every matrix below refers to node ``i`` of that order.
"""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from deep_arguing import autodiff as ad
from deep_arguing import fuzzy
from deep_arguing.autodiff import Tensor
from deep_arguing.errors import DimensionError, ParameterError
from deep_arguing.heads import DeepArguingModel, base_score, edge_embedding, irrelevance, pairwise_exceptionality

logger = logging.getLogger(__name__)


class Case(BaseModel):
    """Labelled characterization; ``case_id`` is the source row it came from."""

    x: list[float]
    y: int = Field(ge=0)
    case_id: Optional[int] = None


class TargetArgument(BaseModel):
    """Default characterization standing for one class."""

    x_delta: list[float]
    c: int = Field(ge=0)


class FullCasebase(BaseModel):
    """Casebase cases followed by target arguments."""

    cases: list[Case] = Field(min_length=1)
    targets: list[TargetArgument]

    @model_validator(mode="after")
    def _check_layout(self) -> "FullCasebase":
        width = len(self.cases[0].x)
        if any(len(c.x) != width for c in self.cases) or any(len(t.x_delta) != width for t in self.targets):
            raise ValueError("characterization widths differ within the casebase")
        if [t.c for t in self.targets] != list(range(len(self.targets))):
            raise ValueError("targets must be exactly one per class, ordered by class index")
        if any(c.y >= len(self.targets) for c in self.cases):
            raise ValueError("case label outside the class range")
        return self

    @classmethod
    def from_cases(cls, cases: list[Case], n_classes: int) -> "FullCasebase":
        return cls(cases=cases, targets=make_targets(cases, n_classes))

    @property
    def n_classes(self) -> int:
        return len(self.targets)

    @property
    def n_total(self) -> int:
        return len(self.cases) + len(self.targets)

    @property
    def width(self) -> int:
        return len(self.cases[0].x)

    @property
    def characterizations(self) -> np.ndarray:
        rows = [c.x for c in self.cases] + [t.x_delta for t in self.targets]
        return np.asarray(rows, dtype=np.float64)

    @property
    def case_characterizations(self) -> np.ndarray:
        return np.asarray([c.x for c in self.cases], dtype=np.float64)

    @property
    def target_characterizations(self) -> np.ndarray:
        return np.asarray([t.x_delta for t in self.targets], dtype=np.float64)

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([c.y for c in self.cases] + [t.c for t in self.targets], dtype=np.int64)

    @property
    def target_indices(self) -> list[int]:
        return list(range(len(self.cases), self.n_total))

    @property
    def node_ids(self) -> list[str]:
        ids = [f"case:{c.case_id}" if c.case_id is not None else f"case:#{i}" for i, c in enumerate(self.cases)]
        return ids + [f"target:{t.c}" for t in self.targets]


class QBAFBatch(BaseModel):
    """Matrices of the argumentation graph mined for one batch of new cases."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    A_cb: Tensor
    b_cb: Tensor
    A_N: Tensor
    b_new: Tensor
    target_indices: list[int]

    @model_validator(mode="after")
    def _check_shapes(self) -> "QBAFBatch":
        n = self.b_cb.shape[0] if self.b_cb.ndim == 1 else -1
        if self.A_cb.shape != (n, n):
            raise ValueError(f"A_cb {self.A_cb.shape} does not match b_cb {self.b_cb.shape}")
        if self.A_N.ndim != 2 or self.A_N.shape[1] != n or self.b_new.shape != (self.A_N.shape[0],):
            raise ValueError(f"A_N {self.A_N.shape} / b_new {self.b_new.shape} inconsistent with n={n}")
        if any(i < 0 or i >= n for i in self.target_indices):
            raise ValueError("target index out of range")
        return self

    @property
    def n(self) -> int:
        return self.b_cb.shape[0]

    @property
    def batch_size(self) -> int:
        return self.b_new.shape[0]


def make_targets(casebase: list[Case], n_classes: int) -> list[TargetArgument]:
    """One target per class, all at the mean casebase characterization."""
    if not casebase:
        raise ParameterError("cannot build target arguments from an empty casebase")
    mean = np.asarray([c.x for c in casebase], dtype=np.float64).mean(axis=0)
    return [TargetArgument(x_delta=mean.tolist(), c=c) for c in range(n_classes)]


def _check_width(model: DeepArguingModel, width: int) -> None:
    if width != model.input_width:
        raise DimensionError(f"characterization width {width} does not match model input {model.input_width}")


def casebase_adjacency(W: Tensor, labels: np.ndarray, t: float) -> Tensor:
    """
    Signed edge weights from a pairwise exceptionality matrix.

    Attacks (different labels) take minimality over same-label nodes of the
    attacker; supports take it over all nodes. The minimality set includes
    both endpoints, which contribute w_m = 1 since W[i, i] = 0.
    """
    if t <= 0:
        raise ParameterError(f"LogSumExp temperature must be positive, got {t}")
    W = ad.constant(W)
    labels = np.asarray(labels)
    n = labels.shape[0]
    if W.shape != (n, n):
        raise DimensionError(f"exceptionality matrix {W.shape} does not match {n} labels")

    # chain[i, j, g] = T(W[i, g], W[g, j])
    via_first = ad.broadcast_to(ad.reshape(W, (n, 1, n)), (n, n, n))
    via_second = ad.broadcast_to(ad.reshape(ad.transpose(W), (1, n, n)), (n, n, n))
    minimality = fuzzy.negate(fuzzy.tnorm(via_first, via_second))

    same_label = labels[:, None] == labels[None, :]
    attack_scope = same_label[:, None, :]
    attack_strength = fuzzy.tnorm(W, fuzzy.aggregate(minimality, t, axis=2, mask=attack_scope))
    support_strength = fuzzy.tnorm(W, fuzzy.aggregate(minimality, t, axis=2))

    attack_sign = -(~same_label).astype(np.float64)
    support_sign = (same_label & ~np.eye(n, dtype=bool)).astype(np.float64)
    return ad.add(ad.hadamard(attack_strength, attack_sign), ad.hadamard(support_strength, support_sign))


def build_casebase_graph(model: DeepArguingModel, fullcasebase: FullCasebase, t: float) -> tuple[Tensor, Tensor]:
    """Weighted adjacency among casebase and target nodes, plus their base scores."""
    _check_width(model, fullcasebase.width)
    X = fullcasebase.characterizations
    E = edge_embedding(model, X)
    W = pairwise_exceptionality(E, E, model.alpha)
    A_cb = casebase_adjacency(W, fullcasebase.labels, t)
    return A_cb, base_score(model, X)


def build_newcase_edges(model: DeepArguingModel, fullcasebase: FullCasebase, X_new) -> tuple[Tensor, Tensor]:
    """Irrelevance attacks from each new case onto every node, and new-case base scores."""
    X_new = ad.constant(X_new)
    if X_new.ndim != 2:
        raise DimensionError(f"new cases must be a 2-D batch, got shape {X_new.shape}")
    _check_width(model, X_new.shape[1])
    A_N = irrelevance(model, X_new, fullcasebase.characterizations)
    b_new = base_score(model, X_new)
    return A_N, b_new


def mine_qbaf(model: DeepArguingModel, fullcasebase: FullCasebase, X_new, t: float) -> QBAFBatch:
    """Fit step: casebase graph once, then the batch's new-case edges."""
    A_cb, b_cb = build_casebase_graph(model, fullcasebase, t)
    A_N, b_new = build_newcase_edges(model, fullcasebase, X_new)
    return QBAFBatch(A_cb=A_cb, b_cb=b_cb, A_N=A_N, b_new=b_new, target_indices=fullcasebase.target_indices)


def export_qbaf_text(qbaf: QBAFBatch, fullcasebase: FullCasebase, row: int = 0, path: Optional[Path] = None) -> str:
    """
    Plain-text dump of the full graph seen by new case ``row``.

    ``node <index> <label> <base_score> <source_id>`` lines, the new case as
    node ``N``, then ``edge <from> <to> <weight>`` for every non-zero weight.
    """
    labels = fullcasebase.labels
    ids = fullcasebase.node_ids
    A_cb = qbaf.A_cb.data
    lines = [f"node {i} {labels[i]} {float(qbaf.b_cb.data[i])!r} {ids[i]}" for i in range(qbaf.n)]
    lines.append(f"node N - {float(qbaf.b_new.data[row])!r} new:{row}")
    for i in range(qbaf.n):
        for j in range(qbaf.n):
            if A_cb[i, j] != 0.0:
                lines.append(f"edge {i} {j} {float(A_cb[i, j])!r}")
    for j in range(qbaf.n):
        if qbaf.A_N.data[row, j] != 0.0:
            lines.append(f"edge N {j} {float(qbaf.A_N.data[row, j])!r}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
        logger.info(f"QBAF written to {path}")
    return text
