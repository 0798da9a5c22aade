"""Casebase selection, the constrained loss and the end-to-end training loop."""

import json
import logging
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, computed_field
from sklearn.cluster import KMeans
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score, pairwise_distances_argmin, precision_recall_fscore_support

from deep_arguing import autodiff as ad
from deep_arguing.autodiff import OptimizerState, Tensor
from deep_arguing.config import TrainConfig
from deep_arguing.data import DatasetSplits
from deep_arguing.errors import ConfigurationError, DimensionError, NonFiniteError, ParameterError, TrainingError
from deep_arguing.heads import BaselineClassifier, DeepArguingModel, exceptionality
from deep_arguing.qbaf import Case, FullCasebase, QBAFBatch, mine_qbaf
from deep_arguing.semantics import StrengthTrace, final_strengths, predict

logger = logging.getLogger(__name__)

KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6
EVAL_CHUNK = 1024


class LossBreakdown(BaseModel):
    """Scalar values of each loss term (unweighted) and the weighted total."""

    total: float
    task: float
    delta: float
    dag: float
    sparsity_cb: float
    sparsity_new: float


class EvaluationMetrics(BaseModel):
    """Classification metrics; per-class lists are indexed by class."""

    macro_f1: float
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    confusion: list[list[int]]
    n: int


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    train_macro_f1: float
    val_macro_f1: float
    loss_terms: LossBreakdown


class TrainReport(BaseModel):
    """One record per epoch plus optional final test metrics."""

    epochs: list[EpochRecord] = []
    test: Optional[EvaluationMetrics] = None

    def to_jsonl(self) -> str:
        lines = [json.dumps({"record": "epoch", **rec.model_dump()}) for rec in self.epochs]
        if self.test is not None:
            lines.append(json.dumps({"record": "test", **self.test.model_dump()}))
        return "\n".join(lines) + "\n"

    def write_jsonl(self, path: Path | str) -> None:
        Path(path).write_text(self.to_jsonl())
        logger.info(f"Train report written to {path}")

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainReport":
        report = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            kind = record.pop("record")
            if kind == "epoch":
                report.epochs.append(EpochRecord.model_validate(record))
            elif kind == "test":
                report.test = EvaluationMetrics.model_validate(record)
            else:
                raise ValueError(f"unknown report record {kind!r}")
        return report


class LossTerms:
    """Loss tensors from one forward pass, combined with the configured coefficients."""

    def __init__(self, task: Tensor, delta: Tensor, dag: Tensor, sparsity_cb: Tensor, sparsity_new: Tensor, config: TrainConfig):
        self.task = task
        self.delta = delta
        self.dag = dag
        self.sparsity_cb = sparsity_cb
        self.sparsity_new = sparsity_new
        self.config = config

    @property
    def total(self) -> Tensor:
        c = self.config
        weighted = [
            self.task,
            ad.scale(self.delta, c.lambda_delta),
            ad.scale(self.dag, c.lambda_dag),
            ad.scale(self.sparsity_cb, c.lambda_sp),
            ad.scale(self.sparsity_new, c.lambda_sp_prime),
        ]
        total = weighted[0]
        for term in weighted[1:]:
            total = ad.add(total, term)
        return total

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(
            total=self.total.item(),
            task=self.task.item(),
            delta=self.delta.item(),
            dag=self.dag.item(),
            sparsity_cb=self.sparsity_cb.item(),
            sparsity_new=self.sparsity_new.item(),
        )


# =============================================================================
# Casebase selection
# =============================================================================

def _class_counts(data: Sequence[Case], n_classes: int) -> np.ndarray:
    labels = np.asarray([c.y for c in data], dtype=np.int64)
    if labels.size and labels.max() >= n_classes:
        raise ConfigurationError(f"label {labels.max()} outside {n_classes} classes")
    return np.bincount(labels, minlength=n_classes)


def kmeans_casebase(train_data: Sequence[Case], k: int, seed: int = 0, n_classes: Optional[int] = None) -> list[Case]:
    """
    Per class, the data points nearest the k-means++ / Lloyd cluster centres.

    Two centres sharing a nearest point yield it once, so a class can
    contribute fewer than ``k`` cases.
    """
    if k < 1:
        raise ParameterError(f"clusters per class must be >= 1, got {k}")
    if not train_data:
        raise ConfigurationError("cannot select a casebase from no data")
    n_classes = n_classes if n_classes is not None else max(c.y for c in train_data) + 1
    counts = _class_counts(train_data, n_classes)
    empty = [c for c in range(n_classes) if counts[c] == 0]
    if empty:
        raise ConfigurationError(f"classes without training samples: {empty}")

    casebase: list[Case] = []
    for c in range(n_classes):
        members = [case for case in train_data if case.y == c]
        X = np.asarray([case.x for case in members], dtype=np.float64)
        n_clusters = min(k, len(np.unique(X, axis=0)))
        kmeans = KMeans(
            n_clusters=n_clusters,
            init="k-means++",
            n_init=1,
            max_iter=KMEANS_MAX_ITER,
            tol=KMEANS_TOL,
            random_state=seed,
        ).fit(X)
        nearest = pairwise_distances_argmin(kmeans.cluster_centers_, X)
        chosen = list(dict.fromkeys(int(i) for i in nearest))
        casebase.extend(members[i] for i in chosen)
        logger.info(f"Class {c}: {len(chosen)} representatives from {len(members)} samples")
    return casebase


def class_weights(train_data: Sequence[Case], n_classes: int) -> np.ndarray:
    """w_c = sqrt(|D| / (C * n_c))."""
    counts = _class_counts(train_data, n_classes)
    if np.any(counts == 0):
        raise ConfigurationError(f"classes without training samples: {np.nonzero(counts == 0)[0].tolist()}")
    return np.sqrt(len(train_data) / (n_classes * counts))


# =============================================================================
# Loss terms
# =============================================================================

def _mean_square(x: Tensor) -> Tensor:
    return ad.reduce_mean(ad.hadamard(x, x))


def loss_delta(model: DeepArguingModel, X_cb, X_delta) -> Tensor:
    """Casebase cases should be fully more exceptional than targets, never the reverse."""
    outgoing = exceptionality(model, X_cb, X_delta)
    incoming = exceptionality(model, X_delta, X_cb)
    return ad.add(_mean_square(ad.sub(outgoing, 1.0)), _mean_square(incoming))


def loss_dag(A_cb: Tensor) -> Tensor:
    """tr(e^(A o A)) - n; zero exactly when A is acyclic."""
    if A_cb.ndim != 2 or A_cb.shape[0] != A_cb.shape[1]:
        raise DimensionError(f"acyclicity loss needs a square matrix, got {A_cb.shape}")
    return ad.sub(ad.trace_expm(ad.hadamard(A_cb, A_cb)), float(A_cb.shape[0]))


def loss_sparsity(A: Tensor, n: int) -> Tensor:
    """L1 norm scaled by the casebase size ``n``."""
    if n < 1:
        raise ParameterError(f"sparsity divisor must be >= 1, got {n}")
    return ad.scale(ad.reduce_sum(ad.absolute(A)), 1.0 / n)


def compute_loss_terms(
    logits: Tensor,
    labels: Sequence[int],
    weights: Sequence[float],
    model: DeepArguingModel,
    qbaf: QBAFBatch,
    fullcasebase: FullCasebase,
    config: TrainConfig,
) -> LossTerms:
    return LossTerms(
        task=ad.softmax_cross_entropy(logits, labels, weights),
        delta=loss_delta(model, fullcasebase.case_characterizations, fullcasebase.target_characterizations),
        dag=loss_dag(qbaf.A_cb),
        sparsity_cb=loss_sparsity(qbaf.A_cb, qbaf.n),
        sparsity_new=loss_sparsity(qbaf.A_N, qbaf.n),
        config=config,
    )


def total_loss(
    logits: Tensor,
    labels: Sequence[int],
    weights: Sequence[float],
    model: DeepArguingModel,
    qbaf: QBAFBatch,
    fullcasebase: FullCasebase,
    config: TrainConfig,
) -> Tensor:
    """L_task + l_delta L_delta + l_dag L_dag(A_cb) + l_sp L_sp(A_cb) + l_sp' L_sp(A_N)."""
    return compute_loss_terms(logits, labels, weights, model, qbaf, fullcasebase, config).total


# =============================================================================
# Inference and evaluation
# =============================================================================

def infer(
    model: DeepArguingModel,
    fullcasebase: FullCasebase,
    X,
    config: TrainConfig,
) -> tuple[QBAFBatch, StrengthTrace, np.ndarray, Tensor]:
    """Mine the graph for a batch, run the semantics and read off the prediction."""
    qbaf = mine_qbaf(model, fullcasebase, X, config.lse_temperature)
    trace = final_strengths(qbaf, config.iterations, config.semantics_mode)
    labels, logits = predict(trace, qbaf.target_indices)
    return qbaf, trace, labels, logits


def predict_matrix(model: DeepArguingModel, fullcasebase: FullCasebase, X: np.ndarray, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Predicted class indices and target strengths for every row of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    labels, strengths = [], []
    for start in range(0, len(X), EVAL_CHUNK):
        _, _, chunk_labels, logits = infer(model, fullcasebase, X[start:start + EVAL_CHUNK], config)
        labels.append(chunk_labels)
        strengths.append(logits.numpy())
    if not labels:
        return np.zeros(0, dtype=np.int64), np.zeros((0, fullcasebase.n_classes))
    return np.concatenate(labels), np.vstack(strengths)


def classification_metrics(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> EvaluationMetrics:
    """Macro-F1 and friends; a class never predicted scores F1 = 0."""
    classes = list(range(n_classes))
    precision, recall, f1, _ = precision_recall_fscore_support(y_true, y_pred, labels=classes, zero_division=0)
    return EvaluationMetrics(
        macro_f1=float(f1_score(y_true, y_pred, labels=classes, average="macro", zero_division=0)),
        accuracy=float(accuracy_score(y_true, y_pred)),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        confusion=confusion_matrix(y_true, y_pred, labels=classes).tolist(),
        n=len(y_true),
    )


def evaluate(model: DeepArguingModel, fullcasebase: FullCasebase, data: Sequence[Case], config: TrainConfig) -> EvaluationMetrics:
    """Batched prediction over ``data`` scored against its labels."""
    if not data:
        raise ConfigurationError("cannot evaluate on an empty split")
    X = np.asarray([c.x for c in data], dtype=np.float64)
    y = np.asarray([c.y for c in data], dtype=np.int64)
    predicted, _ = predict_matrix(model, fullcasebase, X, config)
    return classification_metrics(y, predicted, fullcasebase.n_classes)


# =============================================================================
# Training loop
# =============================================================================

def _stack(data: Sequence[Case]) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray([c.x for c in data], dtype=np.float64), np.asarray([c.y for c in data], dtype=np.int64)


def _weighted_mean(values: list[LossBreakdown], sizes: list[int]) -> LossBreakdown:
    share = np.asarray(sizes, dtype=np.float64) / np.sum(sizes)
    fields = LossBreakdown.model_fields
    return LossBreakdown(**{f: float(np.dot(share, [getattr(v, f) for v in values])) for f in fields})


def train(
    config: TrainConfig,
    train_data: Sequence[Case],
    val_data: Sequence[Case],
    n_classes: Optional[int] = None,
    test_data: Optional[Sequence[Case]] = None,
) -> tuple[DeepArguingModel, FullCasebase, TrainReport]:
    """
    Gradient-descent training with a fit step per mini-batch.

    The casebase is clustered once up front and frozen. The model after the
    last epoch is returned; the validation split is only monitored.
    """
    if not train_data or not val_data:
        raise ConfigurationError("training and validation splits must be non-empty")
    n_classes = n_classes if n_classes is not None else max(c.y for c in list(train_data) + list(val_data)) + 1

    casebase = kmeans_casebase(train_data, config.clusters_per_class, config.seed, n_classes)
    fullcasebase = FullCasebase.from_cases(casebase, n_classes)
    model = DeepArguingModel.create(
        input_width=fullcasebase.width,
        extractor_widths=config.extractor_widths,
        head_hidden_widths=config.head_hidden_widths,
        embedding_dim=config.embedding_dim,
        alpha=config.alpha,
        seed=config.seed,
    )
    params = model.parameters()
    state = OptimizerState(
        params,
        lr=config.lr,
        weight_decay=config.weight_decay,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.eps,
    )
    weights = class_weights(train_data, n_classes) if config.reweight_classes else np.ones(n_classes)
    X_train, y_train = _stack(train_data)
    X_val, y_val = _stack(val_data)
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    logger.info(
        f"Training on {len(train_data)} cases, casebase {len(casebase)} + {n_classes} targets, "
        f"{config.epochs} epochs of batch {config.batch_size}"
    )

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(X_train))
        batch_losses: list[LossBreakdown] = []
        batch_sizes: list[int] = []
        for batch_number, start in enumerate(range(0, len(order), config.batch_size), start=1):
            idx = order[start:start + config.batch_size]
            ad.zero_grads(params)
            try:
                qbaf, _, _, logits = infer(model, fullcasebase, X_train[idx], config)
                terms = compute_loss_terms(logits, y_train[idx], weights, model, qbaf, fullcasebase, config)
                ad.backward(terms.total)
                ad.clip_global_norm(params, config.grad_max_norm)
                ad.adamw_step(state, params)
            except NonFiniteError as e:
                logger.error(f"Non-finite value at epoch {epoch} batch {batch_number}: {e}")
                raise TrainingError(
                    f"non-finite value at epoch {epoch}, batch {batch_number}: {e}; "
                    f"last recorded losses: {batch_losses[-1].model_dump() if batch_losses else 'none'}"
                ) from e
            batch_losses.append(terms.breakdown())
            batch_sizes.append(len(idx))

        epoch_terms = _weighted_mean(batch_losses, batch_sizes)
        try:
            val_qbaf, _, _, val_logits = infer(model, fullcasebase, X_val, config)
            val_terms = compute_loss_terms(val_logits, y_val, weights, model, val_qbaf, fullcasebase, config)
            train_metrics = evaluate(model, fullcasebase, train_data, config)
            val_metrics = evaluate(model, fullcasebase, val_data, config)
        except NonFiniteError as e:
            logger.error(f"Non-finite value while evaluating epoch {epoch}: {e}")
            raise TrainingError(
                f"non-finite value while evaluating epoch {epoch}: {e}; "
                f"epoch training losses: {epoch_terms.model_dump()}"
            ) from e
        record = EpochRecord(
            epoch=epoch,
            train_loss=epoch_terms.total,
            val_loss=val_terms.total.item(),
            train_macro_f1=train_metrics.macro_f1,
            val_macro_f1=val_metrics.macro_f1,
            loss_terms=epoch_terms,
        )
        report.epochs.append(record)
        logger.info(
            f"Epoch {epoch}/{config.epochs}: train_loss={record.train_loss:.4f} val_loss={record.val_loss:.4f} "
            f"train_f1={record.train_macro_f1:.4f} val_f1={record.val_macro_f1:.4f}"
        )

    if test_data:
        report.test = evaluate(model, fullcasebase, test_data, config)
        logger.info(f"Test macro-F1 {report.test.macro_f1:.4f}, accuracy {report.test.accuracy:.4f}")
    return model, fullcasebase, report


# =============================================================================
# DNN baseline
# =============================================================================

def _task_only(value: float) -> LossBreakdown:
    return LossBreakdown(total=value, task=value, delta=0.0, dag=0.0, sparsity_cb=0.0, sparsity_new=0.0)


def evaluate_baseline(model: BaselineClassifier, data: Sequence[Case]) -> EvaluationMetrics:
    """Arg-max of the baseline logits scored against the labels of ``data``."""
    if not data:
        raise ConfigurationError("cannot evaluate on an empty split")
    X, y = _stack(data)
    predicted = [np.argmax(model(X[start:start + EVAL_CHUNK]).numpy(), axis=1) for start in range(0, len(X), EVAL_CHUNK)]
    return classification_metrics(y, np.concatenate(predicted), model.n_classes)


def train_dnn_baseline(
    config: TrainConfig,
    train_data: Sequence[Case],
    val_data: Sequence[Case],
    n_classes: Optional[int] = None,
    test_data: Optional[Sequence[Case]] = None,
) -> tuple[BaselineClassifier, TrainReport]:
    """
    The extractor with a linear classification layer, trained on the task loss alone.

    Optimiser, clipping, class reweighting, batching and shuffling follow ``train``;
    the argumentation settings of ``config`` are ignored.
    """
    if not train_data or not val_data:
        raise ConfigurationError("training and validation splits must be non-empty")
    n_classes = n_classes if n_classes is not None else max(c.y for c in list(train_data) + list(val_data)) + 1
    _class_counts(train_data, n_classes)

    X_train, y_train = _stack(train_data)
    X_val, y_val = _stack(val_data)
    model = BaselineClassifier.create(X_train.shape[1], config.extractor_widths, n_classes, seed=config.seed)
    params = model.parameters()
    state = OptimizerState(
        params,
        lr=config.lr,
        weight_decay=config.weight_decay,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.eps,
    )
    weights = class_weights(train_data, n_classes) if config.reweight_classes else np.ones(n_classes)
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    logger.info(f"Training baseline on {len(train_data)} cases, {config.epochs} epochs of batch {config.batch_size}")

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(X_train))
        batch_losses: list[LossBreakdown] = []
        batch_sizes: list[int] = []
        for batch_number, start in enumerate(range(0, len(order), config.batch_size), start=1):
            idx = order[start:start + config.batch_size]
            ad.zero_grads(params)
            try:
                loss = ad.softmax_cross_entropy(model(X_train[idx]), y_train[idx], weights)
                ad.backward(loss)
                ad.clip_global_norm(params, config.grad_max_norm)
                ad.adamw_step(state, params)
            except NonFiniteError as e:
                logger.error(f"Non-finite value at epoch {epoch} batch {batch_number}: {e}")
                raise TrainingError(f"non-finite value at epoch {epoch}, batch {batch_number}: {e}") from e
            batch_losses.append(_task_only(loss.item()))
            batch_sizes.append(len(idx))

        epoch_terms = _weighted_mean(batch_losses, batch_sizes)
        try:
            val_loss = ad.softmax_cross_entropy(model(X_val), y_val, weights).item()
            train_metrics = evaluate_baseline(model, train_data)
            val_metrics = evaluate_baseline(model, val_data)
        except NonFiniteError as e:
            logger.error(f"Non-finite value while evaluating epoch {epoch}: {e}")
            raise TrainingError(f"non-finite value while evaluating epoch {epoch}: {e}") from e
        record = EpochRecord(
            epoch=epoch,
            train_loss=epoch_terms.total,
            val_loss=val_loss,
            train_macro_f1=train_metrics.macro_f1,
            val_macro_f1=val_metrics.macro_f1,
            loss_terms=epoch_terms,
        )
        report.epochs.append(record)
        logger.info(
            f"Baseline epoch {epoch}/{config.epochs}: train_loss={record.train_loss:.4f} "
            f"val_loss={record.val_loss:.4f} val_f1={record.val_macro_f1:.4f}"
        )

    if test_data:
        report.test = evaluate_baseline(model, test_data)
        logger.info(f"Baseline test macro-F1 {report.test.macro_f1:.4f}, accuracy {report.test.accuracy:.4f}")
    return model, report


# =============================================================================
# Repeated runs
# =============================================================================

def _spread(values: list[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


class SeedSummary(BaseModel):
    """Test metrics of independently seeded runs; spreads are sample standard deviations."""

    model: str
    seeds: list[int]
    macro_f1: list[float]
    accuracy: list[float]

    @computed_field
    @property
    def macro_f1_mean(self) -> float:
        return float(np.mean(self.macro_f1))

    @computed_field
    @property
    def macro_f1_std(self) -> float:
        return _spread(self.macro_f1)

    @computed_field
    @property
    def accuracy_mean(self) -> float:
        return float(np.mean(self.accuracy))

    @computed_field
    @property
    def accuracy_std(self) -> float:
        return _spread(self.accuracy)


def multi_seed_summary(
    config: TrainConfig,
    seeds: Sequence[int],
    load_splits: Callable[[int], DatasetSplits],
    baseline: bool = False,
) -> SeedSummary:
    """
    Re-split, retrain and test once per seed.

    ``load_splits(seed)`` must return splits with a non-empty test set.
    """
    if not seeds:
        raise ParameterError("at least one seed is required")
    name = "dnn_baseline" if baseline else "deep_arguing"
    macro_f1, accuracy = [], []
    for seed in seeds:
        run_config = config.model_copy(update={"seed": int(seed)})
        splits = load_splits(int(seed))
        if not splits.test:
            raise ConfigurationError("repeated runs need a test split")
        if baseline:
            _, report = train_dnn_baseline(run_config, splits.train, splits.val, splits.n_classes, splits.test)
        else:
            _, _, report = train(run_config, splits.train, splits.val, splits.n_classes, splits.test)
        macro_f1.append(report.test.macro_f1)
        accuracy.append(report.test.accuracy)
        logger.info(f"Seed {seed}: {name} test macro-F1 {report.test.macro_f1:.4f}")

    summary = SeedSummary(model=name, seeds=[int(s) for s in seeds], macro_f1=macro_f1, accuracy=accuracy)
    logger.info(
        f"{name} over {len(seeds)} seeds: macro-F1 {summary.macro_f1_mean:.4f} +/- {summary.macro_f1_std:.4f}"
    )
    return summary
