"""CSV ingestion, preprocessing and stratified splits."""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator
from sklearn.datasets import make_blobs
from sklearn.model_selection import train_test_split

from deep_arguing.errors import DataError
from deep_arguing.qbaf import Case

logger = logging.getLogger(__name__)


def _line_numbers(index) -> list[int]:
    """Data-frame positions as 1-based file line numbers (header is line 1)."""
    return [int(i) + 2 for i in index]


class DatasetSchema(BaseModel):
    """Which CSV columns are features (and of which kind) and which is the label."""

    label_column: str
    numeric_columns: list[str] = Field(default_factory=list)
    categorical_columns: list[str] = Field(default_factory=list)
    label_vocabulary: Optional[list[str]] = None

    @model_validator(mode="after")
    def _check_columns(self) -> "DatasetSchema":
        features = self.feature_columns
        if not features:
            raise ValueError("schema declares no feature columns")
        if len(set(features)) != len(features):
            raise ValueError("a column is declared more than once")
        if self.label_column in features:
            raise ValueError(f"label column {self.label_column!r} is also a feature")
        if self.label_vocabulary is not None and len(set(self.label_vocabulary)) != len(self.label_vocabulary):
            raise ValueError("label vocabulary has duplicates")
        return self

    @property
    def feature_columns(self) -> list[str]:
        return self.numeric_columns + self.categorical_columns


class SplitConfig(BaseModel):
    """External test file, or a carved-out stratified test fraction."""

    test_path: Optional[Path] = None
    test_fraction: float = Field(0.2, gt=0, lt=1)
    val_fraction: float = Field(0.2, gt=0, lt=1)


def _categorical_values(series: pd.Series) -> pd.Series:
    return series.map(lambda v: v if pd.isna(v) else str(v))


class Preprocessor(BaseModel):
    """Train-fitted z-scoring for numeric columns and one-hot layout for categorical ones."""

    numeric_columns: list[str] = Field(default_factory=list)
    means: list[float] = Field(default_factory=list)
    stds: list[float] = Field(default_factory=list)
    categorical_columns: list[str] = Field(default_factory=list)
    categories: list[list[str]] = Field(default_factory=list)
    fitted: bool = False

    @classmethod
    def fit(cls, frame: pd.DataFrame, schema: DatasetSchema) -> "Preprocessor":
        numeric = frame[schema.numeric_columns].astype(np.float64)
        stds = numeric.std(ddof=0).to_numpy()
        stds = np.where(stds > 0, stds, 1.0)
        categories = [
            sorted(_categorical_values(frame[col]).dropna().unique().tolist())
            for col in schema.categorical_columns
        ]
        return cls(
            numeric_columns=schema.numeric_columns,
            means=numeric.mean().to_numpy().tolist(),
            stds=stds.tolist(),
            categorical_columns=schema.categorical_columns,
            categories=categories,
            fitted=True,
        )

    @property
    def width(self) -> int:
        return len(self.numeric_columns) + sum(len(c) for c in self.categories)

    def transform(self, frame: pd.DataFrame) -> np.ndarray:
        """Raw feature columns to the model's input matrix."""
        if not self.fitted:
            raise DataError("preprocessor has not been fitted")
        if not isinstance(frame, pd.DataFrame):
            values = np.asarray(frame)
            if values.ndim == 2 and values.shape[1] == self.width:
                raise DataError("input already has the preprocessed width; refusing to transform twice")
            raise DataError("preprocessor expects a data frame of raw feature columns")
        missing = [c for c in self.numeric_columns + self.categorical_columns if c not in frame.columns]
        if missing:
            raise DataError(f"missing feature columns: {missing}")

        blocks = []
        if self.numeric_columns:
            numeric = frame[self.numeric_columns].apply(pd.to_numeric, errors="coerce")
            bad = numeric.index[numeric.isna().any(axis=1)]
            if len(bad):
                raise DataError("non-numeric or missing values in numeric columns", rows=_line_numbers(bad))
            blocks.append((numeric.to_numpy(np.float64) - np.asarray(self.means)) / np.asarray(self.stds))
        for col, cats in zip(self.categorical_columns, self.categories):
            # Unseen categories leave their one-hot block all zero.
            codes = pd.Categorical(_categorical_values(frame[col]), categories=cats).codes
            block = np.zeros((len(frame), len(cats)))
            rows = np.nonzero(codes >= 0)[0]
            block[rows, codes[rows]] = 1.0
            blocks.append(block)
        return np.hstack(blocks) if blocks else np.zeros((len(frame), 0))


class DatasetSplits(BaseModel):
    """Preprocessed train/validation/test cases plus the fitted preprocessor."""

    train: list[Case]
    val: list[Case]
    test: list[Case]
    preprocessor: Preprocessor
    label_vocabulary: list[str]

    @property
    def n_classes(self) -> int:
        return len(self.label_vocabulary)


def read_frame(path: Path | str, schema: DatasetSchema, require_label: bool = True) -> pd.DataFrame:
    """Read a headed UTF-8 CSV and check that the schema's columns are present."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    text_columns = {col: str for col in schema.categorical_columns}
    text_columns[schema.label_column] = str
    try:
        frame = pd.read_csv(path, dtype=text_columns, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"could not parse {path}: {e}") from e

    required = schema.feature_columns + ([schema.label_column] if require_label else [])
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    if frame.empty:
        raise DataError(f"{path}: no data rows")
    if schema.numeric_columns:
        numeric = frame[schema.numeric_columns].apply(pd.to_numeric, errors="coerce")
        bad = numeric.index[numeric.isna().any(axis=1)]
        if len(bad):
            raise DataError(f"{path}: non-numeric or missing values in numeric columns", rows=_line_numbers(bad))
        frame[schema.numeric_columns] = numeric
    logger.info(f"Read {len(frame)} rows from {path}")
    return frame


def encode_labels(frame: pd.DataFrame, schema: DatasetSchema, vocabulary: list[str]) -> np.ndarray:
    """Label strings to 0-based class indices in vocabulary order."""
    labels = frame[schema.label_column]
    lookup = {label: i for i, label in enumerate(vocabulary)}
    unknown = labels.index[~labels.isin(list(lookup))]
    if len(unknown):
        raise DataError(f"labels outside the vocabulary {vocabulary}", rows=_line_numbers(unknown))
    return labels.map(lookup).to_numpy(np.int64)


def _to_cases(matrix: np.ndarray, labels: np.ndarray, index: np.ndarray) -> list[Case]:
    return [Case(x=row.tolist(), y=int(y), case_id=int(i)) for row, y, i in zip(matrix, labels, index)]


def _stratified_split(index: np.ndarray, labels: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    try:
        keep, held_out = train_test_split(index, test_size=fraction, stratify=labels, random_state=seed)
    except ValueError as e:
        raise DataError(f"cannot make a stratified split: {e}") from e
    return np.sort(keep), np.sort(held_out)


def load_and_preprocess(
    path: Path | str,
    schema: DatasetSchema,
    split_config: SplitConfig,
    seed: int = 0,
) -> DatasetSplits:
    """
    Read, split and preprocess a dataset.

    Without an external test file 20% is held out for testing first; the rest
    is split 80/20 into train and validation. Both splits are stratified and
    seeded. The preprocessor only ever sees the training rows.
    """
    frame = read_frame(path, schema)
    test_frame = read_frame(split_config.test_path, schema) if split_config.test_path else None

    vocabulary = schema.label_vocabulary
    if vocabulary is None:
        observed = set(frame[schema.label_column].dropna())
        if test_frame is not None:
            observed |= set(test_frame[schema.label_column].dropna())
        vocabulary = sorted(observed)
    labels = encode_labels(frame, schema, vocabulary)

    index = np.arange(len(frame))
    if test_frame is None:
        pool, test_index = _stratified_split(index, labels, split_config.test_fraction, seed)
    else:
        pool, test_index = index, None
    train_index, val_index = _stratified_split(pool, labels[pool], split_config.val_fraction, seed)
    if len(train_index) == 0 or len(val_index) == 0:
        raise DataError("a split is empty; the dataset is too small")

    preprocessor = Preprocessor.fit(frame.iloc[train_index], schema)
    matrix = preprocessor.transform(frame)
    train = _to_cases(matrix[train_index], labels[train_index], train_index)
    val = _to_cases(matrix[val_index], labels[val_index], val_index)
    if test_frame is None:
        test = _to_cases(matrix[test_index], labels[test_index], test_index)
    else:
        test_labels = encode_labels(test_frame, schema, vocabulary)
        test = _to_cases(preprocessor.transform(test_frame), test_labels, np.arange(len(test_frame)))
    if not test:
        raise DataError("test split is empty")

    logger.info(
        f"Splits: train={len(train)} val={len(val)} test={len(test)} "
        f"classes={vocabulary} width={preprocessor.width}"
    )
    return DatasetSplits(train=train, val=val, test=test, preprocessor=preprocessor, label_vocabulary=vocabulary)


def make_blobs_frame(n_samples: int = 400, distance: float = 4.0, sigma: float = 0.5, seed: int = 0) -> pd.DataFrame:
    """Two isotropic 2-D Gaussian blobs ``distance`` apart, labelled ``a`` and ``b``."""
    half = distance / 2.0
    X, y = make_blobs(
        n_samples=n_samples,
        centers=[[-half, 0.0], [half, 0.0]],
        cluster_std=sigma,
        random_state=seed,
    )
    return pd.DataFrame({"x0": X[:, 0], "x1": X[:, 1], "label": np.where(y == 0, "a", "b")})
