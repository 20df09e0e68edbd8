"""
Data models for distillation datasets.

Containers for aligned base features, teacher embeddings, task labels and
index splits.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import DataFormatError, ShapeError
from .numkit import Matrix, as_matrix

LABEL_KINDS = ("classification", "regression")


@dataclass
class Labels:
    """Task labels: dense class ids in [0, C) or real regression targets."""

    kind: str
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in LABEL_KINDS:
            raise DataFormatError(f"Unknown label kind: {self.kind}")
        values = np.asarray(self.values)
        if values.ndim != 1:
            raise ShapeError(f"Labels must be 1-D, got shape {values.shape}")
        if self.kind == "classification":
            if values.size and (
                np.any(values < 0) or np.any(values != np.round(values))
            ):
                raise DataFormatError("Class ids must be non-negative integers")
            self.values = values.astype(np.int64)
        else:
            if not np.all(np.isfinite(values)):
                raise DataFormatError("Regression targets must be finite")
            self.values = values.astype(np.float64)

    @property
    def n_classes(self) -> int:
        if self.kind != "classification" or not self.values.size:
            return 0
        return int(self.values.max()) + 1

    @property
    def is_binary(self) -> bool:
        return self.kind == "classification" and self.n_classes == 2

    def subset(self, indices: np.ndarray) -> "Labels":
        return Labels(self.kind, self.values[indices])


@dataclass
class EmbeddingDataset:
    """Base features aligned with K teacher embedding matrices.

    Row i of every matrix (and of the labels) describes the same input.
    """

    base_features: Matrix
    teacher_views: List[Tuple[str, Matrix]]
    labels: Optional[Labels] = None

    def __post_init__(self) -> None:
        self.base_features = as_matrix(self.base_features)
        n = self.base_features.shape[0]
        names = [name for name, _ in self.teacher_views]
        if len(set(names)) != len(names):
            raise DataFormatError(f"Teacher names must be unique: {names}")
        views = []
        for name, view in self.teacher_views:
            view = as_matrix(view)
            if view.shape[0] != n:
                raise ShapeError(
                    f"Teacher {name} has {view.shape[0]} rows, base features have {n}"
                )
            views.append((name, view))
        self.teacher_views = views
        if self.labels is not None:
            if self.labels.values.shape[0] != n:
                raise ShapeError(
                    f"{self.labels.values.shape[0]} labels for {n} samples"
                )
            if self.labels.kind == "classification":
                present = np.unique(self.labels.values)
                if present.size != self.labels.n_classes:
                    raise DataFormatError(
                        f"Class ids are not dense in [0, {self.labels.n_classes})"
                    )

    @property
    def n(self) -> int:
        return int(self.base_features.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.base_features.shape[1])

    @property
    def teacher_names(self) -> List[str]:
        return [name for name, _ in self.teacher_views]

    @property
    def teacher_dims(self) -> List[int]:
        return [int(view.shape[1]) for _, view in self.teacher_views]

    def teachers(self) -> List[Matrix]:
        return [view for _, view in self.teacher_views]

    def select_teachers(self, names: List[str]) -> "EmbeddingDataset":
        """Dataset restricted to the named teachers, in the given order."""
        lookup = dict(self.teacher_views)
        missing = [name for name in names if name not in lookup]
        if missing:
            raise DataFormatError(f"Unknown teachers: {missing}")
        return EmbeddingDataset(
            self.base_features, [(name, lookup[name]) for name in names], self.labels
        )


@dataclass
class SplitSpec:
    """Disjoint train/val/test index lists covering [0, n)."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    ratios: Tuple[float, ...] = field(default=(0.7, 0.1, 0.2))

    @property
    def n(self) -> int:
        return int(self.train.size + self.val.size + self.test.size)

    def format_sizes(self) -> str:
        return f"train={self.train.size} val={self.val.size} test={self.test.size}"
