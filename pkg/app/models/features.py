import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix

from app.core.errors import EmptyData, InvalidParams

from .cohort import Network


class FeatureKind(str, enum.Enum):
    EIGENVALUES = "eigenvalues"
    LEADING_EIGENVECTOR = "leading_eigenvector"
    RQA = "rqa"

    @classmethod
    def parse(cls, value: str) -> "FeatureKind":
        return FEATURE_ALIASES.get(value, None) or cls(value)


FEATURE_ALIASES = {
    "eigval": FeatureKind.EIGENVALUES,
    "eigvec": FeatureKind.LEADING_EIGENVECTOR,
}


@dataclass(frozen=True)
class FeatureTable:
    X: np.ndarray  # (n_samples, d)
    y: np.ndarray  # (n_samples,), values in {0, 1}
    provenance: FeatureKind
    subject_ids: Tuple[str, ...] = field(default_factory=tuple)
    network: Optional[Network] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=int)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyData("feature table has no rows")
        if y.shape != (X.shape[0],):
            raise InvalidParams(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise InvalidParams("feature table holds non-finite values")
        if not np.isin(y, (0, 1)).all():
            raise InvalidParams("labels must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, index: Sequence[int]) -> "FeatureTable":
        index = np.asarray(index, dtype=int)
        ids = tuple(self.subject_ids[i] for i in index) if self.subject_ids else ()
        return FeatureTable(self.X[index], self.y[index], self.provenance, ids, self.network)


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    def label_pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        """(y_true, y_pred) arrays that reproduce these counts."""
        y_true = np.repeat([1, 0, 1, 0], [self.tp, self.fp, self.fn, self.tn])
        y_pred = np.repeat([1, 1, 0, 0], [self.tp, self.fp, self.fn, self.tn])
        return y_true, y_pred

    @classmethod
    def from_predictions(cls, y_true: np.ndarray, y_pred: np.ndarray) -> "Confusion":
        (tn, fp), (fn, tp) = confusion_matrix(
            np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int), labels=[0, 1]
        )
        return cls(tp=int(tp), fp=int(fp), fn=int(fn), tn=int(tn))
