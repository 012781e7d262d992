from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from app.core.errors import InvalidParams, InvalidRate


@dataclass(frozen=True)
class RehoMap:
    w_values: np.ndarray  # (X, Y, Z); 0 where undefined
    defined: np.ndarray  # (X, Y, Z) bool
    region_id: str

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.w_values.shape)

    def defined_values(self) -> np.ndarray:
        return self.w_values[self.defined]


@dataclass(frozen=True)
class EmbeddingParams:
    m: int
    tau: int
    n_samples: int

    def __post_init__(self):
        if self.m < 1 or self.tau < 1:
            raise InvalidParams(f"need m >= 1 and tau >= 1, got m={self.m}, tau={self.tau}")
        if (self.m - 1) * self.tau >= self.n_samples - 1:
            raise InvalidParams(
                "(m - 1) * tau leaves fewer than 2 states",
                m=self.m,
                tau=self.tau,
                n_samples=self.n_samples,
            )

    @property
    def k(self) -> int:
        return self.n_samples - (self.m - 1) * self.tau


@dataclass(frozen=True)
class StateMatrix:
    rows: np.ndarray  # (K, M)
    tau: int = 1
    source_roi: Optional[str] = None

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def m(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class CaoCurve:
    e: np.ndarray  # E(d), d = 1..d_max
    e_star: np.ndarray  # E*(d), d = 1..d_max
    e1: np.ndarray  # d = 1..d_max-1
    e2: np.ndarray
    chosen_m: int
    saturation_found: bool
    tau: int
    excluded: Tuple[int, ...] = field(default_factory=tuple)  # per d

    @property
    def d_max(self) -> int:
        return len(self.e)


@dataclass(frozen=True)
class RecurrenceMatrix:
    values: np.ndarray  # (K, K)
    metric: str = "euclidean"

    @property
    def k(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FixedThreshold:
    epsilon: float


@dataclass(frozen=True)
class TargetRate:
    rate: float

    def __post_init__(self):
        if not 0.0 < self.rate < 1.0:
            raise InvalidRate(f"target recurrence rate must lie in (0, 1), got {self.rate}")


ThresholdRule = Union[FixedThreshold, TargetRate]


@dataclass(frozen=True)
class BinaryRecurrence:
    bits: np.ndarray  # (K, K) bool
    threshold_rule: ThresholdRule
    epsilon: float

    @property
    def k(self) -> int:
        return self.bits.shape[0]


@dataclass(frozen=True)
class RqaFeatures:
    rr: float
    det: float
    l_mean: float
    l_max: int
    lam: float
    tt: float
    entr: float
    v_max: int = 0
    no_recurrences: bool = False

    FIELDS = ("rr", "det", "l_mean", "l_max", "lam", "tt", "entr")

    def as_vector(self) -> np.ndarray:
        return np.array([float(getattr(self, name)) for name in self.FIELDS])
