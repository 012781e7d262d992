from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .cohort import Label, Network


@dataclass(frozen=True)
class BrainGraph:
    adjacency: np.ndarray  # (n, n) symmetric, zero diagonal
    roi_labels: Tuple[str, ...]
    network: Optional[Network] = None
    stabilized_rois: Tuple[int, ...] = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class EigenFeatures:
    eigenvalues: np.ndarray  # descending
    leading_vector: np.ndarray  # unit norm, largest-magnitude entry positive


@dataclass(frozen=True)
class RoiRanking:
    """Degree vector of one subject's graph and the ROI order it induces."""

    degrees: np.ndarray
    order: np.ndarray  # ROI indices, highest degree first
    roi_labels: Tuple[str, ...] = field(default_factory=tuple)
    subject_id: Optional[str] = None

    def top(self, k: int) -> np.ndarray:
        return self.order[:k]


@dataclass(frozen=True)
class FrequencyEntry:
    label: Label
    roi_id: int
    roi_label: str
    count: int
    class_size: int

    @property
    def fraction(self) -> float:
        return self.count / self.class_size if self.class_size else 0.0

    @property
    def fraction_text(self) -> str:
        return f"{self.count:02d}/{self.class_size}"


@dataclass(frozen=True)
class DegreeRanking:
    degrees: Dict[str, np.ndarray]
    frequency: List[FrequencyEntry]
    k: int

    def for_label(self, label: Label) -> List[FrequencyEntry]:
        return [entry for entry in self.frequency if entry.label == label]

    def fraction_of(self, label: Label, roi_id: int) -> float:
        for entry in self.for_label(label):
            if entry.roi_id == roi_id:
                return entry.fraction
        return 0.0
