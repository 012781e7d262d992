import enum
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np


class Network(str, enum.Enum):
    DEFAULT_MODE = "default_mode"
    FRONTOPARIETAL = "frontoparietal"
    CINGULO_OPERCULAR = "cingulo_opercular"
    SENSORIMOTOR = "sensorimotor"
    OCCIPITAL = "occipital"
    CEREBELLUM = "cerebellum"

    @property
    def roi_count(self) -> int:
        return ROI_COUNTS[self]

    @classmethod
    def for_roi_count(cls, n: int) -> "Network":
        for network, count in ROI_COUNTS.items():
            if count == n:
                return network
        raise ValueError(f"no network has {n} ROIs")


ROI_COUNTS: Dict[Network, int] = {
    Network.DEFAULT_MODE: 34,
    Network.FRONTOPARIETAL: 21,
    Network.CINGULO_OPERCULAR: 32,
    Network.SENSORIMOTOR: 33,
    Network.OCCIPITAL: 22,
    Network.CEREBELLUM: 18,
}

ALL_NETWORKS: Tuple[Network, ...] = tuple(Network)


class Label(enum.IntEnum):
    CLASS0 = 0  # HC
    CLASS1 = 1  # MCI


@dataclass(frozen=True)
class RoiTimeSeries:
    roi_id: int
    roi_label: str
    values: np.ndarray
    network: Optional[Network] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class VoxelBlock:
    """Voxel time series of one ROI, stored as an (X, Y, Z, N) array."""

    series: np.ndarray
    region_id: str
    network: Optional[Network] = None
    roi_id: int = 0

    def __post_init__(self):
        series = np.asarray(self.series, dtype=float)
        if series.ndim != 4 or min(series.shape[:3]) < 1:
            raise ValueError(f"voxel block must be (X, Y, Z, N), got shape {series.shape}")
        object.__setattr__(self, "series", series)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.series.shape[:3])

    @property
    def n_timepoints(self) -> int:
        return self.series.shape[3]


@dataclass(frozen=True)
class Subject:
    subject_id: str
    label: Label
    networks: Mapping[Network, Sequence[RoiTimeSeries]]

    def rois(self, network: Network) -> Sequence[RoiTimeSeries]:
        return self.networks[network]

    def series_matrix(self, network: Network) -> np.ndarray:
        """N x n matrix whose columns are the ROI series of one network."""
        return np.column_stack([roi.values for roi in self.networks[network]])

    def roi_labels(self, network: Network) -> List[str]:
        return [roi.roi_label for roi in self.networks[network]]


@dataclass(frozen=True)
class CohortDataset:
    subjects: Tuple[Subject, ...]
    n_timepoints: int
    networks: Tuple[Network, ...] = ALL_NETWORKS
    metadata: Dict[str, Any] = field(default_factory=dict)

    def label_counts(self) -> Dict[Label, int]:
        counts = {label: 0 for label in Label}
        for subject in self.subjects:
            counts[subject.label] += 1
        return counts

    def labels(self) -> np.ndarray:
        return np.array([int(s.label) for s in self.subjects], dtype=int)

    def restrict(self, networks: Sequence[Network]) -> "CohortDataset":
        keep = tuple(n for n in self.networks if n in set(networks))
        subjects = tuple(
            Subject(s.subject_id, s.label, {n: s.networks[n] for n in keep})
            for s in self.subjects
        )
        return CohortDataset(subjects, self.n_timepoints, keep, dict(self.metadata))

    def select(self, subject_ids: Sequence[str]) -> "CohortDataset":
        wanted = set(subject_ids)
        subjects = tuple(s for s in self.subjects if s.subject_id in wanted)
        missing = wanted - {s.subject_id for s in subjects}
        if missing:
            raise KeyError(f"unknown subject(s): {', '.join(sorted(missing))}")
        return CohortDataset(subjects, self.n_timepoints, self.networks, dict(self.metadata))
