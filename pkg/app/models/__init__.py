from .cohort import (
    ALL_NETWORKS,
    ROI_COUNTS,
    CohortDataset,
    Label,
    Network,
    RoiTimeSeries,
    Subject,
    VoxelBlock,
)
from .dynamics import (
    BinaryRecurrence,
    CaoCurve,
    EmbeddingParams,
    FixedThreshold,
    RecurrenceMatrix,
    RehoMap,
    RqaFeatures,
    StateMatrix,
    TargetRate,
    ThresholdRule,
)
from .features import Confusion, FeatureKind, FeatureTable
from .graph import BrainGraph, DegreeRanking, EigenFeatures, FrequencyEntry, RoiRanking

__all__ = [
    "ALL_NETWORKS",
    "ROI_COUNTS",
    "BinaryRecurrence",
    "BrainGraph",
    "CaoCurve",
    "CohortDataset",
    "Confusion",
    "DegreeRanking",
    "EigenFeatures",
    "EmbeddingParams",
    "FeatureKind",
    "FeatureTable",
    "FixedThreshold",
    "FrequencyEntry",
    "Label",
    "Network",
    "RecurrenceMatrix",
    "RehoMap",
    "RoiRanking",
    "RoiTimeSeries",
    "RqaFeatures",
    "StateMatrix",
    "Subject",
    "TargetRate",
    "ThresholdRule",
    "VoxelBlock",
]
