from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class ConstantSeries(BaseModel):
    subject_id: str
    network: str
    roi_id: int
    roi_label: str


class ValidationReport(BaseModel):
    n_subjects: int
    timepoints: Dict[str, int]
    label_counts: Dict[str, int]
    constant_series: List[ConstantSeries] = []
    warnings: List[str] = []


class FoldMetrics(BaseModel):
    fold: int
    precision: float
    recall: float
    f1: float
    accuracy: float
    n_test: int


class MetricsReport(BaseModel):
    precision: float
    recall: float
    f1: float
    accuracy: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision_undefined: bool = False
    recall_undefined: bool = False
    folds: List[FoldMetrics] = []
    aggregation: str = "pooled"
    seed: Optional[int] = None
    network: Optional[str] = None
    feature_kind: Optional[str] = None
    n_trees: Optional[int] = None


class FrequencyRow(BaseModel):
    network: str
    label: str
    roi_no: int = Field(description="1-based ROI number within its network")
    roi_label: str
    count: int
    class_size: int
    fraction: float


class RunManifest(BaseModel):
    config_hash: str
    seed: int
    versions: Dict[str, str]
    stages: List[str] = []
    networks: List[str] = []
    feature_kinds: List[str] = []


class RunSummary(BaseModel):
    run_id: str
    config_hash: str
    stages: List[str]


class ErrorResponse(BaseModel):
    error: str
    message: str
    context: Dict[str, Any] = {}
