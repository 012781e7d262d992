"""Reading and writing run directories: manifest, timestamps, stage outputs, reports."""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd
import pendulum

from app.core.errors import IncompleteRun, InvalidParams, IoError
from app.schemas import FrequencyRow, MetricsReport, RunManifest, RunSummary

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
TIMESTAMPS_FILE = "timestamps.json"
METRICS_FILE = "metrics.csv"
METRIC_HEADERS = {"precision": "Precision", "recall": "Recall", "f1": "F1 Score", "accuracy": "Accuracy"}
METRIC_COLUMNS = list(METRIC_HEADERS.values())
TOP_ROI_HEADERS = ("ROI no.", "Dosenbach ROI", "Fraction of subj.")
REPORT_FORMATS = ("table", "csv")

PathLike = Union[str, Path]


def now_iso() -> str:
    return pendulum.now("UTC").to_iso8601_string()


class RunDirectory:
    """One run: `manifest.json`, `timestamps.json` and a subdirectory per stage."""

    def __init__(self, path: PathLike):
        self.path = Path(path)

    @property
    def run_id(self) -> str:
        return self.path.name

    @property
    def manifest_path(self) -> Path:
        return self.path / MANIFEST_FILE

    @property
    def timestamps_path(self) -> Path:
        return self.path / TIMESTAMPS_FILE

    def read_manifest(self) -> Optional[RunManifest]:
        if not self.manifest_path.is_file():
            return None
        try:
            return RunManifest.model_validate_json(self.manifest_path.read_text())
        except ValueError as e:
            raise IoError(f"unreadable run manifest: {e}", path=str(self.manifest_path)) from e

    def write_manifest(self, manifest: RunManifest) -> None:
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(manifest.model_dump_json(indent=2) + "\n")

    def stage_dir(self, stage: str) -> Path:
        directory = self.path / stage
        directory.mkdir(parents=True, exist_ok=True)
        return directory

    def read_timestamps(self) -> Dict[str, Dict[str, str]]:
        if not self.timestamps_path.is_file():
            return {}
        return json.loads(self.timestamps_path.read_text())

    def record_stage(self, stage: str, started: str) -> None:
        """Mark a stage complete; timestamps live apart so results stay byte-stable."""
        manifest = self.read_manifest()
        if manifest is None:
            raise IncompleteRun("run has no manifest", run_dir=str(self.path))
        if stage not in manifest.stages:
            manifest.stages.append(stage)
            self.write_manifest(manifest)
        stamps = self.read_timestamps()
        stamps[stage] = {"started": started, "finished": now_iso()}
        self.timestamps_path.write_text(json.dumps(stamps, indent=2, sort_keys=True) + "\n")

    def is_done(self, stage: str) -> bool:
        manifest = self.read_manifest()
        return manifest is not None and stage in manifest.stages

    def require(self, stage: str) -> RunManifest:
        manifest = self.read_manifest()
        if manifest is None:
            raise IncompleteRun("not a run directory", run_dir=str(self.path))
        if stage not in manifest.stages:
            raise IncompleteRun(f"run is missing the {stage} stage", run_dir=str(self.path), stages=manifest.stages)
        return manifest

    def metrics_frame(self) -> pd.DataFrame:
        self.require("classify")
        return pd.read_csv(self.stage_dir("classify") / METRICS_FILE)

    def metrics_reports(self) -> List[MetricsReport]:
        self.require("classify")
        return [
            MetricsReport.model_validate_json(path.read_text())
            for path in sorted(self.stage_dir("classify").glob("*.json"))
        ]

    def top_rois(self, network: Optional[str] = None) -> pd.DataFrame:
        self.require("graph")
        pattern = f"top_rois_{network}.csv" if network else "top_rois_*.csv"
        paths = sorted(self.stage_dir("graph").glob(pattern))
        if not paths:
            raise IncompleteRun(f"no top-ROI table for {network or 'any network'}", run_dir=str(self.path))
        return pd.concat([pd.read_csv(p) for p in paths], ignore_index=True)


def top_entries(frame: pd.DataFrame, limit: int) -> pd.DataFrame:
    """First `limit` rows per (network, label); rows are already ranked."""
    if limit < 1:
        raise InvalidParams(f"limit must be >= 1, got {limit}")
    return frame.groupby(["network", "label"], sort=False).head(limit).reset_index(drop=True)


class RunService:
    def __init__(self, runs_root: PathLike):
        self.runs_root = Path(runs_root)

    def list_runs(self) -> List[RunSummary]:
        if not self.runs_root.is_dir():
            return []
        summaries = []
        for path in sorted(p for p in self.runs_root.iterdir() if p.is_dir()):
            manifest = RunDirectory(path).read_manifest()
            if manifest is not None:
                summaries.append(
                    RunSummary(run_id=path.name, config_hash=manifest.config_hash, stages=manifest.stages)
                )
        return summaries

    def get_run(self, run_id: str) -> RunDirectory:
        if Path(run_id).name != run_id or run_id in ("", ".", ".."):
            raise InvalidParams(f"invalid run id {run_id!r}")
        run = RunDirectory(self.runs_root / run_id)
        if run.read_manifest() is None:
            raise IncompleteRun(f"run {run_id} not found", run_id=run_id)
        return run

    def get_metrics(self, run_id: str) -> List[MetricsReport]:
        return self.get_run(run_id).metrics_reports()

    def get_top_rois(self, run_id: str, network: Optional[str] = None, limit: int = 10) -> List[FrequencyRow]:
        frame = top_entries(self.get_run(run_id).top_rois(network), limit)
        return [FrequencyRow(**row) for row in frame.to_dict(orient="records")]


def report(run_dir: PathLike, fmt: str = "table", limit: int = 10) -> str:
    """Network x metric summary per feature family, then the top-ROI frequency listing."""
    if fmt not in REPORT_FORMATS:
        raise InvalidParams(f"unknown report format {fmt!r}", formats=list(REPORT_FORMATS))
    run = RunDirectory(run_dir)
    metrics = run.metrics_frame()
    top = top_entries(run.top_rois(), limit)

    if fmt == "csv":
        return metrics.to_csv(index=False) + "\n" + top.to_csv(index=False)

    sections = []
    for kind, rows in metrics.groupby("feature_kind", sort=False):
        table = rows.set_index("network")[METRIC_COLUMNS]
        sections.append(f"== {kind} ==\n{table.to_string(float_format=lambda v: f'{v:.2f}')}")

    for (network, label), rows in top.groupby(["network", "label"], sort=False):
        roi_no, roi_label, fraction = TOP_ROI_HEADERS
        listing = pd.DataFrame(
            {
                roi_no: rows["roi_no"],
                roi_label: rows["roi_label"],
                fraction: [f"{c:02d}/{n}" for c, n in zip(rows["count"], rows["class_size"])],
            }
        )
        sections.append(f"== top ROIs: {network} / {label} ==\n{listing.to_string(index=False)}")
    return "\n\n".join(sections) + "\n"
