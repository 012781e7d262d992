import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.errors import (
    InvalidLabel,
    IoError,
    LengthMismatch,
    MissingNetworkFile,
    NonFiniteSample,
    RoiCountMismatch,
)
from app.models import ALL_NETWORKS, CohortDataset, Label, Network, RoiTimeSeries, Subject
from app.schemas import ConstantSeries, ValidationReport

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["subject_id", "label", "path"]
FLOAT_FORMAT = "%.17g"

LABEL_NAMES = {
    "0": Label.CLASS0,
    "class0": Label.CLASS0,
    "hc": Label.CLASS0,
    "1": Label.CLASS1,
    "class1": Label.CLASS1,
    "mci": Label.CLASS1,
}

PathLike = Union[str, Path]


def parse_label(value: str, subject_id: Optional[str] = None) -> Label:
    label = LABEL_NAMES.get(str(value).strip().lower())
    if label is None:
        raise InvalidLabel(f"label {value!r} is not binary", subject=subject_id)
    return label


def read_manifest(manifest: PathLike) -> pd.DataFrame:
    manifest = Path(manifest)
    try:
        frame = pd.read_csv(manifest, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IoError(f"cannot read manifest: {e}", path=str(manifest)) from e
    if list(frame.columns) != MANIFEST_COLUMNS:
        raise IoError(
            f"manifest header must be {','.join(MANIFEST_COLUMNS)}",
            path=str(manifest),
            found=",".join(frame.columns),
        )
    return frame


def read_network_csv(path: Path, network: Network, subject_id: str) -> List[RoiTimeSeries]:
    """Read one subject's `<network>.csv` (rows = timepoints, columns = ROIs)."""
    if not path.is_file():
        raise MissingNetworkFile(
            f"missing {network.value}.csv", subject=subject_id, network=network.value, path=str(path)
        )
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IoError(f"cannot parse {path.name}: {e}", subject=subject_id, network=network.value) from e

    if frame.shape[1] != network.roi_count:
        raise RoiCountMismatch(
            network.roi_count, frame.shape[1], subject=subject_id, network=network.value
        )
    values = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    if values.shape[0] < 2:
        raise LengthMismatch(
            "every ROI series needs at least 2 samples", subject=subject_id, network=network.value
        )
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        t, roi = (int(i) for i in bad[0])
        raise NonFiniteSample(
            "non-finite sample",
            subject=subject_id,
            network=network.value,
            roi=str(frame.columns[roi]),
            timepoint=t,
        )
    return [
        RoiTimeSeries(roi_id=i, roi_label=str(label), values=values[:, i], network=network)
        for i, label in enumerate(frame.columns)
    ]


def load_cohort(
    root_path: PathLike,
    manifest: PathLike,
    networks: Optional[Sequence[Network]] = None,
) -> CohortDataset:
    """Load and validate every subject listed in the manifest, in manifest order."""
    root = Path(root_path)
    networks = tuple(networks) if networks else ALL_NETWORKS
    frame = read_manifest(manifest)

    subjects: List[Subject] = []
    n_timepoints: Optional[int] = None
    for row in frame.itertuples(index=False):
        label = parse_label(row.label, row.subject_id)
        subject_dir = root / row.path
        series: Dict[Network, List[RoiTimeSeries]] = {}
        for network in networks:
            rois = read_network_csv(subject_dir / f"{network.value}.csv", network, row.subject_id)
            length = len(rois[0])
            if n_timepoints is None:
                n_timepoints = length
            elif length != n_timepoints:
                raise LengthMismatch(
                    f"expected {n_timepoints} timepoints, found {length}",
                    subject=row.subject_id,
                    network=network.value,
                )
            series[network] = rois
        subjects.append(Subject(row.subject_id, label, series))

    logger.info("Loaded %d subjects (%d networks) from %s", len(subjects), len(networks), manifest)
    return CohortDataset(tuple(subjects), n_timepoints or 0, networks)


def write_cohort(ds: CohortDataset, root_path: PathLike, manifest_name: str = "manifest.csv") -> Path:
    """Write the on-disk layout `load_cohort` reads; returns the manifest path."""
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for subject in ds.subjects:
        subject_dir = root / subject.subject_id
        subject_dir.mkdir(parents=True, exist_ok=True)
        for network in ds.networks:
            rois = subject.rois(network)
            frame = pd.DataFrame(
                np.column_stack([roi.values for roi in rois]),
                columns=[roi.roi_label for roi in rois],
            )
            frame.to_csv(subject_dir / f"{network.value}.csv", index=False, float_format=FLOAT_FORMAT)
        rows.append(
            {"subject_id": subject.subject_id, "label": int(subject.label), "path": subject.subject_id}
        )
    manifest = root / manifest_name
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).to_csv(manifest, index=False)
    return manifest


def validate_dataset(ds: CohortDataset) -> ValidationReport:
    warnings: List[str] = []
    if not ds.subjects:
        warnings.append("dataset has no subjects")

    constant: List[ConstantSeries] = []
    timepoints: Dict[str, int] = {}
    for subject in ds.subjects:
        for network in ds.networks:
            for roi in subject.rois(network):
                timepoints.setdefault(subject.subject_id, len(roi))
                if np.ptp(roi.values) == 0:
                    constant.append(
                        ConstantSeries(
                            subject_id=subject.subject_id,
                            network=network.value,
                            roi_id=roi.roi_id,
                            roi_label=roi.roi_label,
                        )
                    )

    counts = {label.name.lower(): n for label, n in ds.label_counts().items()}
    for name, n in counts.items():
        if ds.subjects and n < 2:
            warnings.append(f"{name} has {n} subject(s); classification needs at least 2")
    if constant:
        logger.warning("%d constant ROI series flagged", len(constant))

    return ValidationReport(
        n_subjects=len(ds.subjects),
        timepoints=timepoints,
        label_counts=counts,
        constant_series=constant,
        warnings=warnings,
    )
