"""End-to-end run: load, optional ReHo, local dynamics, network graphs, classification.

Each stage writes into its own subdirectory of the run directory and is
recorded in `manifest.json` when it completes, so a rerun with the same
config resumes after the last finished stage.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import joblib
import numpy as np
import pandas as pd
import pydantic
import scipy

from app import __version__
from app.core.config import PipelineConfig
from app.core.errors import IoError, PipelineError, RunConflict
from app.models import (
    CohortDataset,
    DegreeRanking,
    EmbeddingParams,
    FeatureKind,
    FeatureTable,
    Network,
    RecurrenceMatrix,
    RoiTimeSeries,
    RqaFeatures,
    Subject,
    TargetRate,
)
from app.schemas import FrequencyRow, MetricsReport, RunManifest

from . import (
    classify_service,
    cohort_service,
    connectivity_service,
    embedding_service,
    recurrence_service,
    reho_service,
)
from .run_service import METRIC_HEADERS, METRICS_FILE, RunDirectory, now_iso

logger = logging.getLogger(__name__)

STAGES = ("validate", "reho", "rqa", "graph", "classify")
RQA_MEASURES = ("rr", "det", "lmean", "lmax", "lam", "tt", "entr")
RQA_COLUMNS = ["subject", "network", "roi"] + list(RQA_MEASURES)
PARAM_COLUMNS = ["subject", "network", "roi", "m", "tau", "k"]
FEATURE_ID_COLUMNS = ["subject", "label", "network", "feature_kind"]
METRICS_FIELDS = [
    "network",
    "feature_kind",
    "precision",
    "recall",
    "f1",
    "accuracy",
    "tp",
    "fp",
    "fn",
    "tn",
    "aggregation",
    "seed",
    "n_trees",
]
METRICS_COLUMNS = [METRIC_HEADERS.get(field, field) for field in METRICS_FIELDS]


def library_versions() -> Dict[str, str]:
    return {
        "msfmri": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "joblib": joblib.__version__,
        "pydantic": pydantic.VERSION,
    }


# local scale


def roi_dynamics(
    roi: RoiTimeSeries, config: PipelineConfig
) -> Tuple[EmbeddingParams, RecurrenceMatrix, RqaFeatures]:
    params = embedding_service.estimate_params(
        roi,
        tau=config.tau,
        d_max=config.d_max,
        epsilon=config.epsilon,
        max_lag=config.max_lag,
        theiler=config.theiler,
        delay_method=config.delay_method,
    )
    states = embedding_service.embed_series(roi, params)
    if config.force_k is not None:
        states = embedding_service.pin_states(states, config.force_k)
    rm = recurrence_service.recurrence_matrix(states)
    binary = recurrence_service.threshold(rm, TargetRate(config.rr))
    return params, rm, recurrence_service.rqa_measures(binary, config.l_min, config.v_min)


def plot_path(plot_dir: Path, subject_id: str, network: Network, roi_id: int, suffix: str = ".pgm") -> Path:
    return plot_dir / subject_id / network.value / f"{roi_id:03d}{suffix}"


def subject_dynamics(
    subject: Subject,
    networks: Sequence[Network],
    config: PipelineConfig,
    plot_dir: Optional[Path] = None,
) -> Tuple[List[dict], List[dict]]:
    """RQA rows and embedding-parameter rows for every ROI of one subject."""
    rqa_rows, param_rows = [], []
    for network in networks:
        for roi in subject.rois(network):
            try:
                params, rm, features = roi_dynamics(roi, config)
                if plot_dir is not None:
                    image = recurrence_service.resize_bilinear(rm, config.render_size)
                    recurrence_service.render_grayscale(image, plot_path(plot_dir, subject.subject_id, network, roi.roi_id))
                    if config.render_png:
                        recurrence_service.render_png(
                            image, plot_path(plot_dir, subject.subject_id, network, roi.roi_id, ".png")
                        )
            except PipelineError as e:
                raise e.with_context(subject=subject.subject_id, network=network.value, roi=roi.roi_label)
            ids = {"subject": subject.subject_id, "network": network.value, "roi": roi.roi_id}
            rqa_rows.append({**ids, **dict(zip(RQA_MEASURES, features.as_vector()))})
            param_rows.append({**ids, "m": params.m, "tau": params.tau, "k": min(params.k, config.force_k or params.k)})
    return rqa_rows, param_rows


def cohort_dynamics(
    ds: CohortDataset, config: PipelineConfig, plot_dir: Optional[Path] = None
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    results = joblib.Parallel(n_jobs=config.jobs)(
        joblib.delayed(subject_dynamics)(subject, ds.networks, config, plot_dir) for subject in ds.subjects
    )
    rqa = pd.DataFrame([row for rows, _ in results for row in rows], columns=RQA_COLUMNS)
    params = pd.DataFrame([row for _, rows in results for row in rows], columns=PARAM_COLUMNS)
    return rqa, params


def rqa_feature_matrix(rqa: pd.DataFrame, ds: CohortDataset, network: Network) -> np.ndarray:
    """One row per subject: the RQA measures of every ROI, ROI-major."""
    rows = rqa[rqa["network"] == network.value]
    by_subject = {sid: frame.sort_values("roi") for sid, frame in rows.groupby("subject", sort=False)}
    return np.vstack(
        [by_subject[s.subject_id][list(RQA_MEASURES)].to_numpy(dtype=float).reshape(-1) for s in ds.subjects]
    )


# global scale


def _subject_graph(subject: Subject, network: Network, config: PipelineConfig):
    graph = connectivity_service.build_graph(subject, network, config.shrinkage, config.graph_method)
    eigen = connectivity_service.eigen_features(graph)
    ranking = connectivity_service.degree_and_rank(
        graph, config.edge_threshold, config.signed, subject.subject_id
    )
    return graph, eigen, ranking


def network_graph_features(
    ds: CohortDataset,
    network: Network,
    config: PipelineConfig,
    adjacency_dir: Optional[Path] = None,
) -> Tuple[Dict[FeatureKind, np.ndarray], DegreeRanking]:
    results = joblib.Parallel(n_jobs=config.jobs)(
        joblib.delayed(_subject_graph)(subject, network, config) for subject in ds.subjects
    )
    if adjacency_dir is not None:
        for subject, (graph, _, _) in zip(ds.subjects, results):
            path = adjacency_dir / subject.subject_id / f"{network.value}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            pd.DataFrame(graph.adjacency, columns=graph.roi_labels).to_csv(
                path, index=False, float_format=cohort_service.FLOAT_FORMAT
            )

    k = min(config.top_k, network.roi_count)
    if k != config.top_k:
        logger.warning("%s: top-k %d clamped to %d ROIs", network.value, config.top_k, k)
    ranking = connectivity_service.top_roi_frequency(
        [r for _, _, r in results], k, [s.label for s in ds.subjects]
    )
    features = {
        FeatureKind.EIGENVALUES: np.vstack([e.eigenvalues for _, e, _ in results]),
        FeatureKind.LEADING_EIGENVECTOR: np.vstack([e.leading_vector for _, e, _ in results]),
    }
    return features, ranking


def frequency_rows(ranking: DegreeRanking, network: Network) -> List[FrequencyRow]:
    return [
        FrequencyRow(
            network=network.value,
            label=entry.label.name.lower(),
            roi_no=entry.roi_id + 1,
            roi_label=entry.roi_label,
            count=entry.count,
            class_size=entry.class_size,
            fraction=entry.fraction,
        )
        for entry in ranking.frequency
    ]


def frequency_frame(ranking: DegreeRanking, network: Network) -> pd.DataFrame:
    return pd.DataFrame(
        [row.model_dump() for row in frequency_rows(ranking, network)],
        columns=list(FrequencyRow.model_fields),
    )


# feature tables


def feature_frame(
    kind: FeatureKind, network: Network, ds: CohortDataset, matrix: np.ndarray
) -> pd.DataFrame:
    ids = pd.DataFrame(
        {
            "subject": [s.subject_id for s in ds.subjects],
            "label": [int(s.label) for s in ds.subjects],
            "network": network.value,
            "feature_kind": kind.value,
        },
        columns=FEATURE_ID_COLUMNS,
    )
    values = pd.DataFrame(matrix, columns=[f"f{i + 1}" for i in range(matrix.shape[1])])
    return pd.concat([ids, values], axis=1)


def feature_path(run: RunDirectory, kind: FeatureKind, network: Network) -> Path:
    stage = "rqa" if kind is FeatureKind.RQA else "graph"
    return run.path / stage / f"features_{network.value}_{kind.value}.csv"


def write_features(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=cohort_service.FLOAT_FORMAT)
    return path


def build_feature_table(frame: pd.DataFrame) -> FeatureTable:
    feature_columns = [c for c in frame.columns if c[:1] == "f" and c[1:].isdigit()]
    feature_columns.sort(key=lambda c: int(c[1:]))
    kinds = frame["feature_kind"].unique() if len(frame) else []
    networks = frame["network"].unique() if len(frame) else []
    return FeatureTable(
        X=frame[feature_columns].to_numpy(dtype=float),
        y=frame["label"].to_numpy(dtype=int),
        provenance=FeatureKind.parse(kinds[0]) if len(kinds) else FeatureKind.EIGENVALUES,
        subject_ids=tuple(frame["subject"].astype(str)),
        network=Network(networks[0]) if len(networks) == 1 else None,
    )


def read_feature_table(path: Path) -> FeatureTable:
    if not Path(path).is_file():
        raise IoError("feature table not found", path=str(path))
    return build_feature_table(pd.read_csv(path, float_precision="round_trip", dtype={"subject": str}))


def classify_table(table: FeatureTable, config: PipelineConfig) -> MetricsReport:
    return classify_service.cross_validate(
        table,
        folds=config.folds,
        n_trees=config.trees,
        seed=config.seed,
        max_depth=config.max_depth,
        min_leaf=config.min_leaf,
        per_fold_mean=config.per_fold_mean,
        n_jobs=config.jobs,
    )


def metrics_row(report: MetricsReport) -> dict:
    return {METRIC_HEADERS.get(field, field): getattr(report, field) for field in METRICS_FIELDS}


# orchestration


def open_run(config: PipelineConfig) -> RunDirectory:
    run = RunDirectory(config.run_dir)
    digest = config.config_hash()
    existing = run.read_manifest()
    if existing is not None:
        if existing.config_hash != digest:
            raise RunConflict(
                "run directory holds results of a different config",
                run_dir=str(run.path),
                expected=existing.config_hash,
                found=digest,
            )
        logger.info("Resuming %s (done: %s)", run.path, ", ".join(existing.stages) or "nothing")
        return run
    run.write_manifest(
        RunManifest(
            config_hash=digest,
            seed=config.seed,
            versions=library_versions(),
            networks=[n.value for n in config.networks],
            feature_kinds=[k.value for k in config.feature_kinds],
        )
    )
    return run


def source_dataset(config: PipelineConfig) -> CohortDataset:
    manifest = config.manifest if config.manifest.is_absolute() else config.data_root / config.manifest
    return cohort_service.load_cohort(config.data_root, manifest, config.networks)


def load_dataset(config: PipelineConfig, run: RunDirectory) -> CohortDataset:
    if config.use_reho and run.is_done("reho"):
        reho_dir = run.path / "reho" / "cohort"
        return cohort_service.load_cohort(reho_dir, reho_dir / "manifest.csv", config.networks)
    return source_dataset(config)


def _validate_stage(ds: CohortDataset, run: RunDirectory) -> None:
    report = cohort_service.validate_dataset(ds)
    for warning in report.warnings:
        logger.warning("validate: %s", warning)
    (run.stage_dir("validate") / "report.json").write_text(report.model_dump_json(indent=2) + "\n")


def _reho_stage(ds: CohortDataset, config: PipelineConfig, run: RunDirectory) -> CohortDataset:
    if config.voxel_root is None:
        logger.warning("use_reho set without voxel_root; keeping pre-extracted ROI series")
        subjects = ds.subjects
    else:
        subjects = tuple(
            reho_service.apply_reho(s, config.voxel_root, config.reho_neighbors_only, config.jobs)
            for s in ds.subjects
        )
    updated = CohortDataset(subjects, ds.n_timepoints, ds.networks, ds.metadata)
    cohort_service.write_cohort(updated, run.stage_dir("reho") / "cohort")
    return updated


def _rqa_stage(ds: CohortDataset, config: PipelineConfig, run: RunDirectory) -> None:
    stage = run.stage_dir("rqa")
    plot_dir = stage / "plots" if config.render else None
    rqa, params = cohort_dynamics(ds, config, plot_dir)
    rqa.to_csv(stage / "rqa_features.csv", index=False, float_format=cohort_service.FLOAT_FORMAT)
    params.to_csv(stage / "embedding_params.csv", index=False)
    for network in ds.networks:
        frame = feature_frame(FeatureKind.RQA, network, ds, rqa_feature_matrix(rqa, ds, network))
        write_features(frame, feature_path(run, FeatureKind.RQA, network))


def _graph_stage(ds: CohortDataset, config: PipelineConfig, run: RunDirectory) -> None:
    stage = run.stage_dir("graph")
    for network in ds.networks:
        features, ranking = network_graph_features(ds, network, config, stage / "adjacency")
        for kind, matrix in features.items():
            write_features(feature_frame(kind, network, ds, matrix), feature_path(run, kind, network))
        frequency_frame(ranking, network).to_csv(stage / f"top_rois_{network.value}.csv", index=False)
        logger.info("%s: graph features for %d subjects", network.value, len(ds.subjects))


def _classify_stage(config: PipelineConfig, run: RunDirectory) -> None:
    stage = run.stage_dir("classify")
    rows = []
    for network in config.networks:
        for kind in config.feature_kinds:
            try:
                report = classify_table(read_feature_table(feature_path(run, kind, network)), config)
            except PipelineError as e:
                raise e.with_context(network=network.value, feature_kind=kind.value)
            (stage / f"{network.value}_{kind.value}.json").write_text(report.model_dump_json(indent=2) + "\n")
            rows.append(metrics_row(report))
            logger.info("%s/%s: accuracy %.3f", network.value, kind.value, report.accuracy)
    pd.DataFrame(rows, columns=METRICS_COLUMNS).to_csv(stage / METRICS_FILE, index=False, float_format="%.6f")


def run_pipeline(config: PipelineConfig) -> Path:
    run = open_run(config)
    ds = load_dataset(config, run)

    def stage(name: str, work) -> None:
        if run.is_done(name):
            logger.info("stage %s already complete", name)
            return
        started = now_iso()
        work()
        run.record_stage(name, started)

    stage("validate", lambda: _validate_stage(ds, run))
    if config.use_reho and not run.is_done("reho"):
        started = now_iso()
        ds = _reho_stage(ds, config, run)
        run.record_stage("reho", started)
    if FeatureKind.RQA in config.feature_kinds:
        stage("rqa", lambda: _rqa_stage(ds, config, run))
    stage("graph", lambda: _graph_stage(ds, config, run))
    stage("classify", lambda: _classify_stage(config, run))
    return run.path
