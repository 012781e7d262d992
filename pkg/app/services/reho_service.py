"""Regional homogeneity (Kendall's W over voxel neighbourhoods).

For every voxel the cluster is the voxel itself plus its in-bounds
26-neighbourhood (27 rankers in the interior, fewer on the block boundary).
`neighbors_only=True` drops the centre voxel from its own cluster.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import rankdata

from app.core.errors import DegenerateInput, IoError, NoDefinedReho
from app.models import Network, RehoMap, RoiTimeSeries, Subject, VoxelBlock

logger = logging.getLogger(__name__)


def rank_transform(series: Sequence[float]) -> np.ndarray:
    """Ranks 1..N with average ranks for ties."""
    return rankdata(np.asarray(series, dtype=float), method="average")


def _tie_correction(rank_rows: np.ndarray) -> float:
    total = 0.0
    for row in rank_rows:
        _, counts = np.unique(row, return_counts=True)
        ties = counts[counts > 1].astype(float)
        total += float(np.sum(ties**3 - ties))
    return total


def kcc(rank_rows: np.ndarray) -> float:
    """Kendall's coefficient of concordance of m rank rows over N items."""
    rank_rows = np.atleast_2d(np.asarray(rank_rows, dtype=float))
    m, n = rank_rows.shape
    if m < 2 or n < 2:
        raise DegenerateInput(f"need at least 2 rankers and 2 items, got m={m}, N={n}")

    totals = rank_rows.sum(axis=0)
    s = float(np.sum((totals - totals.mean()) ** 2))
    denominator = m**2 * (n**3 - n) - m * _tie_correction(rank_rows)
    if denominator <= 0:
        raise DegenerateInput("all rank rows are fully tied", m=m, n=n)
    return min(max(12.0 * s / denominator, 0.0), 1.0)


def _neighbourhood(index, dims, include_center: bool):
    x, y, z = index
    lo = [max(c - 1, 0) for c in index]
    hi = [min(c + 2, d) for c, d in zip(index, dims)]
    coords = np.mgrid[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]].reshape(3, -1).T
    if not include_center:
        coords = coords[~np.all(coords == (x, y, z), axis=1)]
    return coords


def _voxel_w(ranks: np.ndarray, index, dims, include_center: bool):
    coords = _neighbourhood(index, dims, include_center)
    cluster = ranks[coords[:, 0], coords[:, 1], coords[:, 2]]
    try:
        return kcc(cluster), True
    except DegenerateInput:
        return 0.0, False


def reho_map(block: VoxelBlock, neighbors_only: bool = False, n_jobs: int = 1) -> RehoMap:
    dims = block.dims
    ranks = np.apply_along_axis(rank_transform, 3, block.series)
    indices = list(np.ndindex(*dims))
    results = Parallel(n_jobs=n_jobs)(
        delayed(_voxel_w)(ranks, index, dims, not neighbors_only) for index in indices
    )

    w_values = np.zeros(dims)
    defined = np.zeros(dims, dtype=bool)
    for index, (w, ok) in zip(indices, results):
        w_values[index] = w
        defined[index] = ok
    if not defined.all():
        logger.debug("%s: %d voxel(s) with undefined ReHo", block.region_id, int((~defined).sum()))
    return RehoMap(w_values=w_values, defined=defined, region_id=block.region_id)


def select_representative(block: VoxelBlock, reho: RehoMap) -> RoiTimeSeries:
    """Average the voxels whose ReHo reaches the region's mean ReHo."""
    defined_w = reho.defined_values()
    if defined_w.size == 0:
        raise NoDefinedReho("every voxel has undefined ReHo", region=block.region_id)

    threshold = defined_w.mean()
    candidates = reho.defined & (reho.w_values >= threshold)
    # the floating-point mean can land above the max when all W are equal
    candidates |= reho.defined & (reho.w_values == defined_w.max())
    representative = block.series[candidates].mean(axis=0)
    return RoiTimeSeries(
        roi_id=block.roi_id,
        roi_label=block.region_id,
        values=representative,
        network=block.network,
    )


def load_voxel_block(
    path: Union[str, Path],
    region_id: Optional[str] = None,
    network: Optional[Network] = None,
    roi_id: int = 0,
) -> VoxelBlock:
    """Read a voxel CSV: one row per voxel, `x,y,z` then N sample columns."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IoError(f"cannot read voxel block: {e}", path=str(path)) from e
    if list(frame.columns[:3]) != ["x", "y", "z"] or frame.shape[1] < 4:
        raise IoError("voxel CSV needs x,y,z columns followed by samples", path=str(path))

    coords = frame[["x", "y", "z"]].to_numpy(dtype=int)
    coords -= coords.min(axis=0)
    dims = tuple(int(d) for d in coords.max(axis=0) + 1)
    samples = frame.iloc[:, 3:].to_numpy(dtype=float)
    duplicated = frame.duplicated(subset=["x", "y", "z"])
    if duplicated.any():
        first = frame.loc[duplicated, ["x", "y", "z"]].iloc[0].astype(int).tolist()
        raise IoError(
            f"voxel CSV repeats coordinates {tuple(first)}",
            path=str(path),
            duplicates=int(duplicated.sum()),
        )
    if len(coords) != int(np.prod(dims)):
        raise IoError(f"voxel CSV does not fill a {dims} block", path=str(path))

    series = np.empty(dims + (samples.shape[1],))
    series[coords[:, 0], coords[:, 1], coords[:, 2]] = samples
    return VoxelBlock(series, region_id or path.stem, network=network, roi_id=roi_id)


def write_reho_map(reho: RehoMap, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coords = np.array(list(np.ndindex(*reho.dims)), dtype=int).reshape(-1, 3)
    frame = pd.DataFrame(coords, columns=["x", "y", "z"])
    frame["w"] = reho.w_values.reshape(-1)
    frame["defined"] = reho.defined.reshape(-1).astype(int)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def apply_reho(
    subject: Subject,
    voxel_root: Union[str, Path],
    neighbors_only: bool = False,
    n_jobs: int = 1,
) -> Subject:
    """Replace ROI series by ReHo representatives where voxel blocks exist.

    Blocks are looked up at `<voxel_root>/<subject>/<network>/<roi_index>.csv`;
    ROIs without a block keep their pre-extracted series.
    """
    root = Path(voxel_root) / subject.subject_id
    networks = {}
    replaced = 0
    for network, rois in subject.networks.items():
        updated: List[RoiTimeSeries] = []
        for roi in rois:
            path = root / network.value / f"{roi.roi_id}.csv"
            if not path.is_file():
                updated.append(roi)
                continue
            block = load_voxel_block(path, roi.roi_label, network=network, roi_id=roi.roi_id)
            rep = select_representative(block, reho_map(block, neighbors_only, n_jobs))
            updated.append(rep)
            replaced += 1
        networks[network] = updated
    logger.info("%s: %d ROI series replaced by ReHo representatives", subject.subject_id, replaced)
    return Subject(subject.subject_id, subject.label, networks)
