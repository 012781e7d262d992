"""Recurrence matrices, RQA measures and grayscale recurrence plots."""

import logging
import math
from pathlib import Path
from typing import Union

import numpy as np
from scipy.spatial.distance import pdist, squareform

from app.core.errors import InvalidParams, InvalidRate, IoError
from app.models import (
    BinaryRecurrence,
    FixedThreshold,
    RecurrenceMatrix,
    RqaFeatures,
    StateMatrix,
    TargetRate,
    ThresholdRule,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def recurrence_matrix(states: StateMatrix) -> RecurrenceMatrix:
    """Pairwise Euclidean distances; each unordered pair computed once and mirrored."""
    rows = np.asarray(states.rows, dtype=float)
    if rows.shape[0] < 1:
        raise InvalidParams("need at least one state")
    if rows.shape[0] == 1:
        return RecurrenceMatrix(np.zeros((1, 1)))
    return RecurrenceMatrix(squareform(pdist(rows, metric="euclidean")))


def threshold(rm: RecurrenceMatrix, rule: ThresholdRule) -> BinaryRecurrence:
    values = rm.values
    if isinstance(rule, FixedThreshold):
        epsilon = float(rule.epsilon)
    elif isinstance(rule, TargetRate):
        if not 0.0 < rule.rate < 1.0:
            raise InvalidRate(f"target recurrence rate must lie in (0, 1), got {rule.rate}")
        off_diagonal = values[np.triu_indices(rm.k, k=1)]
        if off_diagonal.size == 0:
            raise InvalidRate("a single state has no off-diagonal distances")
        epsilon = float(np.quantile(off_diagonal, rule.rate, method="inverted_cdf"))
    else:
        raise InvalidParams(f"unknown threshold rule {rule!r}")
    return BinaryRecurrence(bits=values <= epsilon, threshold_rule=rule, epsilon=epsilon)


def _run_lengths(flags: np.ndarray) -> np.ndarray:
    """Lengths of the runs of True in a 1-D boolean array."""
    padded = np.concatenate(([False], flags, [False])).astype(np.int8)
    edges = np.diff(padded)
    return np.flatnonzero(edges == -1) - np.flatnonzero(edges == 1)


def diagonal_lines(bits: np.ndarray) -> np.ndarray:
    """Diagonal line lengths above the main diagonal (the lower half mirrors them)."""
    k = bits.shape[0]
    if k < 2:
        return np.zeros(0, dtype=int)
    pieces = []
    for offset in range(1, k):
        pieces.append(np.diagonal(bits, offset))
        pieces.append([False])
    return _run_lengths(np.concatenate(pieces).astype(bool))


def vertical_lines(bits: np.ndarray) -> np.ndarray:
    """Vertical line lengths over every column, main diagonal included."""
    separated = np.vstack([bits, np.zeros((1, bits.shape[1]), dtype=bool)])
    return _run_lengths(separated.T.reshape(-1))


def _histogram(lengths: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(lengths, minlength=size + 1)


def rqa_measures(br: BinaryRecurrence, l_min: int = 2, v_min: int = 2) -> RqaFeatures:
    bits = np.asarray(br.bits, dtype=bool)
    k = bits.shape[0]
    if k < 2:
        raise InvalidParams("RQA needs at least 2 states")
    if l_min < 1 or v_min < 1:
        raise InvalidParams("l_min and v_min must be >= 1")

    recurrent = int(bits.sum() - np.trace(bits))
    rr = recurrent / (k * (k - 1))
    if recurrent == 0:
        return RqaFeatures(
            rr=0.0, det=0.0, l_mean=0.0, l_max=0, lam=0.0, tt=0.0, entr=0.0, no_recurrences=True
        )

    lengths = np.arange(k + 1)
    p_diag = _histogram(diagonal_lines(bits), k)
    long_diag = p_diag[l_min:]
    diag_points = lengths[l_min:] * long_diag
    # corner diagonals shorter than l_min cannot hold a line
    corner = sum(int(np.diagonal(bits, offset).sum()) for offset in range(max(k - l_min + 1, 1), k))
    eligible = (lengths * p_diag).sum() - corner
    det = diag_points.sum() / eligible if eligible else 0.0
    n_lines = long_diag.sum()
    l_mean = diag_points.sum() / n_lines if n_lines else 0.0
    present = np.flatnonzero(p_diag)
    l_max = int(present[-1]) if present.size else 0

    if n_lines:
        p = long_diag[long_diag > 0] / n_lines
        entr = float(-np.sum(p * np.log(p)))
    else:
        entr = 0.0

    p_vert = _histogram(vertical_lines(bits), k)
    long_vert = p_vert[v_min:]
    vert_points = lengths[v_min:] * long_vert
    lam = vert_points.sum() / (lengths * p_vert).sum()
    n_vert = long_vert.sum()
    tt = vert_points.sum() / n_vert if n_vert else 0.0
    vert_present = np.flatnonzero(p_vert)
    v_max = int(vert_present[-1]) if vert_present.size else 0

    return RqaFeatures(
        rr=float(rr),
        det=float(det),
        l_mean=float(l_mean),
        l_max=l_max,
        lam=float(lam),
        tt=float(tt),
        entr=entr,
        v_max=v_max,
    )


def interpolation_weights(k: int, size: int) -> np.ndarray:
    """(size x k) corner-aligned linear interpolation matrix."""
    positions = np.linspace(0.0, k - 1, size)
    lower = np.clip(np.floor(positions).astype(int), 0, k - 2)
    frac = positions - lower
    weights = np.zeros((size, k))
    rows = np.arange(size)
    weights[rows, lower] = 1.0 - frac
    weights[rows, lower + 1] += frac
    return weights


def resize_bilinear(rm: Union[RecurrenceMatrix, np.ndarray], size: int = 224) -> np.ndarray:
    values = np.asarray(rm.values if isinstance(rm, RecurrenceMatrix) else rm, dtype=float)
    k = values.shape[0]
    if k < 2 or values.shape[1] != k:
        raise InvalidParams(f"resize needs a square matrix with K >= 2, got {values.shape}")
    if size < 2:
        raise InvalidParams(f"size must be >= 2, got {size}")

    weights = interpolation_weights(k, size)
    out = weights @ values @ weights.T
    if np.array_equal(values, values.T):
        upper = np.triu(out)
        out = upper + np.triu(out, 1).T
    return np.clip(out, values.min(), values.max())


def to_grayscale(matrix: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255 (round half up); constant input maps to 0."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        raise InvalidParams("cannot render an empty matrix")
    low, high = matrix.min(), matrix.max()
    if high == low:
        return np.zeros(matrix.shape, dtype=np.uint8)
    scaled = 255.0 * (matrix - low) / (high - low)
    return np.floor(scaled + 0.5).astype(np.uint8)


def render_grayscale(matrix, path: PathLike) -> Path:
    """Write a binary PGM (P5); row 0 of the matrix is the top image row."""
    values = matrix.values if isinstance(matrix, RecurrenceMatrix) else matrix
    pixels = to_grayscale(values)
    if pixels.ndim != 2:
        raise InvalidParams(f"expected a 2-D matrix, got shape {pixels.shape}")
    height, width = pixels.shape
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as handle:
            handle.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
            handle.write(pixels.tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", path=str(path)) from e
    return path


def render_png(matrix, path: PathLike) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    values = matrix.values if isinstance(matrix, RecurrenceMatrix) else matrix
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        plt.imsave(path, to_grayscale(values), cmap="gray", vmin=0, vmax=255)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", path=str(path)) from e
    return path


def read_pgm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    header = data.split(maxsplit=4)
    if header[0] != b"P5":
        raise IoError("not a binary PGM", path=str(path))
    width, height, maxval = (int(v) for v in header[1:4])
    pixels = np.frombuffer(data[len(data) - width * height :], dtype=np.uint8)
    if maxval != 255 or math.prod((height, width)) != pixels.size:
        raise IoError("unexpected PGM layout", path=str(path))
    return pixels.reshape(height, width)
