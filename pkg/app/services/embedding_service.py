"""Delay embedding and Cao's minimal-dimension estimate."""

import logging
import math
from typing import Literal, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.metrics import mutual_info_score

from app.core.errors import DegenerateSeries, InvalidParams, SeriesTooShort
from app.models import CaoCurve, EmbeddingParams, RoiTimeSeries, StateMatrix

logger = logging.getLogger(__name__)

MIN_SERIES_LENGTH = 8
COINCIDENCE_TOL = 1e-9
NN_CHUNK = 512
MI_BINS = 32

DelayMethod = Literal["autocorr", "mutual_info"]


class DimensionChoice(NamedTuple):
    m: int
    saturation_found: bool


def _values(ts: Union[RoiTimeSeries, Sequence[float], np.ndarray]) -> np.ndarray:
    if isinstance(ts, RoiTimeSeries):
        return ts.values
    return np.asarray(ts, dtype=float)


def autocorrelation(x: np.ndarray, max_lag: int) -> Optional[np.ndarray]:
    """Biased sample autocorrelation for lags 0..max_lag; None for constant input."""
    centered = x - x.mean()
    energy = float(np.dot(centered, centered))
    if energy == 0.0:
        return None
    n = len(x)
    return np.array(
        [np.dot(centered[: n - lag], centered[lag:]) / energy for lag in range(max_lag + 1)]
    )


def delayed_mutual_information(x: np.ndarray, max_lag: int, bins: int = MI_BINS) -> Optional[np.ndarray]:
    """Mutual information (nats) between x_t and x_{t+lag} on an equal-width grid, lags 0..max_lag."""
    if np.ptp(x) == 0.0:
        return None
    edges = np.linspace(x.min(), x.max(), bins + 1)
    codes = np.clip(np.digitize(x, edges[1:-1]), 0, bins - 1)
    n = len(x)
    return np.array(
        [mutual_info_score(codes[: n - lag], codes[lag:]) for lag in range(max_lag + 1)]
    )


def _first_local_minimum(curve: np.ndarray) -> Optional[int]:
    for lag in range(1, len(curve) - 1):
        if curve[lag] < curve[lag - 1] and curve[lag] <= curve[lag + 1]:
            return lag
    return None


def select_delay(
    ts,
    max_lag: Optional[int] = None,
    method: DelayMethod = "autocorr",
    bins: int = MI_BINS,
) -> int:
    """First lag where the autocorrelation drops below 1/e.

    Falls back to the first local minimum of the autocorrelation, then to 1.
    With ``method="mutual_info"`` the first local minimum of the delayed
    mutual information is used instead, again falling back to 1.
    """
    x = _values(ts)
    n = len(x)
    if n < MIN_SERIES_LENGTH:
        raise SeriesTooShort(f"need at least {MIN_SERIES_LENGTH} samples, got {n}")
    limit = (n - 1) // 2
    if max_lag is None:
        max_lag = limit
    if max_lag < 1 or max_lag > limit:
        raise InvalidParams(f"max_lag must lie in [1, {limit}] for N={n}, got {max_lag}")
    if method not in ("autocorr", "mutual_info"):
        raise InvalidParams(f"unknown delay method: {method}", method=method)

    if method == "mutual_info":
        if bins < 2:
            raise InvalidParams(f"bins must be >= 2, got {bins}")
        mi = delayed_mutual_information(x, max_lag, bins)
        if mi is None:
            logger.warning("constant series: mutual information undefined, using tau=1")
            return 1
        return _first_local_minimum(mi) or 1

    acf = autocorrelation(x, max_lag)
    if acf is None:
        logger.warning("constant series: autocorrelation undefined, using tau=1")
        return 1

    below = np.flatnonzero(acf[1:] < 1.0 / math.e)
    if below.size:
        return int(below[0]) + 1
    return _first_local_minimum(acf) or 1


def embed_series(ts, p: EmbeddingParams) -> StateMatrix:
    """K x M state matrix whose row i is (v_i, v_{i+tau}, ..., v_{i+(M-1)tau})."""
    x = _values(ts)
    span = (p.m - 1) * p.tau
    if span >= len(x):
        raise InvalidParams(f"(m-1)*tau = {span} must be < N = {len(x)}", m=p.m, tau=p.tau)
    windows = np.lib.stride_tricks.sliding_window_view(x, span + 1)
    rows = np.ascontiguousarray(windows[:, :: p.tau])
    label = ts.roi_label if isinstance(ts, RoiTimeSeries) else None
    return StateMatrix(rows=rows, tau=p.tau, source_roi=label)


def _delay_vectors(x: np.ndarray, d: int, tau: int, count: int) -> np.ndarray:
    idx = np.arange(count)[:, None] + tau * np.arange(d)[None, :]
    return x[idx]


def _nearest_neighbours(points: np.ndarray, tol: float, theiler: int = 0) -> np.ndarray:
    """Index of each point's nearest (Chebyshev) neighbour; -1 if it has none.

    A candidate at distance <= ``tol`` (COINCIDENCE_TOL times the series range)
    counts as coincident and is skipped, so the next-nearest candidate is taken
    instead; a point is left out (-1) only when no candidate remains.
    Candidates within ``theiler`` samples of the point in time are never
    considered.
    """
    k = len(points)
    out = np.full(k, -1, dtype=int)
    cols = np.arange(k)
    for start in range(0, k, NN_CHUNK):
        stop = min(start + NN_CHUNK, k)
        dist = cdist(points[start:stop], points, metric="chebyshev")
        dist[dist <= tol] = np.inf
        if theiler > 0:
            rows = np.arange(start, stop)[:, None]
            dist[np.abs(rows - cols[None, :]) <= theiler] = np.inf
        best = np.argmin(dist, axis=1)
        found = np.isfinite(dist[np.arange(stop - start), best])
        out[start:stop] = np.where(found, best, -1)
    return out


def cao_curves(ts, tau: int, d_max: int, epsilon: float = 0.05, theiler: int = 0) -> CaoCurve:
    """E(d), E*(d) for d = 1..d_max and their ratios E1, E2.

    ``theiler`` keeps temporally adjacent states (|i - j| <= theiler) out of the
    neighbour search; 0 only excludes the point itself.
    """
    x = _values(ts)
    n = len(x)
    if d_max < 3:
        raise InvalidParams(f"d_max must be >= 3, got {d_max}")
    if tau < 1:
        raise InvalidParams(f"tau must be >= 1, got {tau}")
    if theiler < 0:
        raise InvalidParams(f"theiler must be >= 0, got {theiler}")
    if n - d_max * tau < 2:
        raise SeriesTooShort(
            f"N={n} too short for d_max={d_max}, tau={tau}", n=n, d_max=d_max, tau=tau
        )

    spread = float(np.ptp(x))
    if spread == 0.0:
        raise DegenerateSeries("all states coincide")
    tol = COINCIDENCE_TOL * spread

    e = np.empty(d_max)
    e_star = np.empty(d_max)
    excluded = []
    for d in range(1, d_max + 1):
        count = n - d * tau
        low = _delay_vectors(x, d, tau, count)
        high = _delay_vectors(x, d + 1, tau, count)
        nn = _nearest_neighbours(low, tol, theiler)
        valid = np.flatnonzero(nn >= 0)
        excluded.append(int(count - valid.size))
        if valid.size == 0:
            raise DegenerateSeries(f"no admissible neighbours in dimension {d}", d=d)

        partner = nn[valid]
        low_dist = np.max(np.abs(low[valid] - low[partner]), axis=1)
        high_dist = np.max(np.abs(high[valid] - high[partner]), axis=1)
        e[d - 1] = math.fsum(high_dist / low_dist) / valid.size
        e_star[d - 1] = math.fsum(np.abs(x[valid + d * tau] - x[partner + d * tau])) / valid.size

    if any(excluded):
        logger.warning("Cao: excluded points without admissible neighbours per d: %s", excluded)

    e1 = e[1:] / e[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        e2 = np.where(e_star[:-1] > 0, e_star[1:] / e_star[:-1], 1.0)
    choice = choose_dimension(e1, epsilon)
    return CaoCurve(
        e=e,
        e_star=e_star,
        e1=e1,
        e2=e2,
        chosen_m=choice.m,
        saturation_found=choice.saturation_found,
        tau=tau,
        excluded=tuple(excluded),
    )


def choose_dimension(curve: Union[CaoCurve, Sequence[float]], epsilon: float = 0.05) -> DimensionChoice:
    """Smallest d from which |E1 - 1| < epsilon holds for every later d."""
    if epsilon <= 0:
        raise InvalidParams(f"epsilon must be > 0, got {epsilon}")
    e1 = np.asarray(curve.e1 if isinstance(curve, CaoCurve) else curve, dtype=float)
    inside = np.abs(e1 - 1.0) < epsilon
    d_max = len(e1) + 1
    if inside.size == 0 or not inside[-1]:
        return DimensionChoice(d_max, False)
    outside = np.flatnonzero(~inside)
    first = int(outside[-1]) + 1 if outside.size else 0
    return DimensionChoice(first + 1, True)


def estimate_params(
    ts,
    tau: Union[str, int] = "auto",
    d_max: int = 20,
    epsilon: float = 0.05,
    max_lag: Optional[int] = None,
    theiler: int = 0,
    delay_method: DelayMethod = "autocorr",
) -> EmbeddingParams:
    """Delay, then Cao dimension, for one series; d_max is clamped to what N allows."""
    x = _values(ts)
    n = len(x)
    if tau == "auto":
        if max_lag is not None:
            max_lag = min(max_lag, (n - 1) // 2)
        tau = select_delay(x, max_lag, method=delay_method)
    tau = int(tau)

    allowed = (n - 2) // tau
    if allowed < 3:
        raise SeriesTooShort(f"N={n} too short for Cao's method at tau={tau}", n=n, tau=tau)
    if d_max > allowed:
        logger.warning("d_max %d clamped to %d for N=%d, tau=%d", d_max, allowed, n, tau)
        d_max = allowed

    try:
        m = cao_curves(x, tau, d_max, epsilon, theiler).chosen_m
    except DegenerateSeries:
        logger.warning("degenerate series: falling back to m=1")
        m = 1
    while m > 1 and (m - 1) * tau >= n - 1:
        m -= 1
    return EmbeddingParams(m=m, tau=tau, n_samples=n)


def pin_states(states: StateMatrix, force_k: int) -> StateMatrix:
    """Keep the first force_k states so every ROI yields a K x K matrix of one size."""
    if force_k > states.k:
        raise InvalidParams(
            f"cannot pin K={force_k}: only {states.k} states", k=states.k, force_k=force_k
        )
    return StateMatrix(rows=states.rows[:force_k], tau=states.tau, source_roi=states.source_roi)
