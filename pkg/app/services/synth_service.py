"""Ground-truth signal and cohort generators.

Every generator is a pure function of its arguments and seed. Per-subject
streams come from `default_rng([seed, subject_index])`, so subjects can be
generated in any order.
"""

import enum
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, ValidationError, field_validator
from scipy.linalg import cho_factor, cho_solve, cholesky, LinAlgError

from app.core.errors import InvalidSpec, NotPositiveDefinite
from app.models import ALL_NETWORKS, CohortDataset, Label, Network, RoiTimeSeries, Subject

from .connectivity_service import partial_correlation

logger = logging.getLogger(__name__)

LORENZ_SIGMA = 10.0
LORENZ_RHO = 28.0
LORENZ_BETA = 8.0 / 3.0
LORENZ_TRANSIENT = 1000
LOADING_MARGIN = 0.1


class GeneratorKind(str, enum.Enum):
    SINE = "sine"
    AR1 = "ar1"
    GAUSSIAN_NOISE = "gaussian_noise"
    LORENZ_X = "lorenz_x"
    VAR_PRECISION = "var_precision"
    TWO_CLASS_COHORT = "two_class_cohort"


SIGNAL_KINDS = {
    GeneratorKind.SINE,
    GeneratorKind.AR1,
    GeneratorKind.GAUSSIAN_NOISE,
    GeneratorKind.LORENZ_X,
}


class GeneratorSpec(BaseModel):
    kind: GeneratorKind
    params: Dict[str, float] = {}
    seed: int = 0
    n_timepoints: int = Field(default=400, ge=8)
    n_rois: Optional[int] = Field(default=None, ge=2)

    @field_validator("params")
    @classmethod
    def _finite(cls, value: Dict[str, float]) -> Dict[str, float]:
        for key, v in value.items():
            if not np.isfinite(v):
                raise ValueError(f"parameter {key} is not finite")
        return value

    def param(self, name: str, default: float) -> float:
        return float(self.params.get(name, default))


def make_spec(kind: str, **kwargs) -> GeneratorSpec:
    try:
        return GeneratorSpec(kind=kind, **kwargs)
    except ValidationError as e:
        raise InvalidSpec(f"invalid generator spec: {e.error_count()} error(s)", kind=kind) from e


def _lorenz_derivative(state: np.ndarray) -> np.ndarray:
    x, y, z = state
    return np.array(
        [LORENZ_SIGMA * (y - x), x * (LORENZ_RHO - z) - y, x * y - LORENZ_BETA * z]
    )


def lorenz_trajectory(n: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Classical fixed-step RK4; the first LORENZ_TRANSIENT steps are discarded."""
    state = np.array([1.0, 1.0, 1.0]) + 0.01 * rng.standard_normal(3)
    out = np.empty((n, 3))
    for step in range(LORENZ_TRANSIENT + n):
        k1 = _lorenz_derivative(state)
        k2 = _lorenz_derivative(state + 0.5 * dt * k1)
        k3 = _lorenz_derivative(state + 0.5 * dt * k2)
        k4 = _lorenz_derivative(state + dt * k3)
        state = state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if step >= LORENZ_TRANSIENT:
            out[step - LORENZ_TRANSIENT] = state
    return out


def gen_signal(spec: GeneratorSpec) -> RoiTimeSeries:
    if spec.kind not in SIGNAL_KINDS:
        raise InvalidSpec(f"{spec.kind.value} is not a single-signal generator")
    n = spec.n_timepoints
    rng = np.random.default_rng(spec.seed)
    t = np.arange(n, dtype=float)

    if spec.kind is GeneratorKind.SINE:
        period = spec.param("period", 40.0)
        if period <= 0:
            raise InvalidSpec("sine period must be > 0")
        values = spec.param("amplitude", 1.0) * np.sin(2.0 * np.pi * t / period + spec.param("phase", 0.0))
    elif spec.kind is GeneratorKind.AR1:
        phi = spec.param("phi", 0.5)
        if abs(phi) >= 1:
            raise InvalidSpec(f"ar1 needs |phi| < 1, got {phi}")
        noise = spec.param("sigma", 1.0) * rng.standard_normal(n)
        values = np.empty(n)
        values[0] = noise[0] / np.sqrt(1.0 - phi**2)
        for i in range(1, n):
            values[i] = phi * values[i - 1] + noise[i]
    elif spec.kind is GeneratorKind.GAUSSIAN_NOISE:
        values = spec.param("mean", 0.0) + spec.param("sigma", 1.0) * rng.standard_normal(n)
    else:
        dt = spec.param("dt", 0.01)
        if dt <= 0:
            raise InvalidSpec("lorenz dt must be > 0")
        values = lorenz_trajectory(n, dt, rng)[:, 0]

    return RoiTimeSeries(roi_id=0, roi_label=spec.kind.value, values=values)


def check_precision(precision: np.ndarray) -> np.ndarray:
    precision = np.asarray(precision, dtype=float)
    if precision.ndim != 2 or precision.shape[0] != precision.shape[1]:
        raise NotPositiveDefinite(f"precision must be square, got shape {precision.shape}")
    if not np.array_equal(precision, precision.T):
        raise NotPositiveDefinite("precision matrix is not symmetric")
    try:
        cho_factor(precision)
    except LinAlgError as e:
        raise NotPositiveDefinite(f"precision matrix is not positive definite: {e}") from e
    return precision


def ground_truth_partial_correlation(precision: np.ndarray) -> np.ndarray:
    return partial_correlation(check_precision(precision))


def roi_labels_for(network: Network) -> List[str]:
    return [f"{network.value}_{i + 1:02d}" for i in range(network.roi_count)]


def _covariance_factor(precision: np.ndarray) -> np.ndarray:
    covariance = cho_solve(cho_factor(precision), np.eye(precision.shape[0]))
    covariance = (covariance + covariance.T) / 2.0
    return cholesky(covariance, lower=True)


def _sample_subject(
    factors: Dict[Network, np.ndarray], n_timepoints: int, seed: int, index: int
) -> Dict[Network, List[RoiTimeSeries]]:
    rng = np.random.default_rng([seed, index])
    networks = {}
    for network, factor in factors.items():
        data = rng.standard_normal((n_timepoints, factor.shape[0])) @ factor.T
        labels = roi_labels_for(network)
        networks[network] = [
            RoiTimeSeries(roi_id=i, roi_label=labels[i], values=data[:, i], network=network)
            for i in range(factor.shape[0])
        ]
    return networks


def _cohort(
    precisions: Dict[Label, Dict[Network, np.ndarray]],
    subjects_per_class: int,
    n_timepoints: int,
    seed: int,
    n_jobs: int = 1,
    metadata: Optional[dict] = None,
) -> CohortDataset:
    if subjects_per_class < 1:
        raise InvalidSpec("subjects_per_class must be >= 1")
    if n_timepoints < 8:
        raise InvalidSpec(f"N must be >= 8, got {n_timepoints}")
    factors = {
        label: {network: _covariance_factor(p) for network, p in per_network.items()}
        for label, per_network in precisions.items()
    }
    plan = [
        (label, j, index)
        for index, (label, j) in enumerate(
            (label, j) for label in (Label.CLASS0, Label.CLASS1) for j in range(subjects_per_class)
        )
    ]
    sampled = Parallel(n_jobs=n_jobs)(
        delayed(_sample_subject)(factors[label], n_timepoints, seed, index) for label, _, index in plan
    )
    subjects = tuple(
        Subject(f"{'hc' if label is Label.CLASS0 else 'mci'}{j + 1:03d}", label, networks)
        for (label, j, _), networks in zip(plan, sampled)
    )
    networks = tuple(next(iter(precisions.values())).keys())
    return CohortDataset(subjects, n_timepoints, networks, dict(metadata or {}))


def gen_cohort_from_precision(
    p_class0: np.ndarray,
    p_class1: np.ndarray,
    subjects_per_class: int,
    n_timepoints: int,
    seed: int,
    network: Optional[Network] = None,
    n_jobs: int = 1,
) -> CohortDataset:
    """Gaussian cohort whose class-c ROI series have covariance inv(P_c)."""
    p0, p1 = check_precision(p_class0), check_precision(p_class1)
    if p0.shape != p1.shape:
        raise InvalidSpec(f"precision shapes differ: {p0.shape} vs {p1.shape}")
    if network is None:
        try:
            network = Network.for_roi_count(p0.shape[0])
        except ValueError as e:
            raise InvalidSpec(str(e)) from e
    elif network.roi_count != p0.shape[0]:
        raise InvalidSpec(f"{network.value} has {network.roi_count} ROIs, precision is {p0.shape[0]}")
    return _cohort(
        {Label.CLASS0: {network: p0}, Label.CLASS1: {network: p1}},
        subjects_per_class,
        n_timepoints,
        seed,
        n_jobs,
    )


def hub_precision(n: int, hub_roi: int, spokes: int, hub_weight: float, scale: float = 1.0) -> np.ndarray:
    """Identity precision plus a star linking hub_roi to `spokes` other ROIs."""
    if not 0 <= hub_roi < n:
        raise InvalidSpec(f"hub_roi {hub_roi} outside 0..{n - 1}")
    leaves = [i for i in range(n) if i != hub_roi][:spokes]
    precision = np.eye(n)
    precision[hub_roi, leaves] = -hub_weight * scale
    precision[leaves, hub_roi] = -hub_weight * scale
    return precision


def diagonal_loading(precision: np.ndarray):
    """Shift the diagonal until the matrix is positive definite; returns (matrix, shift)."""
    smallest = float(np.linalg.eigvalsh(precision)[0])
    if smallest > 0:
        return precision, 0.0
    shift = -smallest + LOADING_MARGIN
    return precision + shift * np.eye(precision.shape[0]), shift


def gen_two_class_cohort(
    separation: float,
    subjects_per_class: int,
    n_timepoints: int,
    n: Optional[int] = None,
    seed: int = 0,
    networks: Optional[Sequence[Network]] = None,
    hub_roi: Optional[int] = None,
    spokes: int = 16,
    hub_weight: float = 0.225,
    n_jobs: int = 1,
) -> CohortDataset:
    """Two classes differing only in the hub ROI's precision entries.

    Class1's hub entries are scaled by (1 - separation): 0 leaves the classes
    identical, 1 removes the hub's direct connections.
    """
    if separation < 0:
        raise InvalidSpec(f"separation must be >= 0, got {separation}")
    if networks is None:
        if n is None:
            networks = ALL_NETWORKS
        else:
            try:
                networks = (Network.for_roi_count(n),)
            except ValueError as e:
                raise InvalidSpec(str(e)) from e
    elif n is not None and any(net.roi_count != n for net in networks):
        raise InvalidSpec(f"n={n} does not match the ROI count of every requested network")

    precisions: Dict[Label, Dict[Network, np.ndarray]] = {Label.CLASS0: {}, Label.CLASS1: {}}
    hubs: Dict[str, int] = {}
    loading: Dict[str, float] = {}
    for network in networks:
        size = network.roi_count
        hub = size // 2 if hub_roi is None else hub_roi
        base = hub_precision(size, hub, spokes, hub_weight)
        perturbed, shift = diagonal_loading(
            hub_precision(size, hub, spokes, hub_weight, scale=1.0 - separation)
        )
        if shift:
            logger.warning(
                "%s: class1 precision lost positive definiteness, diagonal loaded by %.4f",
                network.value,
                shift,
            )
            loading[network.value] = shift
        precisions[Label.CLASS0][network] = check_precision(base)
        precisions[Label.CLASS1][network] = check_precision(perturbed)
        hubs[network.value] = hub

    metadata = {
        "generator": GeneratorKind.TWO_CLASS_COHORT.value,
        "separation": separation,
        "seed": seed,
        "hub_roi": hubs,
        "diagonal_loading": loading,
    }
    return _cohort(precisions, subjects_per_class, n_timepoints, seed, n_jobs, metadata)
