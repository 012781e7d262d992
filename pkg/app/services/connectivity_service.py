"""Partial-correlation graphs per network, eigen features and degree rankings."""

import logging
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf

from app.core.errors import (
    ConvergenceFailure,
    InvalidParams,
    NonPositiveDiagonal,
    SingularCovariance,
)
from app.models import (
    BrainGraph,
    DegreeRanking,
    EigenFeatures,
    FrequencyEntry,
    Label,
    Network,
    RoiRanking,
    Subject,
)

logger = logging.getLogger(__name__)


def sample_covariance(series_matrix: np.ndarray) -> np.ndarray:
    """Unbiased covariance of the columns (N samples x n ROIs)."""
    data = np.asarray(series_matrix, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise InvalidParams(f"need an N x n matrix with N >= 2, got shape {data.shape}")
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / (data.shape[0] - 1)
    return (cov + cov.T) / 2.0


def regularize(cov: np.ndarray, shrinkage: float) -> np.ndarray:
    """(1 - lambda) * cov + lambda * diag(cov)."""
    if not 0.0 <= shrinkage < 1.0:
        raise InvalidParams(f"shrinkage must lie in [0, 1), got {shrinkage}")
    cov = np.asarray(cov, dtype=float)
    return (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov))


def precision_matrix(cov: np.ndarray, shrinkage: float = 0.0) -> np.ndarray:
    regularized = regularize(cov, shrinkage)
    factor, info = dpotrf(regularized, lower=0, clean=1)
    if info != 0:
        raise SingularCovariance(
            "regularized covariance is not positive definite; raise the shrinkage",
            pivot=int(info),
            smallest_eigenvalue=float(np.linalg.eigvalsh(regularized)[0]),
        )
    precision = cho_solve((factor, False), np.eye(regularized.shape[0]))
    return (precision + precision.T) / 2.0


def partial_correlation(precision: np.ndarray) -> np.ndarray:
    """rho_ij = -P_ij / sqrt(P_ii P_jj); zero diagonal."""
    precision = np.asarray(precision, dtype=float)
    diagonal = np.diag(precision)
    if np.any(diagonal <= 0):
        raise NonPositiveDiagonal(
            "precision matrix has a non-positive diagonal entry",
            index=int(np.flatnonzero(diagonal <= 0)[0]),
        )
    scale = np.sqrt(diagonal)
    rho = -precision / np.outer(scale, scale)
    np.fill_diagonal(rho, 0.0)
    return rho


def pearson_correlation(series_matrix: np.ndarray) -> np.ndarray:
    """Marginal correlation graph, kept only as a comparison mode."""
    cov = sample_covariance(series_matrix)
    scale = np.sqrt(np.diag(cov))
    scale[scale == 0] = 1.0
    corr = cov / np.outer(scale, scale)
    np.fill_diagonal(corr, 0.0)
    return corr


def _stabilize_constant(cov: np.ndarray, shrinkage: float):
    variances = np.diag(cov)
    constant = np.flatnonzero(variances <= 0)
    if constant.size == 0:
        return cov, ()
    positive = variances[variances > 0]
    reference = positive.mean() if positive.size else 1.0
    cov = cov.copy()
    cov[constant, constant] = max(shrinkage, 1e-6) * reference
    return cov, tuple(int(i) for i in constant)


def build_graph(
    subject: Subject,
    network: Network,
    shrinkage: float = 0.1,
    method: str = "partial",
) -> BrainGraph:
    if network not in subject.networks:
        raise InvalidParams(f"{network.value} not present", subject=subject.subject_id)
    data = subject.series_matrix(network)
    labels = tuple(subject.roi_labels(network))
    if method == "pearson":
        return BrainGraph(pearson_correlation(data), labels, network)
    if method != "partial":
        raise InvalidParams(f"unknown graph method {method!r}")

    cov, stabilized = _stabilize_constant(sample_covariance(data), shrinkage)
    if stabilized:
        logger.warning(
            "%s/%s: %d constant ROI series given stabilized variance",
            subject.subject_id,
            network.value,
            len(stabilized),
        )
    try:
        adjacency = partial_correlation(precision_matrix(cov, shrinkage))
    except (SingularCovariance, NonPositiveDiagonal) as e:
        raise e.with_context(subject=subject.subject_id, network=network.value)
    return BrainGraph(adjacency, labels, network, stabilized)


def spectrum(adjacency: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and the matching orthonormal eigenvectors as columns."""
    adjacency = np.asarray(adjacency, dtype=float)
    try:
        values, vectors = np.linalg.eigh(adjacency)
    except np.linalg.LinAlgError as e:
        raise ConvergenceFailure(
            f"eigendecomposition did not converge: {e}",
            condition=float(np.linalg.cond(adjacency)),
        ) from e
    order = np.argsort(-values, kind="stable")
    return values[order], vectors[:, order]


def eigen_features(g: BrainGraph) -> EigenFeatures:
    """Descending spectrum and the sign-fixed eigenvector of the largest eigenvalue."""
    values, vectors = spectrum(g.adjacency)
    leading = vectors[:, 0]
    leading = leading / np.linalg.norm(leading)
    pivot = int(np.argmax(np.abs(leading)))
    if leading[pivot] < 0:
        leading = -leading
    return EigenFeatures(eigenvalues=values, leading_vector=leading)


def degree_and_rank(
    g: BrainGraph, t: float = 0.2, signed: bool = False, subject_id: Optional[str] = None
) -> RoiRanking:
    """Degrees under |rho| > t (rho > t if signed); ties ranked by ROI index."""
    if t < 0:
        raise InvalidParams(f"edge threshold must be >= 0, got {t}")
    weights = g.adjacency if signed else np.abs(g.adjacency)
    edges = weights > t
    np.fill_diagonal(edges, False)
    degrees = edges.sum(axis=1).astype(int)
    order = np.lexsort((np.arange(g.n), -degrees))
    return RoiRanking(degrees=degrees, order=order, roi_labels=g.roi_labels, subject_id=subject_id)


def top_roi_frequency(
    rankings: Sequence[RoiRanking],
    k: int = 10,
    labels: Sequence[Label] = (),
) -> DegreeRanking:
    """Per class, how many subjects carry each ROI in their top-k."""
    if len(rankings) != len(labels):
        raise InvalidParams(f"{len(rankings)} rankings but {len(labels)} labels")
    if not rankings:
        return DegreeRanking(degrees={}, frequency=[], k=k)
    n = len(rankings[0].degrees)
    if not 1 <= k <= n:
        raise InvalidParams(f"top-k must lie in [1, {n}], got {k}")

    counts: Dict[Label, np.ndarray] = defaultdict(lambda: np.zeros(n, dtype=int))
    sizes: Dict[Label, int] = defaultdict(int)
    degrees: Dict[str, np.ndarray] = {}
    for i, (ranking, label) in enumerate(zip(rankings, labels)):
        label = Label(label)
        counts[label][ranking.top(k)] += 1
        sizes[label] += 1
        degrees[ranking.subject_id or str(i)] = ranking.degrees

    roi_labels = rankings[0].roi_labels or tuple(str(i) for i in range(n))
    frequency: List[FrequencyEntry] = []
    for label in sorted(counts):
        class_counts = counts[label]
        for roi in np.lexsort((np.arange(n), -class_counts)):
            frequency.append(
                FrequencyEntry(
                    label=label,
                    roi_id=int(roi),
                    roi_label=roi_labels[roi],
                    count=int(class_counts[roi]),
                    class_size=sizes[label],
                )
            )
    return DegreeRanking(degrees=degrees, frequency=frequency, k=k)


def network_rankings(
    subjects: Iterable[Subject],
    network: Network,
    shrinkage: float = 0.1,
    edge_threshold: float = 0.2,
    signed: bool = False,
    method: str = "partial",
) -> List[RoiRanking]:
    return [
        degree_and_rank(build_graph(s, network, shrinkage, method), edge_threshold, signed, s.subject_id)
        for s in subjects
    ]
