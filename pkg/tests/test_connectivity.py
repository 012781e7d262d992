import numpy as np
import pytest

from app.core.errors import InvalidParams, NonPositiveDiagonal, SingularCovariance
from app.models import BrainGraph, Label, Network, RoiTimeSeries, Subject
from app.services.connectivity_service import (
    build_graph,
    degree_and_rank,
    eigen_features,
    partial_correlation,
    precision_matrix,
    regularize,
    sample_covariance,
    spectrum,
    top_roi_frequency,
)
from app.services.synth_service import hub_precision


def subject_from(data, network=Network.CEREBELLUM, subject_id="s1"):
    rois = [RoiTimeSeries(i, f"roi{i}", data[:, i], network) for i in range(data.shape[1])]
    return Subject(subject_id, Label.CLASS0, {network: rois})


def residual_partial_correlation(data, i, j):
    """Correlation of the residuals of columns i and j after regressing out the rest."""
    others = [c for c in range(data.shape[1]) if c not in (i, j)]
    design = np.column_stack([np.ones(len(data)), data[:, others]])
    residuals = []
    for column in (i, j):
        coef, *_ = np.linalg.lstsq(design, data[:, column], rcond=None)
        residuals.append(data[:, column] - design @ coef)
    return np.corrcoef(residuals)[0, 1]


def test_covariance_of_identical_and_orthogonal_columns():
    x = np.array([1.0, 3.0, -2.0, 5.0])
    cov = sample_covariance(np.column_stack([x, x]))
    assert cov[0, 0] == cov[1, 1] == cov[0, 1] == cov[1, 0]

    cov = sample_covariance(np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]))
    assert cov[0, 1] == 0.0 and cov[0, 0] > 0


def test_covariance_matches_two_pass_loop(rng):
    data = rng.normal(size=(200, 34))
    means = [sum(data[:, c]) / 200 for c in range(34)]
    expected = np.empty((34, 34))
    for a in range(34):
        for b in range(34):
            expected[a, b] = sum((data[:, a] - means[a]) * (data[:, b] - means[b])) / 199
    np.testing.assert_allclose(sample_covariance(data), expected, atol=1e-12, rtol=0)


def test_precision_examples():
    np.testing.assert_allclose(precision_matrix(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(precision_matrix(np.diag([4.0, 1.0])), np.diag([0.25, 1.0]))
    expected = np.array([[1.0, -0.5], [-0.5, 1.0]]) / 0.75
    np.testing.assert_allclose(precision_matrix(np.array([[1.0, 0.5], [0.5, 1.0]])), expected)


def test_precision_inverts_regularized_covariance(rng):
    cov = sample_covariance(rng.normal(size=(40, 21)))
    p = precision_matrix(cov, shrinkage=0.1)
    assert np.array_equal(p, p.T)
    assert np.abs(p @ regularize(cov, 0.1) - np.eye(21)).max() < 1e-8


def test_singular_covariance_reports_pivot():
    cov = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(SingularCovariance) as info:
        precision_matrix(cov, shrinkage=0.0)
    assert info.value.pivot == 2
    assert "smallest_eigenvalue" in info.value.context

    precision_matrix(cov, shrinkage=0.1)


@pytest.mark.parametrize("shrinkage", [-0.1, 1.0])
def test_shrinkage_range(shrinkage):
    with pytest.raises(InvalidParams):
        regularize(np.eye(2), shrinkage)


def test_partial_correlation_of_diagonal_precision():
    rho = partial_correlation(np.diag([2.0, 3.0, 0.5]))
    assert not rho.any()
    with pytest.raises(NonPositiveDiagonal):
        partial_correlation(np.diag([1.0, 0.0]))


def test_matches_residual_regression(rng):
    mixing = rng.normal(size=(6, 6))
    data = rng.normal(size=(10000, 6)) @ mixing
    rho = partial_correlation(precision_matrix(sample_covariance(data)))
    for i in range(6):
        for j in range(i + 1, 6):
            assert rho[i, j] == pytest.approx(residual_partial_correlation(data, i, j), abs=1e-6)
    assert np.abs(rho).max() <= 1 + 1e-9


def test_chain_endpoints_are_conditionally_independent(rng):
    x = rng.normal(size=50000)
    y = x + rng.normal(size=50000)
    z = y + rng.normal(size=50000)
    data = np.column_stack([x, y, z])
    rho = partial_correlation(precision_matrix(sample_covariance(data)))
    assert abs(rho[0, 2]) < 0.02
    assert np.corrcoef(x, z)[0, 1] > 0.3


def test_partial_correlation_scale_invariant(rng):
    data = rng.normal(size=(300, 5)) @ rng.normal(size=(5, 5))
    scaled = data * np.array([1.0, 7.5, 0.01, 3.0, 1.0])
    base = partial_correlation(precision_matrix(sample_covariance(data)))
    moved = partial_correlation(precision_matrix(sample_covariance(scaled)))
    np.testing.assert_allclose(moved, base, atol=1e-10, rtol=0)


def test_build_graph_sizes(six_network_cohort, cerebellum_cohort):
    g = build_graph(cerebellum_cohort.subjects[0], Network.CEREBELLUM)
    assert g.adjacency.shape == (18, 18)
    assert g.roi_labels == tuple(cerebellum_cohort.subjects[0].roi_labels(Network.CEREBELLUM))

    # 24 timepoints for 34 ROIs: only the shrinkage keeps this invertible
    g = build_graph(six_network_cohort.subjects[0], Network.DEFAULT_MODE, shrinkage=0.5)
    assert g.adjacency.shape == (34, 34)
    assert np.array_equal(g.adjacency, g.adjacency.T)
    assert not np.diag(g.adjacency).any()


def test_build_graph_recovers_sparse_support(rng):
    precision = hub_precision(18, 9, 16, 0.225)
    data = rng.multivariate_normal(np.zeros(18), np.linalg.inv(precision), size=20000)
    g = build_graph(subject_from(data), Network.CEREBELLUM, shrinkage=0.0)

    upper = np.triu_indices(18, k=1)
    truth = precision[upper] != 0
    found = np.abs(g.adjacency[upper]) > 0.05
    hits = np.sum(truth & found)
    assert hits / found.sum() >= 0.95
    assert hits / truth.sum() >= 0.95


def test_constant_roi_is_stabilized(rng, caplog):
    data = rng.normal(size=(60, 18))
    data[:, 4] = 2.0
    g = build_graph(subject_from(data), Network.CEREBELLUM)
    assert g.stabilized_rois == (4,)
    assert not g.adjacency[4].any()
    assert "constant" in caplog.text


def test_pearson_mode(rng):
    g = build_graph(subject_from(rng.normal(size=(50, 18))), Network.CEREBELLUM, method="pearson")
    assert not np.diag(g.adjacency).any()
    assert np.abs(g.adjacency).max() <= 1.0
    with pytest.raises(InvalidParams):
        build_graph(subject_from(rng.normal(size=(50, 18))), Network.CEREBELLUM, method="spectral")


def test_missing_network_rejected(rng):
    with pytest.raises(InvalidParams):
        build_graph(subject_from(rng.normal(size=(50, 18))), Network.OCCIPITAL)


def _graph(adjacency):
    adjacency = np.asarray(adjacency, dtype=float)
    return BrainGraph(adjacency, tuple(f"r{i}" for i in range(len(adjacency))))


def test_eigen_features_of_zero_graph():
    features = eigen_features(_graph(np.zeros((4, 4))))
    assert not features.eigenvalues.any()
    assert features.leading_vector.tolist() == [1.0, 0.0, 0.0, 0.0]


def test_eigen_features_two_nodes():
    features = eigen_features(_graph([[0.0, 0.4], [0.4, 0.0]]))
    np.testing.assert_allclose(features.eigenvalues, [0.4, -0.4])
    np.testing.assert_allclose(features.leading_vector, [2**-0.5, 2**-0.5])


def test_eigen_features_random_symmetric(rng):
    a = rng.normal(size=(34, 34))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 0.0)
    features = eigen_features(_graph(a))

    assert np.all(np.diff(features.eigenvalues) <= 0)
    assert abs(features.eigenvalues.sum()) < 1e-9
    v = features.leading_vector
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    assert np.abs(a @ v - features.eigenvalues[0] * v).max() < 1e-8
    assert v[np.argmax(np.abs(v))] > 0
    np.testing.assert_array_equal(eigen_features(_graph(a)).leading_vector, v)


def test_spectrum_reconstructs_random_symmetric_matrices():
    rng = np.random.default_rng(34)
    for _ in range(100):
        n = int(rng.integers(2, 35))
        a = rng.normal(size=(n, n))
        a = (a + a.T) / 2
        if rng.random() < 0.5:
            np.fill_diagonal(a, 0.0)
        values, vectors = spectrum(a)

        assert np.all(np.diff(values) <= 0)
        assert np.abs(a - vectors @ np.diag(values) @ vectors.T).max() <= 1e-8
        assert values.sum() == pytest.approx(np.trace(a), abs=1e-9)
        np.testing.assert_allclose(vectors.T @ vectors, np.eye(n), atol=1e-10)
        leading = eigen_features(_graph(a)).leading_vector
        assert abs(leading @ vectors[:, 0]) == pytest.approx(1.0, abs=1e-10)


def test_degree_extremes(rng):
    a = rng.uniform(0.1, 0.9, size=(6, 6))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 0.0)
    assert not degree_and_rank(_graph(a), t=1.0).degrees.any()
    assert (degree_and_rank(_graph(a), t=0.0).degrees == 5).all()


def test_degree_ties_broken_by_index():
    a = np.zeros((4, 4))
    for i, j in [(1, 2), (1, 0), (2, 3)]:
        a[i, j] = a[j, i] = 0.5
    ranking = degree_and_rank(_graph(a), t=0.2, subject_id="s")
    assert ranking.degrees.tolist() == [1, 2, 2, 1]
    assert ranking.order.tolist() == [1, 2, 0, 3]


def test_signed_threshold_drops_negative_edges():
    a = np.array([[0.0, -0.5], [-0.5, 0.0]])
    assert degree_and_rank(_graph(a), t=0.2).degrees.tolist() == [1, 1]
    assert degree_and_rank(_graph(a), t=0.2, signed=True).degrees.tolist() == [0, 0]


def test_ranking_follows_roi_permutation(rng):
    a = rng.normal(scale=0.3, size=(12, 12))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 0.0)
    perm = rng.permutation(12)
    base = degree_and_rank(_graph(a), t=0.2)
    permuted = degree_and_rank(_graph(a[np.ix_(perm, perm)]), t=0.2)
    assert np.array_equal(permuted.degrees, base.degrees[perm])


def test_hub_ranks_first():
    g = _graph(partial_correlation(hub_precision(22, 5, 16, 0.225)))
    ranking = degree_and_rank(g, t=0.1)
    assert ranking.order[0] == 5
    assert ranking.degrees[5] == 16


def _ranking_with_top(top_roi, n=10, subject_id=None):
    a = np.zeros((n, n))
    others = [i for i in range(n) if i != top_roi][:3]
    a[top_roi, others] = a[others, top_roi] = 0.5
    return degree_and_rank(_graph(a), t=0.2, subject_id=subject_id)


def test_identical_rankings_are_unanimous():
    rankings = [_ranking_with_top(3) for _ in range(4)]
    table = top_roi_frequency(rankings, k=1, labels=[Label.CLASS0] * 4)
    first = table.for_label(Label.CLASS0)[0]
    assert (first.roi_id, first.count, first.class_size) == (3, 4, 4)
    assert first.fraction_text == "04/4"


def test_frequency_counts_per_class():
    rankings = [_ranking_with_top(5, subject_id=f"mci{i}") for i in range(40)]
    rankings += [_ranking_with_top(7, subject_id=f"mci{i}") for i in range(40, 50)]
    rankings += [_ranking_with_top(2, subject_id=f"hc{i}") for i in range(50)]
    labels = [Label.CLASS1] * 50 + [Label.CLASS0] * 50
    table = top_roi_frequency(rankings, k=1, labels=labels)

    assert table.fraction_of(Label.CLASS1, 5) == 40 / 50
    assert table.fraction_of(Label.CLASS1, 7) == 10 / 50
    assert table.fraction_of(Label.CLASS0, 2) == 1.0
    assert table.fraction_of(Label.CLASS0, 5) == 0.0
    counts = [entry.count for entry in table.for_label(Label.CLASS1)]
    assert counts == sorted(counts, reverse=True)
    assert len(table.degrees) == 100
    assert table.for_label(Label.CLASS1)[0].roi_label == "r5"


def test_frequency_preconditions():
    rankings = [_ranking_with_top(1)]
    with pytest.raises(InvalidParams):
        top_roi_frequency(rankings, k=11, labels=[Label.CLASS0])
    with pytest.raises(InvalidParams):
        top_roi_frequency(rankings, k=2, labels=[])
    assert top_roi_frequency([], k=3, labels=[]).frequency == []
