import numpy as np
import pytest

from app.core.errors import InvalidSpec, NotPositiveDefinite
from app.models import Label, Network
from app.services.connectivity_service import build_graph, network_rankings, sample_covariance, top_roi_frequency
from app.services.synth_service import (
    diagonal_loading,
    gen_cohort_from_precision,
    gen_signal,
    gen_two_class_cohort,
    ground_truth_partial_correlation,
    hub_precision,
    make_spec,
)


def chain_precision(n, weight=0.4):
    precision = np.eye(n)
    for i in range(n - 1):
        precision[i, i + 1] = precision[i + 1, i] = -weight
    return precision


def test_sine_amplitude_bound():
    ts = gen_signal(make_spec("sine", params={"period": 40, "amplitude": 1}, n_timepoints=400))
    assert len(ts) == 400
    assert np.abs(ts.values).max() <= 1.0


def test_ar1_without_memory_is_white():
    x = gen_signal(make_spec("ar1", params={"phi": 0.0}, n_timepoints=5000, seed=4)).values
    x = x - x.mean()
    assert abs(np.dot(x[:-1], x[1:]) / np.dot(x, x)) < 0.05


def test_lorenz_stays_on_attractor():
    x = gen_signal(make_spec("lorenz_x", params={"dt": 0.01}, n_timepoints=3000, seed=2)).values
    assert np.all(np.isfinite(x))
    assert np.abs(x).max() < 25


def test_signals_are_pure_functions_of_seed():
    spec = make_spec("gaussian_noise", n_timepoints=64, seed=9)
    assert np.array_equal(gen_signal(spec).values, gen_signal(spec).values)
    other = make_spec("gaussian_noise", n_timepoints=64, seed=10)
    assert not np.array_equal(gen_signal(spec).values, gen_signal(other).values)


@pytest.mark.parametrize(
    "kind, kwargs",
    [
        ("ar1", {"params": {"phi": 1.0}}),
        ("sine", {"params": {"period": 0.0}}),
        ("sine", {"params": {"period": float("nan")}}),
        ("sine", {"n_timepoints": 4}),
        ("brownian", {}),
        ("var_precision", {}),
    ],
)
def test_invalid_specs(kind, kwargs):
    with pytest.raises(InvalidSpec):
        gen_signal(make_spec(kind, **kwargs))


def test_identity_precision_has_no_partial_correlation():
    assert not ground_truth_partial_correlation(np.eye(5)).any()


def test_chain_has_structural_zeros():
    rho = ground_truth_partial_correlation(chain_precision(6))
    for i in range(6):
        for j in range(6):
            if abs(i - j) > 1:
                assert rho[i, j] == 0.0
    assert rho[0, 1] == pytest.approx(0.4)


def test_precision_must_be_positive_definite():
    with pytest.raises(NotPositiveDefinite):
        gen_cohort_from_precision(chain_precision(18, 0.9), np.eye(18), 1, 20, seed=0)
    asymmetric = np.eye(18)
    asymmetric[0, 1] = 0.1
    with pytest.raises(NotPositiveDefinite):
        gen_cohort_from_precision(asymmetric, np.eye(18), 1, 20, seed=0)
    with pytest.raises(InvalidSpec):
        gen_cohort_from_precision(np.eye(5), np.eye(5), 1, 20, seed=0)


def test_estimated_partial_correlation_converges():
    precision = chain_precision(18)
    ds = gen_cohort_from_precision(precision, precision, 1, 80000, seed=3)
    assert ds.networks == (Network.CEREBELLUM,)
    estimated = build_graph(ds.subjects[0], Network.CEREBELLUM, shrinkage=0.0).adjacency
    assert np.abs(estimated - ground_truth_partial_correlation(precision)).max() < 0.02


def test_sample_covariance_converges_at_monte_carlo_rate():
    precision = chain_precision(18)
    covariance = np.linalg.inv(precision)
    scale = np.sqrt(2.0) * covariance.diagonal().max()
    errors = {}
    for n_timepoints in (500, 8000):
        runs = []
        for seed in range(4):
            ds = gen_cohort_from_precision(precision, precision, 1, n_timepoints, seed=seed)
            estimate = sample_covariance(ds.subjects[0].series_matrix(Network.CEREBELLUM))
            runs.append(np.abs(estimate - covariance).max())
        assert max(runs) <= 5.0 * scale / np.sqrt(n_timepoints)
        errors[n_timepoints] = np.mean(runs)
    assert 2.5 <= errors[500] / errors[8000] <= 6.5


def test_cohort_layout_and_determinism():
    kwargs = dict(separation=0.5, subjects_per_class=3, n_timepoints=30, networks=(Network.OCCIPITAL,), seed=8)
    ds = gen_two_class_cohort(**kwargs)
    assert [s.subject_id for s in ds.subjects] == ["hc001", "hc002", "hc003", "mci001", "mci002", "mci003"]
    assert ds.label_counts() == {Label.CLASS0: 3, Label.CLASS1: 3}
    assert ds.subjects[0].series_matrix(Network.OCCIPITAL).shape == (30, 22)
    assert ds.subjects[0].roi_labels(Network.OCCIPITAL)[0] == "occipital_01"
    assert ds.metadata["hub_roi"] == {"occipital": 11}
    assert ds.metadata["separation"] == 0.5

    parallel = gen_two_class_cohort(**kwargs, n_jobs=2)
    for a, b in zip(ds.subjects, parallel.subjects):
        assert np.array_equal(a.series_matrix(Network.OCCIPITAL), b.series_matrix(Network.OCCIPITAL))


def test_roi_count_selects_network():
    ds = gen_two_class_cohort(separation=1.0, subjects_per_class=1, n_timepoints=20, n=21)
    assert ds.networks == (Network.FRONTOPARIETAL,)
    with pytest.raises(InvalidSpec):
        gen_two_class_cohort(separation=1.0, subjects_per_class=1, n_timepoints=20, n=19)
    with pytest.raises(InvalidSpec):
        gen_two_class_cohort(separation=-0.1, subjects_per_class=1, n_timepoints=20)


def test_diagonal_loading_restores_definiteness(caplog):
    precision = hub_precision(18, 9, 16, 0.225, scale=-2.0)
    loaded, shift = diagonal_loading(precision)
    assert shift > 0
    assert np.linalg.eigvalsh(loaded)[0] > 0

    ds = gen_two_class_cohort(
        separation=3.0, subjects_per_class=1, n_timepoints=20, networks=(Network.CEREBELLUM,)
    )
    assert ds.metadata["diagonal_loading"]["cerebellum"] > 0
    assert "diagonal loaded" in caplog.text


def test_hub_precision_star():
    precision = hub_precision(22, 5, 16, 0.225)
    assert np.count_nonzero(precision[5]) == 17
    assert precision[5, 0] == -0.225
    with pytest.raises(InvalidSpec):
        hub_precision(22, 22, 16, 0.225)


def test_hub_frequency_separates_classes():
    ds = gen_two_class_cohort(
        separation=1.0, subjects_per_class=20, n_timepoints=190, networks=(Network.CEREBELLUM,), seed=7
    )
    hub = ds.metadata["hub_roi"]["cerebellum"]
    rankings = network_rankings(ds.subjects, Network.CEREBELLUM, shrinkage=0.0, edge_threshold=0.2)
    table = top_roi_frequency(rankings, k=5, labels=[s.label for s in ds.subjects])
    assert table.fraction_of(Label.CLASS0, hub) >= 0.8
    assert table.fraction_of(Label.CLASS1, hub) <= 0.3
