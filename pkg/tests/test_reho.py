import itertools

import numpy as np
import pandas as pd
import pytest
from scipy.stats import spearmanr

from app.core.errors import DegenerateInput, IoError, NoDefinedReho
from app.models import Label, Network, RehoMap, RoiTimeSeries, Subject, VoxelBlock
from app.services.reho_service import (
    apply_reho,
    kcc,
    load_voxel_block,
    rank_transform,
    reho_map,
    select_representative,
    write_reho_map,
)


def test_rank_transform_orders_and_mid_ranks():
    assert list(rank_transform([3.0, 1.0, 2.0])) == [3, 1, 2]
    assert list(rank_transform([5.0, 5.0, 1.0])) == [2.5, 2.5, 1]


def test_rank_sum_is_triangular(rng):
    for _ in range(200):
        n = int(rng.integers(2, 60))
        x = np.round(rng.normal(size=n), 1)
        assert rank_transform(x).sum() == n * (n + 1) / 2


def test_identical_rankings_are_concordant():
    rows = np.tile(np.arange(1, 191, dtype=float), (27, 1))
    assert kcc(rows) == 1.0


def test_hand_evaluated_example():
    rows = np.array([[1, 2, 3], [1, 2, 3], [3, 2, 1]], dtype=float)
    # totals 5, 6, 7 -> S = 2; denominator 9 * 24 = 216
    assert kcc(rows) == pytest.approx(24 / 216, abs=1e-15)


def test_matches_mean_spearman_identity(rng):
    """Without ties, W = ((m - 1) * mean pairwise Spearman + 1) / m."""
    m, n = 6, 40
    data = rng.normal(size=(m, n))
    ranks = np.array([rank_transform(row) for row in data])
    rhos = [spearmanr(data[i], data[j])[0] for i, j in itertools.combinations(range(m), 2)]
    expected = ((m - 1) * np.mean(rhos) + 1) / m
    assert kcc(ranks) == pytest.approx(expected, abs=1e-12)


def test_monotone_transform_invariance(rng):
    data = rng.normal(size=(5, 30))
    raw = np.array([rank_transform(row) for row in data])
    transformed = np.array([rank_transform(np.exp(3 * row) + 7) for row in data])
    assert kcc(raw) == kcc(transformed)


def test_independent_permutations_have_low_concordance(rng):
    rows = np.array([rng.permutation(190) + 1 for _ in range(27)], dtype=float)
    assert kcc(rows) < 0.15


def test_fully_tied_rows_are_degenerate():
    with pytest.raises(DegenerateInput):
        kcc(np.full((3, 10), 5.5))
    with pytest.raises(DegenerateInput):
        kcc(np.arange(1, 11, dtype=float)[None, :])


def test_single_voxel_is_undefined():
    block = VoxelBlock(np.arange(10, dtype=float).reshape(1, 1, 1, 10), "r")
    result = reho_map(block)
    assert not result.defined.any()
    assert result.w_values[0, 0, 0] == 0.0
    with pytest.raises(NoDefinedReho):
        select_representative(block, result)


def test_identical_increasing_block():
    series = np.tile(np.arange(20, dtype=float), (3, 3, 3, 1))
    block = VoxelBlock(series, "r")
    result = reho_map(block)
    assert result.defined.all()
    assert result.w_values[1, 1, 1] == 1.0
    rep = select_representative(block, result)
    assert np.array_equal(rep.values, np.arange(20, dtype=float))


def test_noise_block_center_is_low(rng):
    block = VoxelBlock(rng.normal(size=(3, 3, 3, 190)), "r")
    result = reho_map(block)
    assert 0.0 <= result.w_values.min() and result.w_values.max() <= 1.0
    assert result.w_values[1, 1, 1] < 0.15


def test_neighbors_only_drops_center(rng):
    block = VoxelBlock(rng.normal(size=(3, 3, 3, 30)), "r")
    with_center = reho_map(block)
    without = reho_map(block, neighbors_only=True)
    assert with_center.w_values[1, 1, 1] != without.w_values[1, 1, 1]


def test_threshold_at_mean_reho():
    series = np.array([[[[1.0, 2.0, 3.0]]], [[[7.0, 8.0, 0.0]]]])
    block = VoxelBlock(series, "r")
    result = RehoMap(
        w_values=np.array([[[0.9]], [[0.1]]]), defined=np.ones((2, 1, 1), dtype=bool), region_id="r"
    )
    rep = select_representative(block, result)
    assert np.array_equal(rep.values, [1.0, 2.0, 3.0])


def test_coherent_slab_becomes_candidates(rng):
    # 14 sine voxels: the whole x=0 face plus a cross in the middle slab
    signal = np.sin(2 * np.pi * np.arange(190) / 25)
    coherent = np.zeros((3, 3, 3), dtype=bool)
    coherent[0] = True
    for y, z in [(1, 1), (0, 1), (2, 1), (1, 0), (1, 2)]:
        coherent[1, y, z] = True
    noise = rng.normal(size=(3, 3, 3, 190))
    series = np.where(coherent[..., None], signal + 0.1 * noise, noise)
    block = VoxelBlock(series, "r")
    result = reho_map(block)

    assert coherent.sum() == 14
    assert (result.w_values[0] >= result.defined_values().mean()).all()
    rep = select_representative(block, result)
    assert np.corrcoef(rep.values, signal)[0, 1] > 0.8


def test_offset_shifts_representative(rng):
    series = rng.normal(size=(2, 2, 2, 15))
    block = VoxelBlock(series, "r")
    shifted = VoxelBlock(series + 4.0, "r")
    base = select_representative(block, reho_map(block))
    moved = select_representative(shifted, reho_map(shifted))
    assert len(base) == 15
    np.testing.assert_allclose(moved.values, base.values + 4.0, rtol=0, atol=1e-12)


def _write_block(path, series):
    rows = []
    for x, y, z in np.ndindex(*series.shape[:3]):
        rows.append([x, y, z, *series[x, y, z]])
    columns = ["x", "y", "z"] + [f"t{i}" for i in range(series.shape[3])]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format="%.17g")


def test_voxel_csv_and_map_output(tmp_path, rng):
    series = rng.normal(size=(2, 3, 2, 12))
    _write_block(tmp_path / "block.csv", series)
    block = load_voxel_block(tmp_path / "block.csv")
    assert block.dims == (2, 3, 2)
    assert np.array_equal(block.series, series)

    path = write_reho_map(reho_map(block), tmp_path / "map.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["x", "y", "z", "w", "defined"]
    assert len(frame) == 12


def test_repeated_voxel_coordinates_rejected(tmp_path, rng):
    _write_block(tmp_path / "block.csv", rng.normal(size=(2, 2, 1, 8)))
    frame = pd.read_csv(tmp_path / "block.csv")
    frame.loc[3, ["x", "y", "z"]] = [1, 0, 0]
    frame.to_csv(tmp_path / "block.csv", index=False)
    with pytest.raises(IoError) as info:
        load_voxel_block(tmp_path / "block.csv")
    assert info.value.context["duplicates"] == 1
    assert "(1, 0, 0)" in info.value.message


def test_apply_reho_replaces_only_rois_with_blocks(tmp_path, rng):
    rois = [RoiTimeSeries(i, f"r{i}", rng.normal(size=12), Network.CEREBELLUM) for i in range(18)]
    subject = Subject("hc001", Label.CLASS0, {Network.CEREBELLUM: rois})
    block_dir = tmp_path / "hc001" / "cerebellum"
    block_dir.mkdir(parents=True)
    identical = np.tile(np.linspace(0.0, 1.0, 12), (2, 2, 2, 1))
    _write_block(block_dir / "3.csv", identical)

    updated = apply_reho(subject, tmp_path)
    new_rois = updated.rois(Network.CEREBELLUM)
    np.testing.assert_allclose(new_rois[3].values, np.linspace(0.0, 1.0, 12), atol=1e-15)
    assert new_rois[3].roi_id == 3
    assert np.array_equal(new_rois[4].values, rois[4].values)
