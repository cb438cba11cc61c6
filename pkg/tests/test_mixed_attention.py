import numpy as np
import pytest

from errors import DomainError
from mixed_attention import (
    RegionLayout,
    TokenGrid,
    attend_mixed,
    attend_reference,
    pairwise_phase_errors,
    phase_consistency_error,
    pool_hr_keys,
    toy_layout,
    upsample_mask,
)
from rope_core import score_relative, split_groups


def _qkv(rng, n, dim=8, channels=3):
    return rng.standard_normal((n, dim)), rng.standard_normal((n, dim)), rng.standard_normal((n, channels))


def test_toy_layout_tokens(toy):
    assert toy.num_tokens == 11
    np.testing.assert_array_equal(toy.physical[:, 0], [0, 2, 4, 6, 7, 8, 9, 10, 12, 14, 16])
    np.testing.assert_array_equal(toy.is_hr, [False] * 3 + [True] * 4 + [False] * 4)
    np.testing.assert_array_equal(toy.cell[:, 0], [0, 1, 2, 3, 3, 4, 4, 5, 6, 7, 8])


@pytest.mark.parametrize("scheme,expected", [("pi-lr", 5.0), ("pi-hr", 8.0), ("crpa", 0.0)])
def test_phase_consistency_on_toy(toy, scheme, expected):
    assert phase_consistency_error(toy, scheme) == pytest.approx(expected)


@pytest.mark.parametrize("scheme", ["pi-lr", "pi-hr", "ntk", "pi-ntk", "yarn", "crpa"])
def test_closed_form_matches_brute_force(scheme):
    layout = RegionLayout.from_boxes((6, 5), 2, [((1, 2), (3, 4))])
    brute = pairwise_phase_errors(layout, scheme).max()
    assert phase_consistency_error(layout, scheme) == pytest.approx(brute, abs=1e-12)


def test_crpa_is_phase_consistent_in_2d():
    layout = RegionLayout.from_boxes((5, 7), 3, [((0, 1), (2, 4)), ((3, 5), (5, 7))])
    assert phase_consistency_error(layout, "crpa") == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("scheme", ["pi-lr", "pi-hr", "crpa"])
def test_uniform_layout_matches_reference(rng, scheme):
    shape = (4, 3)
    groups = split_groups(8, 2)
    q, k, v = _qkv(rng, 12)
    mixed = attend_mixed(RegionLayout.uniform(shape), q, k, v, scheme, groups)
    reference = attend_reference(TokenGrid(shape), q, k, v, groups)
    np.testing.assert_allclose(mixed.values, reference.values, atol=1e-12)


def test_crpa_key_positions_per_query_region(rng, toy):
    groups = split_groups(8, 1)
    q, k, v = _qkv(rng, toy.num_tokens)
    out = attend_mixed(toy, q, k, v, "crpa", groups, keep_scores=True)
    np.testing.assert_allclose(out.key_positions["hr"][:, 0], toy.physical[:, 0])
    np.testing.assert_allclose(out.key_positions["lr"][:, 0], [0, 1, 2, 5, 6, 7, 8, 3, 4])
    assert out.weights["hr"].shape == (4, 11)
    assert out.weights["lr"].shape == (7, 9)


def _native_logits(q0, k0, schedule, deltas):
    scale = 1.0 / np.sqrt(len(q0))
    return scale * np.array([[score_relative(q0, k0, d, schedule) for d in row] for row in deltas])


@pytest.mark.parametrize("scheme,lr_native,hr_native", [
    ("pi-lr", True, False),
    ("pi-hr", False, True),
    ("crpa", True, True),
])
def test_equal_physical_offsets_score_equally(rng, toy, scheme, lr_native, hr_native):
    groups = split_groups(8, 1)
    q0, k0 = rng.standard_normal(8), rng.standard_normal(8)
    n = toy.num_tokens
    q, k, v = np.tile(q0, (n, 1)), np.tile(k0, (n, 1)), rng.standard_normal((n, 3))
    out = attend_mixed(toy, q, k, v, scheme, groups, keep_scores=True)
    phys = toy.physical[:, 0]

    hr_offsets = phys[None, :] - phys[toy.hr_ids, None]
    hr_logits = out.logits["hr"]
    for d in np.unique(hr_offsets):
        same = hr_logits[hr_offsets == d]
        np.testing.assert_allclose(same, same[0], atol=1e-12)
    hr_expected = _native_logits(q0, k0, groups[0].schedule, hr_offsets)
    assert np.allclose(hr_logits, hr_expected, atol=1e-12) == hr_native

    lr = toy.lr_ids
    lr_offsets = (phys[None, lr] - phys[lr, None]) / toy.ratio
    lr_logits = out.logits["lr"][:, : len(lr)] if scheme == "crpa" else out.logits["lr"][:, lr]
    lr_expected = _native_logits(q0, k0, groups[0].schedule, lr_offsets)
    assert np.allclose(lr_logits, lr_expected, atol=1e-12) == lr_native


@pytest.mark.parametrize("shape,ratio,box", [
    ((9,), 2, ((3,), (5,))),
    ((4, 4), 2, ((1, 1), (3, 3))),
    ((5, 6), 3, ((0, 2), (2, 5))),
])
def test_mean_pooling_conserves_group_means(rng, shape, ratio, box):
    layout = RegionLayout.from_boxes(shape, ratio, [box])
    k, v = rng.standard_normal((layout.num_tokens, 8)), rng.standard_normal((layout.num_tokens, 3))
    k_pool, v_pool, _, cells = pool_hr_keys(layout, k, v, "mean")
    assert len(cells) == len(layout.hr_ids) // ratio ** layout.ndim
    for g, cell in enumerate(cells):
        ids = layout.hr_ids[np.all(layout.cell[layout.hr_ids] == cell, axis=1)]
        assert len(ids) == ratio ** layout.ndim
        np.testing.assert_allclose(k_pool[g], k[ids].mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(v_pool[g], v[ids].mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(k_pool.sum(axis=0) * ratio ** layout.ndim, k[layout.hr_ids].sum(axis=0), atol=1e-12)


@pytest.mark.parametrize("pool", ["mean", "stride0"])
def test_pooled_keys_sit_on_their_cell(rng, pool):
    layout = RegionLayout.from_boxes((4, 4), 2, [((1, 1), (3, 3))])
    groups = split_groups(8, 2)
    q, k, v = _qkv(rng, layout.num_tokens)
    out = attend_mixed(layout, q, k, v, "crpa", groups, pool=pool, keep_scores=True)
    pooled = out.key_positions["lr"][len(layout.lr_ids):]
    cells, _ = layout.hr_groups()
    np.testing.assert_allclose(pooled, cells)


def test_stride0_uses_first_subcell(rng, toy):
    groups = split_groups(8, 1)
    q, k, v = _qkv(rng, toy.num_tokens)
    v[toy.hr_ids] = np.arange(4)[:, None] * np.ones(3)
    mean = attend_mixed(toy, q, k, v, "crpa", groups, pool="mean", keep_scores=True)
    first = attend_mixed(toy, q, k, v, "crpa", groups, pool="stride0", keep_scores=True)
    assert not np.allclose(mean.values[toy.lr_ids], first.values[toy.lr_ids])
    np.testing.assert_allclose(mean.values[toy.hr_ids], first.values[toy.hr_ids])


@pytest.mark.parametrize("scheme", ["pi-lr", "yarn", "crpa"])
def test_attention_weights_are_distributions(rng, toy, scheme):
    q, k, v = _qkv(rng, toy.num_tokens)
    out = attend_mixed(toy, q, k, v, scheme, split_groups(8, 1), keep_scores=True)
    for w in out.weights.values():
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0)


def test_unknown_pool_mode(rng, toy):
    q, k, v = _qkv(rng, toy.num_tokens)
    with pytest.raises(DomainError, match="pool"):
        attend_mixed(toy, q, k, v, "crpa", split_groups(8, 1), pool="max")


def test_row_count_checked(rng, toy):
    q, k, v = _qkv(rng, toy.num_tokens - 1)
    with pytest.raises(DomainError, match="rows"):
        attend_mixed(toy, q, k, v, "crpa", split_groups(8, 1))


def test_axis_group_count_checked(rng, toy):
    q, k, v = _qkv(rng, toy.num_tokens)
    with pytest.raises(DomainError, match="axis groups"):
        attend_mixed(toy, q, k, v, "crpa", split_groups(8, 2))


def test_partial_cell_not_alignable():
    fine = np.zeros((8,), dtype=bool)
    fine[3:6] = True
    with pytest.raises(DomainError, match="not alignable"):
        RegionLayout.from_fine_mask((4,), 2, fine)


def test_from_fine_mask_partition():
    hr_cells = np.array([False, True, True, False])
    layout = RegionLayout.from_fine_mask((4,), 2, upsample_mask(hr_cells, 2))
    np.testing.assert_array_equal(layout.lr_cells, ~hr_cells)
    assert len(layout.hr_ids) == 4


def test_gather_scatter_round_trip(rng):
    layout = RegionLayout.from_boxes((3, 4), 2, [((0, 0), (1, 2))])
    lr = rng.standard_normal((3, 4, 2))
    hr = rng.standard_normal((6, 8, 2))
    tokens = layout.gather(lr, hr)
    lr_out, hr_out = np.zeros_like(lr), np.zeros_like(hr)
    layout.scatter(tokens, lr_out, hr_out)
    np.testing.assert_array_equal(lr_out[layout.lr_cells], lr[layout.lr_cells])
    np.testing.assert_array_equal(hr_out[layout.hr_fine], hr[layout.hr_fine])


def test_layout_validation():
    with pytest.raises(DomainError, match="positive integer"):
        RegionLayout((4,), 1.5, np.ones(4, dtype=bool), np.zeros(6, dtype=bool))
    with pytest.raises(DomainError, match="no tokens"):
        RegionLayout((2,), 2, np.zeros(2, dtype=bool), np.zeros(4, dtype=bool))


def _random_layout(gen):
    ndim = int(gen.integers(1, 3))
    ratio = int(gen.integers(2, 5))
    axes = tuple(int(n) for n in gen.integers(3, 7, size=ndim))
    start = [int(gen.integers(0, n - 1)) for n in axes]
    stop = [int(gen.integers(s + 1, n)) for s, n in zip(start, axes)]
    return RegionLayout.from_boxes(axes, ratio, [(start, stop)])


def test_random_layouts_alias_under_pi_but_not_crpa():
    gen = np.random.default_rng(7)
    for _ in range(20):
        layout = _random_layout(gen)
        assert len(layout.lr_ids) and len(layout.hr_ids)
        assert phase_consistency_error(layout, "crpa") <= 1e-12
        for scheme in ("pi-lr", "pi-hr"):
            assert pairwise_phase_errors(layout, scheme).max() >= 0.5
