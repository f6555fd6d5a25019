import numpy as np
import pytest

from attnprior.bias import (BiasMode, BiasPlan, apply_causal_restriction,
                            bias_logits, extend_bias_row, flatten_mask,
                            hidden_mask_flat, make_causal_mask,
                            make_layer_bias, tile_bias, unflatten_mask)
from attnprior.masks import SmoothingSchedule, build_mask_stack
from attnprior.numerics import NEG_INF, softmax_rows


def small_fused(rng, size=4):
    mask = np.zeros((size, size))
    while mask.sum() == 0 or mask.sum() == mask.size:
        mask = (rng.uniform(size=(size, size)) < 0.5).astype(np.float64)
    return mask


class TestFlattening:
    def test_row_major_round_trip(self):
        rng = np.random.default_rng(0)
        grid = rng.uniform(size=(5, 5))
        flat = flatten_mask(grid)
        assert flat[7] == grid[1, 2]
        np.testing.assert_array_equal(unflatten_mask(flat), grid)

    def test_non_square_length_rejected(self):
        with pytest.raises(ValueError):
            unflatten_mask(np.zeros(10))


class TestTileAndRestrict:
    def test_tile_rows_identical(self):
        flat = np.arange(6, dtype=np.float64)
        tiled = tile_bias(flat, 4)
        assert tiled.shape == (4, 6)
        for row in tiled:
            np.testing.assert_array_equal(row, flat)

    def test_restriction_zeroes_hidden_keys(self):
        tiled = np.full((3, 3), 7.0)
        causal = make_causal_mask(3, 3)
        out = apply_causal_restriction(tiled, causal)
        np.testing.assert_array_equal(out, [[7.0, 0.0, 0.0],
                                            [7.0, 7.0, 0.0],
                                            [7.0, 7.0, 7.0]])

    def test_restriction_beats_neg_inf(self):
        # A hidden -inf entry outside the causal window must become 0,
        # not NaN from -inf * 0.
        tiled = np.array([[NEG_INF, NEG_INF]])
        causal = np.array([[1.0, 0.0]])
        out = apply_causal_restriction(tiled, causal)
        assert out[0, 0] == NEG_INF and out[0, 1] == 0.0

    def test_bias_logits_shape_check(self):
        with pytest.raises(ValueError):
            bias_logits(np.zeros((2, 3)), np.zeros((3, 2)))


class TestExtendBiasRow:
    def test_zero_beyond_visual_window(self):
        flat = np.linspace(0.1, 1.0, 16)
        out = extend_bias_row(flat, 24)
        np.testing.assert_array_equal(out[:16], flat)
        assert np.all(out[16:] == 0.0)

    def test_truncates_when_shorter(self):
        flat = np.arange(8, dtype=np.float64)
        np.testing.assert_array_equal(extend_bias_row(flat, 5), flat[:5])


class TestHiddenMaskFlat:
    def test_values_are_zero_or_neg_inf(self):
        rng = np.random.default_rng(1)
        fused = small_fused(rng)
        flat = hidden_mask_flat(fused)
        in_mask = flatten_mask(fused) > 0
        assert np.all(flat[in_mask] == 0.0)
        assert np.all(np.isneginf(flat[~in_mask]))

    def test_all_zero_mask_rejected(self):
        with pytest.raises(ValueError):
            hidden_mask_flat(np.zeros((4, 4)))


class TestCausalMask:
    def test_lower_triangular(self):
        np.testing.assert_array_equal(make_causal_mask(3, 3),
                                      [[1.0, 0.0, 0.0],
                                       [1.0, 1.0, 0.0],
                                       [1.0, 1.0, 1.0]])

    def test_query_offset(self):
        # Queries are the last 2 rows of a 5-key context.
        out = make_causal_mask(2, 5, query_offset=3)
        np.testing.assert_array_equal(out, [[1.0, 1.0, 1.0, 1.0, 0.0],
                                            [1.0, 1.0, 1.0, 1.0, 1.0]])


class TestBiasPlan:
    def test_no_mask_carries_no_values(self):
        plan = BiasPlan.no_mask(4, 16)
        assert plan.mode is BiasMode.NO_MASK
        assert plan.flat_masks is None

    def test_from_stack_flattens_layers(self):
        rng = np.random.default_rng(2)
        fused = small_fused(rng)
        stack = build_mask_stack(fused, SmoothingSchedule(n_layers=3))
        plan = BiasPlan.from_stack(stack)
        assert plan.n_layers == 3 and plan.visual_len == 16
        for layer in range(1, 4):
            np.testing.assert_array_equal(plan.flat_masks[layer - 1],
                                          stack.layer(layer).ravel())

    def test_hidden_shares_one_row(self):
        rng = np.random.default_rng(3)
        plan = BiasPlan.hidden(small_fused(rng), 5)
        assert plan.mode is BiasMode.HIDDEN_MASK
        assert len(plan.flat_masks) == 5
        for row in plan.flat_masks[1:]:
            np.testing.assert_array_equal(row, plan.flat_masks[0])

    def test_mask_values_must_be_in_unit_interval(self):
        with pytest.raises(ValueError):
            BiasPlan(mode=BiasMode.MASK, n_layers=1, visual_len=4,
                     flat_masks=(np.array([0.0, 2.0, 0.5, 1.0]),))

    def test_scale_must_be_finite(self):
        with pytest.raises(ValueError):
            BiasPlan(mode=BiasMode.NO_MASK, n_layers=2, visual_len=16,
                     scale=float("nan"))


class TestMakeLayerBias:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.fused = small_fused(rng)
        self.stack = build_mask_stack(self.fused, SmoothingSchedule(n_layers=2))
        self.plan = BiasPlan.from_stack(self.stack)

    def test_no_mask_is_all_zero(self):
        plan = BiasPlan.no_mask(2, 16)
        causal = make_causal_mask(20, 20)
        out = make_layer_bias(plan, 1, 20, 20, causal)
        np.testing.assert_array_equal(out, np.zeros((20, 20)))

    def test_mask_mode_composition(self):
        causal = make_causal_mask(20, 20)
        out = make_layer_bias(self.plan, 2, 20, 20, causal)
        expect = apply_causal_restriction(
            tile_bias(extend_bias_row(self.stack.layer(2).ravel(), 20), 20), causal)
        np.testing.assert_array_equal(out, expect)

    def test_scale_multiplies_soft_bias(self):
        scaled = BiasPlan.from_stack(self.stack, scale=2.5)
        causal = make_causal_mask(20, 20)
        np.testing.assert_allclose(
            make_layer_bias(scaled, 1, 20, 20, causal),
            2.5 * make_layer_bias(self.plan, 1, 20, 20, causal), atol=1e-15)

    def test_hidden_mode_unscaled(self):
        plan = BiasPlan.hidden(self.fused, 2)
        causal = make_causal_mask(4, 20, query_offset=16)
        out = make_layer_bias(plan, 1, 4, 20, causal)
        flat = self.fused.ravel()
        for col in range(16):
            expect = 0.0 if flat[col] > 0 else NEG_INF
            assert np.all(out[:, col] == expect)
        assert np.all(out[:, 16:][make_causal_mask(4, 4) == 0.0] == 0.0)

    def test_layer_bounds(self):
        causal = make_causal_mask(4, 4)
        with pytest.raises(ValueError):
            make_layer_bias(self.plan, 0, 4, 4, causal)
        with pytest.raises(ValueError):
            make_layer_bias(self.plan, 3, 4, 4, causal)

    def test_causal_shape_check(self):
        with pytest.raises(ValueError):
            make_layer_bias(self.plan, 1, 4, 20, make_causal_mask(4, 4))


class TestMassShift:
    def test_bias_raises_support_mass(self):
        rng = np.random.default_rng(5)
        sched = SmoothingSchedule(n_layers=2)
        for _ in range(50):
            fused = small_fused(rng, 4)
            plan = BiasPlan.from_stack(build_mask_stack(fused, sched))
            logits = rng.normal(scale=2.0, size=16)
            bias = plan.flat_masks[1]
            support = bias > 0.0
            if support.all() or not support.any():
                continue
            pre = softmax_rows(logits[None])[0]
            post = softmax_rows((logits + bias)[None])[0]
            assert post[support].sum() > pre[support].sum()
