import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnprior.masks import (DEFAULT_K_BASE, DEFAULT_K_INCR, DEFAULT_LAYERS,
                             SmoothingSchedule, build_mask_stack, fuse_masks,
                             gaussian_kernel_1d, kernel_size_for_layer,
                             sigma_for_kernel, smooth_separable,
                             validate_binary_mask)
from attnprior.numerics import conv2d_full


def random_binary_mask(rng, size):
    return (rng.uniform(size=(size, size)) < 0.4).astype(np.float64)


class TestKernelLadder:
    def test_default_ladder(self):
        sizes = [kernel_size_for_layer(l, 12) for l in range(1, 13)]
        assert sizes == [27, 25, 23, 21, 19, 17, 15, 13, 11, 9, 7, 5]

    def test_layer_one_is_widest(self):
        assert kernel_size_for_layer(1, 12) == 27
        assert kernel_size_for_layer(12, 12) == 5

    def test_custom_ladder(self):
        assert kernel_size_for_layer(1, 4, k_base=3, k_incr=2) == 11
        assert kernel_size_for_layer(4, 4, k_base=3, k_incr=2) == 5
        assert kernel_size_for_layer(2, 3, k_base=5, k_incr=4) == 13

    def test_zero_increment_is_constant(self):
        assert all(kernel_size_for_layer(l, 6, 7, 0) == 7 for l in range(1, 7))

    def test_even_base_rejected(self):
        with pytest.raises(ValueError):
            kernel_size_for_layer(1, 12, k_base=4)

    def test_odd_increment_rejected(self):
        with pytest.raises(ValueError):
            kernel_size_for_layer(1, 12, k_incr=3)

    def test_layer_out_of_range(self):
        with pytest.raises(ValueError):
            kernel_size_for_layer(0, 12)
        with pytest.raises(ValueError):
            kernel_size_for_layer(13, 12)

    def test_sigma_formula(self):
        assert sigma_for_kernel(27) == 26 / 6
        assert sigma_for_kernel(5) == 4 / 6
        assert sigma_for_kernel(1) == 0.0

    def test_schedule_properties(self):
        sched = SmoothingSchedule()
        assert sched.n_layers == DEFAULT_LAYERS
        assert sched.k_base == DEFAULT_K_BASE and sched.k_incr == DEFAULT_K_INCR
        assert sched.kernel_sizes == (27, 25, 23, 21, 19, 17, 15, 13, 11, 9, 7, 5)
        assert sched.sigmas[0] == 26 / 6 and sched.sigmas[-1] == 4 / 6


class TestGaussianKernel:
    def test_sums_to_one(self):
        for k in (3, 5, 11, 27):
            kern = gaussian_kernel_1d(k)
            assert kern.shape == (k,)
            np.testing.assert_allclose(kern.sum(), 1.0, atol=1e-15)

    def test_symmetric_and_peaked(self):
        kern = gaussian_kernel_1d(9)
        np.testing.assert_array_equal(kern, kern[::-1])
        assert kern[4] == kern.max()

    def test_delta_for_size_one(self):
        np.testing.assert_array_equal(gaussian_kernel_1d(1), [1.0])

    def test_even_size_rejected(self):
        with pytest.raises(ValueError):
            gaussian_kernel_1d(4)


class TestSeparableEquivalence:
    def test_matches_full_2d(self):
        rng = np.random.default_rng(0)
        for k in (3, 5, 11):
            kern = gaussian_kernel_1d(k)
            full = np.outer(kern, kern)
            for _ in range(10):
                mask = random_binary_mask(rng, 16)
                np.testing.assert_allclose(smooth_separable(mask, kern),
                                           conv2d_full(mask, full), atol=1e-14)

    def test_kernel_wider_than_mask(self):
        kern = gaussian_kernel_1d(27)
        mask = np.zeros((8, 8))
        mask[3, 4] = 1.0
        out = smooth_separable(mask, kern)
        assert out.shape == (8, 8)
        np.testing.assert_allclose(out, conv2d_full(mask, np.outer(kern, kern)),
                                   atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), k=st.sampled_from([3, 5, 7, 9]),
           size=st.integers(4, 20))
    def test_equivalence_property(self, seed, k, size):
        rng = np.random.default_rng(seed)
        mask = random_binary_mask(rng, size)
        kern = gaussian_kernel_1d(k)
        np.testing.assert_allclose(smooth_separable(mask, kern),
                                   conv2d_full(mask, np.outer(kern, kern)),
                                   atol=1e-12)


class TestMaskValidation:
    def test_accepts_binary(self):
        mask = np.array([[0.0, 1.0], [1.0, 0.0]])
        validate_binary_mask(mask)

    def test_rejects_fractional(self):
        with pytest.raises(ValueError):
            validate_binary_mask(np.array([[0.5, 0.0], [1.0, 0.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            validate_binary_mask(np.zeros((2, 3)))

    def test_size_enforcement(self):
        validate_binary_mask(np.zeros((32, 32)), size=32)
        with pytest.raises(ValueError, match="32"):
            validate_binary_mask(np.zeros((16, 16)), size=32)

    def test_fuse_is_elementwise_or(self):
        a = np.array([[0.0, 0.0], [1.0, 1.0]])
        b = np.array([[0.0, 1.0], [0.0, 1.0]])
        np.testing.assert_array_equal(fuse_masks(a, b),
                                      [[0.0, 1.0], [1.0, 1.0]])

    def test_fuse_shape_mismatch(self):
        with pytest.raises(ValueError):
            fuse_masks(np.zeros((2, 2)), np.zeros((3, 3)))


class TestBuildMaskStack:
    def test_layer_count_and_grid(self):
        rng = np.random.default_rng(1)
        stack = build_mask_stack(random_binary_mask(rng, 16), SmoothingSchedule())
        assert stack.n_layers == 12
        assert stack.grid == 16

    def test_normalized_peak_is_one(self):
        rng = np.random.default_rng(2)
        stack = build_mask_stack(random_binary_mask(rng, 12),
                                 SmoothingSchedule(n_layers=4))
        for layer in range(1, 5):
            assert stack.layer(layer).max() == 1.0

    def test_unnormalized_peak_below_one(self):
        mask = np.zeros((12, 12))
        mask[6, 6] = 1.0
        stack = build_mask_stack(mask, SmoothingSchedule(n_layers=4),
                                 normalize=False)
        assert stack.layer(1).max() < 1.0

    def test_empty_mask_gives_zero_stack(self):
        stack = build_mask_stack(np.zeros((10, 10)), SmoothingSchedule(n_layers=3))
        for layer in range(1, 4):
            np.testing.assert_array_equal(stack.layer(layer), 0.0)

    def test_spread_shrinks_with_depth(self):
        # Single impulse: cells above 1% of peak must not increase from the
        # wide-kernel first layer to the narrow-kernel last layer.
        mask = np.zeros((32, 32))
        mask[16, 16] = 1.0
        stack = build_mask_stack(mask, SmoothingSchedule())
        counts = []
        for layer in range(1, 13):
            grid = stack.layer(layer)
            counts.append(int((grid > 0.01 * grid.max()).sum()))
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert counts[0] > counts[-1]

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(3)
        mask = random_binary_mask(rng, 16)
        s1 = build_mask_stack(mask, SmoothingSchedule())
        s2 = build_mask_stack(mask, SmoothingSchedule())
        for layer in range(1, 13):
            assert s1.layer(layer).tobytes() == s2.layer(layer).tobytes()

    def test_layers_are_read_only(self):
        stack = build_mask_stack(np.zeros((8, 8)), SmoothingSchedule(n_layers=2))
        with pytest.raises(ValueError):
            stack.layer(1)[0, 0] = 5.0

    def test_layer_index_bounds(self):
        stack = build_mask_stack(np.zeros((8, 8)), SmoothingSchedule(n_layers=2))
        with pytest.raises(ValueError):
            stack.layer(0)
        with pytest.raises(ValueError):
            stack.layer(3)

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(4)
        stack = build_mask_stack(random_binary_mask(rng, 16),
                                 SmoothingSchedule(n_layers=6))
        for layer in range(1, 7):
            grid = stack.layer(layer)
            assert grid.min() >= 0.0 and grid.max() <= 1.0
