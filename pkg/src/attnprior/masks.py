"""Hierarchical Gaussian smoothing of binary region masks.

A fused lung+heart mask is blurred once per decoder layer with a kernel
ladder that shrinks from layer 1 to layer L ("general-to-specific"): broad,
diffuse masks feed the early layers, sharp ones the late layers.
"""

from dataclasses import dataclass

import numpy as np

DEFAULT_GRID = 32
DEFAULT_LAYERS = 12
DEFAULT_K_BASE = 3
DEFAULT_K_INCR = 2


def validate_binary_mask(mask, size: int | None = None) -> np.ndarray:
    """Return a float64 copy of `mask`, checking it is square and 0/1-valued.

    When `size` is given the mask must be exactly size x size; smaller or
    larger inputs are rejected, never resampled.
    """
    arr = np.asarray(mask, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"mask must be square, got shape {arr.shape}")
    if size is not None and arr.shape != (size, size):
        raise ValueError(f"mask must be {size}x{size}, got {arr.shape}")
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError("mask entries must all be 0 or 1")
    return arr


def fuse_masks(lung, heart) -> np.ndarray:
    """Element-wise OR of two binary masks of identical square shape."""
    lung = validate_binary_mask(lung)
    heart = validate_binary_mask(heart, size=lung.shape[0])
    return np.maximum(lung, heart)


def kernel_size_for_layer(layer: int, n_layers: int,
                          k_base: int = DEFAULT_K_BASE,
                          k_incr: int = DEFAULT_K_INCR) -> int:
    """Kernel side for 1-indexed `layer`: k_base + (L - (layer-1)) * k_incr.

    k_base must be odd and k_incr even so every rung of the ladder is odd.
    """
    if k_base < 1 or k_base % 2 == 0:
        raise ValueError(f"k_base must be odd and >= 1, got {k_base}")
    if k_incr < 0 or k_incr % 2 != 0:
        raise ValueError(f"k_incr must be even and >= 0, got {k_incr}")
    if n_layers < 1:
        raise ValueError(f"n_layers must be >= 1, got {n_layers}")
    if not 1 <= layer <= n_layers:
        raise ValueError(f"layer must be in [1, {n_layers}], got {layer}")
    return k_base + (n_layers - (layer - 1)) * k_incr


def sigma_for_kernel(k: int) -> float:
    """Std-dev paired with a kernel of side k: exactly (k - 1) / 6."""
    return (k - 1) / 6


@dataclass(frozen=True)
class SmoothingSchedule:
    """Per-layer kernel ladder: sizes strictly decrease from layer 1 to L."""

    n_layers: int = DEFAULT_LAYERS
    k_base: int = DEFAULT_K_BASE
    k_incr: int = DEFAULT_K_INCR

    def __post_init__(self):
        kernel_size_for_layer(1, self.n_layers, self.k_base, self.k_incr)

    @property
    def kernel_sizes(self) -> tuple[int, ...]:
        return tuple(kernel_size_for_layer(l, self.n_layers, self.k_base, self.k_incr)
                     for l in range(1, self.n_layers + 1))

    @property
    def sigmas(self) -> tuple[float, ...]:
        return tuple(sigma_for_kernel(k) for k in self.kernel_sizes)


def gaussian_kernel_1d(k: int) -> np.ndarray:
    """Symmetric 1-D Gaussian of size k, point-sampled and sum-normalized.

    sigma = (k - 1) / 6; k = 1 degenerates to the delta kernel [1.0] rather
    than dividing by zero.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {k}")
    if k == 1:
        return np.ones(1, dtype=np.float64)
    center = (k - 1) / 2
    sigma = sigma_for_kernel(k)
    offsets = np.arange(k, dtype=np.float64) - center
    weights = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    return weights / weights.sum()


def _convolve_same(vec: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Full 1-D convolution cropped back to len(vec), i.e. zero padding.
    # np.convolve(..., "same") cannot be used directly: it returns the longer
    # of the two lengths when the kernel outgrows the signal.
    full = np.convolve(vec, kernel)
    start = (kernel.size - 1) // 2
    return full[start:start + vec.size]


def smooth_separable(mask, kernel: np.ndarray) -> np.ndarray:
    """Separable Gaussian smoothing: 1-D convolution down columns, then rows.

    Zero padding at the borders; equivalent to full 2-D convolution with the
    outer-product kernel.
    """
    arr = np.asarray(mask, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("mask must be finite")
    out = np.empty_like(arr)
    for j in range(arr.shape[1]):
        out[:, j] = _convolve_same(arr[:, j], kernel)
    for i in range(arr.shape[0]):
        out[i, :] = _convolve_same(out[i, :], kernel)
    return out


@dataclass(frozen=True)
class MaskStack:
    """The L smoothed masks, ordered layer 1 (most diffuse) to layer L."""

    layers: tuple[np.ndarray, ...]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def grid(self) -> int:
        return self.layers[0].shape[0]

    def layer(self, l: int) -> np.ndarray:
        if not 1 <= l <= self.n_layers:
            raise ValueError(f"layer must be in [1, {self.n_layers}], got {l}")
        return self.layers[l - 1]


def build_mask_stack(fused, schedule: SmoothingSchedule,
                     normalize: bool = True) -> MaskStack:
    """Smooth `fused` once per layer of `schedule`.

    With `normalize` (the default) each layer is rescaled so its maximum is
    exactly 1 whenever the fused mask is nonempty; an empty fused mask yields
    all-zero layers either way.
    """
    fused = validate_binary_mask(fused)
    layers = []
    for k in schedule.kernel_sizes:
        smoothed = smooth_separable(fused, gaussian_kernel_1d(k))
        peak = smoothed.max()
        if normalize and peak > 0.0:
            smoothed = smoothed / peak
        # Exact smoothing of a 0/1 mask with a unit-sum kernel stays in
        # [0, 1]; accumulated rounding can overshoot by an ulp, so clamp.
        np.clip(smoothed, 0.0, 1.0, out=smoothed)
        smoothed.flags.writeable = False
        layers.append(smoothed)
    return MaskStack(layers=tuple(layers))
