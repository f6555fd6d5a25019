"""Turning smoothed masks into per-layer attention-logit biases.

Each layer's smoothed mask is flattened over the visual grid, tiled across
query rows, restricted by the causal mask, and added to attention logits
before softmax.  Three variants:

* ``nomask``  - all-zero bias (baseline).
* ``mask``    - additive bias equal to the smoothed mask values (times an
  optional scale), nudging attention toward in-mask visual keys.
* ``hidden``  - hard variant: out-of-mask visual keys get -inf, eliminating
  them from attention entirely.

Key positions at or beyond the visual window always receive zero bias, so
text keys are never biased or eliminated.  The construction is parameter
free: nothing here is trainable.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .masks import MaskStack, validate_binary_mask
from .numerics import NEG_INF


class BiasMode(str, Enum):
    NO_MASK = "nomask"
    MASK = "mask"
    HIDDEN_MASK = "hidden"


def flatten_mask(m) -> np.ndarray:
    """Row-major flattening of a square mask: cell (r, c) -> index g*r + c."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"mask must be square, got shape {arr.shape}")
    return arr.ravel().copy()


def unflatten_mask(values) -> np.ndarray:
    """Inverse of flatten_mask; the length must be a perfect square."""
    v = np.asarray(values, dtype=np.float64).ravel()
    g = int(round(v.size ** 0.5))
    if g * g != v.size:
        raise ValueError(f"length {v.size} is not a perfect square")
    return v.reshape(g, g).copy()


def tile_bias(flat, t_rep: int) -> np.ndarray:
    """Replicate a flat mask across t_rep identical query rows."""
    if t_rep < 1:
        raise ValueError(f"t_rep must be >= 1, got {t_rep}")
    v = np.asarray(flat, dtype=np.float64).ravel()
    return np.tile(v, (t_rep, 1))


def apply_causal_restriction(tiled, causal) -> np.ndarray:
    """Zero the tiled bias wherever the causal mask is zero.

    Defined via selection rather than multiplication so that -inf entries in
    hidden mode are overridden by restriction (-inf * 0 would be NaN).
    """
    t = np.asarray(tiled, dtype=np.float64)
    c = np.asarray(causal, dtype=np.float64)
    if t.shape != c.shape:
        raise ValueError(f"shape mismatch: tiled {t.shape} vs causal {c.shape}")
    return np.where(c != 0.0, t, 0.0)


def bias_logits(logits, bias) -> np.ndarray:
    """Element-wise sum of attention logits and a bias matrix."""
    a = np.asarray(logits, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: logits {a.shape} vs bias {b.shape}")
    return a + b


def extend_bias_row(flat, total_len: int) -> np.ndarray:
    """Pad (or truncate) a flat mask to total_len keys.

    Entries at indices >= len(flat) are exactly 0: keys beyond the visual
    window carry no bias.
    """
    if total_len < 1:
        raise ValueError(f"total_len must be >= 1, got {total_len}")
    v = np.asarray(flat, dtype=np.float64).ravel()
    out = np.zeros(total_len, dtype=np.float64)
    n = min(total_len, v.size)
    out[:n] = v[:n]
    return out


def hidden_mask_flat(fused) -> np.ndarray:
    """Flat hard-mask row: 0 at in-mask positions, -inf outside.

    Adding 0 leaves in-mask logits intact; -inf annihilates out-of-mask
    visual keys under softmax.  An all-zero mask would eliminate every
    visual key for every query and is rejected.
    """
    arr = validate_binary_mask(fused)
    if not np.any(arr > 0.0):
        raise ValueError("all-zero fused mask would eliminate every visual key")
    flat = flatten_mask(arr)
    return np.where(flat > 0.0, 0.0, NEG_INF)


def make_causal_mask(n_queries: int, n_keys: int, query_offset: int = 0) -> np.ndarray:
    """0/1 visibility grid: query row t sits at absolute position
    query_offset + t and sees keys s <= that position."""
    if n_queries < 1 or n_keys < 1:
        raise ValueError("mask dimensions must be >= 1")
    if query_offset < 0:
        raise ValueError(f"query_offset must be >= 0, got {query_offset}")
    rows = query_offset + np.arange(n_queries)[:, None]
    cols = np.arange(n_keys)[None, :]
    return (cols <= rows).astype(np.float64)


@dataclass(frozen=True)
class BiasPlan:
    """Per-layer flat masks plus the variant mode; expands on demand.

    Carries no trainable state: masks come from segmentation output and
    fixed Gaussian filters only.
    """

    mode: BiasMode
    n_layers: int
    visual_len: int
    scale: float = 1.0
    flat_masks: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if not np.isfinite(self.scale):
            raise ValueError(f"scale must be finite, got {self.scale}")
        if self.mode is BiasMode.NO_MASK:
            if self.flat_masks is not None:
                raise ValueError("nomask plans carry no flat masks")
            return
        if self.flat_masks is None or len(self.flat_masks) != self.n_layers:
            raise ValueError(f"expected {self.n_layers} flat masks")
        for m in self.flat_masks:
            if m.shape != (self.visual_len,):
                raise ValueError(f"flat mask length {m.size} != visual_len {self.visual_len}")
            if self.mode is BiasMode.MASK:
                if m.min() < 0.0 or m.max() > 1.0:
                    raise ValueError("mask-mode values must lie in [0, 1]")
            else:
                if not np.all((m == 0.0) | np.isneginf(m)):
                    raise ValueError("hidden-mode values must be 0 or -inf")

    @classmethod
    def no_mask(cls, n_layers: int, visual_len: int) -> "BiasPlan":
        return cls(mode=BiasMode.NO_MASK, n_layers=n_layers, visual_len=visual_len)

    @classmethod
    def from_stack(cls, stack: MaskStack, scale: float = 1.0) -> "BiasPlan":
        flats = []
        for layer in stack.layers:
            f = flatten_mask(layer)
            f.flags.writeable = False
            flats.append(f)
        return cls(mode=BiasMode.MASK, n_layers=stack.n_layers,
                   visual_len=stack.grid ** 2, scale=scale,
                   flat_masks=tuple(flats))

    @classmethod
    def hidden(cls, fused, n_layers: int) -> "BiasPlan":
        # The hard variant derives from the unsmoothed fused mask; every
        # layer shares the same elimination pattern.
        flat = hidden_mask_flat(fused)
        flat.flags.writeable = False
        return cls(mode=BiasMode.HIDDEN_MASK, n_layers=n_layers,
                   visual_len=flat.size, flat_masks=(flat,) * n_layers)


def make_layer_bias(plan: BiasPlan, layer: int, t_rep: int, total_len: int,
                    causal: np.ndarray) -> np.ndarray:
    """The t_rep x total_len bias actually added to one layer's logits.

    nomask -> zero matrix; mask -> scale * causally-restricted tiling of the
    layer's extended flat mask; hidden -> same tiling of the 0/-inf row with
    -inf kept only where the causal mask permits visibility.
    """
    if not 1 <= layer <= plan.n_layers:
        raise ValueError(f"layer must be in [1, {plan.n_layers}], got {layer}")
    causal = np.asarray(causal, dtype=np.float64)
    if causal.shape != (t_rep, total_len):
        raise ValueError(f"causal mask shape {causal.shape} != ({t_rep}, {total_len})")
    if plan.mode is BiasMode.NO_MASK:
        return np.zeros((t_rep, total_len), dtype=np.float64)
    row = extend_bias_row(plan.flat_masks[layer - 1], total_len)
    tiled = tile_bias(row, t_rep)
    restricted = apply_causal_restriction(tiled, causal)
    if plan.mode is BiasMode.MASK:
        return plan.scale * restricted
    return restricted
