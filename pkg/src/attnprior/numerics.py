"""Dense numeric substrate shared by the other modules.

A "matrix" is any 2-D float64 ndarray.  The only admissible non-finite value
is -inf, which acts as a hard-mask sentinel in attention logits; softmax maps
it to an exact zero weight.
"""

import numpy as np

NEG_INF = float("-inf")


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check.

    Accumulation order is whatever the BLAS backend uses; on a fixed machine
    and thread count it is run-to-run deterministic.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(logits) -> np.ndarray:
    """Row-wise softmax, stabilized by per-row max subtraction.

    -inf entries produce exactly 0 in the output.  A row consisting only of
    -inf has no defined distribution and raises.
    """
    m = as_matrix(logits, "logits")
    if m.shape[1] == 0:
        raise ValueError("softmax of zero-width rows is undefined")
    rowmax = np.max(m, axis=1)
    if np.any(np.isneginf(rowmax)):
        raise ValueError("fully masked row: every entry is -inf")
    # the shift may itself overflow to -inf for antipodal huge entries;
    # exp(-inf) = 0 is exactly the intended limit, so ignore the flag
    with np.errstate(over="ignore"):
        e = np.exp(m - rowmax[:, None])
    return e / e.sum(axis=1, keepdims=True)


def conv2d_full(image, kernel2d) -> np.ndarray:
    """Direct 2-D convolution with zero padding; same-size output.

    This is the slow nested-loop reference against which the separable fast
    path is checked.  True convolution: the kernel is flipped, so an impulse
    input reproduces the kernel unflipped.
    """
    img = as_matrix(image, "image")
    ker = as_matrix(kernel2d, "kernel2d")
    kh, kw = ker.shape
    if kh != kw:
        raise ValueError(f"kernel must be square, got {ker.shape}")
    if kh % 2 == 0:
        raise ValueError(f"kernel side must be odd, got {kh}")
    c = kh // 2
    h, w = img.shape
    padded = np.zeros((h + 2 * c, w + 2 * c), dtype=np.float64)
    padded[c:c + h, c:c + w] = img
    flipped = ker[::-1, ::-1]
    out = np.empty((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            out[i, j] = np.sum(padded[i:i + kh, j:j + kw] * flipped)
    return out


def finite_diff_grad(f, x, h: float) -> np.ndarray:
    """Central-difference gradient of a scalar function at x.

    Evaluates f at x +/- h*e_i per coordinate; raises if any evaluation is
    non-finite.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        xp = flat.copy()
        xp[i] = orig + h
        fp = float(f(xp.reshape(x.shape)))
        xm = flat.copy()
        xm[i] = orig - h
        fm = float(f(xm.reshape(x.shape)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite evaluation at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)
