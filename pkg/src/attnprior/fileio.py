"""On-disk formats: binary PGM masks, CSV tables, flat key=value configs.

Every writer goes through write-temp-then-rename so a crash never leaves a
half-written file, and repeat runs with identical inputs produce
byte-identical outputs (floats are fixed at 6 decimals, -0.0 is
canonicalized, and -inf is spelled literally).
"""

import csv
import io
import math
import os
import tempfile

import numpy as np


class FileFormatError(Exception):
    """Malformed, truncated, or mis-sized input file."""


# ------------------------------------------------------------ atomic writes

def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# --------------------------------------------------------------------- PGM

def _next_token(data: bytes, pos: int):
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch in b" \t\r\n":
            pos += 1
        elif ch == b"#":
            nl = data.find(b"\n", pos)
            if nl == -1:
                raise FileFormatError("unterminated comment in PGM header")
            pos = nl + 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos:pos + 1] not in b" \t\r\n":
        pos += 1
    if start == pos:
        raise FileFormatError("truncated PGM header")
    return data[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Binary (P5) PGM -> uint8 array of shape (height, width)."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        magic, pos = _next_token(data, 0)
        if magic != b"P5":
            raise FileFormatError("not a binary PGM (P5) file")
        tokens = []
        for _ in range(3):
            tok, pos = _next_token(data, pos)
            tokens.append(tok)
        try:
            width, height, maxval = (int(t) for t in tokens)
        except ValueError:
            raise FileFormatError("non-numeric PGM header field") from None
        if width < 1 or height < 1:
            raise FileFormatError(f"bad PGM dimensions {width}x{height}")
        if not 0 < maxval <= 255:
            raise FileFormatError(f"unsupported PGM maxval {maxval}")
        pos += 1  # single whitespace byte separates header from raster
        raster = data[pos:pos + width * height]
        if len(raster) != width * height:
            raise FileFormatError("truncated PGM raster")
    except FileFormatError as exc:
        raise FileFormatError(f"{path}: {exc}") from None
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_gray_pgm(path, values) -> None:
    """Write reals in [0, 1] as an 8-bit PGM via round(255 * value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D grid, got shape {arr.shape}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"values outside [0, 1]: min {arr.min()}, max {arr.max()}")
    gray = np.round(255.0 * arr).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + gray.tobytes())


def load_mask_pgm(path, size: int | None = None) -> np.ndarray:
    """PGM -> binary float mask (pixel > 127 means 1). Never resamples."""
    gray = read_pgm(path)
    if size is not None and gray.shape != (size, size):
        raise FileFormatError(
            f"{path}: expected a {size}x{size} mask, got "
            f"{gray.shape[1]}x{gray.shape[0]} (resampling is not supported)")
    return (gray > 127).astype(np.float64)


# --------------------------------------------------------------------- CSV

def format_float(x) -> str:
    """Fixed 6-decimal rendering; infinities spelled out, -0.0 canonical."""
    v = float(x)
    if math.isnan(v):
        raise ValueError("NaN is not representable in these tables")
    if math.isinf(v):
        return "-inf" if v < 0 else "inf"
    if v == 0.0:
        v = 0.0
    return f"{v:.6f}"


def write_csv(path, rows) -> None:
    buf = io.StringIO()
    csv.writer(buf).writerows(rows)
    atomic_write_text(path, buf.getvalue())


def write_layers_csv(path, stack) -> None:
    """Long-form dump of a smoothed stack: layer, row, col, value."""
    rows = [["layer", "row", "col", "value"]]
    for layer in range(1, stack.n_layers + 1):
        grid = stack.layer(layer)
        for r in range(grid.shape[0]):
            for c in range(grid.shape[1]):
                rows.append([str(layer), str(r), str(c), format_float(grid[r, c])])
    write_csv(path, rows)


def write_bias_csv(path, matrix, mode: str, layer: int, t_rep: int,
                   total_len: int, scale: float) -> None:
    """Bias matrix dump; the header rows record how it was built."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.shape != (t_rep, total_len):
        raise ValueError(f"matrix shape {arr.shape} != ({t_rep}, {total_len})")
    rows = [["mode", "layer", "t_rep", "total_len", "scale"],
            [mode, str(layer), str(t_rep), str(total_len), format_float(scale)]]
    for r in range(t_rep):
        rows.append([format_float(v) for v in arr[r]])
    write_csv(path, rows)


def read_bias_csv(path):
    """Inverse of write_bias_csv: returns (matrix, metadata dict)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0] != ["mode", "layer", "t_rep", "total_len", "scale"]:
        raise FileFormatError(f"{path}: missing bias header")
    meta = dict(zip(rows[0], rows[1]))
    t_rep, total_len = int(meta["t_rep"]), int(meta["total_len"])
    body = rows[2:]
    if len(body) != t_rep:
        raise FileFormatError(f"{path}: expected {t_rep} matrix rows, got {len(body)}")
    matrix = np.empty((t_rep, total_len), dtype=np.float64)
    for i, row in enumerate(body):
        if len(row) != total_len:
            raise FileFormatError(f"{path}: row {i} has {len(row)} cells, expected {total_len}")
        matrix[i] = [float(cell) for cell in row]
    return matrix, meta


def write_loss_curve_csv(path, losses, lrs) -> None:
    if len(losses) != len(lrs):
        raise ValueError(f"{len(losses)} losses vs {len(lrs)} learning rates")
    rows = [["step", "lr", "loss"]]
    for step, (lr, loss) in enumerate(zip(lrs, losses)):
        rows.append([str(step), f"{lr:.8e}", format_float(loss)])
    write_csv(path, rows)


# ------------------------------------------------------------ config files

def parse_config_file(path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise FileFormatError(f"{path}:{lineno}: expected key=value, got {body!r}")
            key, _, value = body.partition("=")
            key, value = key.strip(), value.strip()
            if not key:
                raise FileFormatError(f"{path}:{lineno}: empty key")
            if key in out:
                raise FileFormatError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out
