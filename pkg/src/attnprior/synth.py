"""Synthetic grid-world findings task for the ablation harness.

Each instance is a square image holding a two-lobe "lung" region and a
"heart" region.  Marker cells of varying intensity are planted inside the
fused region (findings) and outside it (distractors); the reference output
sequence names the findings in reading order and ends with EOS.  Finding and
distractor markers share one intensity palette, so region membership cannot
be read off a cell in isolation — the faint region wash (0.2) is the only
contextual cue, which is what makes attention guidance worth testing.
"""

from dataclasses import dataclass, field

import numpy as np

PAD = 0
EOS = 1
FINDING_BASE = 2
DEFAULT_N_TYPES = 6
BACKGROUND_LEVEL = 0.2


def finding_token(kind: int, n_types: int = DEFAULT_N_TYPES) -> int:
    if not 0 <= kind < n_types:
        raise ValueError(f"kind must be in [0, {n_types}), got {kind}")
    return FINDING_BASE + kind


def token_name(tok: int, n_types: int = DEFAULT_N_TYPES) -> str:
    if tok == PAD:
        return "PAD"
    if tok == EOS:
        return "EOS"
    if FINDING_BASE <= tok < FINDING_BASE + n_types:
        return f"F{tok - FINDING_BASE}"
    return f"T{tok}"


def marker_intensity(kind: int, n_types: int = DEFAULT_N_TYPES) -> float:
    """Palette in (BACKGROUND_LEVEL, 1]; one level per marker kind."""
    if not 0 <= kind < n_types:
        raise ValueError(f"kind must be in [0, {n_types}), got {kind}")
    return 0.35 + 0.6 * (kind + 1) / n_types


def _ellipse(grid: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    rows = np.arange(grid, dtype=np.float64)[:, None]
    cols = np.arange(grid, dtype=np.float64)[None, :]
    inside = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
    return inside.astype(np.float64)


def region_template(grid: int, rng: np.random.Generator):
    """Jittered lung pair + heart, returned as two binary masks."""
    j = 0.05 * grid

    def jit():
        return rng.uniform(-j, j)

    left = _ellipse(grid, 0.45 * grid + jit(), 0.30 * grid + jit(),
                    0.28 * grid, 0.16 * grid)
    right = _ellipse(grid, 0.45 * grid + jit(), 0.70 * grid + jit(),
                     0.28 * grid, 0.16 * grid)
    heart = _ellipse(grid, 0.62 * grid + jit(), 0.52 * grid + jit(),
                     0.18 * grid, 0.15 * grid)
    lung = np.maximum(left, right)
    if lung.sum() == 0 or heart.sum() == 0:
        raise ValueError(f"degenerate region template at grid {grid}")
    return lung, heart


@dataclass(frozen=True)
class SyntheticInstance:
    seed: int
    image: np.ndarray
    lung_mask: np.ndarray
    heart_mask: np.ndarray
    findings: tuple[tuple[int, int, int], ...]    # (row, col, kind)
    distractors: tuple[tuple[int, int, int], ...]
    target: tuple[int, ...] = field(default=())   # finding tokens + EOS

    @property
    def fused(self) -> np.ndarray:
        return np.maximum(self.lung_mask, self.heart_mask)


def synth_instance(seed: int, grid: int = 32, n_findings: int = 2,
                   n_distractors: int = 2,
                   n_types: int = DEFAULT_N_TYPES) -> SyntheticInstance:
    if grid < 8:
        raise ValueError(f"grid must be >= 8, got {grid}")
    if n_findings < 0:
        raise ValueError(f"n_findings must be >= 0, got {n_findings}")
    if n_distractors < 0:
        raise ValueError(f"n_distractors must be >= 0, got {n_distractors}")
    rng = np.random.default_rng(seed)
    lung, heart = region_template(grid, rng)
    fused = np.maximum(lung, heart)

    inside = np.argwhere(fused > 0.0)
    outside = np.argwhere(fused == 0.0)
    if len(inside) < n_findings:
        raise ValueError(
            f"infeasible packing: {n_findings} findings into {len(inside)} region cells")
    if len(outside) < n_distractors:
        raise ValueError(
            f"infeasible packing: {n_distractors} distractors into {len(outside)} free cells")

    image = BACKGROUND_LEVEL * fused
    picks_in = inside[rng.choice(len(inside), size=n_findings, replace=False)]
    picks_out = outside[rng.choice(len(outside), size=n_distractors, replace=False)]

    findings = []
    for row, col in picks_in:
        kind = int(rng.integers(0, n_types))
        image[row, col] = marker_intensity(kind, n_types)
        findings.append((int(row), int(col), kind))
    distractors = []
    for row, col in picks_out:
        kind = int(rng.integers(0, n_types))
        image[row, col] = marker_intensity(kind, n_types)
        distractors.append((int(row), int(col), kind))

    findings.sort()  # reading order: row-major scan
    target = tuple(finding_token(k, n_types) for _, _, k in findings) + (EOS,)
    for arr in (image, lung, heart):
        arr.flags.writeable = False
    return SyntheticInstance(
        seed=seed, image=image, lung_mask=lung, heart_mask=heart,
        findings=tuple(findings), distractors=tuple(distractors), target=target)


def make_dataset(n: int, grid: int = 32, seed: int = 0,
                 max_findings: int = 3, max_distractors: int = 3,
                 n_types: int = DEFAULT_N_TYPES) -> list[SyntheticInstance]:
    """n instances with per-instance seeds drawn from one master stream."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    master = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        inst_seed = int(master.integers(0, 2 ** 63))
        n_f = int(master.integers(1, max_findings + 1))
        n_d = int(master.integers(0, max_distractors + 1))
        out.append(synth_instance(inst_seed, grid=grid, n_findings=n_f,
                                  n_distractors=n_d, n_types=n_types))
    return out


def token_accuracy(generated, reference) -> float:
    """Position-wise match fraction over the longer of the two sequences."""
    gen = list(generated)
    ref = list(reference)
    span = max(len(gen), len(ref))
    if span == 0:
        return 1.0
    hits = sum(1 for g, r in zip(gen, ref) if g == r)
    return hits / span


def region_token_accuracy(generated, reference,
                          n_types: int = DEFAULT_N_TYPES) -> float:
    """Multiset overlap of finding tokens: |gen ∩ ref| / max(|ref|, 1)."""
    from collections import Counter
    lo, hi = FINDING_BASE, FINDING_BASE + n_types
    gen = Counter(t for t in generated if lo <= t < hi)
    ref = Counter(t for t in reference if lo <= t < hi)
    overlap = sum((gen & ref).values())
    return overlap / max(sum(ref.values()), 1)
