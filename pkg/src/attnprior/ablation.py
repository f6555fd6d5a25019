"""Ablation harness: train matched models under each bias mode and compare.

For a given seed, every mode sees the same dataset, the same initial
parameters (verified via checksum), and the same batch order; the only
difference is the attention-bias plan, so score deltas are attributable to
the bias alone.
"""

import time
from dataclasses import dataclass, fields

import numpy as np

from .bias import BiasMode, BiasPlan
from .decoder import DecoderConfig, DecoderModel, cross_entropy, params_checksum
from .masks import SmoothingSchedule, build_mask_stack
from .optim import AdamW, TrainConfig, cosine_schedule
from .synth import EOS, PAD, make_dataset, region_token_accuracy, token_accuracy


@dataclass(frozen=True)
class ExperimentConfig:
    modes: tuple[BiasMode, ...] = (BiasMode.NO_MASK, BiasMode.MASK, BiasMode.HIDDEN_MASK)
    seeds: tuple[int, ...] = (0, 1, 2)
    n_train: int = 256
    n_eval: int = 64
    grid: int = 8
    n_types: int = 6
    max_findings: int = 3
    max_distractors: int = 3
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    vocab_size: int = 16
    max_pos: int = 96
    ffn_mult: int = 4
    k_base: int = 3
    k_incr: int = 2
    normalize: bool = True
    scale: float = 1.0
    base_lr: float = 2e-3
    batch_size: int = 8
    total_steps: int = 2000
    warmup_frac: float = 0.05
    weight_decay: float = 0.01
    max_new: int = 8

    def __post_init__(self):
        # accept plain strings for modes ("mask") and canonicalize
        object.__setattr__(self, "modes", tuple(BiasMode(m) for m in self.modes))
        self.decoder_config  # validates the decoder-side fields
        self.schedule        # validates the smoothing ladder
        if not self.modes:
            raise ValueError("need at least one mode")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.n_train < self.batch_size:
            raise ValueError(
                f"n_train {self.n_train} smaller than batch_size {self.batch_size}")
        if self.max_new < 1:
            raise ValueError(f"max_new must be >= 1, got {self.max_new}")

    @property
    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            d_model=self.d_model, n_layers=self.n_layers, n_heads=self.n_heads,
            vocab_size=self.vocab_size, visual_len=self.grid * self.grid,
            max_pos=self.max_pos, ffn_mult=self.ffn_mult)

    @property
    def schedule(self) -> SmoothingSchedule:
        return SmoothingSchedule(n_layers=self.n_layers, k_base=self.k_base,
                                 k_incr=self.k_incr)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(base_lr=self.base_lr, batch_size=self.batch_size,
                           weight_decay=self.weight_decay,
                           warmup_frac=self.warmup_frac,
                           total_steps=self.total_steps)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        """Build from string-valued key=value pairs (config-file contents)."""
        kwargs = {}
        by_name = {f.name: f for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in by_name:
                raise ValueError(f"unknown config key: {key}")
            if key == "modes":
                kwargs[key] = tuple(BiasMode(part.strip())
                                    for part in str(raw).split(",") if part.strip())
            elif key == "seeds":
                kwargs[key] = tuple(int(part) for part in str(raw).split(",") if part.strip())
            elif key in ("normalize",):
                text = str(raw).strip().lower()
                if text not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"bad boolean for {key}: {raw}")
                kwargs[key] = text in ("true", "1", "yes")
            elif key in ("scale", "base_lr", "warmup_frac", "weight_decay"):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)


@dataclass(frozen=True)
class RunResult:
    mode: str
    seed: int
    init_checksum: str
    final_loss: float
    token_accuracy: float
    region_token_accuracy: float
    losses: tuple[float, ...]
    runtime_s: float


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    runs: tuple[RunResult, ...]

    def runs_for(self, mode) -> list[RunResult]:
        name = mode.value if isinstance(mode, BiasMode) else str(mode)
        return [r for r in self.runs if r.mode == name]

    def mean_metric(self, mode, metric: str) -> float:
        rows = self.runs_for(mode)
        if not rows:
            raise ValueError(f"no runs for mode {mode}")
        return float(np.mean([getattr(r, metric) for r in rows]))


def _plans_for(instances, mode, schedule, normalize, scale, visual_len, n_layers):
    if mode is BiasMode.NO_MASK:
        plan = BiasPlan.no_mask(n_layers, visual_len)
        return [plan] * len(instances)
    out = []
    for inst in instances:
        if mode is BiasMode.MASK:
            stack = build_mask_stack(inst.fused, schedule, normalize=normalize)
            out.append(BiasPlan.from_stack(stack, scale=scale))
        else:
            out.append(BiasPlan.hidden(inst.fused, n_layers))
    return out


def _batch_arrays(instances, idx):
    sel = [instances[i] for i in idx]
    images = np.stack([inst.image for inst in sel])
    t_max = max(len(inst.target) for inst in sel)
    toks = np.full((len(sel), t_max), PAD, dtype=np.int64)
    tgts = np.full((len(sel), t_max + 1), PAD, dtype=np.int64)
    for b, inst in enumerate(sel):
        n = len(inst.target)
        toks[b, :n] = inst.target
        tgts[b, :n] = inst.target
    return images, toks, tgts


def _eval_loss(model, instances, plans, batch_size):
    total, count = 0.0, 0
    for lo in range(0, len(instances), batch_size):
        idx = range(lo, min(lo + batch_size, len(instances)))
        images, toks, tgts = _batch_arrays(instances, idx)
        logits, _ = model.forward(images, toks, [plans[i] for i in idx])
        n = int((tgts != PAD).sum())
        total += cross_entropy(logits, tgts, pad_id=PAD) * n
        count += n
    return total / count


def train_single(config: ExperimentConfig, mode: BiasMode, seed: int,
                 progress=None) -> tuple[DecoderModel, RunResult]:
    """Train one model under one mode; deterministic in (config, mode, seed)."""
    mode = BiasMode(mode)
    dec_cfg = config.decoder_config
    train_set = make_dataset(config.n_train, grid=config.grid, seed=[seed, 1],
                             max_findings=config.max_findings,
                             max_distractors=config.max_distractors,
                             n_types=config.n_types)
    eval_set = make_dataset(config.n_eval, grid=config.grid, seed=[seed, 2],
                            max_findings=config.max_findings,
                            max_distractors=config.max_distractors,
                            n_types=config.n_types)
    plans_train = _plans_for(train_set, mode, config.schedule, config.normalize,
                             config.scale, dec_cfg.visual_len, config.n_layers)
    plans_eval = _plans_for(eval_set, mode, config.schedule, config.normalize,
                            config.scale, dec_cfg.visual_len, config.n_layers)

    model = DecoderModel.init(dec_cfg, seed)
    checksum = params_checksum(model)
    optimizer = AdamW(weight_decay=config.weight_decay)
    order_rng = np.random.default_rng([seed, 3])

    total = config.total_steps
    warmup = int(round(config.warmup_frac * total))
    report_every = max(1, total // 10)
    losses = []
    perm: list[int] = []
    started = time.perf_counter()
    for step in range(total):
        if len(perm) < config.batch_size:
            perm = list(order_rng.permutation(config.n_train))
        idx = [perm.pop() for _ in range(config.batch_size)]
        images, toks, tgts = _batch_arrays(train_set, idx)
        lr = cosine_schedule(step, total, warmup, config.base_lr)
        loss, grads = model.loss_and_grads(
            images, toks, tgts, [plans_train[i] for i in idx], pad_id=PAD)
        optimizer.step(model.params, grads, lr)
        losses.append(float(loss))
        if progress is not None and (step + 1) % report_every == 0:
            progress(f"[{mode.value} seed {seed}] step {step + 1}/{total} "
                     f"loss {loss:.4f}")
    runtime = time.perf_counter() - started

    final_loss = _eval_loss(model, eval_set, plans_eval, config.batch_size)
    tok_accs, reg_accs = [], []
    for i, inst in enumerate(eval_set):
        out = model.generate(inst.image, plans_eval[i], max_new=config.max_new,
                             eos=EOS)
        tok_accs.append(token_accuracy(out, inst.target))
        reg_accs.append(region_token_accuracy(out, inst.target, config.n_types))
    result = RunResult(
        mode=mode.value, seed=seed, init_checksum=checksum,
        final_loss=float(final_loss),
        token_accuracy=float(np.mean(tok_accs)),
        region_token_accuracy=float(np.mean(reg_accs)),
        losses=tuple(losses), runtime_s=runtime)
    return model, result


def run_ablation(config: ExperimentConfig, progress=None,
                 out_csv=None) -> ExperimentReport:
    runs = []
    for seed in config.seeds:
        for mode in config.modes:
            _, result = train_single(config, mode, seed, progress=progress)
            runs.append(result)
            if progress is not None:
                progress(f"[{mode.value} seed {seed}] done: "
                         f"final_loss {result.final_loss:.4f} "
                         f"region_acc {result.region_token_accuracy:.4f} "
                         f"({result.runtime_s:.1f}s)")
    report = ExperimentReport(config=config, runs=tuple(runs))
    if out_csv is not None:
        write_report_csv(report, out_csv)
    return report


def write_report_csv(report: ExperimentReport, path) -> None:
    from .fileio import write_csv
    write_csv(path, report_rows(report))


def report_rows(report: ExperimentReport) -> list[list[str]]:
    """CSV rows: one per run plus one mean row per mode.

    Runtime is deliberately not a column — the file must be identical
    between repeat runs; timings go to the console instead.
    """
    from .fileio import format_float
    rows = [["mode", "seed", "init_checksum", "final_loss",
             "token_accuracy", "region_token_accuracy"]]
    for r in report.runs:
        rows.append([r.mode, str(r.seed), r.init_checksum,
                     format_float(r.final_loss), format_float(r.token_accuracy),
                     format_float(r.region_token_accuracy)])
    for mode in report.config.modes:
        rows.append([mode.value, "mean", "",
                     format_float(report.mean_metric(mode, "final_loss")),
                     format_float(report.mean_metric(mode, "token_accuracy")),
                     format_float(report.mean_metric(mode, "region_token_accuracy"))])
    return rows
