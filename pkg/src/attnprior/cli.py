"""Command-line surface: smooth | bias | train | generate | compare.

Every flag has a config-file equivalent (flat key=value lines); flags
override file values.  Exit codes: 0 success, 1 usage error, 2 I/O error,
3 invariant violation.
"""

import argparse
import os
import sys
import time

from .ablation import ExperimentConfig, run_ablation, train_single, write_report_csv
from .bias import BiasMode, BiasPlan, make_causal_mask, make_layer_bias
from .decoder import load_checkpoint, save_checkpoint
from .fileio import (FileFormatError, load_mask_pgm, parse_config_file,
                     write_bias_csv, write_gray_pgm, write_layers_csv,
                     write_loss_curve_csv)
from .masks import (DEFAULT_GRID, DEFAULT_K_BASE, DEFAULT_K_INCR,
                    DEFAULT_LAYERS, SmoothingSchedule, build_mask_stack,
                    fuse_masks)
from .optim import cosine_schedule
from .synth import EOS, synth_instance


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route through our own codes.
    def error(self, message):
        raise _UsageError(message)


def _parse_bool(text: str, key: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise _UsageError(f"bad boolean for {key}: {text!r}")


def _cfg_int(cfg: dict, key: str, default: int) -> int:
    if key not in cfg:
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise _UsageError(f"bad integer for {key}: {cfg[key]!r}") from None


def _cfg_float(cfg: dict, key: str, default: float) -> float:
    if key not in cfg:
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise _UsageError(f"bad number for {key}: {cfg[key]!r}") from None


def _parse_mode(text: str) -> BiasMode:
    try:
        return BiasMode(text)
    except ValueError:
        raise _UsageError(
            f"bad mode {text!r} (choose from nomask, mask, hidden)") from None


def _merged_config(args) -> dict[str, str]:
    """Config file contents overlaid with any flags that were given."""
    merged = dict(parse_config_file(args.config)) if getattr(args, "config", None) else {}
    direct = {"out": "out", "seed": "seed", "mode": "mode",
              "layers": "n_layers", "k_base": "k_base", "k_incr": "k_incr",
              "scale": "scale", "checkpoint": "checkpoint",
              "max_new": "max_new", "findings": "findings",
              "distractors": "distractors", "layer": "layer",
              "t_rep": "t_rep", "total_len": "total_len"}
    for attr, key in direct.items():
        value = getattr(args, attr, None)
        if value is not None:
            merged[key] = str(value)
    if getattr(args, "no_normalize", False):
        merged["normalize"] = "false"
    return merged


def _schedule_from(cfg: dict, n_layers: int) -> SmoothingSchedule:
    return SmoothingSchedule(
        n_layers=n_layers,
        k_base=_cfg_int(cfg, "k_base", DEFAULT_K_BASE),
        k_incr=_cfg_int(cfg, "k_incr", DEFAULT_K_INCR))


def _experiment_config(cfg: dict) -> ExperimentConfig:
    spent = {k: v for k, v in cfg.items()
             if k not in ("out", "seed", "mode", "checkpoint", "findings",
                          "distractors", "layer", "t_rep", "total_len")}
    try:
        return ExperimentConfig.from_mapping(spent)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None


def _load_fused(lung_path, heart_path):
    lung = load_mask_pgm(lung_path, size=DEFAULT_GRID)
    heart = load_mask_pgm(heart_path, size=DEFAULT_GRID)
    return fuse_masks(lung, heart)


def _plan_for_mask(fused, mode: BiasMode, schedule: SmoothingSchedule,
                   normalize: bool, scale: float) -> BiasPlan:
    if mode is BiasMode.NO_MASK:
        return BiasPlan.no_mask(schedule.n_layers, fused.size)
    if mode is BiasMode.MASK:
        stack = build_mask_stack(fused, schedule, normalize=normalize)
        return BiasPlan.from_stack(stack, scale=scale)
    return BiasPlan.hidden(fused, schedule.n_layers)


# ----------------------------------------------------------------- commands

def cmd_smooth(args) -> int:
    cfg = _merged_config(args)
    out = cfg.get("out", ".")
    n_layers = _cfg_int(cfg, "n_layers", DEFAULT_LAYERS)
    normalize = _parse_bool(cfg.get("normalize", "true"), "normalize")
    fused = _load_fused(args.lung, args.heart)
    schedule = _schedule_from(cfg, n_layers)
    stack = build_mask_stack(fused, schedule, normalize=normalize)
    os.makedirs(out, exist_ok=True)
    write_gray_pgm(os.path.join(out, "fused.pgm"), fused)
    for layer in range(1, n_layers + 1):
        write_gray_pgm(os.path.join(out, f"layer_{layer:02d}.pgm"), stack.layer(layer))
    write_layers_csv(os.path.join(out, "layers.csv"), stack)
    from . import figures
    figures.save_mask_stack_figure(os.path.join(out, "mask_stack.png"),
                                   fused, stack, schedule.kernel_sizes)
    print(f"wrote fused.pgm, {n_layers} layer PGMs, layers.csv, mask_stack.png to {out}")
    return 0


def cmd_bias(args) -> int:
    cfg = _merged_config(args)
    out = cfg.get("out", ".")
    mode = _parse_mode(cfg.get("mode", "mask"))
    n_layers = _cfg_int(cfg, "n_layers", DEFAULT_LAYERS)
    normalize = _parse_bool(cfg.get("normalize", "true"), "normalize")
    scale = _cfg_float(cfg, "scale", 1.0)
    layer = _cfg_int(cfg, "layer", 1)
    t_rep = _cfg_int(cfg, "t_rep", 4)

    if mode is BiasMode.NO_MASK:
        visual_len = DEFAULT_GRID * DEFAULT_GRID
        if args.lung is not None and args.heart is not None:
            visual_len = _load_fused(args.lung, args.heart).size
        plan = BiasPlan.no_mask(n_layers, visual_len)
    else:
        if args.lung is None or args.heart is None:
            raise _UsageError(f"mode {mode.value} requires LUNG_PGM and HEART_PGM")
        fused = _load_fused(args.lung, args.heart)
        visual_len = fused.size
        plan = _plan_for_mask(fused, mode, _schedule_from(cfg, n_layers),
                              normalize, scale)

    total_len = _cfg_int(cfg, "total_len", visual_len + t_rep)
    causal = make_causal_mask(t_rep, total_len, query_offset=total_len - t_rep)
    matrix = make_layer_bias(plan, layer, t_rep, total_len, causal)
    os.makedirs(out, exist_ok=True)
    write_bias_csv(os.path.join(out, "bias.csv"), matrix, mode.value, layer,
                   t_rep, total_len, scale)
    from . import figures
    figures.save_bias_heatmap(os.path.join(out, "bias.png"), matrix,
                              title=f"{mode.value}, layer {layer}")
    print(f"wrote bias.csv and bias.png to {out} "
          f"({t_rep}x{total_len}, mode {mode.value}, layer {layer})")
    return 0


def cmd_train(args) -> int:
    cfg = _merged_config(args)
    out = cfg.get("out", ".")
    seed = _cfg_int(cfg, "seed", 0)
    mode = _parse_mode(cfg.get("mode", "mask"))
    exp = _experiment_config(cfg)
    model, result = train_single(exp, mode, seed, progress=print)
    total = exp.total_steps
    warmup = int(round(exp.warmup_frac * total))
    lrs = [cosine_schedule(s, total, warmup, exp.base_lr) for s in range(total)]
    os.makedirs(out, exist_ok=True)
    save_checkpoint(os.path.join(out, "checkpoint.ckpt"), model)
    write_loss_curve_csv(os.path.join(out, "loss_curve.csv"), result.losses, lrs)
    from . import figures
    figures.save_loss_curve_figure(os.path.join(out, "loss_curve.png"),
                                   result.losses, lrs)
    print(f"[{mode.value} seed {seed}] eval: final_loss {result.final_loss:.4f} "
          f"token_acc {result.token_accuracy:.4f} "
          f"region_acc {result.region_token_accuracy:.4f} "
          f"({result.runtime_s:.1f}s train)")
    print(f"wrote checkpoint.ckpt, loss_curve.csv, loss_curve.png to {out}")
    return 0


def cmd_generate(args) -> int:
    cfg = _merged_config(args)
    ckpt = cfg.get("checkpoint")
    if not ckpt:
        raise _UsageError("generate requires --checkpoint (or a checkpoint= config entry)")
    model = load_checkpoint(ckpt)
    seed = _cfg_int(cfg, "seed", 0)
    mode = _parse_mode(cfg.get("mode", "mask"))
    max_new = _cfg_int(cfg, "max_new", 8)
    normalize = _parse_bool(cfg.get("normalize", "true"), "normalize")
    scale = _cfg_float(cfg, "scale", 1.0)
    n_layers = _cfg_int(cfg, "n_layers", model.config.n_layers)
    if n_layers != model.config.n_layers:
        raise ValueError(
            f"schedule depth {n_layers} != checkpoint layer count {model.config.n_layers}")
    inst = synth_instance(seed, grid=model.config.grid,
                          n_findings=_cfg_int(cfg, "findings", 2),
                          n_distractors=_cfg_int(cfg, "distractors", 2))
    plan = _plan_for_mask(inst.fused, mode, _schedule_from(cfg, n_layers),
                          normalize, scale)
    tokens = model.generate(inst.image, plan, max_new=max_new, eos=EOS)
    print(" ".join(str(t) for t in tokens))
    return 0


def cmd_compare(args) -> int:
    cfg = _merged_config(args)
    out = cfg.get("out", ".")
    if "mode" in cfg:
        cfg["modes"] = cfg["mode"]
    if "seed" in cfg:
        cfg["seeds"] = cfg["seed"]
    exp = _experiment_config(cfg)
    started = time.perf_counter()
    report = run_ablation(exp, progress=print)
    elapsed = time.perf_counter() - started
    os.makedirs(out, exist_ok=True)
    write_report_csv(report, os.path.join(out, "report.csv"))
    from . import figures
    figures.save_ablation_figure(os.path.join(out, "ablation.png"), report)
    print(f"{'mode':<8} {'final_loss':>10} {'token_acc':>10} {'region_acc':>11}")
    for mode in exp.modes:
        print(f"{mode.value:<8} "
              f"{report.mean_metric(mode, 'final_loss'):>10.4f} "
              f"{report.mean_metric(mode, 'token_accuracy'):>10.4f} "
              f"{report.mean_metric(mode, 'region_token_accuracy'):>11.4f}")
    print(f"total runtime: {elapsed:.1f}s")
    print(f"wrote report.csv and ablation.png to {out}")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> _Parser:
    parser = _Parser(prog="attnprior",
                     description="Mask-guided attention biasing: smoothing, "
                                 "bias dumps, training, and mode comparison.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{smooth,bias,train,generate,compare}")

    def add_common(p, schedule=True, seed_mode=True):
        p.add_argument("--config", metavar="PATH",
                       help="flat key=value config file (flags override it)")
        p.add_argument("--out", metavar="DIR", help="output directory (default .)")
        if seed_mode:
            p.add_argument("--seed", type=int, metavar="N", help="run seed")
            p.add_argument("--mode", choices=[m.value for m in BiasMode],
                           help="bias mode")
        if schedule:
            p.add_argument("--layers", type=int, metavar="N",
                           help="layer count for the smoothing ladder")
            p.add_argument("--k-base", type=int, dest="k_base", metavar="K",
                           help="deepest-layer kernel size (odd)")
            p.add_argument("--k-incr", type=int, dest="k_incr", metavar="K",
                           help="kernel growth per layer toward layer 1 (even)")
            p.add_argument("--no-normalize", action="store_true",
                           help="skip rescaling each smoothed layer to peak 1")
            p.add_argument("--scale", type=float, metavar="X",
                           help="multiplier on soft bias values")

    ps = sub.add_parser("smooth", help="fuse two region masks, write the smoothed stack")
    ps.add_argument("lung", metavar="LUNG_PGM")
    ps.add_argument("heart", metavar="HEART_PGM")
    add_common(ps, seed_mode=False)
    ps.set_defaults(func=cmd_smooth)

    pb = sub.add_parser("bias", help="dump one layer's bias matrix")
    pb.add_argument("lung", metavar="LUNG_PGM", nargs="?")
    pb.add_argument("heart", metavar="HEART_PGM", nargs="?")
    add_common(pb)
    pb.add_argument("--layer", type=int, metavar="N", help="1-indexed layer to dump")
    pb.add_argument("--t-rep", type=int, dest="t_rep", metavar="N",
                    help="number of query rows")
    pb.add_argument("--total-len", type=int, dest="total_len", metavar="N",
                    help="total key length")
    pb.set_defaults(func=cmd_bias)

    pt = sub.add_parser("train", help="train one model and save a checkpoint")
    add_common(pt)
    pt.set_defaults(func=cmd_train)

    pg = sub.add_parser("generate", help="decode one synthetic instance from a checkpoint")
    add_common(pg)
    pg.add_argument("--checkpoint", metavar="PATH", help="checkpoint file to load")
    pg.add_argument("--max-new", type=int, dest="max_new", metavar="N",
                    help="generation budget (default 8)")
    pg.add_argument("--findings", type=int, metavar="N",
                    help="in-region markers in the instance (default 2)")
    pg.add_argument("--distractors", type=int, metavar="N",
                    help="out-of-region markers in the instance (default 2)")
    pg.set_defaults(func=cmd_generate)

    pc = sub.add_parser("compare", help="run the mode-comparison experiment")
    add_common(pc)
    pc.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FileFormatError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
