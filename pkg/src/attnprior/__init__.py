"""Mask-guided attention biasing for a small visual-prefix decoder.

Pipeline: binary region masks are fused and Gaussian-smoothed into one map
per decoder layer (wider kernels in earlier layers), flattened, tiled across
query rows, restricted by the causal mask, and added to attention logits.
A hard variant eliminates out-of-region visual keys outright.  The decoder,
trainer, synthetic task, and CLI exist to measure what the bias does.
"""

from .ablation import (ExperimentConfig, ExperimentReport, RunResult,
                       run_ablation, train_single, write_report_csv)
from .bias import (BiasMode, BiasPlan, apply_causal_restriction, bias_logits,
                   extend_bias_row, flatten_mask, hidden_mask_flat,
                   make_causal_mask, make_layer_bias, tile_bias,
                   unflatten_mask)
from .decoder import (DecoderConfig, DecoderModel, check_gradients,
                      cross_entropy, cross_entropy_with_grad,
                      interpolate_positions, load_checkpoint,
                      parameter_shapes, params_checksum, save_checkpoint)
from .fileio import FileFormatError, load_mask_pgm, read_pgm, write_gray_pgm
from .masks import (MaskStack, SmoothingSchedule, build_mask_stack,
                    fuse_masks, gaussian_kernel_1d, kernel_size_for_layer,
                    sigma_for_kernel, smooth_separable, validate_binary_mask)
from .numerics import (NEG_INF, conv2d_full, finite_diff_grad, matmul,
                       softmax_rows)
from .optim import AdamW, TrainConfig, cosine_schedule, resolve_total_steps
from .synth import (EOS, PAD, SyntheticInstance, make_dataset,
                    region_token_accuracy, synth_instance, token_accuracy)

__version__ = "0.1.0"

__all__ = [
    "AdamW", "BiasMode", "BiasPlan", "DecoderConfig", "DecoderModel",
    "EOS", "ExperimentConfig", "ExperimentReport", "FileFormatError",
    "MaskStack", "NEG_INF", "PAD", "RunResult", "SmoothingSchedule",
    "SyntheticInstance", "TrainConfig", "apply_causal_restriction",
    "bias_logits", "build_mask_stack", "check_gradients", "conv2d_full",
    "cosine_schedule", "cross_entropy", "cross_entropy_with_grad",
    "extend_bias_row", "finite_diff_grad", "flatten_mask", "fuse_masks",
    "gaussian_kernel_1d", "hidden_mask_flat", "interpolate_positions",
    "kernel_size_for_layer", "load_checkpoint", "load_mask_pgm",
    "make_causal_mask", "make_dataset", "make_layer_bias", "matmul",
    "parameter_shapes", "params_checksum", "read_pgm",
    "region_token_accuracy", "resolve_total_steps", "run_ablation",
    "save_checkpoint", "sigma_for_kernel", "smooth_separable",
    "softmax_rows", "synth_instance", "token_accuracy", "train_single",
    "validate_binary_mask", "write_gray_pgm", "write_report_csv",
]
