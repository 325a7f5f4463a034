"""Sequential region-wise diffusion with iterative partial refinement.

A desk-scale laboratory built on numpy: a noise schedule over per-region
noise levels, a small transformer denoiser trained with manual
backpropagation, an overlapped sequential sampler, the iterative partial
refinement loop, two synthetic evaluation tasks (glyph Sudoku and Even
Pixels), and a seeded experiment driver exposed through the ``seqrefine``
command.
"""

from .schedule import (NoiseSchedule, RegionSample, ScheduleDomainError,
                       SingularityError, T_MAX, clean_sample, forward_noise,
                       predict_x0, predict_x0_all, schedule_eval, validate_levels)
from .denoiser import (DenoiserModel, TrainConfig, TrainingDivergedError,
                       denoise_predict, gradient_check, sample_noise_config, train)
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .sampler import (GenerationTrace, SchedulerConfig, StepRecord, build_schedule,
                      denoise_step, generate, generate_batch, run_schedule,
                      schedule_total_steps, select_next_region)
from .refine import (ComputeLedger, RefinementConfig, corrupt_swap,
                     expected_iteration_calls, refine, refine_batch, renoise,
                     select_subset)
from .sudoku import (GlyphCodebook, check_sudoku_valid, decode_sample, encode_grid,
                     enumerate_grids, gen_sudoku, grid_from_text, grid_to_text,
                     hint_condition, make_codebook, make_hint_condition)
from .evenpixels import (EvenPixelsResult, eval_even_pixels, gen_even_pixels,
                         hsv_to_rgb, image_to_regions, load_even_pixels,
                         regions_to_image, rgb_to_hsv, save_even_pixels)
from .tasks import (EvalReport, TaskContext, batch_metrics, get_task,
                    metric_names, sample_metrics, training_dataset)
from .experiment import (ExperimentConfig, ResultTable, cmd_ablate,
                         cmd_corrupt_recover, cmd_eval, cmd_generate, cmd_refine,
                         cmd_report, cmd_train, default_config, load_config,
                         save_config)

__version__ = "0.1.0"

__all__ = [
    "T_MAX", "NoiseSchedule", "RegionSample", "ScheduleDomainError",
    "SingularityError", "clean_sample", "forward_noise", "predict_x0",
    "predict_x0_all", "schedule_eval", "validate_levels",
    "DenoiserModel", "TrainConfig", "TrainingDivergedError", "denoise_predict",
    "gradient_check", "sample_noise_config", "train",
    "CheckpointFormatError", "load_checkpoint", "save_checkpoint",
    "GenerationTrace", "SchedulerConfig", "StepRecord", "build_schedule",
    "denoise_step", "generate", "generate_batch", "run_schedule",
    "schedule_total_steps", "select_next_region",
    "ComputeLedger", "RefinementConfig", "corrupt_swap",
    "expected_iteration_calls", "refine", "refine_batch", "renoise",
    "select_subset",
    "GlyphCodebook", "check_sudoku_valid", "decode_sample", "encode_grid",
    "enumerate_grids", "gen_sudoku", "grid_from_text", "grid_to_text",
    "hint_condition", "make_codebook", "make_hint_condition",
    "EvenPixelsResult", "eval_even_pixels", "gen_even_pixels", "hsv_to_rgb",
    "image_to_regions", "load_even_pixels", "regions_to_image", "rgb_to_hsv",
    "save_even_pixels",
    "EvalReport", "TaskContext", "batch_metrics", "get_task", "metric_names",
    "sample_metrics", "training_dataset",
    "ExperimentConfig", "ResultTable", "cmd_ablate", "cmd_corrupt_recover",
    "cmd_eval", "cmd_generate", "cmd_refine", "cmd_report", "cmd_train",
    "default_config", "load_config", "save_config",
]
