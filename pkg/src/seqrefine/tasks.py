"""Task registry: dataset construction and per-sample evaluation.

A task binds a region geometry (count, dimension, layout), the model
width that suits it, and encode/decode/evaluate logic. Metrics are
reported per sample as floats whose mean over a batch is the published
rate: a validity or balance indicator contributes 0/1 values, the rest
are plain means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import evenpixels, sudoku
from .schedule import RegionSample

TASK_NAMES = ("sudoku4", "sudoku9", "even_pixels")


@dataclass(frozen=True)
class TaskContext:
    name: str
    n_regions: int
    dim: int
    layout: tuple[int, int]
    hidden: int
    layers: int
    order: int | None = None                       # sudoku grid order n
    codebook: sudoku.GlyphCodebook | None = None


def get_task(name: str, codebook_seed: int = 0) -> TaskContext:
    if name == "sudoku4":
        return TaskContext("sudoku4", 16, sudoku.GLYPH_DIM, (4, 4), 128, 4,
                           order=2, codebook=sudoku.make_codebook(4, codebook_seed))
    if name == "sudoku9":
        return TaskContext("sudoku9", 81, sudoku.GLYPH_DIM, (9, 9), 128, 4,
                           order=3, codebook=sudoku.make_codebook(9, codebook_seed))
    if name == "even_pixels":
        return TaskContext("even_pixels", evenpixels.N_PATCHES, evenpixels.PATCH_DIM,
                           (evenpixels.GRID_SIDE, evenpixels.GRID_SIDE), 96, 4)
    raise ValueError(f"unknown task {name!r}; expected one of {TASK_NAMES}")


def training_dataset(task: TaskContext, rng: np.random.Generator,
                     size: int | None = None) -> list[RegionSample]:
    """Clean samples to train on.

    sudoku4 uses every one of the 288 valid grids; sudoku9 and
    even_pixels stream freshly generated instances.
    """
    if task.name == "sudoku4":
        return [sudoku.encode_grid(g, task.codebook) for g in sudoku.enumerate_grids(2)]
    if task.name == "sudoku9":
        return [sudoku.encode_grid(sudoku.gen_sudoku(3, rng), task.codebook)
                for _ in range(size or 2048)]
    if task.name == "even_pixels":
        return [evenpixels.image_to_regions(evenpixels.gen_even_pixels(rng))
                for _ in range(size or 4096)]
    raise ValueError(f"unknown task {task.name!r}")


def sample_metrics(task: TaskContext, sample: RegionSample) -> dict[str, float]:
    """Per-sample metric values; means over a batch give the reported rates."""
    if task.codebook is not None:
        grid = sudoku.decode_sample(sample, task.codebook)
        valid, _ = sudoku.check_sudoku_valid(grid)
        return {"valid_rate": float(valid)}
    result = evenpixels.eval_even_pixels(evenpixels.regions_to_image(sample))
    return {
        "balance_rate": float(result.balance_pass),
        "pixel_error": float(result.pixel_error),
        "sat_std": result.sat_std,
        "val_std": result.val_std,
    }


def metric_names(task: TaskContext) -> list[str]:
    if task.codebook is not None:
        return ["valid_rate"]
    return ["balance_rate", "pixel_error", "sat_std", "val_std"]


@dataclass(frozen=True)
class EvalReport:
    task: str
    n_samples: int
    metrics: dict[str, float]
    stderr: dict[str, float]


def batch_metrics(samples: list[RegionSample], task: TaskContext) -> EvalReport:
    """Metric means with standard errors over a batch of samples."""
    if not samples:
        raise ValueError("batch_metrics needs a nonempty batch")
    if any(s.n_regions != task.n_regions or s.dim != task.dim for s in samples):
        raise ValueError(f"batch contains samples that do not fit task {task.name!r}")
    per = [sample_metrics(task, s) for s in samples]
    names = metric_names(task)
    means: dict[str, float] = {}
    errs: dict[str, float] = {}
    for name in names:
        vals = np.array([p[name] for p in per])
        means[name] = float(vals.mean())
        errs[name] = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return EvalReport(task.name, len(samples), means, errs)
