"""Reproducible experiment drivers behind the command-line interface.

Every random draw comes from a named stream keyed by
(seed, sample index, purpose[, variant]), so commands that share a
purpose see bit-identical draws: refinement rows of the canonical
ablation variant equal a standalone refinement run, and iteration-0
metrics never depend on refinement parameters. Samples with equal
condition-set sizes run through the lockstep batch engines; results are
keyed by sample index, so the grouping does not affect per-sample
randomness.

Results land in ResultTable CSV files: header ``seed,r,metric,value,n``
after a ``# format=1`` line, one row per (seed, iteration, metric),
values averaged over the seed's samples. Refinement cost appears as the
``denoiser_calls`` metric (mean cumulative calls through iteration r)
next to ``baseline_calls`` (mean initial-generation calls).
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evenpixels, sudoku
from .checkpoint import load_checkpoint, save_checkpoint
from .denoiser import DenoiserModel, TrainConfig, train
from .refine import RefinementConfig, corrupt_swap, refine_batch
from .sampler import SchedulerConfig, generate_batch
from .tasks import TaskContext, get_task, metric_names, sample_metrics, training_dataset

TABLE_FORMAT = 1

# rng stream purposes
_GEN = 0          # dataset instance + initial generation of one sample
_REFINE = 1       # refinement of one sample (also the canonical ablation variant)
_VARIANT = 2      # refinement under a labeled variant (ablation cell, K value)
_DATASET = 3      # training dataset construction
_TRAIN = 4        # training loop draws
_CORRUPT = 5      # swap-pair selection when corrupting a grid

ABLATION_RATIOS = (0.10, 0.25, 0.50)
ABLATION_NOISE = (("fresh", "fresh"), ("fixed_initial", "fixednoise"))
ABLATION_REGION = (("random_each_iteration", "random"), ("fixed_first_iteration", "fixedregion"))


def stream(seed: int, sample: int, purpose: int, extra: int | None = None) -> np.random.Generator:
    key = (seed, sample, purpose) if extra is None else (seed, sample, purpose, extra)
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass
class ExperimentConfig:
    task: str = "sudoku4"
    checkpoint: str = ""
    out_dir: str = "runs"
    seeds: tuple[int, ...] = (0, 1, 2)
    sample_count: int = 300
    codebook_seed: int = 0
    # initial generation
    init_steps_per_patch: int = 3
    init_overlap_ratio: float = 0.0
    stochasticity: float = 0.5
    selection: str = "sequential"
    # refinement
    ipr_steps_per_patch: int = 10
    ipr_overlap_ratio: float = 0.8
    resampling_ratio: float = 0.25
    iteration: int = 20
    noise_mode: str = "fresh"
    region_mode: str = "random_each_iteration"
    # training
    train_steps: int = 15000
    learning_rate: float = 0.05
    batch_size: int = 64
    dataset_size: int = 0
    # artifacts
    save_artifacts: int = 0

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    def init_scheduler(self) -> SchedulerConfig:
        return SchedulerConfig(self.init_steps_per_patch, self.init_overlap_ratio,
                               self.stochasticity, self.selection)

    def ipr_scheduler(self) -> SchedulerConfig:
        return SchedulerConfig(self.ipr_steps_per_patch, self.ipr_overlap_ratio,
                               self.stochasticity, self.selection)

    def refinement(self, condition_set=frozenset(), **overrides) -> RefinementConfig:
        base = dict(resampling_ratio=self.resampling_ratio, iterations=self.iteration,
                    refine_scheduler=self.ipr_scheduler(), noise_mode=self.noise_mode,
                    region_mode=self.region_mode, condition_set=condition_set)
        base.update(overrides)
        return RefinementConfig(**base)


def default_config(task: str) -> ExperimentConfig:
    """Per-task defaults; sudoku follows the reference settings, even_pixels
    runs 10 steps per patch instead of 30 to stay desk-scale."""
    if task in ("sudoku4", "sudoku9"):
        return ExperimentConfig(task=task)
    if task == "even_pixels":
        return ExperimentConfig(
            task=task, sample_count=200,
            init_steps_per_patch=10, init_overlap_ratio=0.9,
            ipr_steps_per_patch=10, ipr_overlap_ratio=0.9,
            iteration=50, train_steps=12000, learning_rate=0.03, batch_size=32)
    raise ValueError(f"unknown task {task!r}")


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    """Set config fields from string values (config file or CLI flags)."""
    for key, raw in overrides.items():
        if key == "task":
            continue
        if key not in _FIELD_TYPES:
            raise KeyError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if key == "seeds":
            value = tuple(int(v) for v in str(raw).replace(",", " ").split())
        elif isinstance(current, bool):
            value = str(raw).lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        else:
            value = str(raw)
        setattr(cfg, key, value)
    cfg.__post_init__()
    return cfg


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Flat key=value config with section headers; keys globally unique."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read(path, encoding="utf-8")
    flat: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in flat:
                raise ValueError(f"duplicate config key {key!r}")
            flat[key] = value
    merged = dict(flat)
    merged.update(overrides or {})
    cfg = default_config(merged.get("task", "sudoku4"))
    cfg.task = merged.get("task", cfg.task)
    return apply_overrides(cfg, merged)


def save_config(cfg: ExperimentConfig, path) -> None:
    lines = ["[experiment]"]
    for f in dataclasses.fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if f.name == "seeds":
            value = ",".join(str(s) for s in value)
        lines.append(f"{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class ResultTable:
    rows: list[tuple[int, int, str, float, int]] = field(default_factory=list)
    version: int = TABLE_FORMAT

    def add(self, seed: int, r: int, metric: str, value: float, n: int) -> None:
        self.rows.append((int(seed), int(r), str(metric), float(value), int(n)))

    def sorted_rows(self):
        return sorted(self.rows, key=lambda row: (row[0], row[1], row[2]))

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# format={self.version}", "seed,r,metric,value,n"]
        for seed, r, metric, value, n in self.sorted_rows():
            lines.append(f"{seed},{r},{metric},{value!r},{n}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @staticmethod
    def read_csv(path) -> "ResultTable":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) < 2 or not lines[0].startswith("# format=") \
                or lines[1] != "seed,r,metric,value,n":
            raise ValueError(f"{path}: not a result table")
        table = ResultTable(version=int(lines[0].split("=", 1)[1]))
        for line in lines[2:]:
            if not line:
                continue
            seed, r, metric, value, n = line.split(",")
            table.add(int(seed), int(r), metric, float(value), int(n))
        return table

    def values(self, metric: str, r: int | None = None):
        """Rows for one metric as (seed, r, value, n) tuples."""
        return [(s, it, v, n) for (s, it, m, v, n) in self.sorted_rows()
                if m == metric and (r is None or it == r)]


def _model_path(cfg: ExperimentConfig) -> Path:
    if cfg.checkpoint:
        return Path(cfg.checkpoint)
    return Path(cfg.out_dir) / f"{cfg.task}.ckpt"


def _load_model(cfg: ExperimentConfig, task: TaskContext) -> DenoiserModel:
    path = _model_path(cfg)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model = load_checkpoint(path)
    if model.n_regions != task.n_regions or model.dim != task.dim:
        raise ValueError(f"checkpoint {path} does not match task {task.name}")
    return model


def cmd_train(cfg: ExperimentConfig) -> tuple[Path, Path]:
    """Train the task model; write checkpoint plus per-step loss file."""
    task = get_task(cfg.task, cfg.codebook_seed)
    seed0 = cfg.seeds[0]
    dataset = training_dataset(task, stream(seed0, 0, _DATASET),
                               cfg.dataset_size or None)
    model = DenoiserModel(task.n_regions, task.dim, task.hidden, task.layers, seed=seed0)
    train_cfg = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                            steps=cfg.train_steps, seed=(seed0, 0, _TRAIN))
    model, history = train(model, dataset, train_cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"{cfg.task}.ckpt"
    save_checkpoint(model, ckpt)
    loss_path = out / f"{cfg.task}_loss.txt"
    loss_path.write_text("".join(f"{v!r}\n" for v in history), encoding="utf-8")
    return ckpt, loss_path


def _instances(task: TaskContext, seed: int, count: int):
    """Per-sample generators, condition maps, and (sudoku) source grids."""
    rngs = [stream(seed, i, _GEN) for i in range(count)]
    if task.codebook is None:
        return rngs, [None] * count, None
    conditions = []
    grids = []
    for rng in rngs:
        grid = sudoku.gen_sudoku(task.order, rng)
        cells, digits = sudoku.make_hint_condition(grid, rng)
        grids.append(grid)
        conditions.append(sudoku.hint_condition(cells, digits, task.codebook))
    return rngs, conditions, grids


def _groups_by_condition_size(conditions) -> list[list[int]]:
    groups: dict[int, list[int]] = {}
    for i, cond in enumerate(conditions):
        groups.setdefault(len(cond or {}), []).append(i)
    return [groups[k] for k in sorted(groups)]


def _generate_phase(model, task: TaskContext, cfg: ExperimentConfig, seed: int):
    """Initial samples for one seed, grouped by condition size under the hood."""
    count = cfg.sample_count
    rngs, conditions, grids = _instances(task, seed, count)
    codebook = task.codebook.vectors if task.codebook is not None else None
    scheduler = cfg.init_scheduler()
    samples = [None] * count
    noises = [None] * count
    baseline = np.zeros(count, dtype=np.int64)
    for group in _groups_by_condition_size(conditions):
        subs, traces = generate_batch(model, task.n_regions, scheduler, len(group),
                                      [conditions[i] for i in group],
                                      [rngs[i] for i in group],
                                      task.layout, codebook)
        for j, i in enumerate(group):
            samples[i] = subs[j]
            noises[i] = traces[j].initial_noise
            baseline[i] = traces[j].denoiser_calls
    return samples, conditions, noises, baseline, grids


class _MetricAccumulator:
    """Streams per-iteration per-sample metric values for one seed."""

    def __init__(self, task: TaskContext, iterations: int, count: int):
        self.task = task
        self.names = metric_names(task)
        self.values = {name: np.zeros((iterations + 1, count)) for name in self.names}
        self.count = count

    def snapshot_hook(self, group: list[int]):
        def hook(r: int, views):
            for j, i in enumerate(group):
                per = sample_metrics(self.task, views[j])
                for name in self.names:
                    self.values[name][r, i] = per[name]
        return hook

    def add_rows(self, table: ResultTable, seed: int, prefix: str = "",
                 rename: dict[str, str] | None = None) -> None:
        for name in self.names:
            out_name = (rename or {}).get(name, name)
            for r in range(self.values[name].shape[0]):
                table.add(seed, r, prefix + out_name,
                          float(self.values[name][r].mean()), self.count)


def _refine_phase(model, task, cfg: ExperimentConfig, seed: int, samples, conditions,
                  noises, table: ResultTable, prefix: str = "", purpose: int = _REFINE,
                  variant: int | None = None, refinement: RefinementConfig | None = None,
                  baseline=None, rename: dict[str, str] | None = None, artifacts=None):
    """Refine one seed's samples in condition-size groups, streaming metrics."""
    count = len(samples)
    rc = refinement if refinement is not None else cfg.refinement()
    acc = _MetricAccumulator(task, rc.iterations, count)
    codebook = task.codebook.vectors if task.codebook is not None else None
    cum_calls = np.zeros((rc.iterations + 1, count))
    for group in _groups_by_condition_size(conditions):
        rngs = [stream(seed, i, purpose, variant) for i in group]
        cond_sets = [frozenset((conditions[i] or {}).keys()) for i in group]
        metric_hook = acc.snapshot_hook(group)

        def hook(r, views, _group=group, _metric_hook=metric_hook):
            _metric_hook(r, views)
            if artifacts and r == rc.iterations:
                for j, i in enumerate(_group):
                    if i < artifacts:
                        _save_sample_artifacts(task, views[j], Path(cfg.out_dir) / "samples",
                                               f"{prefix.rstrip('/') or 'refine'}_s{seed}_i{i}_r{r}")

        _, ledgers = refine_batch(model, [samples[i] for i in group], rc, rngs,
                                  condition_sets=cond_sets,
                                  stored_noise=[noises[i] for i in group],
                                  codebook=codebook, on_snapshot=hook)
        for j, i in enumerate(group):
            per_iter = np.asarray(ledgers[j].per_iteration_calls, dtype=np.float64)
            cum_calls[1:, i] = np.cumsum(per_iter)
    acc.add_rows(table, seed, prefix, rename)
    for r in range(rc.iterations + 1):
        table.add(seed, r, prefix + "denoiser_calls", float(cum_calls[r].mean()), count)
        if baseline is not None:
            table.add(seed, r, prefix + "baseline_calls", float(np.mean(baseline)), count)
    return acc


def _save_sample_artifacts(task: TaskContext, sample, out: Path, stem: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if task.codebook is not None:
        grid = sudoku.decode_sample(sample, task.codebook)
        (out / f"{stem}.txt").write_text(sudoku.grid_to_text(grid), encoding="utf-8")
    else:
        evenpixels.save_even_pixels(evenpixels.regions_to_image(sample), out / stem)


def cmd_generate(cfg: ExperimentConfig) -> ResultTable:
    """Initial generation only: iteration-0 metric rows plus sample artifacts."""
    task = get_task(cfg.task, cfg.codebook_seed)
    model = _load_model(cfg, task)
    table = ResultTable()
    out = Path(cfg.out_dir)
    for seed in cfg.seeds:
        samples, _, _, baseline, _ = _generate_phase(model, task, cfg, seed)
        acc = _MetricAccumulator(task, 0, len(samples))
        hook = acc.snapshot_hook(list(range(len(samples))))
        hook(0, samples)
        acc.add_rows(table, seed)
        table.add(seed, 0, "denoiser_calls", 0.0, len(samples))
        table.add(seed, 0, "baseline_calls", float(np.mean(baseline)), len(samples))
        for i in range(min(cfg.save_artifacts, len(samples))):
            _save_sample_artifacts(task, samples[i], out / "samples", f"gen_s{seed}_i{i}")
    table.write_csv(out / "generate.csv")
    return table


def cmd_refine(cfg: ExperimentConfig) -> ResultTable:
    """Generate, refine, and evaluate every iteration; one row per metric."""
    task = get_task(cfg.task, cfg.codebook_seed)
    model = _load_model(cfg, task)
    table = ResultTable()
    out = Path(cfg.out_dir)
    for seed in cfg.seeds:
        samples, conditions, noises, baseline, _ = _generate_phase(model, task, cfg, seed)
        for i in range(min(cfg.save_artifacts, len(samples))):
            _save_sample_artifacts(task, samples[i], out / "samples", f"refine_s{seed}_i{i}_r0")
        _refine_phase(model, task, cfg, seed, samples, conditions, noises, table,
                      baseline=baseline, artifacts=cfg.save_artifacts)
    table.write_csv(out / "refine.csv")
    return table


def cmd_corrupt_recover(cfg: ExperimentConfig, k_list=(1, 2, 3)) -> ResultTable:
    """Corrupt valid grids with K swapped pairs, refine with no conditions.

    Rows use metric prefix ``k{K}/``; recovery rate is the fraction of
    samples whose decoded grid is valid again.
    """
    task = get_task(cfg.task, cfg.codebook_seed)
    if task.codebook is None:
        raise ValueError("corrupt-recover is a sudoku experiment")
    model = _load_model(cfg, task)
    table = ResultTable()
    count = cfg.sample_count
    for seed in cfg.seeds:
        grids = [sudoku.gen_sudoku(task.order, stream(seed, i, _GEN)) for i in range(count)]
        clean = [sudoku.encode_grid(g, task.codebook) for g in grids]
        for k in k_list:
            corrupted = [corrupt_swap(clean[i], grids[i], k, stream(seed, i, _CORRUPT, k))
                         for i in range(count)]
            _refine_phase(model, task, cfg, seed, corrupted, [None] * count,
                          [None] * count, table, prefix=f"k{k}/", variant=k,
                          purpose=_VARIANT, rename={"valid_rate": "recovery_rate"})
    table.write_csv(Path(cfg.out_dir) / "corrupt_recover.csv")
    return table


def cmd_ablate(cfg: ExperimentConfig) -> ResultTable:
    """Variant grid {ratio} x {noise mode} x {region mode}, shared x0 per seed.

    The canonical variant (0.25, fresh, random) draws from the same
    streams as cmd_refine, so its rows match a standalone run.
    """
    task = get_task(cfg.task, cfg.codebook_seed)
    model = _load_model(cfg, task)
    table = ResultTable()
    variants = [(a, nm, rm) for a in ABLATION_RATIOS
                for nm in ABLATION_NOISE for rm in ABLATION_REGION]
    for seed in cfg.seeds:
        samples, conditions, noises, baseline, _ = _generate_phase(model, task, cfg, seed)
        table.add(seed, 0, "baseline_calls", float(np.mean(baseline)), len(samples))
        for vidx, (ratio, (noise_mode, noise_label), (region_mode, region_label)) \
                in enumerate(variants):
            label = f"a{ratio:.2f}_{noise_label}_{region_label}/"
            canonical = (ratio == 0.25 and noise_mode == "fresh"
                         and region_mode == "random_each_iteration")
            refinement = cfg.refinement(noise_mode=noise_mode, region_mode=region_mode,
                                        resampling_ratio=ratio)
            _refine_phase(model, task, cfg, seed,
                          [s.copy() for s in samples], conditions, noises, table,
                          prefix=label,
                          purpose=_REFINE if canonical else _VARIANT,
                          variant=None if canonical else vidx,
                          refinement=refinement)
    table.write_csv(Path(cfg.out_dir) / "ablate.csv")
    return table


def cmd_report(table_paths, out_dir) -> list[Path]:
    """Aggregate tables across seeds into per-metric curve files."""
    tables = [ResultTable.read_csv(p) for p in table_paths]
    if not tables:
        raise ValueError("no tables to report on")
    if any(t.version != tables[0].version for t in tables):
        raise ValueError("result tables have mismatched format versions")
    rows = [row for t in tables for row in t.rows]
    metrics = sorted({m for (_, _, m, _, _) in rows})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for metric in metrics:
        per_r: dict[int, list[tuple[float, int]]] = {}
        for seed, r, m, value, n in rows:
            if m == metric:
                per_r.setdefault(r, []).append((value, n))
        lines = ["r,mean,stderr,seeds,total_n"]
        for r in sorted(per_r):
            vals = np.array([v for v, _ in per_r[r]])
            total = sum(n for _, n in per_r[r])
            err = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            lines.append(f"{r},{float(vals.mean())!r},{err!r},{vals.size},{total}")
        path = out / f"report_{metric.replace('/', '__')}.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written


def cmd_eval(cfg: ExperimentConfig, paths) -> ResultTable:
    """Evaluate saved artifacts (grid text files or image sidecars)."""
    task = get_task(cfg.task, cfg.codebook_seed)
    if not paths:
        raise ValueError("nothing to evaluate")
    table = ResultTable()
    per: dict[str, list[float]] = {}
    for p in paths:
        p = Path(p)
        if task.codebook is not None:
            grid = sudoku.grid_from_text(p.read_text(encoding="utf-8"))
            valid, _ = sudoku.check_sudoku_valid(grid)
            per.setdefault("valid_rate", []).append(float(valid))
        else:
            result = evenpixels.eval_even_pixels(evenpixels.load_even_pixels(p))
            per.setdefault("balance_rate", []).append(float(result.balance_pass))
            per.setdefault("pixel_error", []).append(float(result.pixel_error))
            per.setdefault("sat_std", []).append(result.sat_std)
            per.setdefault("val_std", []).append(result.val_std)
    for metric, vals in sorted(per.items()):
        table.add(0, 0, metric, float(np.mean(vals)), len(vals))
    table.write_csv(Path(cfg.out_dir) / "eval.csv")
    return table
