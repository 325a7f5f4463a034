"""Iterative partial refinement of a fully denoised sample.

Each iteration picks a uniform-random subset M of the non-conditioned
regions with |M| = floor(ratio * (N - |C|)), replaces those regions with
pure noise, and regenerates them with the sequential sampler while every
region outside M stays bit-identical as clean conditioning context.
Repeating this R times costs R * schedule_total_steps(|M|) extra
denoiser calls, tracked exactly in a ComputeLedger.

Ablation switches: noise_mode reuses the initial generation noise
instead of fresh draws, region_mode freezes the subset chosen in the
first iteration. corrupt_swap is the error-injection operator for the
recovery experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sampler import SchedulerConfig, run_schedule, schedule_total_steps
from .schedule import T_MAX, NoiseSchedule, RegionSample

NOISE_MODES = ("fresh", "fixed_initial")
REGION_MODES = ("random_each_iteration", "fixed_first_iteration")


@dataclass(frozen=True)
class RefinementConfig:
    resampling_ratio: float
    iterations: int
    refine_scheduler: SchedulerConfig
    noise_mode: str = "fresh"
    region_mode: str = "random_each_iteration"
    condition_set: frozenset = frozenset()
    snapshot_every: int = 1

    def __post_init__(self):
        if not 0.0 <= self.resampling_ratio <= 1.0:
            raise ValueError("resampling_ratio must lie in [0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.region_mode not in REGION_MODES:
            raise ValueError(f"region_mode must be one of {REGION_MODES}")
        if any(int(r) < 0 for r in self.condition_set):
            raise ValueError("condition_set holds region ids, all >= 0")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")


@dataclass
class ComputeLedger:
    """Exact denoiser-call accounting for one refinement run."""

    baseline_calls: int = 0
    per_iteration_calls: list[int] = field(default_factory=list)

    @property
    def refinement_calls(self) -> int:
        return sum(self.per_iteration_calls)

    @property
    def total_calls(self) -> int:
        return self.baseline_calls + self.refinement_calls


def select_subset(n_regions: int, condition_set, ratio: float, region_mode: str,
                  rng: np.random.Generator, previous=None, iteration: int = 0) -> np.ndarray:
    """Region subset to re-noise: floor(ratio * (N - |C|)) ids outside C.

    random_each_iteration draws uniformly without replacement every
    call. fixed_first_iteration returns ``previous`` verbatim when
    given; a missing ``previous`` is only legal on iteration 0.
    """
    cond = {int(r) for r in condition_set}
    if any(r < 0 or r >= n_regions for r in cond):
        raise ValueError("condition_set ids out of range")
    free = np.array(sorted(set(range(n_regions)) - cond), dtype=np.intp)
    # decimal ratios are not exact binary; nudge before flooring
    m = int(math.floor(ratio * free.size + 1e-9))
    if region_mode == "fixed_first_iteration" and previous is not None:
        prev = np.asarray(sorted(int(r) for r in previous), dtype=np.intp)
        if prev.size != m or not np.isin(prev, free).all():
            raise ValueError("previous subset inconsistent with current config")
        return prev
    if region_mode == "fixed_first_iteration" and iteration > 0:
        raise ValueError("fixed_first_iteration requires the first-iteration subset after iteration 0")
    if region_mode not in REGION_MODES:
        raise ValueError(f"region_mode must be one of {REGION_MODES}")
    return np.sort(rng.choice(free, size=m, replace=False))


def renoise(sample: RegionSample, subset, noise_mode: str,
            rng: np.random.Generator | None = None,
            stored_noise: np.ndarray | None = None) -> RegionSample:
    """Replace the subset's regions with pure noise at level t_max.

    fresh draws standard normals from rng; fixed_initial reuses the
    per-region rows of stored_noise (the draw that seeded the sample's
    initial generation). Regions outside the subset are bit-identical.
    """
    out = sample.copy()
    subset = np.asarray(subset, dtype=np.intp)
    if subset.size == 0:
        return out
    if subset.min() < 0 or subset.max() >= sample.n_regions:
        raise ValueError("subset ids out of range")
    if noise_mode == "fresh":
        if rng is None:
            raise ValueError("fresh noise_mode requires an rng")
        out.regions[subset] = rng.standard_normal((subset.size, sample.dim))
    elif noise_mode == "fixed_initial":
        if stored_noise is None:
            raise ValueError("fixed_initial noise_mode requires the stored initial noise")
        stored_noise = np.asarray(stored_noise, dtype=np.float64)
        if stored_noise.shape != sample.regions.shape:
            raise ValueError("stored_noise must cover every region")
        out.regions[subset] = stored_noise[subset]
    else:
        raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
    out.levels[subset] = T_MAX
    return out


def _require_clean(sample: RegionSample) -> None:
    if np.any(sample.levels != 0.0):
        raise ValueError("refinement expects a fully denoised sample (all levels 0)")


def refine_iteration(model, sample: RegionSample, config: RefinementConfig,
                     rng: np.random.Generator, iteration: int = 0,
                     stored_noise: np.ndarray | None = None, previous=None,
                     codebook: np.ndarray | None = None,
                     schedule: NoiseSchedule | None = None):
    """One select -> renoise -> regenerate pass.

    Returns (refined sample, subset, denoiser calls). The regeneration
    runs the overlap scheduler over just the subset, with everything
    else held as clean context.
    """
    _require_clean(sample)
    subset = select_subset(sample.n_regions, config.condition_set, config.resampling_ratio,
                           config.region_mode, rng, previous, iteration)
    if subset.size == 0:
        return sample.copy(), subset, 0
    noised = renoise(sample, subset, config.noise_mode, rng, stored_noise)
    regions = noised.regions[None]
    levels = noised.levels[None]
    _, calls, _ = run_schedule(model, regions, levels, subset[None], config.refine_scheduler,
                               [rng], codebook, schedule=schedule)
    out = RegionSample(regions[0], levels[0], sample.layout)
    return out, subset, calls


def refine(model, x0: RegionSample, config: RefinementConfig, rng: np.random.Generator,
           stored_noise: np.ndarray | None = None, codebook: np.ndarray | None = None,
           baseline_calls: int = 0, schedule: NoiseSchedule | None = None):
    """Run R refinement iterations from a fully denoised sample.

    Returns (final sample, ComputeLedger, snapshots) where snapshots is
    a list of (iteration, sample) pairs: iteration 0 is the input and
    every snapshot_every-th iteration plus the final one is retained.
    """
    _require_clean(x0)
    ledger = ComputeLedger(baseline_calls=baseline_calls)
    snapshots = [(0, x0.copy())]
    current = x0
    previous = None
    for r in range(1, config.iterations + 1):
        current, subset, calls = refine_iteration(
            model, current, config, rng, iteration=r - 1, stored_noise=stored_noise,
            previous=previous, codebook=codebook, schedule=schedule)
        if config.region_mode == "fixed_first_iteration":
            previous = subset
        ledger.per_iteration_calls.append(calls)
        if r % config.snapshot_every == 0 or r == config.iterations:
            snapshots.append((r, current.copy()))
    return current, ledger, snapshots


def refine_batch(model, samples: list[RegionSample], config: RefinementConfig, rngs,
                 condition_sets=None, stored_noise=None, codebook: np.ndarray | None = None,
                 on_snapshot=None, schedule: NoiseSchedule | None = None):
    """Lockstep refinement of many samples sharing one subset size.

    condition_sets optionally overrides config.condition_set per sample;
    all sets must have equal size so the regeneration schedules align.
    stored_noise is a per-sample list for fixed_initial mode. Instead of
    retaining snapshots, on_snapshot(r, samples) is called after every
    iteration (and once with r=0); samples passed to it are live views,
    valid only during the call. Returns (samples, ledgers).
    """
    b = len(samples)
    if len(rngs) != b:
        raise ValueError("need one rng per sample")
    if condition_sets is None:
        condition_sets = [config.condition_set] * b
    if stored_noise is None:
        stored_noise = [None] * b
    if len(condition_sets) != b or len(stored_noise) != b:
        raise ValueError("per-sample argument lists must match the batch size")
    n = samples[0].n_regions
    if any(s.n_regions != n for s in samples):
        raise ValueError("lockstep batch requires equal region counts")
    if any(len(c) != len(condition_sets[0]) for c in condition_sets):
        raise ValueError("lockstep batch requires equal condition-set sizes")
    for s in samples:
        _require_clean(s)

    regions = np.stack([s.regions for s in samples])
    levels = np.stack([s.levels for s in samples])
    ledgers = [ComputeLedger() for _ in range(b)]
    previous = [None] * b

    def emit(r):
        if on_snapshot is not None:
            views = [RegionSample(regions[i], levels[i], samples[i].layout) for i in range(b)]
            on_snapshot(r, views)

    emit(0)
    for r in range(1, config.iterations + 1):
        rows = []
        for i in range(b):
            sub = select_subset(n, condition_sets[i], config.resampling_ratio,
                                config.region_mode, rngs[i], previous[i], r - 1)
            if config.region_mode == "fixed_first_iteration":
                previous[i] = sub
            rows.append(sub)
        subsets = np.stack(rows)
        m = subsets.shape[1]
        if m == 0:
            for led in ledgers:
                led.per_iteration_calls.append(0)
            emit(r)
            continue
        for i in range(b):
            if config.noise_mode == "fresh":
                regions[i, subsets[i]] = rngs[i].standard_normal((m, regions.shape[2]))
            else:
                if stored_noise[i] is None:
                    raise ValueError("fixed_initial noise_mode requires stored noise per sample")
                regions[i, subsets[i]] = np.asarray(stored_noise[i])[subsets[i]]
            levels[i, subsets[i]] = T_MAX
        _, calls, _ = run_schedule(model, regions, levels, subsets, config.refine_scheduler,
                                   rngs, codebook, schedule=schedule)
        for led in ledgers:
            led.per_iteration_calls.append(calls)
        emit(r)
    out = [RegionSample(regions[i].copy(), levels[i].copy(), samples[i].layout)
           for i in range(b)]
    return out, ledgers


def expected_iteration_calls(n_regions: int, condition_size: int,
                             config: RefinementConfig) -> int:
    """Closed-form denoiser calls of one iteration: the schedule length over |M|."""
    m = int(math.floor(config.resampling_ratio * (n_regions - condition_size) + 1e-9))
    return schedule_total_steps(m, config.refine_scheduler)


def corrupt_swap(sample: RegionSample, symbolic_grid, k: int, rng: np.random.Generator,
                 condition_set=frozenset()) -> RegionSample:
    """Swap K disjoint uniformly chosen pairs of non-conditioned cells.

    symbolic_grid holds the digit of each cell (row-major, matching
    region ids). A drawn pair holding equal digits is redrawn, so every
    swap states two cells with genuinely different contents; exactly 2K
    regions differ from the input.
    """
    digits = np.asarray(symbolic_grid).ravel()
    if digits.size != sample.n_regions:
        raise ValueError("symbolic_grid must cover every region")
    if k < 0:
        raise ValueError("k must be >= 0")
    available = sorted(set(range(sample.n_regions)) - {int(r) for r in condition_set})
    if 2 * k > len(available):
        raise ValueError(f"cannot swap {k} disjoint pairs among {len(available)} cells")
    out = sample.copy()
    pool = list(available)
    for _ in range(k):
        for attempt in range(10_000):
            pair = rng.choice(len(pool), size=2, replace=False)
            a, b = pool[int(pair[0])], pool[int(pair[1])]
            if digits[a] != digits[b]:
                break
        else:
            raise RuntimeError("no swappable pair with distinct digits")
        out.regions[[a, b]] = out.regions[[b, a]]
        pool.remove(a)
        pool.remove(b)
    return out
