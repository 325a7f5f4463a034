"""Sequential region-by-region sampling with overlapping denoise windows.

Regions are denoised in activation slots: slot k opens at step k*stride
and runs for S steps, so neighbouring regions overlap whenever
stride < S. Which region takes a slot is decided the moment the slot
opens (sequential, random, or confidence order). Within its window a
region's noise level walks from t_max to 0 in S equal decrements, and
each schedule step costs exactly one denoiser call no matter how many
regions are active.

The inner loop runs a whole batch of samples in lockstep: every sample
shares the slot timing but keeps its own region-to-slot assignment,
noise stream, and values. Batch size 1 gives the plain single-sample
path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .schedule import (
    T_MAX,
    NoiseSchedule,
    RegionSample,
    ScheduleDomainError,
    predict_x0_all,
    schedule_eval,
)

SELECTION_POLICIES = ("sequential", "random", "confidence")


@dataclass(frozen=True)
class SchedulerConfig:
    """Knobs of one sequential pass: window length, overlap, noise, order.

    x0_clip bounds the clean-data estimate before re-projection. The
    inversion divides by alpha(t), so near t=1 any noise-estimate error
    is amplified by ~1/alpha; clipping to the data range keeps the first
    window steps on the data scale where later steps can correct them.
    The default suits data encoded per-component in [-1, 1]; widen it
    for data on another scale.
    """

    steps_per_patch: int
    overlap_ratio: float
    stochasticity: float = 0.0
    selection: str = "sequential"
    x0_clip: float = 1.0

    def __post_init__(self):
        if self.steps_per_patch < 1:
            raise ValueError("steps_per_patch must be >= 1")
        if not 0.0 <= self.overlap_ratio <= 1.0:
            raise ValueError("overlap_ratio must lie in [0, 1]")
        if not 0.0 <= self.stochasticity <= 1.0:
            raise ValueError("stochasticity must lie in [0, 1]")
        if self.selection not in SELECTION_POLICIES:
            raise ValueError(f"selection must be one of {SELECTION_POLICIES}")
        if not self.x0_clip > 0.0:
            raise ValueError("x0_clip must be positive")


@dataclass
class StepRecord:
    step: int
    active: tuple[int, ...]
    levels_before: np.ndarray
    levels_after: np.ndarray


@dataclass
class GenerationTrace:
    """Per-step log of one sequential pass plus its cost accounting.

    denoiser_calls counts schedule steps with a nonempty active set;
    confidence-ordered selection makes extra calls which are tracked
    separately in selection_calls.
    """

    records: list[StepRecord] = field(default_factory=list)
    denoiser_calls: int = 0
    selection_calls: int = 0
    initial_noise: np.ndarray | None = None

    @property
    def total_steps(self) -> int:
        return len(self.records)


def build_schedule(n_regions: int, config: SchedulerConfig) -> list[tuple[int, int]]:
    """Step windows [start, stop) per activation slot.

    Slot k covers [k*stride, k*stride + S) with
    stride = max(1, ceil((1 - overlap_ratio) * S)), giving
    (n_regions - 1) * stride + S total steps.
    """
    if n_regions < 1:
        raise ValueError("n_regions must be >= 1")
    s = config.steps_per_patch
    # guard against float fuzz like 0.3*10 = 3.0000000000000004 before ceil
    stride = max(1, math.ceil((1.0 - config.overlap_ratio) * s - 1e-9))
    return [(k * stride, k * stride + s) for k in range(n_regions)]


def schedule_total_steps(n_regions: int, config: SchedulerConfig) -> int:
    if n_regions == 0:
        return 0
    return build_schedule(n_regions, config)[-1][1]


def _window_levels(slot_pos: np.ndarray, steps_per_patch: int) -> tuple[np.ndarray, np.ndarray]:
    """(t_from, t_to) for regions sitting at 0-based position slot_pos of their window."""
    s = float(steps_per_patch)
    t_from = T_MAX * (s - slot_pos) / s
    t_to = T_MAX * (s - slot_pos - 1) / s
    return t_from, t_to


def _reverse_update(x, eps_hat, t_from, t_to, gamma, z, x0_clip,
                    schedule: NoiseSchedule):
    """One reverse-process move for a block of regions.

    x, eps_hat: (..., m, d); t_from, t_to: (m,). Re-projects through the
    clipped clean-data estimate and blends predicted noise with fresh
    noise z in the variance-preserving proportion sqrt(1-gamma^2):gamma.
    """
    x0_hat = predict_x0_all(x, t_from, eps_hat, schedule)
    np.clip(x0_hat, -x0_clip, x0_clip, out=x0_hat)
    direction = np.sqrt(1.0 - gamma * gamma) * eps_hat
    if gamma > 0.0:
        direction += gamma * z
    alpha_to, sigma_to = schedule_eval(schedule, t_to)
    alpha_to, sigma_to = np.asarray(alpha_to), np.asarray(sigma_to)
    return alpha_to[..., None] * x0_hat + sigma_to[..., None] * direction


def denoise_step(model, sample: RegionSample, active, t_from, t_to, gamma: float,
                 rng: np.random.Generator | None = None, x0_clip: float = 1.0,
                 schedule: NoiseSchedule | None = None) -> RegionSample:
    """Advance the active regions from t_from to t_to; one denoiser call.

    active lists region ids; t_from/t_to are aligned with it and t_from
    must match the sample's current levels. Inactive regions are left
    bit-identical. gamma > 0 draws fresh noise from rng; gamma = 0 draws
    nothing, so a gamma = 0 trajectory is deterministic.
    """
    if schedule is None:
        schedule = NoiseSchedule()
    active = np.asarray(active, dtype=np.intp)
    out = sample.copy()
    if active.size == 0:
        return out
    if active.size != np.unique(active).size:
        raise ValueError("active region ids must be distinct")
    t_from = np.asarray(t_from, dtype=np.float64)
    t_to = np.asarray(t_to, dtype=np.float64)
    if t_from.ndim == 0:
        t_from = np.full(active.shape, float(t_from))
    if t_to.ndim == 0:
        t_to = np.full(active.shape, float(t_to))
    if t_from.shape != active.shape or t_to.shape != active.shape:
        raise ValueError("t_from/t_to must align with the active region list")
    if np.any(t_to > t_from):
        raise ScheduleDomainError("t_to must not exceed t_from")
    if np.any(np.abs(sample.levels[active] - t_from) > 1e-12):
        raise ValueError("t_from disagrees with the sample's current noise levels")
    gamma = float(gamma)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    z = None
    if gamma > 0.0:
        if rng is None:
            raise ValueError("gamma > 0 requires an rng for the fresh-noise draw")
        z = rng.standard_normal((active.size, sample.dim))
    eps_hat = model.predict(sample.regions, sample.levels)
    out.regions[active] = _reverse_update(
        sample.regions[active], eps_hat[active], t_from, t_to, gamma, z, x0_clip, schedule)
    out.levels[active] = t_to
    return out


def select_next_region(policy: str, model, sample: RegionSample, pending,
                       rng: np.random.Generator | None = None,
                       codebook: np.ndarray | None = None) -> int:
    """Pick which pending region takes the next activation slot.

    sequential: lowest id. random: uniform draw. confidence: the region
    whose current clean-data estimate lies closest to a codebook entry
    (ties to the lowest id).
    """
    pending = sorted(int(r) for r in pending)
    if not pending:
        raise ValueError("pending region set is empty")
    if policy == "sequential":
        return pending[0]
    if policy == "random":
        if rng is None:
            raise ValueError("random selection requires an rng")
        return pending[int(rng.integers(len(pending)))]
    if policy == "confidence":
        if codebook is None:
            raise ValueError("confidence selection requires a task codebook")
        eps_hat = model.predict(sample.regions, sample.levels)
        x0_hat = predict_x0_all(sample.regions[pending],
                                np.minimum(sample.levels[pending], T_MAX),
                                eps_hat[pending])
        dist = np.linalg.norm(x0_hat[:, None, :] - codebook[None, :, :], axis=-1)
        return pending[int(np.argmin(dist.min(axis=1)))]
    raise ValueError(f"unknown selection policy {policy!r}")


def run_schedule(model, regions: np.ndarray, levels: np.ndarray, free: np.ndarray,
                 config: SchedulerConfig, rngs, codebook: np.ndarray | None = None,
                 record: bool = False, schedule: NoiseSchedule | None = None):
    """Denoise the ``free`` regions of a lockstep batch from t_max to 0.

    regions: (B, N, d) and levels: (B, N), modified in place. free is a
    (B, m) id matrix: each sample's own m regions to denoise, already
    holding noise at level t_max. rngs supplies one generator per
    sample. Returns per-sample (records, denoiser_calls,
    selection_calls); records are empty unless ``record`` is set.
    """
    if schedule is None:
        schedule = NoiseSchedule()
    b, n, _ = regions.shape
    free = np.asarray(free, dtype=np.intp)
    m = free.shape[1]
    per_records: list[list[StepRecord]] = [[] for _ in range(b)]
    if m == 0:
        return per_records, 0, 0
    windows = build_schedule(m, config)
    stride = windows[1][0] - windows[0][0] if m > 1 else config.steps_per_patch
    total = windows[-1][1]
    s = config.steps_per_patch
    gamma = config.stochasticity
    rows = np.arange(b)[:, None]

    assigned = np.zeros((b, m), dtype=np.intp)
    pending = [set(int(r) for r in free[i]) for i in range(b)]
    if len(pending[0]) != m:
        raise ValueError("free region ids must be distinct per sample")
    selection_calls = 0
    n_open = 0
    lo = 0                    # slots below lo have already closed
    for step in range(total):
        if n_open < m and step == n_open * stride:
            if config.selection == "confidence":
                selection_calls += 1
                eps_all = model.predict(regions, levels)
            for i in range(b):
                if config.selection == "sequential":
                    rid = min(pending[i])
                elif config.selection == "random":
                    opts = sorted(pending[i])
                    rid = opts[int(rngs[i].integers(len(opts)))]
                else:
                    opts = sorted(pending[i])
                    x0h = predict_x0_all(regions[i, opts],
                                         np.minimum(levels[i, opts], T_MAX),
                                         eps_all[i, opts])
                    dist = np.linalg.norm(x0h[:, None, :] - codebook[None, :, :], axis=-1)
                    rid = opts[int(np.argmin(dist.min(axis=1)))]
                assigned[i, n_open] = rid
                pending[i].discard(rid)
            n_open += 1
        while windows[lo][1] <= step:
            lo += 1
        slots = np.arange(lo, n_open)
        act = assigned[:, slots]                       # (B, n_act)
        pos = step - slots * stride
        t_from, t_to = _window_levels(pos.astype(np.float64), s)
        if record:
            before = levels.copy()
        z = None
        if gamma > 0.0:
            z = np.stack([rngs[i].standard_normal((slots.size, regions.shape[2]))
                          for i in range(b)])
        eps_hat = model.predict(regions, levels)
        xa = regions[rows, act]
        ea = eps_hat[rows, act]
        regions[rows, act] = _reverse_update(xa, ea, t_from, t_to, gamma, z,
                                             config.x0_clip, schedule)
        levels[rows, act] = t_to
        if record:
            for i in range(b):
                per_records[i].append(StepRecord(step, tuple(int(r) for r in act[i]),
                                                 before[i].copy(), levels[i].copy()))
    return per_records, total, selection_calls


def generate(model, n_regions: int, config: SchedulerConfig,
             condition: dict[int, np.ndarray] | None = None,
             rng: np.random.Generator | None = None,
             layout: tuple[int, int] | None = None,
             codebook: np.ndarray | None = None,
             schedule: NoiseSchedule | None = None) -> tuple[RegionSample, GenerationTrace]:
    """Sample one RegionSample from noise by sequential denoising.

    Conditioned regions hold their given clean vectors at level 0 and
    are never touched; the rest start as fresh noise at t_max and are
    walked to level 0 over the overlap schedule. The trace stores the
    noise drawn for every region so refinement can reuse it.
    """
    samples, traces = generate_batch(model, n_regions, config, 1,
                                     [condition] if condition else None,
                                     [rng] if rng is not None else None,
                                     layout, codebook, record=True, schedule=schedule)
    return samples[0], traces[0]


def generate_batch(model, n_regions: int, config: SchedulerConfig, batch: int,
                   conditions: list[dict[int, np.ndarray] | None] | None = None,
                   rngs=None, layout: tuple[int, int] | None = None,
                   codebook: np.ndarray | None = None, record: bool = False,
                   schedule: NoiseSchedule | None = None):
    """Generate ``batch`` samples in lockstep; see ``generate``.

    Every sample must condition the same number of regions so the slot
    timing lines up. Returns (samples, traces).
    """
    dim = model.dim
    if rngs is None:
        rngs = [np.random.default_rng() for _ in range(batch)]
    if conditions is None:
        conditions = [None] * batch
    if len(rngs) != batch or len(conditions) != batch:
        raise ValueError("rngs and conditions must have one entry per sample")
    cond_ids = []
    for cond in conditions:
        ids = sorted(int(k) for k in (cond or {}))
        if ids and (ids[0] < 0 or ids[-1] >= n_regions):
            raise ValueError("condition region ids out of range")
        cond_ids.append(ids)
    n_free = n_regions - len(cond_ids[0])
    if any(len(ids) != n_regions - n_free for ids in cond_ids):
        raise ValueError("lockstep batch requires equal condition counts")

    initial = np.stack([rngs[i].standard_normal((n_regions, dim)) for i in range(batch)])
    regions = initial.copy()
    levels = np.full((batch, n_regions), T_MAX)
    free = np.zeros((batch, n_free), dtype=np.intp)
    for i, (cond, ids) in enumerate(zip(conditions, cond_ids)):
        for rid in ids:
            vec = np.asarray(cond[rid], dtype=np.float64)
            if vec.shape != (dim,):
                raise ValueError(f"condition vector for region {rid} must have length {dim}")
            regions[i, rid] = vec
        levels[i, ids] = 0.0
        free[i] = [r for r in range(n_regions) if r not in set(ids)]

    per_records, calls, sel_calls = run_schedule(
        model, regions, levels, free, config, rngs, codebook, record, schedule)
    samples = [RegionSample(regions[i].copy(), levels[i].copy(), layout) for i in range(batch)]
    traces = [GenerationTrace(per_records[i], calls, sel_calls, initial[i].copy())
              for i in range(batch)]
    return samples, traces
