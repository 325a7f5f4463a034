"""Noise schedule, forward noising, and clean-data reconstruction.

Every region of a sample carries its own noise level t in [0, 1]:
t=0 is clean data, t=1 is pure Gaussian noise. The schedule maps a
level t to interpolation coefficients (alpha, sigma) and the forward
process mixes data with noise region by region, so samples can hold
arbitrary mixed-noise configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Inverting the interpolation at t=1 divides by alpha=0; samplers clamp
# every working level to T_MAX before any clean-data estimate.
T_MAX = 1.0 - 1e-3


class ScheduleDomainError(ValueError):
    """Noise level outside [0, 1]."""


class SingularityError(ZeroDivisionError):
    """Clean-data reconstruction attempted where alpha(t) = 0."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Interpolation coefficients (alpha, sigma) as functions of t.

    Only the linear family is implemented: alpha(t) = 1 - t,
    sigma(t) = t. It satisfies alpha(0)=1, sigma(0)=0, alpha(1)=0,
    sigma(1)=1, and alpha/sigma is strictly decreasing on (0, 1).
    """

    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise ValueError(f"unknown schedule family: {self.kind!r}")

    def eval(self, t):
        return schedule_eval(self, t)


def schedule_eval(schedule: NoiseSchedule, t):
    """Return (alpha, sigma) at noise level t.

    Accepts scalars or arrays; raises ScheduleDomainError if any entry
    falls outside [0, 1].
    """
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ScheduleDomainError(f"noise level outside [0, 1]: {t!r}")
    alpha = 1.0 - t
    sigma = t.copy()
    if t.ndim == 0:
        return float(alpha), float(sigma)
    return alpha, sigma


def validate_levels(levels, n_regions: int) -> np.ndarray:
    """Check a per-region noise-level vector: length n_regions, entries in [0,1]."""
    levels = np.asarray(levels, dtype=np.float64)
    if levels.shape != (n_regions,):
        raise ValueError(f"expected {n_regions} noise levels, got shape {levels.shape}")
    if np.any(levels < 0.0) or np.any(levels > 1.0):
        raise ScheduleDomainError("noise levels must lie in [0, 1]")
    return levels


@dataclass
class RegionSample:
    """N region vectors of dimension d plus their per-region noise levels.

    layout is (rows, cols) grid metadata for image-like tasks and must
    satisfy rows*cols == N.
    """

    regions: np.ndarray           # (N, d) float64
    levels: np.ndarray            # (N,) float64 in [0, 1]
    layout: tuple[int, int] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.regions = np.asarray(self.regions, dtype=np.float64)
        if self.regions.ndim != 2:
            raise ValueError(f"regions must be (N, d), got shape {self.regions.shape}")
        n = self.regions.shape[0]
        self.levels = validate_levels(self.levels, n)
        if self.layout is None:
            self.layout = (n, 1)
        rows, cols = self.layout
        if rows * cols != n:
            raise ValueError(f"layout {self.layout} does not cover {n} regions")

    @property
    def n_regions(self) -> int:
        return self.regions.shape[0]

    @property
    def dim(self) -> int:
        return self.regions.shape[1]

    def copy(self) -> "RegionSample":
        return RegionSample(self.regions.copy(), self.levels.copy(), self.layout)


def clean_sample(regions, layout=None) -> RegionSample:
    """Wrap clean region vectors (all noise levels zero)."""
    regions = np.asarray(regions, dtype=np.float64)
    return RegionSample(regions, np.zeros(regions.shape[0]), layout)


def forward_noise(x0: RegionSample, t_vec, eps, schedule: NoiseSchedule | None = None) -> RegionSample:
    """Interpolate clean data toward noise, region by region.

    Region i of the result is alpha(t_i)*x0_i + sigma(t_i)*eps_i and its
    noise level is t_i. x0 must be fully clean; eps must match the
    region array shape.
    """
    if schedule is None:
        schedule = NoiseSchedule()
    if np.any(x0.levels != 0.0):
        raise ValueError("forward_noise expects a clean sample (all levels zero)")
    t_vec = validate_levels(t_vec, x0.n_regions)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.regions.shape:
        raise ValueError(f"eps shape {eps.shape} does not match regions {x0.regions.shape}")
    alpha, sigma = schedule_eval(schedule, t_vec)
    regions = alpha[:, None] * x0.regions + sigma[:, None] * eps
    return RegionSample(regions, t_vec, x0.layout)


def predict_x0(x_t: RegionSample, eps_hat, region: int, schedule: NoiseSchedule | None = None) -> np.ndarray:
    """Estimate the clean vector of one region by inverting the interpolation.

    Returns (x_t - sigma(t)*eps_hat) / alpha(t) for the region's current
    level t. eps_hat may be the full (N, d) prediction or the single
    region's row. Raises SingularityError at alpha(t)=0; callers clamp
    levels to T_MAX first.
    """
    if schedule is None:
        schedule = NoiseSchedule()
    t = float(x_t.levels[region])
    alpha, sigma = schedule_eval(schedule, t)
    if alpha <= 0.0:
        raise SingularityError(f"alpha(t)=0 at t={t}; clamp to T_MAX before inverting")
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.ndim == 2:
        eps_hat = eps_hat[region]
    return (x_t.regions[region] - sigma * eps_hat) / alpha


def predict_x0_all(regions: np.ndarray, levels: np.ndarray, eps_hat: np.ndarray,
                   schedule: NoiseSchedule | None = None) -> np.ndarray:
    """Vectorized clean-data estimate for every region (or batch of regions).

    regions/eps_hat: (..., N, d); levels: (..., N). Same inversion as
    predict_x0, applied along the last two axes.
    """
    if schedule is None:
        schedule = NoiseSchedule()
    alpha, sigma = schedule_eval(schedule, levels)
    alpha = np.asarray(alpha)
    if np.any(alpha <= 0.0):
        raise SingularityError("alpha(t)=0 for some region; clamp to T_MAX before inverting")
    return (regions - sigma[..., None] * eps_hat) / alpha[..., None]
