"""Even Pixels: 32x32 two-hue images judged on an exact 512/512 split.

An image holds two hues exactly 0.5 apart on the circular hue axis,
constant saturation 1.0 and value 0.7, with exactly half the pixels per
hue. Generation and evaluation live in HSV; diffusion does not (hue is
circular, unsuited to Gaussian noising), so the region view is 64
patches of 4x4 pixels flattened to 48 RGB channels scaled to [-1, 1].

The evaluator histograms hue into 256 bins, locates the two peaks (the
second at circular distance >= 8 bins), splits the circle at the two
midpoints between them, and counts the second peak's cluster; the
midpoint bins themselves are circularly equidistant from both peaks and
go to the first peak's cluster.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .schedule import RegionSample, clean_sample

IMG_SIDE = 32
PATCH_SIDE = 4
GRID_SIDE = IMG_SIDE // PATCH_SIDE          # 8 patches per image side
N_PATCHES = GRID_SIDE * GRID_SIDE           # 64 regions
PATCH_DIM = PATCH_SIDE * PATCH_SIDE * 3     # 48 channels
N_PIXELS = IMG_SIDE * IMG_SIDE
HALF_PIXELS = N_PIXELS // 2
HIST_BINS = 256
MIN_PEAK_SEP = 8
SATURATION = 1.0
VALUE = 0.7


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Vectorized HSV -> RGB on (..., 3) arrays, h in [0, 1)."""
    h, s, v = np.moveaxis(np.asarray(hsv, dtype=np.float64), -1, 0)
    i = (h * 6.0).astype(np.int64)
    f = h * 6.0 - i
    i = i % 6
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    gray = s == 0.0
    if np.any(gray):
        r, g, b = (np.where(gray, v, c) for c in (r, g, b))
    return np.stack([r, g, b], axis=-1)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV on (..., 3) arrays."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = np.moveaxis(rgb, -1, 0)
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    spread = maxc - minc
    flat = spread == 0.0
    safe = np.where(flat, 1.0, spread)
    s = np.where(flat, 0.0, spread / np.where(maxc == 0.0, 1.0, maxc))
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(flat, 0.0, (h / 6.0) % 1.0)
    return np.stack([h, s, v], axis=-1)


def gen_even_pixels(rng: np.random.Generator) -> np.ndarray:
    """One (32, 32, 3) HSV image: two opposite hues, exactly 512 pixels each."""
    h1 = rng.random() * 0.5
    h2 = h1 + 0.5
    mask = np.zeros(N_PIXELS, dtype=bool)
    mask[rng.permutation(N_PIXELS)[:HALF_PIXELS]] = True
    hsv = np.empty((IMG_SIDE, IMG_SIDE, 3))
    hsv[..., 0] = np.where(mask.reshape(IMG_SIDE, IMG_SIDE), h2, h1)
    hsv[..., 1] = SATURATION
    hsv[..., 2] = VALUE
    return hsv


def image_to_regions(hsv: np.ndarray) -> RegionSample:
    """Flatten 4x4 RGB patches (scaled to [-1, 1]) into a clean sample."""
    hsv = np.asarray(hsv, dtype=np.float64)
    if hsv.shape != (IMG_SIDE, IMG_SIDE, 3):
        raise ValueError(f"expected ({IMG_SIDE}, {IMG_SIDE}, 3) HSV image, got {hsv.shape}")
    rgb = hsv_to_rgb(hsv) * 2.0 - 1.0
    patches = (rgb.reshape(GRID_SIDE, PATCH_SIDE, GRID_SIDE, PATCH_SIDE, 3)
                  .transpose(0, 2, 1, 3, 4)
                  .reshape(N_PATCHES, PATCH_DIM))
    return clean_sample(patches, layout=(GRID_SIDE, GRID_SIDE))


def regions_to_image(sample: RegionSample) -> np.ndarray:
    """Inverse of image_to_regions; out-of-range channels are clipped."""
    if sample.n_regions != N_PATCHES or sample.dim != PATCH_DIM:
        raise ValueError(f"expected {N_PATCHES} regions of dim {PATCH_DIM}")
    rgb = (sample.regions.reshape(GRID_SIDE, GRID_SIDE, PATCH_SIDE, PATCH_SIDE, 3)
                          .transpose(0, 2, 1, 3, 4)
                          .reshape(IMG_SIDE, IMG_SIDE, 3))
    rgb = np.clip((rgb + 1.0) / 2.0, 0.0, 1.0)
    return rgb_to_hsv(rgb)


@dataclass(frozen=True)
class EvenPixelsResult:
    pixel_error: int
    balance_pass: bool
    sat_std: float
    val_std: float
    peaks: tuple[int, int | None]
    n_c1: int


def _hue_bins(hue: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(hue * HIST_BINS).astype(np.int64), 0, HIST_BINS - 1)


def _channel_std(x: np.ndarray) -> float:
    # shifting by any constant leaves the std unchanged; anchoring at the
    # first element makes a constant channel come out exactly 0
    y = x.ravel() - x.flat[0]
    return float(np.sqrt(np.mean((y - y.mean()) ** 2)))


def eval_even_pixels(hsv: np.ndarray) -> EvenPixelsResult:
    """Peak-split cluster count versus the exact 512/512 target.

    With no second peak at circular distance >= 8 bins the image is
    degenerate (single hue): pixel_error 512, balance fail.
    """
    hsv = np.asarray(hsv, dtype=np.float64)
    if hsv.shape != (IMG_SIDE, IMG_SIDE, 3):
        raise ValueError(f"expected ({IMG_SIDE}, {IMG_SIDE}, 3) HSV image, got {hsv.shape}")
    sat_std = _channel_std(hsv[..., 1])
    val_std = _channel_std(hsv[..., 2])
    hist = np.bincount(_hue_bins(hsv[..., 0]).ravel(), minlength=HIST_BINS)

    p1 = int(np.argmax(hist))
    bins = np.arange(HIST_BINS)
    dist1 = np.minimum((bins - p1) % HIST_BINS, (p1 - bins) % HIST_BINS)
    far = dist1 >= MIN_PEAK_SEP
    if hist[far].max() == 0:
        return EvenPixelsResult(HALF_PIXELS, False, sat_std, val_std, (p1, None), 0)
    p2 = int(bins[far][np.argmax(hist[far])])

    # split the circle at the two midpoints between the peaks; the arc
    # containing p2 is its cluster, midpoint bins go to p1's
    b1 = (p1 + p2) / 2.0
    theta = (bins - b1) % HIST_BINS
    arc_a = (theta > 0.0) & (theta < HIST_BINS / 2.0)
    boundary = (theta == 0.0) | (theta == HIST_BINS / 2.0)
    p2_in_a = 0.0 < (p2 - b1) % HIST_BINS < HIST_BINS / 2.0
    cluster2 = arc_a if p2_in_a else ~(arc_a | boundary)
    n_c1 = int(hist[cluster2].sum())
    err = abs(n_c1 - HALF_PIXELS)
    return EvenPixelsResult(err, err == 0, sat_std, val_std, (p1, p2), n_c1)


def save_even_pixels(hsv: np.ndarray, path) -> None:
    """Write <path>.ppm (P3, for inspection) and <path>.npy (exact HSV)."""
    hsv = np.asarray(hsv, dtype=np.float64)
    path = Path(path)
    rgb255 = np.rint(hsv_to_rgb(hsv) * 255.0).astype(np.int64)
    lines = [f"P3\n{IMG_SIDE} {IMG_SIDE}\n255"]
    for row in rgb255.reshape(IMG_SIDE, -1):
        lines.append(" ".join(str(int(v)) for v in row))
    path.with_suffix(".ppm").write_text("\n".join(lines) + "\n")
    np.save(path.with_suffix(".npy"), hsv)


def load_even_pixels(path) -> np.ndarray:
    """Read the exact HSV sidecar written by save_even_pixels."""
    return np.load(Path(path).with_suffix(".npy"))
