"""Glyph Sudoku: symbolic grids embedded as region vectors.

A grid of order n has n^2 x n^2 cells holding digits 1..n^2 (n=2 gives
4x4, n=3 gives 9x9) with every row, column, and n x n box a permutation.
Grids are plain integer arrays. Each digit maps to a fixed random glyph
vector (unit norm, pairwise well separated), so a grid becomes a
RegionSample of N = n^4 regions of dimension 8 and a noisy region
decodes to the digit of its nearest glyph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .schedule import RegionSample, clean_sample

GLYPH_DIM = 8
DELTA_MIN = 1.0


def _grid_side(grid: np.ndarray) -> tuple[int, int]:
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise ValueError(f"grid must be square, got shape {grid.shape}")
    side = grid.shape[0]
    n = math.isqrt(side)
    if n * n != side:
        raise ValueError(f"grid side {side} is not a perfect square")
    return side, n


def gen_sudoku(n: int, rng: np.random.Generator) -> np.ndarray:
    """Complete valid grid of order n via randomized backtracking."""
    if n < 2:
        raise ValueError("order n must be >= 2")
    side = n * n
    grid = np.zeros((side, side), dtype=np.int64)

    def feasible(r, c, v):
        if v in grid[r, :] or v in grid[:, c]:
            return False
        br, bc = (r // n) * n, (c // n) * n
        return v not in grid[br:br + n, bc:bc + n]

    def fill(cell):
        if cell == side * side:
            return True
        r, c = divmod(cell, side)
        for v in rng.permutation(side) + 1:
            if feasible(r, c, v):
                grid[r, c] = v
                if fill(cell + 1):
                    return True
                grid[r, c] = 0
        return False

    if not fill(0):
        raise RuntimeError("backtracking failed to complete a grid")
    return grid


def enumerate_grids(n: int = 2):
    """All valid grids of order n in lexicographic fill order (n=2: 288)."""
    side = n * n
    grid = np.zeros((side, side), dtype=np.int64)
    out = []

    def fill(cell):
        if cell == side * side:
            out.append(grid.copy())
            return
        r, c = divmod(cell, side)
        br, bc = (r // n) * n, (c // n) * n
        for v in range(1, side + 1):
            if v in grid[r, :] or v in grid[:, c] or v in grid[br:br + n, bc:bc + n]:
                continue
            grid[r, c] = v
            fill(cell + 1)
            grid[r, c] = 0

    fill(0)
    return out


def check_sudoku_valid(grid) -> tuple[bool, list[tuple[int, int]]]:
    """Validity plus every cell participating in a duplicated digit.

    A grid is valid iff each row, column, and n x n box is a permutation
    of 1..n^2. Unfilled or out-of-range cells are input errors, not
    invalid grids.
    """
    grid = np.asarray(grid)
    side, n = _grid_side(grid)
    if np.any(grid < 1) or np.any(grid > side):
        raise ValueError(f"cells must hold digits in 1..{side}")
    bad: set[tuple[int, int]] = set()

    def scan(cells):
        values = {}
        for (r, c) in cells:
            values.setdefault(grid[r, c], []).append((r, c))
        for dup in values.values():
            if len(dup) > 1:
                bad.update(dup)

    for i in range(side):
        scan([(i, c) for c in range(side)])
        scan([(r, i) for r in range(side)])
    for br in range(0, side, n):
        for bc in range(0, side, n):
            scan([(br + dr, bc + dc) for dr in range(n) for dc in range(n)])
    return len(bad) == 0, sorted(bad)


@dataclass(frozen=True)
class GlyphCodebook:
    """One unit-norm glyph vector per digit, pairwise distance >= delta_min."""

    vectors: np.ndarray          # (n_digits, GLYPH_DIM)
    seed: int
    delta_min: float = DELTA_MIN

    @property
    def n_digits(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def make_codebook(n_digits: int, seed: int, dim: int = GLYPH_DIM,
                  delta_min: float = DELTA_MIN) -> GlyphCodebook:
    """Rejection-sample unit vectors until all pairs are delta_min apart."""
    rng = np.random.default_rng(seed)
    vectors: list[np.ndarray] = []
    for _ in range(100_000):
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(np.linalg.norm(v - u) >= delta_min for u in vectors):
            vectors.append(v)
            if len(vectors) == n_digits:
                return GlyphCodebook(np.array(vectors), seed, delta_min)
    raise RuntimeError(f"could not place {n_digits} glyphs at separation {delta_min}")


def encode_grid(grid, codebook: GlyphCodebook) -> RegionSample:
    """Clean RegionSample whose region i holds the glyph of cell i (row-major)."""
    grid = np.asarray(grid)
    side, _ = _grid_side(grid)
    if np.any(grid < 1) or np.any(grid > codebook.n_digits):
        raise ValueError("grid digits outside the codebook range")
    regions = codebook.vectors[grid.ravel() - 1]
    return clean_sample(regions, layout=(side, side))


def decode_sample(sample: RegionSample, codebook: GlyphCodebook) -> np.ndarray:
    """Digit of the nearest glyph per region, reshaped to the grid."""
    side = sample.layout[0]
    if sample.layout != (side, side) or side * side != sample.n_regions:
        raise ValueError("sample layout is not a square grid")
    d2 = ((sample.regions[:, None, :] - codebook.vectors[None, :, :]) ** 2).sum(axis=-1)
    return (np.argmin(d2, axis=1) + 1).reshape(side, side)


def make_hint_condition(grid, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """Uniform-count uniform-position hints: (cell ids, digits).

    The hint count is U{0..26} for 9x9 grids and U{0..5} for 4x4 (the
    same roughly-1/3-of-cells upper bound, scaled down).
    """
    grid = np.asarray(grid)
    side, n = _grid_side(grid)
    max_hints = 26 if n == 3 else 5 if n == 2 else (side * side) // 3
    count = int(rng.integers(max_hints + 1))
    cells = sorted(int(c) for c in rng.choice(side * side, size=count, replace=False))
    digits = [int(grid.ravel()[c]) for c in cells]
    return cells, digits


def hint_condition(cells, digits, codebook: GlyphCodebook) -> dict[int, np.ndarray]:
    """Sampler condition map {region id -> glyph vector} for hint cells."""
    return {c: codebook.vectors[d - 1].copy() for c, d in zip(cells, digits)}


def grid_to_text(grid) -> str:
    """One row per line, digits space-separated."""
    grid = np.asarray(grid)
    _grid_side(grid)
    return "\n".join(" ".join(str(int(v)) for v in row) for row in grid) + "\n"


def grid_from_text(text: str) -> np.ndarray:
    rows = [line.split() for line in text.strip().splitlines() if line.strip()]
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ValueError("grid text must be square")
    return np.array([[int(v) for v in row] for row in rows], dtype=np.int64)
