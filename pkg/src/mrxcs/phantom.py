"""Procedural binary phantoms defined in region-relative coordinates.

Shapes live on the square (-1, 1)^2 (x to the right, y up) and are
rasterized by testing voxel centers, so every grid size renders the
same geometry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GridSpec

KINDS = ("cs_letters", "smiley", "tumor")
MIN_SIDE = 15


@dataclass(frozen=True, eq=False)
class ConcentrationImage:
    """Nonnegative voxel concentrations on a grid, bounded by ``n_max``."""

    values: np.ndarray
    grid: GridSpec
    n_max: float = 1.0

    def __post_init__(self):
        if self.values.shape != (self.grid.n_voxels,):
            raise ValueError("values must have length N_v")
        if not self.n_max > 0:
            raise ValueError("n_max must be positive")

    def as_image(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


def _rect(x, y, x0, x1, y0, y1):
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def _disk(x, y, cx, cy, r):
    return (x - cx) ** 2 + (y - cy) ** 2 <= r ** 2


def _letters(x, y):
    t = 0.2  # stroke width
    # "C": left column plus top and bottom bars
    c = (
        _rect(x, y, -0.85, -0.85 + t, -0.6, 0.6)
        | _rect(x, y, -0.85, -0.1, 0.6 - t, 0.6)
        | _rect(x, y, -0.85, -0.1, -0.6, -0.6 + t)
    )
    # "S": three bars joined by an upper-left and lower-right stem
    x0, x1 = 0.1, 0.85
    s = (
        _rect(x, y, x0, x1, 0.6 - t, 0.6)
        | _rect(x, y, x0, x1, -t / 2, t / 2)
        | _rect(x, y, x0, x1, -0.6, -0.6 + t)
        | _rect(x, y, x0, x0 + t, 0.0, 0.6)
        | _rect(x, y, x1 - t, x1, -0.6, 0.0)
    )
    return c | s


def _smiley(x, y):
    rr = x ** 2 + y ** 2
    face = (rr <= 0.8 ** 2) & (rr >= 0.66 ** 2)
    eyes = _disk(x, y, -0.28, 0.25, 0.12) | _disk(x, y, 0.28, 0.25, 0.12)
    mouth = (rr <= 0.5 ** 2) & (rr >= 0.36 ** 2) & (y <= -0.12)
    return face | eyes | mouth


def _tumor(x, y):
    tumor = _disk(x, y, 0.2, -0.1, 0.3)
    vessel = _rect(x, y, -0.85, 0.2, -0.16, -0.04)
    return tumor | vessel


_SHAPES = {"cs_letters": _letters, "smiley": _smiley, "tumor": _tumor}


def make_phantom(kind: str, grid: GridSpec) -> ConcentrationImage:
    """Binary {0, 1} phantom of the given kind with maximum value 1."""
    if kind not in _SHAPES:
        raise ValueError(f"unknown phantom kind {kind!r}; choose from {KINDS}")
    if grid.n_per_side < MIN_SIDE:
        raise ValueError(f"phantoms need n_per_side >= {MIN_SIDE}")
    x, y = grid.relative_centers()
    mask = _SHAPES[kind](x, y)
    return ConcentrationImage(mask.ravel().astype(float), grid, 1.0)
