"""Seeded generators for the 25-Gaussians and Swiss Roll toy datasets.

Randomness comes from ``numpy.random.default_rng(seed)`` (PCG64), so a given
``(kind, params, seed, n)`` always produces the same points on any platform
running the same numpy major version.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, csv_text

GRID_VALUES = (-4.0, -2.0, 0.0, 2.0, 4.0)
GAUSSIAN_SIGMA = 0.05
ROLL_T_RANGE = (1.5 * np.pi, 4.5 * np.pi)
ROLL_SCALE = 1.0 / 3.0


class DatasetFormatError(ValueError):
    pass


@dataclass
class ToyDataset:
    kind: str
    points: np.ndarray
    seed: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError(f"points must have shape (n, 2), got {self.points.shape}")

    def __len__(self) -> int:
        return len(self.points)


def grid_centers(values=GRID_VALUES) -> np.ndarray:
    """The 25 mode centres, row-major over (x0, x1)."""
    v = np.asarray(values, dtype=np.float64)
    return np.array([(a, b) for a in v for b in v])


def gen_25_gaussians(n: int, sigma: float = GAUSSIAN_SIGMA, seed: int = 0) -> ToyDataset:
    if n <= 0:
        raise ValueError("n must be positive")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    centers = grid_centers()
    modes = rng.integers(0, len(centers), size=n)
    points = centers[modes] + sigma * rng.standard_normal((n, 2))
    return ToyDataset("gaussians25", points, seed, {"sigma": sigma, "grid": list(GRID_VALUES)})


def swiss_roll_point(t):
    t = np.asarray(t, dtype=np.float64)
    return np.stack([t * np.cos(t), t * np.sin(t)], axis=-1) * ROLL_SCALE


def gen_swiss_roll(n: int, noise: float = 0.0, seed: int = 0) -> ToyDataset:
    if n <= 0:
        raise ValueError("n must be positive")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    t = rng.uniform(*ROLL_T_RANGE, size=n)
    points = swiss_roll_point(t) + noise * rng.standard_normal((n, 2))
    return ToyDataset("swiss_roll", points, seed, {"noise": noise})


def generate(kind: str, n: int, seed: int = 0, **params) -> ToyDataset:
    if kind == "gaussians25":
        return gen_25_gaussians(n, params.get("sigma", GAUSSIAN_SIGMA), seed)
    if kind == "swiss_roll":
        return gen_swiss_roll(n, params.get("noise", 0.0), seed)
    raise ValueError(f"unknown dataset kind {kind!r}")


def save_csv(dataset: ToyDataset, path) -> None:
    atomic_write_text(path, csv_text(["x0", "x1"], dataset.points.tolist()))


def load_csv(path, kind: str = "csv") -> ToyDataset:
    """Read a two-column ``x0,x1`` CSV. Errors name the offending line."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != "x0,x1":
        raise DatasetFormatError(f"{path}: line 1: expected header 'x0,x1'")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise DatasetFormatError(f"{path}: line {lineno}: expected 2 columns, got {len(parts)}")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise DatasetFormatError(f"{path}: line {lineno}: malformed number") from None
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    return ToyDataset(kind, np.array(rows))
