"""Procedural sprite images with known generative factors.

Three shapes on an 8x8 grid of positions inside a 32x32 binary frame: 192
distinct images, each annotated with (shape, pos_x, pos_y).
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .tensor import ContractError

SHAPES = ("square", "disk", "cross")


def _mask(shape: str, size: int) -> np.ndarray:
    centre = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "disk":
        return (yy - centre) ** 2 + (xx - centre) ** 2 <= (size / 2.0) ** 2
    if shape == "cross":
        half = max(1, size // 8)
        band = lambda a: np.abs(a - centre) < half  # noqa: E731
        return band(yy) | band(xx)
    raise ContractError(f"unknown shape {shape!r}")


@dataclass(frozen=True)
class FactorSpec:
    shapes: tuple[str, ...] = SHAPES
    grid: int = 8
    image_side: int = 32
    sprite_size: int = 8

    def __post_init__(self):
        if len(self.shapes) < 2 or self.grid < 2:
            raise ContractError("every factor needs at least 2 values")
        if self.sprite_size > self.image_side:
            raise ContractError("sprite larger than the frame")
        for s in self.shapes:
            _mask(s, self.sprite_size)

    @property
    def factor_names(self) -> tuple[str, ...]:
        return ("shape", "pos_x", "pos_y")

    @property
    def factor_sizes(self) -> tuple[int, ...]:
        return (len(self.shapes), self.grid, self.grid)

    @property
    def n_combinations(self) -> int:
        return int(np.prod(self.factor_sizes))

    @property
    def pixels(self) -> int:
        return self.image_side * self.image_side

    @property
    def step(self) -> int:
        return (self.image_side - self.sprite_size) // (self.grid - 1) if self.grid > 1 else 0

    @property
    def margin(self) -> int:
        span = self.step * (self.grid - 1) + self.sprite_size
        return (self.image_side - span) // 2

    def offset(self, pos: int) -> int:
        return self.margin + self.step * pos

    def all_factors(self) -> np.ndarray:
        return np.array(list(itertools.product(*(range(n) for n in self.factor_sizes))), dtype=np.int64)

    def index_of(self, factors: np.ndarray) -> np.ndarray:
        factors = np.asarray(factors, dtype=np.int64)
        return np.ravel_multi_index(tuple(factors.T), self.factor_sizes)

    @cached_property
    def corpus(self) -> np.ndarray:
        """Every image, in ``all_factors`` order, shape (n_combinations, pixels)."""
        return np.stack([render_sprite(self, f) for f in self.all_factors()])


@dataclass(frozen=True)
class FactorSample:
    factors: tuple[int, ...]
    image: np.ndarray


def render_sprite(spec: FactorSpec, factors) -> np.ndarray:
    """Binary rasterisation of one sprite, flattened row-major."""
    shape, px, py = (int(v) for v in factors)
    for value, size, name in zip((shape, px, py), spec.factor_sizes, spec.factor_names):
        if not 0 <= value < size:
            raise ContractError(f"factor {name}={value} outside [0, {size})")
    img = np.zeros((spec.image_side, spec.image_side))
    ox, oy = spec.offset(px), spec.offset(py)
    s = spec.sprite_size
    img[oy : oy + s, ox : ox + s] = _mask(spec.shapes[shape], s)
    return img.reshape(-1)


def _samples(spec: FactorSpec, factors: np.ndarray) -> list[FactorSample]:
    images = spec.corpus[spec.index_of(factors)]
    return [FactorSample(tuple(int(v) for v in f), img) for f, img in zip(factors, images)]


def sample_factors(spec: FactorSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ContractError(f"batch size must be >= 1, got {n}")
    return np.stack([rng.integers(0, k, size=n) for k in spec.factor_sizes], axis=1)


def sample_batch(spec: FactorSpec, n: int, rng: np.random.Generator) -> list[FactorSample]:
    return _samples(spec, sample_factors(spec, n, rng))


def fixed_factor_factors(spec: FactorSpec, factor_index: int, value: int, n: int,
                         rng: np.random.Generator) -> np.ndarray:
    if not 0 <= factor_index < len(spec.factor_sizes):
        raise ContractError(f"factor index {factor_index} out of range")
    if not 0 <= value < spec.factor_sizes[factor_index]:
        raise ContractError(
            f"value {value} outside domain of factor {spec.factor_names[factor_index]}"
        )
    factors = sample_factors(spec, n, rng)
    factors[:, factor_index] = value
    return factors


def fixed_factor_batch(spec: FactorSpec, factor_index: int, value: int, n: int,
                       rng: np.random.Generator) -> list[FactorSample]:
    """Samples sharing one factor value; the other factors are uniform."""
    return _samples(spec, fixed_factor_factors(spec, factor_index, value, n, rng))


class SpriteDataset:
    """Endless stream of real image batches for training."""

    def __init__(self, spec: FactorSpec | None = None):
        self.spec = spec or FactorSpec()

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        factors = sample_factors(self.spec, n, rng)
        return self.spec.corpus[self.spec.index_of(factors)], factors


def write_pgm(path: Path, image: np.ndarray) -> None:
    """Binary P5 PGM, maxval 255, pixel = round(value * 255)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    data = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = np.frombuffer(parts[4][: w * h], dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / maxval


def export_corpus(spec: FactorSpec, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with open(out_dir / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["file", "shape", "pos_x", "pos_y"])
        for factors, image in zip(spec.all_factors(), spec.corpus):
            name = f"{spec.shapes[factors[0]]}_{factors[1]}_{factors[2]}.pgm"
            write_pgm(out_dir / name, image.reshape(spec.image_side, spec.image_side))
            writer.writerow([name, *(int(v) for v in factors)])
            written.append(out_dir / name)
    return written
