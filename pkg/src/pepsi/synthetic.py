"""Synthetic training imagery: structured patterns a small generator can
learn to continue across holes.

Per-image generators are seeded from (master seed, image index), so dataset
generation is reproducible file by file and safe to parallelize.
"""

from __future__ import annotations

import datetime
import os
from dataclasses import dataclass

import numpy as np

from .engine import ContractError
from .ppm import write_ppm

PATTERNS = ("stripes", "checker", "gradient-blobs")


@dataclass
class SyntheticSpec:
    pattern: str = "stripes"
    size: int = 256
    count: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ContractError(f"unknown pattern {self.pattern!r}")
        if self.size < 8 or self.count < 0:
            raise ContractError("size must be >= 8 and count nonnegative")


def _image_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(3, index)))


def _stripes(rng, size):
    period = int(rng.integers(4, max(size // 4, 5)))
    phase = int(rng.integers(0, period))
    a = rng.uniform(-1.0, 1.0, size=3)
    b = rng.uniform(-1.0, 1.0, size=3)
    t = np.arange(size)
    wave = ((t + phase) % period) < period / 2
    profile = np.where(wave[None, :], a[:, None], b[:, None])  # (3, size)
    img = np.repeat(profile[:, None, :], size, axis=1)  # columns constant
    if rng.integers(0, 2):
        img = img.transpose(0, 2, 1)  # rows constant instead
    return img


def _checker(rng, size):
    p1 = int(rng.integers(4, max(size // 4, 5)))
    p2 = int(rng.integers(4, max(size // 4, 5)))
    a = rng.uniform(-1.0, 1.0, size=3)
    b = rng.uniform(-1.0, 1.0, size=3)
    ys = (np.arange(size) // p1) % 2
    xs = (np.arange(size) // p2) % 2
    cells = ys[:, None] ^ xs[None, :]
    return np.where(cells[None], a[:, None, None], b[:, None, None])


def _gradient_blobs(rng, size):
    n_bumps = int(rng.integers(2, 6))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((3, size, size))
    for _ in range(n_bumps):
        cy = rng.uniform(0, size)
        cx = rng.uniform(0, size)
        width = rng.uniform(size / 8, size / 2)
        amp = rng.uniform(-1.0, 1.0, size=3)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
        img += amp[:, None, None] * bump[None]
    peak = np.abs(img).max()
    if peak > 1.0:
        img /= peak
    return img

_GENERATORS = {"stripes": _stripes, "checker": _checker, "gradient-blobs": _gradient_blobs}


def gen_image(spec, index):
    """One deterministic pattern image, (3, size, size) float32 in [-1, 1]."""
    rng = _image_rng(spec.seed, index)
    return _GENERATORS[spec.pattern](rng, spec.size).astype(np.float32)


def gen_images(spec):
    """The whole dataset in memory, (count, 3, size, size)."""
    if spec.count == 0:
        return np.zeros((0, 3, spec.size, spec.size), dtype=np.float32)
    return np.stack([gen_image(spec, i) for i in range(spec.count)])


def gen_synthetic(spec, out_dir):
    """Write the dataset as PPM files plus a manifest; returns file names."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i in range(spec.count):
        name = f"{spec.pattern}_{i:05d}.ppm"
        write_ppm(os.path.join(out_dir, name), gen_image(spec, i))
        names.append(name)
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as f:
        f.write(f"# generated {stamp}\n")
        f.write(f"pattern = {spec.pattern}\nsize = {spec.size}\n"
                f"count = {spec.count}\nseed = {spec.seed}\n")
        for name in names:
            f.write(name + "\n")
    return names
