"""Synthetic datasets and the on-disk dataset layout.

A dataset directory holds ``images.tnsr`` (n x 1 x h x w), ``targets.tnsr``
(n labels, or n x 1 x h x w masks) and ``dataset.ini`` naming the kind.
``synth`` additionally writes each image (and mask) as a PGM for inspection.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import tensor
from ..imstats import write_pgm

CLASSIFY_SIZE = 32
SEGMENT_SIZE = 48
N_CLASSES = 3
VESSEL_BAND = (0.02, 0.15)


@dataclass(frozen=True)
class Dataset:
    kind: str  # "classify" | "segment"
    images: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return self.images.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.kind, self.images[idx], self.targets[idx])

    @property
    def task(self) -> str:
        return "classification" if self.kind == "classify" else "segmentation"


def _skew(x: np.ndarray) -> np.ndarray:
    # compress to a dim, right-skewed intensity profile
    return 0.15 + 0.6 * np.clip(x, 0.0, 1.0) ** 2


def _gratings(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    size = CLASSIFY_SIZE
    labels = rng.permutation(np.arange(n) % N_CLASSES)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((n, 1, size, size))
    for i, label in enumerate(labels):
        theta = np.deg2rad(45.0 * label) + rng.normal(0.0, 0.08)
        freq = rng.uniform(0.08, 0.16)
        phase = rng.uniform(0.0, 2 * np.pi)
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        img = 0.7 * wave + 0.15 + rng.normal(0.0, 0.12, size=wave.shape)
        images[i, 0] = _skew(img)
    return images, labels.astype(np.float64)


def _bezier(rng: np.random.Generator, size: int, samples: int = 160) -> np.ndarray:
    pts = rng.uniform(-0.1 * size, 1.1 * size, size=(3, 2))
    t = np.linspace(0.0, 1.0, samples)[:, None]
    return (1 - t) ** 2 * pts[0] + 2 * (1 - t) * t * pts[1] + t ** 2 * pts[2]


def _vessel_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    grid = np.stack([xx.ravel(), yy.ravel()], axis=1)
    lo, hi = VESSEL_BAND
    while True:
        mask = np.zeros(size * size, dtype=bool)
        for _ in range(rng.integers(2, 5)):
            curve = _bezier(rng, size)
            width = rng.uniform(0.9, 1.8)
            d2 = ((grid[:, None, :] - curve[None, :, :]) ** 2).sum(-1).min(axis=1)
            mask |= d2 <= width * width
            frac = mask.mean()
            if frac > hi:
                break
        if lo <= frac <= hi:
            return mask.reshape(size, size)


def _vessels(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    size = SEGMENT_SIZE
    images = np.empty((n, 1, size, size))
    masks = np.empty((n, 1, size, size))
    yy, xx = np.mgrid[0:size, 0:size] / size
    for i in range(n):
        mask = _vessel_mask(rng, size)
        gx, gy = rng.normal(0.0, 0.1, size=2)
        background = 0.25 + gx * (xx - 0.5) + gy * (yy - 0.5)
        contrast = rng.uniform(0.45, 0.65)
        img = background + contrast * mask + rng.normal(0.0, 0.08, size=mask.shape)
        images[i, 0] = _skew(img)
        masks[i, 0] = mask
    return images, masks


def synth_dataset(kind: str, n: int, seed: int) -> Dataset:
    """Deterministic synthetic data.

    ``classify``: 32x32 oriented gratings at 0/45/90 degrees, balanced labels.
    ``segment``: 48x48 curvilinear strokes with binary masks covering 2%-15%.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "classify":
        return Dataset(kind, *_gratings(n, rng))
    if kind == "segment":
        return Dataset(kind, *_vessels(n, rng))
    raise ValueError(f"unknown dataset kind {kind!r} (expected 'classify' or 'segment')")


def save_dataset(ds: Dataset, out_dir, pgm: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor.save(out / "images.tnsr", ds.images)
    tensor.save(out / "targets.tnsr", ds.targets)
    (out / "dataset.ini").write_text(f"[dataset]\nkind = {ds.kind}\nn = {len(ds)}\n", encoding="utf-8")
    if pgm:
        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
        for i in range(len(ds)):
            write_pgm(img_dir / f"{i:05d}.pgm", ds.images[i, 0] * 255.0)
        if ds.kind == "segment":
            mask_dir = out / "masks"
            mask_dir.mkdir(exist_ok=True)
            for i in range(len(ds)):
                write_pgm(mask_dir / f"{i:05d}.pgm", ds.targets[i, 0] * 255.0)
    return out


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta = configparser.ConfigParser()
    if not meta.read(path / "dataset.ini", encoding="utf-8"):
        raise FileNotFoundError(f"{path}: missing dataset.ini")
    kind = meta.get("dataset", "kind")
    images = tensor.load(path / "images.tnsr").array.copy()
    targets = tensor.load(path / "targets.tnsr").array.copy()
    if images.ndim != 4 or targets.shape[0] != images.shape[0]:
        raise ValueError(f"{path}: images {images.shape} and targets {targets.shape} disagree")
    return Dataset(kind, images, targets)
