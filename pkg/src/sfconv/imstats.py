"""Pixel and weight distribution statistics: histograms, skewness, kurtosis."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ArrayLike, as_array

LUMA = (0.299, 0.587, 0.114)


class UndefinedStatistic(ValueError):
    """Moment statistic requested on a sample with zero variance."""


def _central_moments(samples: ArrayLike) -> tuple[float, float, float]:
    x = as_array(samples).reshape(-1)
    if x.size < 3:
        raise ValueError(f"need at least 3 samples, got {x.size}")
    d = x - x.mean()
    d2 = d * d
    m2 = d2.mean()
    if not m2 > 0 or m2 <= (np.finfo(float).eps * max(abs(x.mean()), 1.0)) ** 2:
        raise UndefinedStatistic("zero variance: skewness/kurtosis undefined")
    return float(m2), float((d2 * d).mean()), float((d2 * d2).mean())


def skewness(samples: ArrayLike) -> float:
    """Fisher-Pearson coefficient m3 / m2**1.5 (population moments)."""
    m2, m3, _ = _central_moments(samples)
    return float(m3 / m2 ** 1.5)


def kurtosis(samples: ArrayLike) -> float:
    """Excess kurtosis m4 / m2**2 - 3 (population moments)."""
    m2, _, m4 = _central_moments(samples)
    return float(m4 / (m2 * m2) - 3.0)


@dataclass
class HistogramReport:
    bin_edges: np.ndarray
    counts: np.ndarray
    skewness: float | None
    kurtosis: float | None
    n: int
    variance: float
    error: str | None = None

    def rows(self):
        """(low edge, high edge, count) per bin."""
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            yield float(lo), float(hi), int(c)


def histogram(samples: ArrayLike, bins: int) -> HistogramReport:
    """Equal-width histogram over [min, max], last bin closed on the right."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    x = as_array(samples).reshape(-1)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        edges = np.linspace(lo - 0.5, lo + 0.5, bins + 1)
    else:
        edges = np.linspace(lo, hi, bins + 1)
    idx = np.floor((x - edges[0]) / (edges[-1] - edges[0]) * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    try:
        sk, ku, err = skewness(x), kurtosis(x), None
    except UndefinedStatistic as exc:
        sk, ku, err = None, None, str(exc)
    return HistogramReport(edges, counts, sk, ku, int(x.size), float(x.var()), err)


def to_grayscale(img: ArrayLike) -> np.ndarray:
    """Collapse an (h, w, 3) or (3, h, w) colour image to luma; 2-D passes through."""
    a = as_array(img)
    if a.ndim == 2:
        return a
    if a.ndim == 3 and a.shape[-1] == 3:
        return a @ np.array(LUMA)
    if a.ndim == 3 and a.shape[0] == 3:
        return np.tensordot(np.array(LUMA), a, axes=1)
    if a.ndim == 3 and 1 in (a.shape[0], a.shape[-1]):
        return a.reshape(a.shape[1:] if a.shape[0] == 1 else a.shape[:-1])
    raise ValueError(f"cannot interpret image of shape {a.shape}")


def image_histogram(img: ArrayLike, bins: int = 256) -> HistogramReport:
    return histogram(to_grayscale(img), bins)


def weight_histogram(model, bins: int = 100, include_bias: bool = False) -> HistogramReport:
    """Histogram of all learnable scalars of ``model`` (a name -> array mapping or a model)."""
    params = model.params if hasattr(model, "params") else model
    chunks = [np.asarray(v).reshape(-1) for k, v in params.items()
              if include_bias or not k.endswith("bias")]
    if not chunks:
        raise ValueError("model has no parameters")
    return histogram(np.concatenate(chunks), bins)


# --- image files --------------------------------------------------------------

def _pnm_tokens(raw: bytes, count: int) -> tuple[list[int], int]:
    tokens, pos = [], 2
    while len(tokens) < count:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b"\r", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(raw[start:pos]))
    return tokens, pos + 1


def read_pnm(path) -> np.ndarray:
    """Read binary PGM (P5) or PPM (P6) with maxval 255."""
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    (w, h, maxval), pos = _pnm_tokens(raw, 3)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    ch = 1 if magic == b"P5" else 3
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * ch, offset=pos)
    img = data.reshape(h, w, ch).astype(np.float64)
    return img[..., 0] if ch == 1 else img


def write_pgm(path, img: ArrayLike) -> None:
    a = np.clip(np.rint(as_array(img)), 0, 255).astype(np.uint8)
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(a.tobytes())


def load_image(path) -> np.ndarray:
    """Load a PGM/PPM or TNSR file as a 2-D grayscale array."""
    from . import tensor

    path = Path(path)
    if path.suffix.lower() == ".tnsr":
        a = tensor.load(path).array
        while a.ndim > 2 and a.shape[0] == 1:
            a = a[0]
        return to_grayscale(a)
    return to_grayscale(read_pnm(path))


IMAGE_SUFFIXES = (".pgm", ".ppm", ".tnsr")


def corpus_stats(directory, bins: int = 256):
    """Per-image reports for every PGM/PPM/TNSR file under ``directory`` (sorted)."""
    files = sorted(p for p in Path(directory).rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    return [(p, image_histogram(load_image(p), bins)) for p in files]


def mean_skewness(reports) -> float:
    vals = [r.skewness for _, r in reports if r.skewness is not None]
    return float(np.mean(vals)) if vals else float("nan")
