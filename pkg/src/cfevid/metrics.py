"""Quality and compressibility measurements."""
from __future__ import annotations

from typing import Iterable, NamedTuple
import math

import numpy as np

from .geometry import BlockGrid, Clip, DimensionError

PSNR_INF = math.inf


def mse(a: Clip, b: Clip) -> float:
    if a.shape != b.shape:
        raise DimensionError(f"cannot compare clips of shape {a.shape} and {b.shape}")
    d = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(d * d))


def psnr_from_mse(value: float, peak: float = 255.0) -> float:
    if value == 0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / value)


def psnr(a: Clip, b: Clip) -> float:
    """PSNR in dB over every sample of every frame; identical clips give ``inf``."""
    return psnr_from_mse(mse(a, b))


def psnr_per_frame(a: Clip, b: Clip) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"cannot compare clips of shape {a.shape} and {b.shape}")
    d = a.data.astype(np.float64) - b.data.astype(np.float64)
    per = np.mean(d * d, axis=(1, 2, 3))
    return np.array([psnr_from_mse(v) for v in per])


def mean_psnr(values: Iterable[float]) -> float:
    """Dataset mean of per-video PSNRs.  Infinite entries are skipped."""
    v = [x for x in values if math.isfinite(x)]
    return float(np.mean(v)) if v else PSNR_INF


class Correlation(NamedTuple):
    score: float
    defined: bool


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    x = x - x.mean()
    y = y - y.mean()
    den = math.sqrt(float((x * x).sum()) * float((y * y).sum()))
    if den == 0:
        return None
    return float((x * y).sum()) / den


def neighbor_correlation(frame: np.ndarray, grid: BlockGrid) -> Correlation:
    """Mean Pearson correlation of the pixel lines facing each other across MB borders.

    For every internal vertical MB border, the last column of the left MB is
    correlated with the first column of the right MB, channel by channel, and
    likewise for horizontal borders.  Lines with zero variance are skipped; if
    nothing remains the score is 0 and ``defined`` is False.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[:2] != (grid.height, grid.width):
        raise DimensionError(f"frame {frame.shape[:2]} does not match grid")
    pairs = [(frame[:, c * grid.mb_w - 1], frame[:, c * grid.mb_w])
             for c in range(1, grid.grid_cols)]
    pairs += [(frame[r * grid.mb_h - 1], frame[r * grid.mb_h])
              for r in range(1, grid.grid_rows)]
    scores = []
    for a, b in pairs:
        for ch in range(a.shape[-1]):
            r = _pearson(a[:, ch], b[:, ch])
            if r is not None:
                scores.append(r)
    if not scores:
        return Correlation(0.0, False)
    return Correlation(float(np.mean(scores)), True)

