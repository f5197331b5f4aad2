"""Saliency-map agreement metrics: AUC-Judd, NSS, SIM and CC."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_io import SaliencyGrid
from .geometry import ImageDims

DEFAULT_SIGMA_PX = 25.0


@dataclass(frozen=True)
class SaliencyScore:
    auc_judd: float
    nss: float
    sim: float
    cc: float


def _arr(grid) -> np.ndarray:
    if isinstance(grid, SaliencyGrid):
        return grid.values.astype(float)
    return np.asarray(grid, dtype=float)


def _fixation_pixels(fix: Sequence[tuple[float, float]], shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of fixation points, clipped to the grid."""
    if len(fix) == 0:
        raise ValueError("at least one fixation is required")
    pts = np.asarray(fix, dtype=float).reshape(-1, 2)
    cols = np.clip(np.floor(pts[:, 0]).astype(int), 0, shape[1] - 1)
    rows = np.clip(np.floor(pts[:, 1]).astype(int), 0, shape[0] - 1)
    return rows, cols


def auc_judd(sal_map, fix: Sequence[tuple[float, float]]) -> float:
    """ROC area with thresholds at the saliency values of fixated pixels.

    Positives are the fixation samples; negatives are all pixels that carry
    no fixation. At each threshold ``t`` the curve point is the fraction of
    positives and of negatives with value ``>= t``; tied values therefore move
    together and a constant map scores exactly 0.5.
    """
    s = _arr(sal_map)
    rows, cols = _fixation_pixels(fix, s.shape)
    pos = s[rows, cols]
    fixated = np.zeros(s.shape, dtype=bool)
    fixated[rows, cols] = True
    neg = np.sort(s[~fixated])
    if neg.size == 0:
        return 0.5
    thresholds = np.unique(pos)[::-1]
    pos_sorted = np.sort(pos)
    tpr = (len(pos) - np.searchsorted(pos_sorted, thresholds, side="left")) / len(pos)
    fpr = (len(neg) - np.searchsorted(neg, thresholds, side="left")) / len(neg)
    tpr = np.concatenate([[0.0], tpr, [1.0]])
    fpr = np.concatenate([[0.0], fpr, [1.0]])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def nss(sal_map, fix: Sequence[tuple[float, float]]) -> float:
    """Mean z-scored saliency at fixations; 0 for a constant map."""
    s = _arr(sal_map)
    rows, cols = _fixation_pixels(fix, s.shape)
    std = s.std()
    if std == 0:
        return 0.0
    return float(np.mean((s[rows, cols] - s.mean()) / std))


def sim(sal_map, gt_density) -> float:
    """Histogram intersection of the two grids after normalizing each to sum 1."""
    a, b = _arr(sal_map), _arr(gt_density)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    sa, sb = a.sum(), b.sum()
    if sa <= 0 or sb <= 0:
        raise ValueError("SIM is undefined for an all-zero grid")
    return float(np.minimum(a / sa, b / sb).sum())


def cc(sal_map, gt_density) -> float:
    """Pearson correlation between the two grids."""
    a, b = _arr(sal_map), _arr(gt_density)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a = a - a.mean()
    b = b - b.mean()
    da, db = np.sqrt((a * a).sum()), np.sqrt((b * b).sum())
    if da == 0 or db == 0:
        raise ValueError("CC is undefined for a zero-variance grid")
    return float((a * b).sum() / (da * db))


def density_map(fix: Sequence[tuple[float, float]], dims: ImageDims, sigma: float = DEFAULT_SIGMA_PX) -> np.ndarray:
    """Unscaled sum of unit-peak isotropic Gaussians at the fixations (pixel centers at +0.5)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if len(fix) == 0:
        raise ValueError("at least one fixation is required")
    xs = np.arange(dims.width) + 0.5
    ys = np.arange(dims.height) + 0.5
    out = np.zeros((dims.height, dims.width))
    for x, y in np.asarray(fix, dtype=float).reshape(-1, 2):
        gx = np.exp(-((xs - x) ** 2) / (2 * sigma * sigma))
        gy = np.exp(-((ys - y) ** 2) / (2 * sigma * sigma))
        out += np.outer(gy, gx)
    return out


def fixation_density(fix: Sequence[tuple[float, float]], dims: ImageDims,
                     sigma: float = DEFAULT_SIGMA_PX) -> SaliencyGrid:
    """Ground-truth density grid rescaled so its maximum is 255."""
    d = density_map(fix, dims, sigma)
    peak = d.max()
    scaled = np.rint(d * (255.0 / peak)) if peak > 0 else d
    return SaliencyGrid(dims, scaled.astype(np.uint8))


def score_frame(sal_map, fix: Sequence[tuple[float, float]], sigma: float = DEFAULT_SIGMA_PX) -> SaliencyScore:
    """All four metrics for one frame; SIM/CC compare against the fixation density."""
    s = _arr(sal_map)
    dims = ImageDims(s.shape[1], s.shape[0])
    gt = density_map(fix, dims, sigma)
    return SaliencyScore(
        auc_judd=auc_judd(s, fix),
        nss=nss(s, fix),
        sim=sim(s, gt) if s.sum() > 0 else 0.0,
        cc=cc(s, gt) if s.std() > 0 and gt.std() > 0 else 0.0,
    )
