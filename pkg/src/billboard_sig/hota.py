"""HOTA (Higher Order Tracking Accuracy) and its sub-scores.

For every localization threshold alpha in 0.05, 0.10, ..., 0.95:

1. GT/prediction pairs in the same frame with IoU >= alpha are candidates.
2. Over all candidate pairs, count potential matches ``n[g, p]`` per id pair
   and form the optimistic association score ``n / (|g| + |p| - n)``.
3. Match each frame with the Hungarian method, maximizing that score plus
   ``1e-6 * IoU`` as tiebreak. Matched pairs are true positives.
4. Detection scores follow from TP/FN/FP counts; association scores average
   the per-TP Jaccard of its id pair over all TPs.

Final scores are plain means over the 19 thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data_io import FrameDetection, flatten_detections
from .geometry import iou_matrix

ALPHAS = np.round(np.arange(1, 20) * 0.05, 2)
IOU_TIEBREAK = 1e-6


@dataclass(frozen=True)
class AlphaRecord:
    alpha: float
    tp: int
    fn: int
    fp: int
    det_a: float
    det_pr: float
    det_re: float
    ass_a: float
    ass_pr: float
    ass_re: float
    loc_a: float
    hota: float


@dataclass(frozen=True)
class HotaResult:
    per_alpha: tuple[AlphaRecord, ...]
    hota: float
    det_a: float
    det_pr: float
    det_re: float
    ass_a: float
    ass_pr: float
    ass_re: float
    loc_a: float

    def table_values(self) -> tuple[float, ...]:
        """Scores in the column order HOTA, DetPr, DetRe, DetA, AssPr, AssRe, AssA, Loc."""
        return (self.hota, self.det_pr, self.det_re, self.det_a, self.ass_pr, self.ass_re, self.ass_a, self.loc_a)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(("HOTA", "DetPr", "DetRe", "DetA", "AssPr", "AssRe", "AssA", "LocA"), self.table_values()))


@dataclass
class _Tally:
    """Additive per-alpha counts; pooling sequences is elementwise addition."""

    tp: np.ndarray = field(default_factory=lambda: np.zeros(len(ALPHAS), dtype=np.int64))
    fn: np.ndarray = field(default_factory=lambda: np.zeros(len(ALPHAS), dtype=np.int64))
    fp: np.ndarray = field(default_factory=lambda: np.zeros(len(ALPHAS), dtype=np.int64))
    ass_a: np.ndarray = field(default_factory=lambda: np.zeros(len(ALPHAS)))
    ass_pr: np.ndarray = field(default_factory=lambda: np.zeros(len(ALPHAS)))
    ass_re: np.ndarray = field(default_factory=lambda: np.zeros(len(ALPHAS)))
    loc: np.ndarray = field(default_factory=lambda: np.zeros(len(ALPHAS)))
    n_gt: int = 0
    n_pred: int = 0

    def __iadd__(self, other: "_Tally") -> "_Tally":
        for name in ("tp", "fn", "fp", "ass_a", "ass_pr", "ass_re", "loc"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.n_gt += other.n_gt
        self.n_pred += other.n_pred
        return self


def _ratio(num, den, empty: bool) -> np.ndarray:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.full(num.shape, 1.0 if empty else 0.0)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _finalize(t: _Tally) -> HotaResult:
    empty = t.n_gt == 0 and t.n_pred == 0
    det_a = _ratio(t.tp, t.tp + t.fn + t.fp, empty)
    det_pr = _ratio(t.tp, t.tp + t.fp, empty)
    det_re = _ratio(t.tp, t.tp + t.fn, empty)
    ass_a = _ratio(t.ass_a, t.tp, empty)
    ass_pr = _ratio(t.ass_pr, t.tp, empty)
    ass_re = _ratio(t.ass_re, t.tp, empty)
    loc_a = _ratio(t.loc, t.tp, empty)
    hota = np.sqrt(det_a * ass_a)
    recs = tuple(
        AlphaRecord(
            float(a), int(t.tp[i]), int(t.fn[i]), int(t.fp[i]),
            float(det_a[i]), float(det_pr[i]), float(det_re[i]),
            float(ass_a[i]), float(ass_pr[i]), float(ass_re[i]),
            float(loc_a[i]), float(hota[i]),
        )
        for i, a in enumerate(ALPHAS)
    )
    return HotaResult(
        per_alpha=recs,
        hota=float(hota.mean()),
        det_a=float(det_a.mean()),
        det_pr=float(det_pr.mean()),
        det_re=float(det_re.mean()),
        ass_a=float(ass_a.mean()),
        ass_pr=float(ass_pr.mean()),
        ass_re=float(ass_re.mean()),
        loc_a=float(loc_a.mean()),
    )


def _frames(dets, label: str) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Frame -> (ids, xywh boxes), validating ids and (frame, id) uniqueness."""
    rows: dict[int, list[FrameDetection]] = {}
    for d in flatten_detections(dets):
        if d.id < 0:
            raise ValueError(f"{label}: negative id {d.id} at frame {d.frame}")
        rows.setdefault(d.frame, []).append(d)
    out = {}
    for f, ds in rows.items():
        ids = np.array([d.id for d in ds], dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise ValueError(f"{label}: duplicate id in frame {f}")
        out[f] = (ids, np.array([[d.box.x, d.box.y, d.box.w, d.box.h] for d in ds], dtype=float))
    return out


def _tally_sequence(gt, pred) -> _Tally:
    gt_f = _frames(gt, "gt")
    pr_f = _frames(pred, "pred")
    tally = _Tally()
    na = len(ALPHAS)

    gt_ids = np.unique(np.concatenate([v[0] for v in gt_f.values()])) if gt_f else np.zeros(0, np.int64)
    pr_ids = np.unique(np.concatenate([v[0] for v in pr_f.values()])) if pr_f else np.zeros(0, np.int64)
    g_index = {int(g): i for i, g in enumerate(gt_ids)}
    p_index = {int(p): i for i, p in enumerate(pr_ids)}
    n_g, n_p = len(gt_ids), len(pr_ids)

    gt_count = np.zeros(n_g)
    pr_count = np.zeros(n_p)
    potential = np.zeros((na, n_g, n_p))
    per_frame = []
    for f in sorted(set(gt_f) | set(pr_f)):
        g_ids, g_boxes = gt_f.get(f, (np.zeros(0, np.int64), np.zeros((0, 4))))
        p_ids, p_boxes = pr_f.get(f, (np.zeros(0, np.int64), np.zeros((0, 4))))
        gi = np.array([g_index[int(g)] for g in g_ids], dtype=np.int64)
        pi = np.array([p_index[int(p)] for p in p_ids], dtype=np.int64)
        gt_count[gi] += 1
        pr_count[pi] += 1
        ious = iou_matrix(g_boxes, p_boxes)
        per_frame.append((gi, pi, ious))
        if len(gi) and len(pi):
            cand = ious[None, :, :] >= ALPHAS[:, None, None]
            potential[:, gi[:, None], pi[None, :]] += cand

    tally.n_gt = int(gt_count.sum())
    tally.n_pred = int(pr_count.sum())

    union = gt_count[:, None] + pr_count[None, :]
    optimistic = np.zeros_like(potential)
    np.divide(potential, union[None] - potential, out=optimistic, where=potential > 0)

    matched = np.zeros((na, n_g, n_p))
    for gi, pi, ious in per_frame:
        if len(gi) == 0 or len(pi) == 0:
            continue
        for a, alpha in enumerate(ALPHAS):
            cand = ious >= alpha
            if not cand.any():
                continue
            if (cand.sum(axis=0) <= 1).all() and (cand.sum(axis=1) <= 1).all():
                # candidates already form a matching
                rows, cols = np.nonzero(cand)
            else:
                score = np.where(cand, optimistic[a][gi[:, None], pi[None, :]] + IOU_TIEBREAK * ious, 0.0)
                rows, cols = linear_sum_assignment(score, maximize=True)
                keep = cand[rows, cols]
                rows, cols = rows[keep], cols[keep]
            matched[a, gi[rows], pi[cols]] += 1
            tally.tp[a] += len(rows)
            tally.loc[a] += ious[rows, cols].sum()

    tally.fn = tally.n_gt - tally.tp
    tally.fp = tally.n_pred - tally.tp
    for a in range(na):
        m = matched[a]
        nz = m > 0
        if not nz.any():
            continue
        gc = np.broadcast_to(gt_count[:, None], m.shape)[nz]
        pc = np.broadcast_to(pr_count[None, :], m.shape)[nz]
        mm = m[nz]
        tally.ass_a[a] = np.sum(mm * mm / (gc + pc - mm))
        tally.ass_pr[a] = np.sum(mm * mm / pc)
        tally.ass_re[a] = np.sum(mm * mm / gc)
    return tally


def evaluate_hota(gt, pred) -> HotaResult:
    """HOTA between two tracked-detection sets (frame maps or flat lists)."""
    return _finalize(_tally_sequence(gt, pred))


def evaluate_hota_multi(sequences: Iterable[tuple[object, object]]) -> HotaResult:
    """Dataset-level HOTA with counts pooled over sequences before forming ratios."""
    return evaluate_hota_sequences(sequences)[1]


def evaluate_hota_sequences(sequences: Iterable[tuple[object, object]]) -> tuple[list[HotaResult], HotaResult]:
    """Per-sequence results plus the pooled dataset-level result."""
    tallies = [_tally_sequence(gt, pred) for gt, pred in sequences]
    if not tallies:
        raise ValueError("evaluate_hota_multi needs at least one sequence")
    total = _Tally()
    for t in tallies:
        total += t
    return [_finalize(t) for t in tallies], _finalize(total)
