"""SORT-family tracking by detection.

Each track carries a constant-velocity Kalman filter over the box state
``(u, v, s, r)`` (center, area, aspect ratio) with rates for ``u, v, s``.
Detections are associated to predicted boxes by Hungarian assignment on IoU.
Two variants are provided:

``baseline``
    one association round over every detection with ``conf >= conf_low``.
``two-stage``
    detections with ``conf >= conf_high`` are associated first; tracks left
    unmatched then get a second round against ``conf_low <= conf < conf_high``
    detections. Only high-confidence detections may start new tracks.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator

from .data_io import FrameDetection
from .geometry import BoundingBox, _xywh, iou_matrix

MIN_AREA = 1e-6
MIN_ASPECT = 1e-6

# transition for x = [u, v, s, r, du, dv, ds]
_F = np.eye(7)
_F[0, 4] = _F[1, 5] = _F[2, 6] = 1.0
_H = np.zeros((4, 7))
_H[:, :4] = np.eye(4)


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DELETED = "deleted"


class Variant(str, enum.Enum):
    BASELINE = "baseline"
    TWO_STAGE = "two-stage"


@dataclass(frozen=True)
class TrackerConfig:
    iou_threshold: float = 0.3
    max_age: int = 30
    min_hits: int = 3
    variant: Variant = Variant.BASELINE
    conf_high: float = 0.5
    conf_low: float = 0.1
    initial_cov: tuple[float, ...] = (10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4)
    process_noise: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4)
    measurement_noise: tuple[float, ...] = (1.0, 1.0, 10.0, 10.0)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not 0.0 <= self.conf_low <= self.conf_high <= 1.0:
            raise ValueError("need 0 <= conf_low <= conf_high <= 1")
        if self.max_age < 1 or self.min_hits < 1:
            raise ValueError("max_age and min_hits must be >= 1")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in [0, 1]")
        if len(self.initial_cov) != 7 or len(self.process_noise) != 7 or len(self.measurement_noise) != 4:
            raise ValueError("noise diagonals must have lengths 7, 7 and 4")


def box_to_measurement(box: BoundingBox) -> np.ndarray:
    u, v = box.center
    return np.array([u, v, box.w * box.h, box.w / box.h])


def measurement_to_box(z) -> BoundingBox:
    s = max(float(z[2]), MIN_AREA)
    r = max(float(z[3]), MIN_ASPECT)
    w = np.sqrt(s * r)
    h = s / w
    return BoundingBox(float(z[0]) - w / 2.0, float(z[1]) - h / 2.0, w, h)


@dataclass
class TrackState:
    """Kalman estimate of one tracked object plus lifecycle bookkeeping."""

    track_id: int
    mean: np.ndarray
    cov: np.ndarray
    age: int = 0
    time_since_update: int = 0
    hit_streak: int = 1
    status: TrackStatus = TrackStatus.TENTATIVE
    history: list[FrameDetection] = field(default_factory=list)

    @classmethod
    def initiate(cls, track_id: int, box: BoundingBox, cfg: TrackerConfig) -> "TrackState":
        mean = np.zeros(7)
        mean[:4] = box_to_measurement(box)
        status = TrackStatus.CONFIRMED if cfg.min_hits <= 1 else TrackStatus.TENTATIVE
        return cls(track_id, mean, np.diag(np.asarray(cfg.initial_cov, dtype=float)), status=status)

    @property
    def box(self) -> BoundingBox:
        return measurement_to_box(self.mean[:4])

    def predict(self, cfg: TrackerConfig) -> "TrackState":
        if self.status is TrackStatus.DELETED:
            raise ValueError(f"cannot predict deleted track {self.track_id}")
        mean = _F @ self.mean
        mean[2] = max(mean[2], MIN_AREA)
        cov = _F @ self.cov @ _F.T + np.diag(np.asarray(cfg.process_noise, dtype=float))
        self.mean = mean
        self.cov = 0.5 * (cov + cov.T)
        if self.time_since_update > 0:
            self.hit_streak = 0
        self.age += 1
        self.time_since_update += 1
        return self

    def update(self, det: FrameDetection, cfg: TrackerConfig) -> "TrackState":
        z = box_to_measurement(det.box)
        R = np.diag(np.asarray(cfg.measurement_noise, dtype=float))
        S = _H @ self.cov @ _H.T + R
        K = np.linalg.solve(S, _H @ self.cov).T
        self.mean = self.mean + K @ (z - _H @ self.mean)
        # Joseph form keeps the covariance symmetric PSD
        A = np.eye(7) - K @ _H
        cov = A @ self.cov @ A.T + K @ R @ K.T
        self.cov = 0.5 * (cov + cov.T)
        self.time_since_update = 0
        self.hit_streak += 1
        if self.status is TrackStatus.TENTATIVE and self.hit_streak >= cfg.min_hits:
            self.status = TrackStatus.CONFIRMED
        return self


def assign_max_score(scores: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """One-to-one pairs maximizing the summed score over entries ``>= threshold``."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        return []
    eligible = scores >= threshold
    rows, cols = linear_sum_assignment(np.where(eligible, scores, 0.0), maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if eligible[r, c]]


def associate(
    track_boxes: Sequence[BoundingBox] | np.ndarray,
    det_boxes: Sequence[BoundingBox] | np.ndarray,
    iou_threshold: float = 0.3,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Match tracks to detections maximizing total IoU over eligible pairs.

    Pairs below ``iou_threshold`` are ineligible. Returns
    ``(matches, unmatched_tracks, unmatched_detections)`` as index lists; every
    index lands in exactly one bucket.
    """
    ta = _xywh(track_boxes)
    da = _xywh(det_boxes)
    matches = assign_max_score(iou_matrix(ta, da), iou_threshold) if len(ta) and len(da) else []
    mt = {m[0] for m in matches}
    md = {m[1] for m in matches}
    return (
        matches,
        [i for i in range(len(ta)) if i not in mt],
        [j for j in range(len(da)) if j not in md],
    )


class SortTracker(BaseEstimator):
    """Online multi-object tracker; one instance handles one sequence at a time.

    Parameters mirror :class:`TrackerConfig`. Call :meth:`track_sequence`
    (or ``transform``) with ``{frame: [FrameDetection, ...]}``; the output is
    every detection that belongs to a confirmed track, relabeled with that
    track's id. A track's detections from before confirmation are emitted
    retroactively once it is confirmed.
    """

    def __init__(
        self,
        iou_threshold=0.3,
        max_age=30,
        min_hits=3,
        variant="baseline",
        conf_high=0.5,
        conf_low=0.1,
    ):
        self.iou_threshold = iou_threshold
        self.max_age = max_age
        self.min_hits = min_hits
        self.variant = variant
        self.conf_high = conf_high
        self.conf_low = conf_low

    @property
    def config(self) -> TrackerConfig:
        return TrackerConfig(
            iou_threshold=self.iou_threshold,
            max_age=self.max_age,
            min_hits=self.min_hits,
            variant=self.variant,
            conf_high=self.conf_high,
            conf_low=self.conf_low,
        )

    @classmethod
    def from_config(cls, cfg: TrackerConfig) -> "SortTracker":
        tr = cls(cfg.iou_threshold, cfg.max_age, cfg.min_hits, cfg.variant.value, cfg.conf_high, cfg.conf_low)
        tr._cfg_override = cfg
        return tr

    def reset(self) -> "SortTracker":
        self.cfg_ = getattr(self, "_cfg_override", None) or self.config
        self.tracks_: list[TrackState] = []
        self.last_frame_: int | None = None
        self._ids = itertools.count(1)
        return self

    def fit(self, X=None, y=None):
        return self.reset()

    def transform(self, detections):
        return self.track_sequence(detections)

    def track_sequence(self, detections: Mapping[int, Sequence[FrameDetection]]) -> list[FrameDetection]:
        self.reset()
        out: list[FrameDetection] = []
        for frame in _frames_in_order(detections):
            out.extend(self.step(frame, detections[frame]))
        out.sort(key=lambda d: (d.frame, d.id))
        return out

    def step(self, frame: int, detections: Sequence[FrameDetection]) -> list[FrameDetection]:
        """Advance to ``frame`` and return the detections newly emitted."""
        if not hasattr(self, "tracks_"):
            self.reset()
        cfg = self.cfg_
        if self.last_frame_ is not None and frame <= self.last_frame_:
            raise ValueError(f"frame indices must increase: {frame} after {self.last_frame_}")
        steps = 1 if self.last_frame_ is None else frame - self.last_frame_
        self.last_frame_ = frame

        for k in range(steps):
            if k:
                # skipped frames behave like frames without detections
                self._expire(cfg)
            for t in self.tracks_:
                t.predict(cfg)

        dets = [d for d in detections if d.confidence >= cfg.conf_low]
        emitted: list[FrameDetection] = []

        if cfg.variant is Variant.TWO_STAGE:
            high = [d for d in dets if d.confidence >= cfg.conf_high]
            low = [d for d in dets if d.confidence < cfg.conf_high]
            remaining = self._match(self.tracks_, high, cfg, emitted)
            leftover_tracks = [self.tracks_[i] for i in remaining[0]]
            self._match(leftover_tracks, low, cfg, emitted)
            spawn = [high[j] for j in remaining[1]]
        else:
            _, unmatched = self._match(self.tracks_, dets, cfg, emitted)
            spawn = [dets[j] for j in unmatched]

        for d in spawn:
            t = TrackState.initiate(next(self._ids), d.box, cfg)
            self._record(t, d, emitted)
            self.tracks_.append(t)

        self._expire(cfg)
        return emitted

    def _expire(self, cfg: TrackerConfig) -> None:
        for t in self.tracks_:
            if t.time_since_update > cfg.max_age:
                t.status = TrackStatus.DELETED
        self.tracks_ = [t for t in self.tracks_ if t.status is not TrackStatus.DELETED]

    def _match(self, tracks, dets, cfg, emitted):
        matches, um_t, um_d = associate([t.box for t in tracks], [d.box for d in dets], cfg.iou_threshold)
        for ti, di in matches:
            tracks[ti].update(dets[di], cfg)
            self._record(tracks[ti], dets[di], emitted)
        return um_t, um_d

    @staticmethod
    def _record(t: TrackState, d: FrameDetection, emitted: list):
        t.history.append(FrameDetection(d.frame, t.track_id, d.box, d.confidence))
        if t.status is TrackStatus.CONFIRMED:
            emitted.extend(t.history)
            t.history = []


def _frames_in_order(detections: Mapping[int, Sequence[FrameDetection]]) -> list[int]:
    frames = list(detections)
    for a, b in zip(frames, frames[1:]):
        if b <= a:
            raise ValueError(f"frame indices must be strictly increasing: {b} after {a}")
    return frames


def track_sequence(
    detections: Mapping[int, Sequence[FrameDetection]],
    cfg: TrackerConfig | None = None,
) -> list[FrameDetection]:
    """Run a fresh tracker over a whole sequence."""
    return SortTracker.from_config(cfg or TrackerConfig()).track_sequence(detections)
