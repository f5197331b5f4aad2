"""Gaze-independent billboard features and dataset assembly.

Per driving session a billboard track yields seven features:

====  ==========================================================
f1    frames visible
f2    region (0 left, 1 center, 2 right) holding the box center longest
f3    mean distance of the box center from the frame center, px
f4    mean box area as a fraction of the frame area
f5    mean area fraction over the 10 largest boxes
f6    mean in-box saliency, counting only values above 50
f7    mean ratio of in-box to whole-frame saliency (same threshold)
====  ==========================================================

Sessions are combined by averaging (mode for f2).
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data_io import FrameDetection, SaliencyGrid, SequenceMeta
from .geometry import BoundingBox, Region, center_distance, region_of

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "f1_visibility_frames",
    "f2_region_code",
    "f3_center_distance",
    "f4_mean_area",
    "f5_top10_area",
    "f6_mean_saliency_in_box",
    "f7_saliency_ratio",
)
SALIENCY_THRESHOLD = 50
TOP_K = 10
TRAIN_SIZE_REF, TEST_SIZE_REF = 115, 30


@dataclass(frozen=True)
class FeatureVector:
    visibility_frames: float
    region_code: int
    center_distance: float
    mean_area: float
    top10_area: float
    mean_saliency_in_box: float
    saliency_ratio: float
    # frames whose saliency grid was missing; not a feature
    missing_saliency: int = field(default=0, compare=False)

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.visibility_frames,
                self.region_code,
                self.center_distance,
                self.mean_area,
                self.top10_area,
                self.mean_saliency_in_box,
                self.saliency_ratio,
            ],
            dtype=float,
        )


class Session(NamedTuple):
    """One billboard's track in one driving session plus the inputs it needs."""

    frames: Sequence[tuple[int, BoundingBox]]
    saliency: Mapping[int, SaliencyGrid]
    meta: SequenceMeta


def _box_pixels(box: BoundingBox, grid: SaliencyGrid, meta: SequenceMeta) -> np.ndarray:
    fx = grid.dims.width / meta.dims.width
    fy = grid.dims.height / meta.dims.height
    x0 = max(int(np.floor(box.x * fx)), 0)
    x1 = min(int(np.ceil(box.x2 * fx)), grid.dims.width)
    y0 = max(int(np.floor(box.y * fy)), 0)
    y1 = min(int(np.ceil(box.y2 * fy)), grid.dims.height)
    if x1 <= x0 or y1 <= y0:
        return np.zeros(0, dtype=np.uint8)
    return grid.values[y0:y1, x0:x1].ravel()


def thresholded_mean(values: np.ndarray, threshold: int = SALIENCY_THRESHOLD) -> float | None:
    """Mean of values strictly above ``threshold``; ``None`` when there are none."""
    sel = values[values > threshold]
    if sel.size == 0:
        return None
    return float(sel.mean())


def frame_saliency(box: BoundingBox, grid: SaliencyGrid, meta: SequenceMeta,
                   threshold: int = SALIENCY_THRESHOLD) -> tuple[float, float]:
    """In-box thresholded mean and its ratio to the whole-frame thresholded mean."""
    inside = thresholded_mean(_box_pixels(box, grid, meta), threshold)
    if inside is None:
        return 0.0, 0.0
    whole = thresholded_mean(grid.values, threshold)
    return inside, (inside / whole if whole else 0.0)


def dominant_region(regions: Iterable[Region]) -> Region:
    """Most frequent region; any tie resolves to center."""
    counts = Counter(regions)
    if not counts:
        raise ValueError("no regions to vote over")
    best = max(counts.values())
    winners = [r for r, c in counts.items() if c == best]
    return winners[0] if len(winners) == 1 else Region.CENTER


def extract_session_features(
    track_frames: Sequence[tuple[int, BoundingBox]],
    saliency: Mapping[int, SaliencyGrid],
    meta: SequenceMeta,
    top_k: int = TOP_K,
    threshold: int = SALIENCY_THRESHOLD,
) -> FeatureVector:
    if not track_frames:
        raise ValueError("track has no frames")
    dims = meta.dims
    frame_area = float(dims.area)
    boxes = [b for _, b in track_frames]
    areas = np.array([b.area / frame_area for b in boxes])
    regions = [region_of(min(max(b.center[0], 0.0), dims.width), dims) for b in boxes]
    dists = [center_distance(b, dims) for b in boxes]

    sal_in, sal_ratio = [], []
    missing = 0
    for frame, box in track_frames:
        if frame not in saliency:
            missing += 1
            continue
        inside, ratio = frame_saliency(box, saliency[frame], meta, threshold)
        sal_in.append(inside)
        sal_ratio.append(ratio)
    if missing:
        logger.warning("saliency missing for %d of %d track frames (%s)", missing, len(track_frames),
                       meta.name or meta.driver_id or "session")

    k = min(top_k, len(areas))
    top = np.sort(areas)[::-1][:k]
    mean_area = float(areas.mean())
    return FeatureVector(
        visibility_frames=float(len(track_frames)),
        region_code=int(dominant_region(regions)),
        center_distance=float(np.mean(dists)),
        mean_area=mean_area,
        # summation order can leave the top-k mean an ulp under the full mean
        top10_area=max(float(top.mean()), mean_area),
        mean_saliency_in_box=float(np.mean(sal_in)) if sal_in else 0.0,
        saliency_ratio=float(np.mean(sal_ratio)) if sal_ratio else 0.0,
        missing_saliency=missing,
    )


def combine_sessions(vectors: Sequence[FeatureVector]) -> FeatureVector:
    """Average numeric features over sessions; f2 takes the mode (ties to center)."""
    if not vectors:
        raise ValueError("combine_sessions needs at least one session vector")
    # sorting makes the floating-point sum independent of input order
    def mean(attr):
        return float(np.mean(sorted(getattr(v, attr) for v in vectors)))

    return FeatureVector(
        visibility_frames=mean("visibility_frames"),
        region_code=int(dominant_region(Region(v.region_code) for v in vectors)),
        center_distance=mean("center_distance"),
        mean_area=mean("mean_area"),
        top10_area=mean("top10_area"),
        mean_saliency_in_box=mean("mean_saliency_in_box"),
        saliency_ratio=mean("saliency_ratio"),
        missing_saliency=sum(v.missing_saliency for v in vectors),
    )


@dataclass
class BillboardAggregate:
    billboard_id: int
    sessions: list[FeatureVector] = field(default_factory=list)
    label: int | None = None

    @property
    def combined(self) -> FeatureVector | None:
        return combine_sessions(self.sessions) if self.sessions else None


def session_tracks(tracks: Iterable[FrameDetection]) -> dict[int, list[tuple[int, BoundingBox]]]:
    by_id: dict[int, list[tuple[int, BoundingBox]]] = defaultdict(list)
    for d in tracks:
        by_id[d.id].append((d.frame, d.box))
    return {k: sorted(v, key=lambda fb: fb[0]) for k, v in sorted(by_id.items())}


def aggregate_billboards(
    sessions: Sequence[tuple[Iterable[FrameDetection], Mapping[int, SaliencyGrid], SequenceMeta]],
    labels: Mapping[int, int] | None = None,
) -> list[BillboardAggregate]:
    """Per-billboard feature aggregates over driving sessions, ordered by id."""
    aggs: dict[int, BillboardAggregate] = {}
    for tracks, saliency, meta in sessions:
        for bid, frames in session_tracks(tracks).items():
            agg = aggs.setdefault(bid, BillboardAggregate(bid))
            agg.sessions.append(extract_session_features(frames, saliency, meta))
    if labels is not None:
        for bid, agg in aggs.items():
            agg.label = int(labels[bid]) if bid in labels else None
    return [aggs[k] for k in sorted(aggs)]


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Transform per-billboard session lists into the ``(n, 7)`` feature matrix.

    ``X`` is a sequence with one entry per billboard, each a sequence of
    :class:`Session` tuples.
    """

    def __init__(self, top_k=TOP_K, saliency_threshold=SALIENCY_THRESHOLD):
        self.top_k = top_k
        self.saliency_threshold = saliency_threshold

    def fit(self, X, y=None):
        self.n_features_out_ = len(FEATURE_NAMES)
        return self

    def transform(self, X) -> np.ndarray:
        rows = []
        for sessions in X:
            vecs = [
                extract_session_features(s.frames, s.saliency, s.meta, self.top_k, self.saliency_threshold)
                for s in sessions
            ]
            rows.append(combine_sessions(vecs).as_array())
        return np.array(rows, dtype=float).reshape(-1, len(FEATURE_NAMES))

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_NAMES, dtype=object)


def scaled_test_size(n: int) -> int:
    """Test-set size keeping the 115:30 proportion."""
    return int(round(n * TEST_SIZE_REF / (TRAIN_SIZE_REF + TEST_SIZE_REF)))


def stratified_split(y: Sequence[int], test_size: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test split of row indices preserving class proportions.

    Per-class test quotas are the proportional share rounded by largest
    remainder, ties to the lower class label.
    """
    y = np.asarray(y)
    n = len(y)
    if not 0 <= test_size <= n:
        raise ValueError(f"test_size={test_size} outside [0, {n}]")
    classes, counts = np.unique(y, return_counts=True)
    # integer arithmetic keeps remainder ties exact
    quota = counts * test_size // n
    rem = counts * test_size % n
    short = test_size - quota.sum()
    order = sorted(range(len(classes)), key=lambda i: (-rem[i], classes[i]))
    for i in order[:short]:
        quota[i] += 1
    rng = np.random.default_rng(seed)
    test = []
    for c, q in zip(classes, quota):
        idx = np.flatnonzero(y == c)
        test.extend(rng.permutation(idx)[:q].tolist())
    test_idx = np.array(sorted(test), dtype=int)
    train_idx = np.setdiff1d(np.arange(n), test_idx)
    return train_idx, test_idx


@dataclass
class Dataset:
    ids: np.ndarray
    X: np.ndarray
    y: np.ndarray


def build_dataset(
    aggregates: Sequence[BillboardAggregate],
    labels: Mapping[int, int] | None = None,
    seed: int = 0,
    test_size: int | None = None,
) -> tuple[Dataset, Dataset]:
    """Split labeled aggregates into train/test sets (115/30 when n = 145)."""
    rows = []
    for agg in aggregates:
        lab = labels.get(agg.billboard_id) if labels is not None else agg.label
        vec = agg.combined
        if lab is None or vec is None:
            continue
        rows.append((agg.billboard_id, vec.as_array(), int(lab)))
    if not rows:
        raise ValueError("no labeled billboards with features")
    ids = np.array([r[0] for r in rows])
    X = np.vstack([r[1] for r in rows])
    y = np.array([r[2] for r in rows])
    ts = scaled_test_size(len(rows)) if test_size is None else test_size
    if ts > len(rows):
        raise ValueError(f"test size {ts} exceeds {len(rows)} billboards")
    tr, te = stratified_split(y, ts, seed)
    return Dataset(ids[tr], X[tr], y[tr]), Dataset(ids[te], X[te], y[te])
