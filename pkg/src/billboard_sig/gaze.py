"""Driver gaze dwell on tracked billboards and significance categories."""

from __future__ import annotations

import enum
import statistics
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .data_io import FrameDetection, GazeSample, Provenance, SequenceMeta
from .geometry import BoundingBox, ImageDims

LONG_GAZE_MS = 250.0


class SignificanceCategory(enum.IntEnum):
    NONE = 0
    SHORT = 1
    LONG = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True)
class DwellRecord:
    billboard_id: int
    driver_id: str
    frames_gazed: int
    gaze_ms: float
    frames_visible: int


def resolve_fixations(
    gaze: Mapping[int, GazeSample],
    frame: int,
    dims: ImageDims | None = None,
) -> GazeSample | None:
    """Fixation points usable at ``frame``, or ``None`` when the frame is skipped.

    Recorded points pass through. A frame without any is filled by linear
    extrapolation ``2 * p[t-1] - p[t-2]`` from the first recorded point of the
    two preceding frames; extrapolated points never seed further
    extrapolation. The estimate is clamped to the frame when ``dims`` is given.
    """
    if frame < 1:
        raise ValueError(f"frame index must be >= 1, got {frame}")
    s = gaze.get(frame)
    if s is not None and s.points and s.provenance is Provenance.RECORDED:
        return s
    prev1, prev2 = gaze.get(frame - 1), gaze.get(frame - 2)
    if not (_recorded(prev1) and _recorded(prev2)):
        return None
    (x1, y1), (x2, y2) = prev1.points[0], prev2.points[0]
    x, y = 2 * x1 - x2, 2 * y1 - y2
    if dims is not None:
        x = min(max(x, 0.0), float(dims.width))
        y = min(max(y, 0.0), float(dims.height))
    return GazeSample(frame, ((x, y),), Provenance.EXTRAPOLATED)


def _recorded(s: GazeSample | None) -> bool:
    return s is not None and s.provenance is Provenance.RECORDED and len(s.points) > 0


def gaze_duration(
    track_frames: Iterable[tuple[int, BoundingBox]],
    gaze: Mapping[int, GazeSample],
    fps: float,
    dims: ImageDims | None = None,
) -> tuple[int, float, int]:
    """Return ``(frames_gazed, gaze_ms, frames_visible)`` for one billboard track.

    A frame is gazed when any resolved fixation point lies inside the box,
    edges included.
    """
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    gazed = visible = 0
    for frame, box in track_frames:
        visible += 1
        s = resolve_fixations(gaze, frame, dims)
        if s is not None and any(box.contains(x, y) for x, y in s.points):
            gazed += 1
    return gazed, gazed * 1000.0 / fps, visible


def dwell_records(
    tracks: Iterable[FrameDetection],
    gaze: Mapping[int, GazeSample],
    meta: SequenceMeta,
) -> list[DwellRecord]:
    """One record per track id in a driver's session, ordered by id."""
    by_id: dict[int, list[tuple[int, BoundingBox]]] = defaultdict(list)
    for d in tracks:
        by_id[d.id].append((d.frame, d.box))
    out = []
    for bid in sorted(by_id):
        frames = sorted(by_id[bid], key=lambda fb: fb[0])
        g, ms, v = gaze_duration(frames, gaze, meta.fps, meta.dims)
        out.append(DwellRecord(bid, meta.driver_id, g, ms, v))
    return out


def aggregate_significance(durations_ms: Sequence[float], driver_count: int) -> float:
    """Median gaze duration across drivers; absent drivers count as 0 ms."""
    if driver_count < 1:
        raise ValueError("driver_count must be >= 1")
    if len(durations_ms) > driver_count:
        raise ValueError(f"{len(durations_ms)} durations for {driver_count} drivers")
    padded = list(durations_ms) + [0.0] * (driver_count - len(durations_ms))
    return float(statistics.median(padded))


def categorize(median_ms: float) -> SignificanceCategory:
    if median_ms < 0:
        raise ValueError(f"gaze duration cannot be negative: {median_ms}")
    if median_ms == 0:
        return SignificanceCategory.NONE
    if median_ms < LONG_GAZE_MS:
        return SignificanceCategory.SHORT
    return SignificanceCategory.LONG


@dataclass(frozen=True)
class BillboardLabel:
    billboard_id: int
    median_ms: float
    category: SignificanceCategory
    viewers: int


def label_billboards(records: Iterable[DwellRecord], drivers: Sequence[str]) -> dict[int, BillboardLabel]:
    """Median dwell and category per billboard across the given drivers."""
    per_bb: dict[int, dict[str, float]] = defaultdict(dict)
    for r in records:
        if r.driver_id not in drivers:
            raise ValueError(f"record for unknown driver {r.driver_id!r}")
        per_bb[r.billboard_id][r.driver_id] = per_bb[r.billboard_id].get(r.driver_id, 0.0) + r.gaze_ms
    out = {}
    for bid in sorted(per_bb):
        durs = list(per_bb[bid].values())
        med = aggregate_significance(durs, len(drivers))
        out[bid] = BillboardLabel(bid, med, categorize(med), sum(1 for d in durs if d > 0))
    return out


def category_census(labels: Mapping[int, BillboardLabel]) -> tuple[dict[str, int], dict[str, float | None]]:
    """Billboard count and mean number of viewing drivers per category."""
    counts = {c.label: 0 for c in SignificanceCategory}
    viewers: dict[str, list[int]] = {c.label: [] for c in SignificanceCategory}
    for lab in labels.values():
        counts[lab.category.label] += 1
        viewers[lab.category.label].append(lab.viewers)
    avg = {
        k: (None if k == SignificanceCategory.NONE.label or not v else sum(v) / len(v))
        for k, v in viewers.items()
    }
    return counts, avg
