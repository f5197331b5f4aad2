"""Seeded synthetic drive-past scenarios with exact oracle ground truth.

Every driver passes the same billboards in the same order. A billboard's box
grows geometrically frame over frame while its center drifts toward the
frame side it stands on, leaving the frame at that edge. Billboards alternate
sides so boxes visible at the same time never overlap.

Gaze realizes a dwell plan exactly: during planned frames the fixation sits
on the billboard's center, otherwise on the road ahead below every box.
Saliency grids hold Gaussian kernels at the planned fixations only.
"""

from __future__ import annotations

import json
import statistics
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data_io import (
    FrameDetection,
    GazeSample,
    SaliencyGrid,
    SequenceMeta,
    saliency_path,
    write_detections,
    write_gaze,
    write_meta,
    write_saliency_grid,
)
from .gaze import BillboardLabel, SignificanceCategory, categorize
from .geometry import BoundingBox, ImageDims

ROAD_POINT = (0.5, 0.85)  # fixation "elsewhere", as a fraction of width/height
_TIER_PROBS = (45 / 145, 79 / 145, 21 / 145)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n_billboards: int = 20
    n_drivers: int = 8
    fps: float = 25.0
    width: int = 960
    height: int = 540
    n_frames: int = 2000
    frames_per_pass: int = 60
    growth: float = 1.05
    start_width: float = 0.1  # initial box width as a fraction of the frame width
    center_jitter: float = 0.0
    size_jitter: float = 0.0
    miss_prob: float = 0.0
    fp_rate: float = 0.0
    det_confidence: float = 1.0
    conf_low: float = 0.1
    conf_high: float = 0.5
    saliency_scale: float = 0.1
    saliency_sigma: float = 25.0
    # {(driver_index, billboard_id): frames}; generated from the seed when None
    dwell_plan: dict | None = None

    def __post_init__(self):
        for name in ("miss_prob",):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("n_billboards", "n_drivers", "n_frames", "frames_per_pass"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.fp_rate < 0 or self.center_jitter < 0 or self.size_jitter < 0:
            raise ValueError("noise parameters must be non-negative")
        if self.growth <= 1.0:
            raise ValueError("growth must exceed 1 so areas increase along the approach")
        if self.n_billboards and self.frames_per_pass + 2 > self.n_frames:
            raise ValueError("n_frames too short for one pass")

    @property
    def dims(self) -> ImageDims:
        return ImageDims(self.width, self.height)

    @property
    def noiseless(self) -> bool:
        return self.center_jitter == 0 and self.size_jitter == 0 and self.miss_prob == 0 and self.fp_rate == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.dwell_plan is not None:
            d["dwell_plan"] = [[k[0], k[1], v] for k, v in sorted(self.dwell_plan.items())]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario config keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("dwell_plan") is not None:
            d["dwell_plan"] = {(int(a), int(b)): int(v) for a, b, v in d["dwell_plan"]}
        return cls(**d)


@dataclass
class DriverSequence:
    driver_id: str
    meta: SequenceMeta
    gt: list[FrameDetection]
    detections: list[FrameDetection]
    gaze: dict[int, GazeSample]
    saliency: Mapping[int, SaliencyGrid]
    planned_frames: dict[int, list[int]]  # billboard id -> gazed frames


@dataclass
class Scenario:
    config: ScenarioConfig
    drivers: list[DriverSequence]
    dwell_plan: dict[tuple[int, int], int]
    oracle: dict[int, BillboardLabel]
    schedule: dict[int, int] = field(default_factory=dict)  # billboard id -> first frame (driver 0)


class SynthSaliency(Mapping):
    """Saliency grids computed on demand from planned fixations."""

    def __init__(self, frames: list[int], fixations: dict[int, list[tuple[float, float]]],
                 video: ImageDims, scale: float, sigma: float):
        self._frames = frames
        self._set = set(frames)
        self._fix = fixations
        self.dims = ImageDims(max(1, round(video.width * scale)), max(1, round(video.height * scale)))
        self._fx = self.dims.width / video.width
        self._fy = self.dims.height / video.height
        self._sigma = sigma * self._fx

    def __getitem__(self, frame: int) -> SaliencyGrid:
        if frame not in self._set:
            raise KeyError(frame)
        vals = np.zeros((self.dims.height, self.dims.width))
        xs = np.arange(self.dims.width) + 0.5
        ys = np.arange(self.dims.height) + 0.5
        s2 = 2 * self._sigma**2
        for x, y in self._fix.get(frame, ()):
            vals += np.outer(np.exp(-((ys - y * self._fy) ** 2) / s2), np.exp(-((xs - x * self._fx) ** 2) / s2))
        grid = np.rint(255.0 * np.minimum(vals, 1.0)).astype(np.uint8)
        return SaliencyGrid(self.dims, grid)

    def __iter__(self):
        return iter(self._frames)

    def __len__(self):
        return len(self._frames)

    def __contains__(self, frame) -> bool:
        return frame in self._set


def _plan_dwell(cfg: ScenarioConfig, rng: np.random.Generator) -> dict[tuple[int, int], int]:
    """Per (driver, billboard) dwell in frames, drawn per significance tier."""
    nd, p = cfg.n_drivers, cfg.frames_per_pass
    long_min = int(np.ceil(250.0 * cfg.fps / 1000.0 + 1e-9))  # frames reaching 250 ms
    short_max = max(1, long_min - 1)
    plan = {}
    for b in range(1, cfg.n_billboards + 1):
        tier = rng.choice(3, p=_TIER_PROBS)
        dwell = np.zeros(nd, dtype=int)
        if tier == 0:
            k = int(rng.integers(0, max(1, (nd - 1) // 2) + 1)) if nd > 2 else 0
            dwell[:k] = rng.integers(1, short_max + 1, k)
        elif tier == 1:
            k = int(rng.integers(nd // 2 + 1, nd + 1))
            dwell[:k] = rng.integers(1, short_max + 1, k)
        else:
            k = int(rng.integers(nd // 2 + 1, nd + 1))
            dwell[:k] = rng.integers(long_min, min(2 * long_min, p) + 1, k)
        rng.shuffle(dwell)
        for d in range(nd):
            plan[(d, b)] = int(min(dwell[d], p))
    return plan


def oracle_labels(plan: Mapping[tuple[int, int], int], cfg: ScenarioConfig) -> dict[int, BillboardLabel]:
    out = {}
    for b in range(1, cfg.n_billboards + 1):
        ms = [plan.get((d, b), 0) * 1000.0 / cfg.fps for d in range(cfg.n_drivers)]
        med = float(statistics.median(ms)) if ms else 0.0
        out[b] = BillboardLabel(b, med, categorize(med), sum(1 for m in ms if m > 0))
    return out


def _trajectory(cfg: ScenarioConfig, rng: np.random.Generator, side: int) -> list[BoundingBox]:
    W, H, P = cfg.width, cfg.height, cfg.frames_per_pass
    w0 = W * cfg.start_width * rng.uniform(0.9, 1.1)
    h0 = w0 / rng.uniform(1.5, 2.5)
    if side < 0:
        x0 = W * rng.uniform(0.36, 0.42)
    else:
        x0 = W * rng.uniform(0.58, 0.64)
    y0 = H * rng.uniform(0.33, 0.40)
    boxes = []
    lin_end = cfg.growth ** ((P - 1) / 2.0)
    w_end = w0 * lin_end
    x_end = w_end / 2.0 if side < 0 else W - w_end / 2.0
    for i in range(P):
        lin = cfg.growth ** (i / 2.0)
        w, h = w0 * lin, h0 * lin
        frac = i / max(P - 1, 1)
        cx = x0 + (x_end - x0) * frac * frac
        cy = y0 - 0.05 * H * frac
        boxes.append(BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h))
    return boxes


def generate(cfg: ScenarioConfig) -> Scenario:
    """Build a full scenario; a pure function of ``cfg``."""
    root = np.random.SeedSequence(cfg.seed)
    plan_ss, traj_ss, *driver_ss = root.spawn(2 + cfg.n_drivers)
    plan = dict(cfg.dwell_plan) if cfg.dwell_plan is not None else _plan_dwell(cfg, np.random.default_rng(plan_ss))
    for (d, b), k in plan.items():
        if k > cfg.frames_per_pass:
            raise ValueError(f"dwell plan of {k} frames for driver {d}, billboard {b} exceeds frames_per_pass")
        if k < 0:
            raise ValueError("dwell plan entries must be >= 0")

    traj_rng = np.random.default_rng(traj_ss)
    P = cfg.frames_per_pass
    trajectories = {b: _trajectory(cfg, traj_rng, -1 if b % 2 else 1) for b in range(1, cfg.n_billboards + 1)}
    slack = 3
    last_start = cfg.n_frames - P - slack
    starts = np.linspace(1, max(1, last_start), cfg.n_billboards) if cfg.n_billboards else []
    schedule = {b: int(round(s)) for b, s in zip(range(1, cfg.n_billboards + 1), starts)}

    drivers = []
    for d, ss in enumerate(driver_ss):
        rng = np.random.default_rng(ss)
        drivers.append(_driver_sequence(cfg, d, rng, trajectories, schedule, plan, slack))
    return Scenario(cfg, drivers, plan, oracle_labels(plan, cfg), schedule)


def _driver_sequence(cfg, d, rng, trajectories, schedule, plan, slack) -> DriverSequence:
    W, H, P = cfg.width, cfg.height, cfg.frames_per_pass
    driver_id = f"D{d + 1}"
    meta = SequenceMeta(cfg.dims, cfg.fps, name=f"synth-{driver_id}", driver_id=driver_id)
    offset = int(rng.integers(0, slack + 1))
    gt: list[FrameDetection] = []
    visible: dict[int, list[FrameDetection]] = {}
    planned: dict[int, list[int]] = {}
    fixations: dict[int, list[tuple[float, float]]] = {}
    for b, boxes in trajectories.items():
        start = schedule[b] + offset
        for i, box in enumerate(boxes):
            det = FrameDetection(start + i, b, box, 1.0)
            gt.append(det)
            visible.setdefault(start + i, []).append(det)
        k = plan.get((d, b), 0)
        if k:
            first = int(rng.integers(P // 3, P - k + 1)) if P - k >= P // 3 else P - k
            frames = [start + first + j for j in range(k)]
            planned[b] = frames
            for j, f in enumerate(frames):
                fixations.setdefault(f, []).append(boxes[first + j].center)
    gt.sort(key=lambda r: (r.frame, r.id))

    detections: list[FrameDetection] = []
    for f in range(1, cfg.n_frames + 1):
        for g in visible.get(f, ()):
            if cfg.miss_prob and rng.random() < cfg.miss_prob:
                continue
            box = g.box
            if cfg.center_jitter or cfg.size_jitter:
                cx, cy = box.center
                cx += rng.normal(0, cfg.center_jitter) if cfg.center_jitter else 0.0
                cy += rng.normal(0, cfg.center_jitter) if cfg.center_jitter else 0.0
                w = max(1.0, box.w + (rng.normal(0, cfg.size_jitter) if cfg.size_jitter else 0.0))
                h = max(1.0, box.h + (rng.normal(0, cfg.size_jitter) if cfg.size_jitter else 0.0))
                box = BoundingBox(cx - w / 2, cy - h / 2, w, h)
            detections.append(FrameDetection(f, -1, box, cfg.det_confidence))
        if cfg.fp_rate:
            for _ in range(int(rng.poisson(cfg.fp_rate))):
                w = W * rng.uniform(0.02, 0.1)
                h = w / rng.uniform(1.0, 3.0)
                x = rng.uniform(0, W - w)
                y = rng.uniform(0, H * 0.6 - h)
                conf = float(rng.uniform(cfg.conf_low, cfg.conf_high))
                detections.append(FrameDetection(f, -1, BoundingBox(x, y, w, h), conf))

    gaze: dict[int, GazeSample] = {}
    road = (ROAD_POINT[0] * W, ROAD_POINT[1] * H)
    for f in range(1, cfg.n_frames + 1):
        if f in fixations:
            pts = tuple(fixations[f][:2])
        else:
            pts = (road,)
            if any(g.box.contains(*road) for g in visible.get(f, ())):
                raise ValueError(f"road fixation falls inside a billboard at frame {f}")
        gaze[f] = GazeSample(f, pts)

    saliency = SynthSaliency(sorted(visible), fixations, cfg.dims, cfg.saliency_scale, cfg.saliency_sigma)
    return DriverSequence(driver_id, meta, gt, detections, gaze, saliency, planned)


def write_scenario(scenario: Scenario, out) -> Path:
    """Write the directory layout consumed by the CLI stages."""
    out = Path(out)
    cfg = scenario.config
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.json").write_text(
        json.dumps({"config": cfg.to_dict(), "schedule": scenario.schedule}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    lines = ["billboard_id,median_ms,category,viewers\n"]
    for b, lab in sorted(scenario.oracle.items()):
        lines.append(f"{b},{lab.median_ms!r},{lab.category.label},{lab.viewers}\n")
    (out / "oracle.csv").write_text("".join(lines), encoding="utf-8")
    plan_lines = ["driver,billboard_id,frames\n"]
    for d, seq in enumerate(scenario.drivers):
        for b in range(1, cfg.n_billboards + 1):
            plan_lines.append(f"{seq.driver_id},{b},{scenario.dwell_plan.get((d, b), 0)}\n")
    (out / "dwell_plan.csv").write_text("".join(plan_lines), encoding="utf-8")
    for seq in scenario.drivers:
        ddir = out / "drivers" / seq.driver_id
        write_detections(seq.gt, ddir / "gt.txt")
        write_detections(seq.detections, ddir / "detections.txt")
        write_gaze(seq.gaze, ddir / "gaze.csv")
        write_meta(seq.meta, ddir / "meta.txt")
        sal_dir = ddir / "saliency"
        sal_dir.mkdir(parents=True, exist_ok=True)
        for f in seq.saliency:
            write_saliency_grid(seq.saliency[f], saliency_path(sal_dir, f))
    return out


def read_oracle(path) -> dict[int, BillboardLabel]:
    out = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for line in lines[1:]:
        if not line.strip():
            continue
        b, med, cat, viewers = line.split(",")
        out[int(b)] = BillboardLabel(int(b), float(med), SignificanceCategory[cat.upper()], int(viewers))
    return out


def read_dwell_plan(path) -> dict[tuple[str, int], int]:
    out = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for line in lines[1:]:
        if line.strip():
            d, b, k = line.split(",")
            out[(d, int(b))] = int(k)
    return out


def oracle_check(
    oracle: Mapping[int, BillboardLabel],
    labels: Mapping[int, BillboardLabel],
    dwell_plan: Mapping[tuple[str, int], int] | None = None,
    dwell_ms: Mapping[tuple[str, int], float] | None = None,
    fps: float = 25.0,
    hota: Mapping[str, float] | None = None,
    noiseless: bool = False,
    dwell_tolerance_frames: float = 1.0,
) -> list[str]:
    """Compare pipeline outputs with scenario oracles; an empty list means pass.

    ``dwell_plan`` is keyed by (driver id, billboard id) in frames and
    ``dwell_ms`` by the same keys in milliseconds. ``hota`` maps a sequence
    name to its HOTA score and is only checked when ``noiseless`` is set.
    """
    issues = []
    for b, want in sorted(oracle.items()):
        got = labels.get(b)
        got_cat = got.category if got is not None else SignificanceCategory.NONE
        if got_cat != want.category:
            med = got.median_ms if got is not None else 0.0
            issues.append(f"billboard {b}: category {got_cat.label} ({med:g} ms), planned {want.category.label} "
                          f"({want.median_ms:g} ms)")
    if dwell_plan is not None and dwell_ms is not None:
        tol = dwell_tolerance_frames * 1000.0 / fps
        for key, frames in sorted(dwell_plan.items()):
            planned = frames * 1000.0 / fps
            got = dwell_ms.get(key, 0.0)
            if abs(got - planned) > tol + 1e-9:
                issues.append(f"driver {key[0]} billboard {key[1]}: dwell {got:g} ms, planned {planned:g} ms")
    if noiseless and hota is not None:
        for name, score in sorted(hota.items()):
            if score < 1.0 - 1e-12:
                issues.append(f"{name}: HOTA {score:.6f} < 1 on a noiseless scenario")
    return issues
