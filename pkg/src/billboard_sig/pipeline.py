"""End-to-end stage runner: track, label by gaze, extract features, classify.

Input directory layout (as written by :func:`billboard_sig.synth.write_scenario`)::

    <data>/drivers/<driver>/detections.txt   detector output, MOT-style CSV
    <data>/drivers/<driver>/gaze.csv         fixation log
    <data>/drivers/<driver>/meta.txt         sequence metadata
    <data>/drivers/<driver>/saliency/        frame_%06d.pgm grids
    <data>/drivers/<driver>/gt.txt           optional GT tracks (billboard ids)
    <data>/oracle.csv, dwell_plan.csv        optional synthetic oracles
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import __version__
from .data_io import (
    CATEGORY_NAMES,
    FrameDetection,
    Report,
    SaliencyDirectory,
    SequenceMeta,
    category_report,
    group_by_frame,
    hota_report,
    parse_detections,
    parse_gaze,
    parse_meta,
    write_detections,
    write_report,
)
from .features import FEATURE_NAMES, aggregate_billboards, build_dataset
from .forest import (
    ForestConfig,
    ImportanceReport,
    confusion_matrix,
    cross_validate,
    default_grid,
    mdi_importance,
    permutation_importance,
    save_model,
)
from .gaze import BillboardLabel, DwellRecord, category_census, dwell_records, label_billboards, SignificanceCategory
from .geometry import iou_matrix
from .hota import HotaResult, evaluate_hota_sequences
from .synth import oracle_check, read_dwell_plan, read_oracle
from .tracking import TrackerConfig, track_sequence

logger = logging.getLogger(__name__)

MATCH_IOU = 0.5


@dataclass
class Session:
    driver_id: str
    meta: SequenceMeta
    detections: dict[int, list[FrameDetection]]
    gaze: dict
    saliency: SaliencyDirectory | None
    gt: dict[int, list[FrameDetection]] | None = None


def load_sessions(data_dir, fps: float | None = None) -> list[Session]:
    root = Path(data_dir) / "drivers"
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: no drivers directory")
    out = []
    for ddir in sorted(p for p in root.iterdir() if p.is_dir()):
        meta = parse_meta(ddir / "meta.txt")
        if fps is not None:
            meta = SequenceMeta(meta.dims, fps, meta.name, meta.driver_id)
        driver = meta.driver_id or ddir.name
        meta = SequenceMeta(meta.dims, meta.fps, meta.name, driver)
        sal = SaliencyDirectory(ddir / "saliency") if (ddir / "saliency").is_dir() else None
        gt = parse_detections(ddir / "gt.txt") if (ddir / "gt.txt").exists() else None
        out.append(Session(driver, meta, parse_detections(ddir / "detections.txt"), parse_gaze(ddir / "gaze.csv"),
                           sal, gt))
    if not out:
        raise FileNotFoundError(f"{root}: no driver sessions")
    return out


def assign_billboard_ids(tracks: Sequence[FrameDetection], gt: Mapping[int, Sequence[FrameDetection]],
                         min_iou: float = MATCH_IOU) -> list[FrameDetection]:
    """Relabel tracker ids with the GT billboard id they overlap most often.

    Per frame, tracked and GT boxes are matched one-to-one by IoU (Hungarian,
    pairs below ``min_iou`` excluded). Each track takes the GT id it was
    matched to in the most frames (ties to the lower id); tracks never matched
    are dropped. When several tracks map to one billboard in the same frame,
    the detection with the higher IoU against GT is kept.
    """
    votes: dict[int, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    frame_iou: dict[tuple[int, int], float] = {}
    by_frame = group_by_frame(tracks)
    for f, dets in by_frame.items():
        gts = gt.get(f, [])
        if not gts:
            continue
        m = iou_matrix([[d.box.x, d.box.y, d.box.w, d.box.h] for d in dets],
                       [[g.box.x, g.box.y, g.box.w, g.box.h] for g in gts])
        rows, cols = linear_sum_assignment(np.where(m >= min_iou, m, 0.0), maximize=True)
        for r, c in zip(rows, cols):
            if m[r, c] >= min_iou:
                votes[dets[r].id][gts[c].id] += 1
                frame_iou[(f, dets[r].id)] = float(m[r, c])
    mapping = {tid: min(v, key=lambda g: (-v[g], g)) for tid, v in votes.items()}
    best: dict[tuple[int, int], tuple[float, FrameDetection]] = {}
    for d in tracks:
        if d.id not in mapping:
            continue
        bid = mapping[d.id]
        score = frame_iou.get((d.frame, d.id), 0.0)
        key = (d.frame, bid)
        if key not in best or score > best[key][0]:
            best[key] = (score, FrameDetection(d.frame, bid, d.box, d.confidence))
    return [best[k][1] for k in sorted(best)]


@dataclass
class PipelineResult:
    tracks: dict[str, list[FrameDetection]]
    hota: dict[str, HotaResult]
    dwell: list[DwellRecord]
    labels: dict[int, BillboardLabel]
    feature_ids: np.ndarray
    features: np.ndarray
    feature_labels: np.ndarray
    test_ids: np.ndarray
    test_true: np.ndarray
    test_pred: np.ndarray
    confusion: np.ndarray
    cv_scores: dict
    best_config: ForestConfig
    importance: ImportanceReport
    model: object
    oracle_issues: list[str] | None = None

    @property
    def test_accuracy(self) -> float:
        return float(np.mean(self.test_true == self.test_pred)) if len(self.test_true) else float("nan")


def run_pipeline(
    data_dir,
    tracker_cfg: TrackerConfig | None = None,
    grid: Sequence[ForestConfig] | None = None,
    seed: int = 0,
    fps: float | None = None,
    cv_folds: int = 5,
    permutation_repeats: int = 20,
) -> PipelineResult:
    tracker_cfg = tracker_cfg or TrackerConfig()
    grid = list(grid) if grid else default_grid(seed)
    sessions = load_sessions(data_dir, fps)
    drivers = [s.driver_id for s in sessions]

    tracks: dict[str, list[FrameDetection]] = {}
    billboard_tracks: dict[str, list[FrameDetection]] = {}
    hota: dict[str, HotaResult] = {}
    for s in sessions:
        tr = track_sequence(s.detections, tracker_cfg)
        tracks[s.driver_id] = tr
        billboard_tracks[s.driver_id] = assign_billboard_ids(tr, s.gt) if s.gt is not None else tr
    with_gt = [s for s in sessions if s.gt is not None]
    if with_gt:
        per_seq, pooled = evaluate_hota_sequences([(s.gt, tracks[s.driver_id]) for s in with_gt])
        hota = {s.driver_id: r for s, r in zip(with_gt, per_seq)}
        hota["ALL"] = pooled

    dwell: list[DwellRecord] = []
    for s in sessions:
        dwell.extend(dwell_records(billboard_tracks[s.driver_id], s.gaze, s.meta))
    labels = label_billboards(dwell, drivers)
    gt_ids = sorted({d.id for s in sessions if s.gt for ds in s.gt.values() for d in ds})
    for b in gt_ids:
        labels.setdefault(b, BillboardLabel(b, 0.0, SignificanceCategory.NONE, 0))
    labels = dict(sorted(labels.items()))

    aggs = aggregate_billboards(
        [(billboard_tracks[s.driver_id], s.saliency or {}, s.meta) for s in sessions],
        {b: int(l.category) for b, l in labels.items()},
    )
    train, test = build_dataset(aggs, seed=seed)
    k = min(cv_folds, len(train.y))
    cv = cross_validate(train.X, train.y, grid, k=k, seed=seed)
    model = cv.best.estimator().fit(train.X, train.y)
    pred = model.predict(test.X) if len(test.y) else np.zeros(0, dtype=int)
    cm = confusion_matrix(test.y, pred)
    perm = (permutation_importance(model, test.X, test.y, permutation_repeats, seed)
            if len(test.y) else np.zeros(len(FEATURE_NAMES)))
    imp = ImportanceReport(FEATURE_NAMES, mdi_importance(model), perm)

    all_ids = np.concatenate([train.ids, test.ids])
    order = np.argsort(all_ids, kind="stable")
    X_all = np.vstack([train.X, test.X])[order]
    y_all = np.concatenate([train.y, test.y])[order]

    result = PipelineResult(
        tracks=tracks, hota=hota, dwell=dwell, labels=labels,
        feature_ids=all_ids[order], features=X_all, feature_labels=y_all,
        test_ids=test.ids, test_true=test.y, test_pred=pred, confusion=cm,
        cv_scores=cv.scores, best_config=cv.best, importance=imp, model=model,
    )

    data = Path(data_dir)
    if (data / "oracle.csv").exists():
        plan = read_dwell_plan(data / "dwell_plan.csv") if (data / "dwell_plan.csv").exists() else None
        dwell_ms: dict[tuple[str, int], float] = defaultdict(float)
        for r in dwell:
            dwell_ms[(r.driver_id, r.billboard_id)] += r.gaze_ms
        noiseless = False
        scen = data / "scenario.json"
        if scen.exists():
            c = json.loads(scen.read_text())["config"]
            noiseless = not any(c.get(k) for k in ("center_jitter", "size_jitter", "miss_prob", "fp_rate"))
        result.oracle_issues = oracle_check(
            read_oracle(data / "oracle.csv"), labels, plan, dwell_ms, sessions[0].meta.fps,
            {k: v.hota for k, v in hota.items()}, noiseless,
            dwell_tolerance_frames=0.0 if noiseless else 1.0,
        )
    return result


def _header(seed, tracker_cfg: TrackerConfig, grid, extra=None) -> dict:
    h = {
        "tool": f"billboard-sig {__version__}",
        "seed": seed,
        "tracker": {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(tracker_cfg).items()},
        "forest_grid": [asdict(g) for g in grid],
    }
    if extra:
        h.update(extra)
    return h


def dwell_report(records: Sequence[DwellRecord], header=None) -> Report:
    rows = [[r.billboard_id, r.driver_id, r.frames_gazed, r.gaze_ms, r.frames_visible] for r in records]
    return Report(("billboard_id", "driver_id", "frames_gazed", "gaze_ms", "frames_visible"), rows, dict(header or {}))


def labels_report(labels: Mapping[int, BillboardLabel], header=None) -> Report:
    rows = [[b, l.median_ms, l.category.label, int(l.category), l.viewers] for b, l in sorted(labels.items())]
    return Report(("billboard_id", "median_ms", "category", "label", "viewers"), rows, dict(header or {}))


def features_report(ids, X, y=None, header=None) -> Report:
    rows = []
    for i, bid in enumerate(ids):
        row = [int(bid)] + [float(v) for v in X[i]]
        row.append("" if y is None else int(y[i]))
        rows.append(row)
    return Report(("billboard_id",) + FEATURE_NAMES + ("label",), rows, dict(header or {}))


def confusion_report(cm: np.ndarray, header=None) -> Report:
    rows = [[CATEGORY_NAMES[i]] + [int(v) for v in cm[i]] for i in range(cm.shape[0])]
    return Report(("true\\predicted",) + CATEGORY_NAMES, rows, dict(header or {}))


def importance_report(imp: ImportanceReport, header=None) -> Report:
    return Report(("feature", "mdi", "permutation"), [list(r) for r in imp.rows()], dict(header or {}))


def predictions_report(ids, y_pred, y_true=None, proba=None, header=None) -> Report:
    cols = ["billboard_id", "predicted"]
    if proba is not None:
        cols += [f"p_{n}" for n in CATEGORY_NAMES]
    if y_true is not None:
        cols.append("true")
    rows = []
    for i, bid in enumerate(ids):
        row = [int(bid), CATEGORY_NAMES[int(y_pred[i])]]
        if proba is not None:
            row += [float(p) for p in proba[i]]
        if y_true is not None:
            row.append(CATEGORY_NAMES[int(y_true[i])])
        rows.append(row)
    return Report(tuple(cols), rows, dict(header or {}))


def write_outputs(result: PipelineResult, out_dir, seed: int, tracker_cfg: TrackerConfig,
                  grid: Sequence[ForestConfig], fmt: str = "csv") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = _header(seed, tracker_cfg, grid)
    ext = fmt

    for driver, tr in result.tracks.items():
        write_detections(tr, out / "tracks" / f"{driver}.txt")
    if result.hota:
        write_report(hota_report(result.hota, header), fmt, out / f"hota.{ext}")
    write_report(dwell_report(result.dwell, header), fmt, out / f"dwell.{ext}")
    write_report(labels_report(result.labels, header), fmt, out / f"categories.{ext}")
    counts, avg = category_census(result.labels)
    write_report(category_report(counts, avg, header), fmt, out / f"census.{ext}")
    write_report(features_report(result.feature_ids, result.features, result.feature_labels, header), fmt,
                 out / f"features.{ext}")
    cv_rows = [[c.n_trees, c.max_depth, c.features_per_split, s] for c, s in result.cv_scores.items()]
    write_report(Report(("n_trees", "max_depth", "features_per_split", "cv_accuracy"), cv_rows, header), fmt,
                 out / f"cv.{ext}")
    write_report(predictions_report(result.test_ids, result.test_pred, result.test_true, header=header), fmt,
                 out / f"predictions.{ext}")
    write_report(confusion_report(result.confusion, header), fmt, out / f"confusion.{ext}")
    write_report(importance_report(result.importance, header), fmt, out / f"importance.{ext}")
    save_model(result.model, out / "model.json")

    summary = {
        "header": header,
        "best_config": asdict(result.best_config),
        "test_accuracy": result.test_accuracy,
        "n_billboards": len(result.labels),
        "n_featured": int(len(result.feature_ids)),
        "hota": {k: v.as_dict() for k, v in result.hota.items()},
        "oracle_issues": result.oracle_issues,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if result.oracle_issues is not None:
        text = "".join(i + "\n" for i in result.oracle_issues) or "PASS\n"
        (out / "oracle_check.txt").write_text(text, encoding="utf-8")
    return out
