"""Command-line entry point: ``billboard-sig <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data_io import (
    DataFormatError,
    Report,
    SaliencyDirectory,
    SequenceMeta,
    category_report,
    hota_report,
    parse_detections,
    parse_gaze,
    parse_meta,
    pct,
    write_detections,
    write_report,
)
from .features import FEATURE_NAMES, aggregate_billboards
from .forest import (
    ForestConfig,
    ImportanceReport,
    confusion_matrix,
    cross_validate,
    default_grid,
    load_model,
    mdi_importance,
    permutation_importance,
    save_model,
)
from .gaze import category_census, dwell_records, label_billboards
from .hota import evaluate_hota
from .pipeline import (
    confusion_report,
    dwell_report,
    features_report,
    importance_report,
    labels_report,
    predictions_report,
    run_pipeline,
    write_outputs,
)
from .saliency import DEFAULT_SIGMA_PX, score_frame
from .synth import ScenarioConfig, generate, write_scenario
from .tracking import TrackerConfig, track_sequence

log = logging.getLogger("billboard_sig")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _header(args, **extra) -> dict:
    h = {"tool": f"billboard-sig {__version__}", "command": args.command, "seed": args.seed}
    h.update(extra)
    return h


def _out_dir(args) -> Path | None:
    if getattr(args, "out", None) is None:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _emit(report: Report, args, name: str):
    out = _out_dir(args)
    if out is None:
        sys.stdout.write(write_report(report, args.format))
    else:
        write_report(report, args.format, out / f"{name}.{args.format}")


def _tracker_cfg(args) -> TrackerConfig:
    return TrackerConfig(variant=args.tracker)


def _paired(args, *names):
    lists = [getattr(args, n) or [] for n in names]
    if len({len(l) for l in lists}) != 1:
        raise UsageError(f"options {', '.join('--' + n.replace('_', '-') for n in names)} must be given "
                         "the same number of times")
    if not lists[0]:
        raise UsageError(f"at least one --{names[0].replace('_', '-')} is required")
    return list(zip(*lists))


def _meta(path, args):
    meta = parse_meta(path)
    if getattr(args, "fps", None):
        meta = SequenceMeta(meta.dims, args.fps, meta.name, meta.driver_id)
    if not meta.driver_id:
        meta = SequenceMeta(meta.dims, meta.fps, meta.name, Path(path).parent.name or str(path))
    return meta


# --------------------------------------------------------------------------- subcommands

def cmd_track(args):
    dets = parse_detections(args.detections)
    tracks = track_sequence(dets, _tracker_cfg(args))
    out = _out_dir(args)
    if out is None:
        write_detections(tracks, sys.stdout)
    else:
        write_detections(tracks, out / "tracks.txt")


def cmd_eval_hota(args):
    res = evaluate_hota(parse_detections(args.gt), parse_detections(args.pred))
    header = _header(args)
    name = args.name or Path(args.pred).stem
    _emit(hota_report({name: res}, header), args, "hota")
    if args.per_alpha:
        cols = ("alpha", "HOTA", "DetA", "DetPr", "DetRe", "AssA", "AssPr", "AssRe", "LocA", "TP", "FN", "FP")
        rows = [[f"{r.alpha:.2f}", pct(r.hota), pct(r.det_a), pct(r.det_pr), pct(r.det_re), pct(r.ass_a),
                 pct(r.ass_pr), pct(r.ass_re), pct(r.loc_a), r.tp, r.fn, r.fp] for r in res.per_alpha]
        _emit(Report(cols, rows, header), args, "hota_per_alpha")


def _labels_from_sessions(args):
    sessions = _paired(args, "tracks", "gaze", "meta")
    records, drivers = [], []
    for tracks_path, gaze_path, meta_path in sessions:
        meta = _meta(meta_path, args)
        tracks = [d for ds in parse_detections(tracks_path).values() for d in ds]
        records.extend(dwell_records(tracks, parse_gaze(gaze_path), meta))
        if meta.driver_id in drivers:
            raise UsageError(f"duplicate driver id {meta.driver_id!r} ({meta_path})")
        drivers.append(meta.driver_id)
    return records, label_billboards(records, drivers)


def cmd_gaze(args):
    records, labels = _labels_from_sessions(args)
    header = _header(args)
    _emit(dwell_report(records, header), args, "dwell")
    _emit(labels_report(labels, header), args, "categories")
    counts, avg = category_census(labels)
    _emit(category_report(counts, avg, header), args, "census")


def _read_labels(path) -> dict[int, int]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [l for l in fh if not l.startswith("#")]
    for i, row in enumerate(csv.DictReader(rows), start=2):
        try:
            out[int(row["billboard_id"])] = int(row["label"])
        except (KeyError, ValueError, TypeError):
            raise DataFormatError("expected columns billboard_id and label", str(path), i) from None
    return out


def cmd_features(args):
    sessions = []
    for tracks_path, sal_dir, meta_path in _paired(args, "tracks", "saliency_dir", "meta"):
        tracks = [d for ds in parse_detections(tracks_path).values() for d in ds]
        sessions.append((tracks, SaliencyDirectory(sal_dir), _meta(meta_path, args)))
    labels = _read_labels(args.labels) if args.labels else None
    aggs = aggregate_billboards(sessions, labels)
    ids = [a.billboard_id for a in aggs]
    X = np.array([a.combined.as_array() for a in aggs]).reshape(-1, len(FEATURE_NAMES))
    y = [a.label if a.label is not None else "" for a in aggs] if labels else None
    report = features_report(ids, X, None, _header(args))
    if y is not None:
        report.rows = [r[:-1] + [lab] for r, lab in zip(report.rows, y)]
    _emit(report, args, "features")


def read_features(path):
    """Read a features CSV into ``(ids, X, y-or-None)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [l for l in fh if not l.startswith("#")]
    reader = csv.DictReader(lines)
    missing = [c for c in ("billboard_id",) + FEATURE_NAMES if c not in (reader.fieldnames or [])]
    if missing:
        raise DataFormatError(f"missing columns {missing}", str(path), 1)
    ids, X, y = [], [], []
    for i, row in enumerate(reader, start=2):
        try:
            ids.append(int(row["billboard_id"]))
            X.append([float(row[c]) for c in FEATURE_NAMES])
        except ValueError as exc:
            raise DataFormatError(str(exc), str(path), i) from None
        lab = (row.get("label") or "").strip()
        y.append(int(lab) if lab else None)
    has_y = bool(y) and all(v is not None for v in y)
    return np.array(ids), np.array(X, dtype=float).reshape(-1, len(FEATURE_NAMES)), (np.array(y) if has_y else None)


def _grid(args):
    if args.trees is not None or args.depth is not None:
        return [ForestConfig(n_trees=args.trees or 100, max_depth=args.depth or 2, seed=args.seed)]
    return default_grid(args.seed)


def cmd_train(args):
    ids, X, y = read_features(args.features)
    if y is None:
        raise DataFormatError("training needs a complete label column", str(args.features))
    grid = _grid(args)
    if len(grid) > 1:
        cv = cross_validate(X, y, grid, k=min(5, len(y)), seed=args.seed)
        best = cv.best
        log.info("cv scores: %s", {f"{c.n_trees}x{c.max_depth}": round(s, 4) for c, s in cv.scores.items()})
    else:
        best = grid[0]
    model = best.estimator().fit(X, y)
    save_model(model, args.out)


def cmd_classify(args):
    model = load_model(args.model)
    ids, X, y = read_features(args.features)
    pred = model.predict(X)
    header = _header(args)
    _emit(predictions_report(ids, pred, y, model.predict_proba(X), header), args, "predictions")
    if y is not None:
        _emit(confusion_report(confusion_matrix(y, pred), header), args, "confusion")


def cmd_importance(args):
    model = load_model(args.model)
    ids, X, y = read_features(args.features)
    if y is None:
        raise DataFormatError("permutation importance needs a complete label column", str(args.features))
    imp = ImportanceReport(FEATURE_NAMES, mdi_importance(model),
                           permutation_importance(model, X, y, args.repeats, args.seed))
    _emit(importance_report(imp, _header(args)), args, "importance")


def cmd_saliency_metrics(args):
    meta = _meta(args.meta, args)
    gaze = parse_gaze(args.gaze)
    maps = SaliencyDirectory(args.maps)
    rows = []
    for f in maps:
        s = gaze.get(f)
        if s is None or not s.points:
            continue
        grid = maps[f]
        fx = grid.dims.width / meta.dims.width
        fy = grid.dims.height / meta.dims.height
        fix = [(x * fx, y * fy) for x, y in s.points]
        sc = score_frame(grid.values, fix, args.sigma * fx)
        rows.append([f, sc.auc_judd, sc.nss, sc.sim, sc.cc])
    cols = ("frame", "auc_judd", "nss", "sim", "cc")
    header = _header(args, sigma_px=args.sigma)
    _emit(Report(cols, rows, header), args, "saliency_frames")
    mean = [float(np.mean([r[i] for r in rows])) if rows else float("nan") for i in range(1, 5)]
    _emit(Report(("frames",) + cols[1:], [[len(rows)] + mean], header), args, "saliency_summary")


def cmd_synth(args):
    cfg_doc = {}
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
        try:
            cfg_doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"invalid JSON: {exc.msg}", str(args.config), exc.lineno) from None
    if args.seed_given:
        cfg_doc["seed"] = args.seed
    try:
        cfg = ScenarioConfig.from_dict(cfg_doc)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(str(exc), str(args.config) if args.config else None) from None
    write_scenario(generate(cfg), args.out)


def cmd_pipeline(args):
    grid = _grid(args)
    tcfg = _tracker_cfg(args)
    result = run_pipeline(args.data, tcfg, grid, seed=args.seed, fps=args.fps)
    write_outputs(result, args.out, args.seed, tcfg, grid, args.format)
    counts, _ = category_census(result.labels)
    print(f"billboards: {len(result.labels)} ({', '.join(f'{k} {v}' for k, v in counts.items())}); "
          f"test accuracy {result.test_accuracy:.3f}")
    if result.oracle_issues:
        print(f"oracle check: {len(result.oracle_issues)} mismatches (see oracle_check.txt)")
    elif result.oracle_issues is not None:
        print("oracle check: PASS")


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="billboard-sig", description="Billboard significance analysis from driver recordings.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(sp, out_required=False, out_help="output directory"):
        sp.add_argument("--out", required=out_required, help=out_help)
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--fps", type=float, default=None, help="override the metadata frame rate")

    sp = sub.add_parser("track", help="link detections into tracks")
    sp.add_argument("--detections", required=True)
    sp.add_argument("--meta")
    sp.add_argument("--tracker", choices=("baseline", "two-stage"), default="baseline")
    common(sp)
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("eval-hota", help="HOTA of predicted tracks against ground truth")
    sp.add_argument("--gt", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--per-alpha", action="store_true")
    sp.add_argument("--name", help="row label (default: prediction file stem)")
    common(sp)
    sp.set_defaults(func=cmd_eval_hota)

    sp = sub.add_parser("gaze", help="dwell per billboard and significance categories")
    sp.add_argument("--tracks", action="append", help="tracks file (repeat per driver)")
    sp.add_argument("--gaze", action="append", help="gaze file (repeat per driver)")
    sp.add_argument("--meta", action="append", help="metadata file (repeat per driver)")
    common(sp)
    sp.set_defaults(func=cmd_gaze)

    sp = sub.add_parser("features", help="per-billboard feature table")
    sp.add_argument("--tracks", action="append")
    sp.add_argument("--saliency-dir", action="append")
    sp.add_argument("--meta", action="append")
    sp.add_argument("--labels", help="categories CSV from the gaze stage")
    common(sp)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("train", help="fit the random forest")
    sp.add_argument("--features", required=True)
    sp.add_argument("--trees", type=int)
    sp.add_argument("--depth", type=int)
    common(sp, out_required=True, out_help="model file to write")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("classify", help="predict significance categories")
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", required=True)
    common(sp)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("importance", help="MDI and permutation feature importance")
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--repeats", type=int, default=20)
    common(sp)
    sp.set_defaults(func=cmd_importance)

    sp = sub.add_parser("saliency-metrics", help="AUC-Judd, NSS, SIM and CC of saliency maps against gaze")
    sp.add_argument("--maps", required=True)
    sp.add_argument("--gaze", required=True)
    sp.add_argument("--meta", required=True)
    sp.add_argument("--sigma", type=float, default=DEFAULT_SIGMA_PX, help="GT density bandwidth in video px")
    common(sp)
    sp.set_defaults(func=cmd_saliency_metrics)

    sp = sub.add_parser("synth", help="generate a synthetic scenario directory")
    sp.add_argument("--config", help="JSON scenario config (defaults when omitted)")
    common(sp, out_required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("pipeline", help="track, label, extract features, classify")
    sp.add_argument("--data", required=True, help="scenario directory with drivers/<id>/ inputs")
    sp.add_argument("--tracker", choices=("baseline", "two-stage"), default="baseline")
    sp.add_argument("--trees", type=int)
    sp.add_argument("--depth", type=int)
    common(sp, out_required=True)
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.seed_given = "--seed" in argv or any(a.startswith("--seed=") for a in argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError, IsADirectoryError, KeyError, ValueError, OSError) as exc:
        print(f"billboard-sig: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
