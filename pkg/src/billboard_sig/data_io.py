"""Readers and writers for every file the pipeline consumes or emits.

Formats:

* detections / tracks: MOTChallenge-style CSV ``frame,id,x,y,w,h,conf[,...]``
* gaze: CSV ``frame[,x1,y1[,x2,y2]]``, one line per frame with a fixation log
* saliency: binary PGM (P5, maxval 255), one file per frame ``frame_%06d.pgm``
* sequence metadata: ``key=value`` lines (``fps``, ``width``, ``height``, ``driver``, ``name``)
* reports: CSV or JSON with a fixed column order
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import os
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .geometry import BoundingBox, ImageDims

DEFAULT_FPS = 25.0
SALIENCY_PATTERN = "frame_{:06d}.pgm"
_SALIENCY_RE = re.compile(r"^frame_(\d+)\.pgm$")


class DataFormatError(ValueError):
    """Malformed input file; carries the offending source and line when known."""

    def __init__(self, message: str, source: str | None = None, line: int | None = None):
        self.source = source
        self.line = line
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass(frozen=True)
class FrameDetection:
    frame: int
    id: int
    box: BoundingBox
    confidence: float = 1.0

    def __post_init__(self):
        if self.frame < 1:
            raise ValueError(f"frame index must be >= 1, got {self.frame}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


class Provenance(enum.Enum):
    RECORDED = "recorded"
    EXTRAPOLATED = "extrapolated"


@dataclass(frozen=True)
class GazeSample:
    frame: int
    points: tuple[tuple[float, float], ...] = ()
    provenance: Provenance = Provenance.RECORDED

    def __post_init__(self):
        if len(self.points) > 2:
            raise ValueError(f"at most two fixation points per frame, got {len(self.points)}")


@dataclass(frozen=True, eq=False)
class SaliencyGrid:
    """One frame of 8-bit saliency, stored as a ``(height, width)`` uint8 array."""

    dims: ImageDims
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.shape != (self.dims.height, self.dims.width):
            raise ValueError(f"grid shape {arr.shape} does not match dims {self.dims}")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("saliency values must lie in [0, 255]")
        object.__setattr__(self, "values", arr.astype(np.uint8, copy=False))

    def __eq__(self, other):
        if not isinstance(other, SaliencyGrid):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.values, other.values)

    @classmethod
    def from_array(cls, arr) -> "SaliencyGrid":
        arr = np.asarray(arr)
        return cls(ImageDims(arr.shape[1], arr.shape[0]), arr)


@dataclass(frozen=True)
class SequenceMeta:
    dims: ImageDims
    fps: float = DEFAULT_FPS
    name: str = ""
    driver_id: str = ""

    def __post_init__(self):
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def frame_ms(self) -> float:
        return 1000.0 / self.fps


def _num(text: str) -> str:
    """Shortest round-trip text for a number."""
    if isinstance(text, (int, np.integer)):
        return str(int(text))
    return repr(float(text))


def _open_text(source) -> tuple[IO[str], str, bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline=""), str(source), True
    return source, getattr(source, "name", "<stream>"), False


def _iter_lines(source):
    fh, name, owned = _open_text(source)
    try:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line, name
    finally:
        if owned:
            fh.close()


def _float(tok: str, what: str, name: str, lineno: int) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise DataFormatError(f"field '{what}': not a number: {tok!r}", name, lineno) from None
    if not math.isfinite(val):
        raise DataFormatError(f"field '{what}': non-finite value {tok!r}", name, lineno)
    return val


def _int(tok: str, what: str, name: str, lineno: int) -> int:
    val = _float(tok, what, name, lineno)
    if val != int(val):
        raise DataFormatError(f"field '{what}': expected an integer, got {tok!r}", name, lineno)
    return int(val)


# --------------------------------------------------------------------------- detections

_DET_FIELDS = ("frame", "id", "x", "y", "w", "h", "conf")


def parse_detections(source) -> dict[int, list[FrameDetection]]:
    """Parse a MOT-style CSV into ``{frame: [FrameDetection, ...]}``.

    The confidence column is optional (defaults to 1.0); columns past the
    seventh are ignored. Frames are returned in ascending order with the file
    order kept inside each frame.
    """
    out: dict[int, list[FrameDetection]] = defaultdict(list)
    for lineno, line, name in _iter_lines(source):
        toks = [t.strip() for t in line.split(",")]
        if len(toks) < 6:
            raise DataFormatError(f"expected at least 6 fields (frame,id,x,y,w,h), got {len(toks)}", name, lineno)
        frame = _int(toks[0], "frame", name, lineno)
        ident = _int(toks[1], "id", name, lineno)
        x, y, w, h = (_float(t, f, name, lineno) for t, f in zip(toks[2:6], _DET_FIELDS[2:6]))
        conf = _float(toks[6], "conf", name, lineno) if len(toks) > 6 and toks[6] else 1.0
        if frame < 1:
            raise DataFormatError(f"field 'frame': must be >= 1, got {frame}", name, lineno)
        if w <= 0:
            raise DataFormatError(f"field 'w': width must be positive, got {toks[4]}", name, lineno)
        if h <= 0:
            raise DataFormatError(f"field 'h': height must be positive, got {toks[5]}", name, lineno)
        if not 0.0 <= conf <= 1.0:
            raise DataFormatError(f"field 'conf': must lie in [0, 1], got {toks[6]}", name, lineno)
        out[frame].append(FrameDetection(frame, ident, BoundingBox(x, y, w, h), conf))
    return {f: out[f] for f in sorted(out)}


def format_detection(d: FrameDetection) -> str:
    b = d.box
    return ",".join([str(d.frame), str(d.id), _num(b.x), _num(b.y), _num(b.w), _num(b.h), _num(d.confidence)])


def write_detections(detections, sink) -> None:
    """Write detections (a frame map or a flat iterable) in frame order."""
    rows = flatten_detections(detections)
    text = "".join(format_detection(d) + "\n" for d in rows)
    _write_text(sink, text)


def flatten_detections(detections) -> list[FrameDetection]:
    if isinstance(detections, Mapping):
        return [d for f in sorted(detections) for d in detections[f]]
    rows = list(detections)
    return sorted(rows, key=lambda d: d.frame)


def group_by_frame(detections: Iterable[FrameDetection]) -> dict[int, list[FrameDetection]]:
    out: dict[int, list[FrameDetection]] = defaultdict(list)
    for d in detections:
        out[d.frame].append(d)
    return {f: out[f] for f in sorted(out)}


def _write_text(sink, text: str) -> None:
    if isinstance(sink, (str, os.PathLike)):
        Path(sink).parent.mkdir(parents=True, exist_ok=True)
        with open(sink, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sink.write(text)


# --------------------------------------------------------------------------- gaze

def parse_gaze(source) -> dict[int, GazeSample]:
    out: dict[int, GazeSample] = {}
    for lineno, line, name in _iter_lines(source):
        toks = [t.strip() for t in line.split(",")]
        frame = _int(toks[0], "frame", name, lineno)
        if frame < 1:
            raise DataFormatError(f"field 'frame': must be >= 1, got {frame}", name, lineno)
        coords = [t for t in toks[1:] if t != ""]
        if len(coords) > 4:
            raise DataFormatError(f"at most two fixation points per frame, got {len(coords) / 2:g}", name, lineno)
        if len(coords) % 2:
            raise DataFormatError("odd number of coordinates", name, lineno)
        vals = [_float(t, f"{'xy'[i % 2]}{i // 2 + 1}", name, lineno) for i, t in enumerate(coords)]
        if frame in out:
            raise DataFormatError(f"duplicate gaze record for frame {frame}", name, lineno)
        pts = tuple((vals[i], vals[i + 1]) for i in range(0, len(vals), 2))
        out[frame] = GazeSample(frame, pts, Provenance.RECORDED)
    return dict(sorted(out.items()))


def write_gaze(gaze: Mapping[int, GazeSample], sink) -> None:
    lines = []
    for f in sorted(gaze):
        s = gaze[f]
        lines.append(",".join([str(f)] + [_num(c) for p in s.points for c in p]) + "\n")
    _write_text(sink, "".join(lines))


# --------------------------------------------------------------------------- saliency

def _read_bytes(source) -> tuple[bytes, str]:
    if isinstance(source, (str, os.PathLike)):
        return Path(source).read_bytes(), str(source)
    if isinstance(source, (bytes, bytearray)):
        return bytes(source), "<bytes>"
    return source.read(), getattr(source, "name", "<stream>")


def parse_saliency_grid(source) -> SaliencyGrid:
    """Read a binary P5 PGM with maxval 255."""
    data, name = _read_bytes(source)
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataFormatError("truncated PGM header", name)
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise DataFormatError(f"wrong magic {tokens[0]!r}, expected b'P5'", name)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DataFormatError("non-integer PGM header field", name) from None
    if maxval != 255:
        raise DataFormatError(f"unsupported maxval {maxval}", name)
    if width <= 0 or height <= 0:
        raise DataFormatError(f"invalid PGM dimensions {width}x{height}", name)
    pos += 1  # single whitespace byte after maxval
    payload = data[pos : pos + width * height]
    if len(payload) < width * height:
        raise DataFormatError(f"truncated payload: expected {width * height} bytes, got {len(payload)}", name)
    values = np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()
    return SaliencyGrid(ImageDims(width, height), values)


def saliency_grid_bytes(grid: SaliencyGrid) -> bytes:
    header = f"P5\n{grid.dims.width} {grid.dims.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(grid.values, dtype=np.uint8).tobytes()


def write_saliency_grid(grid: SaliencyGrid, sink) -> None:
    data = saliency_grid_bytes(grid)
    if isinstance(sink, (str, os.PathLike)):
        Path(sink).parent.mkdir(parents=True, exist_ok=True)
        Path(sink).write_bytes(data)
    else:
        sink.write(data)


def saliency_path(directory, frame: int) -> Path:
    return Path(directory) / SALIENCY_PATTERN.format(frame)


def list_saliency_frames(directory) -> dict[int, Path]:
    """Map frame index to file for every ``frame_%06d.pgm`` in a directory."""
    out = {}
    for entry in os.scandir(directory):
        m = _SALIENCY_RE.match(entry.name)
        if m:
            out[int(m.group(1))] = Path(entry.path)
    return dict(sorted(out.items()))


class SaliencyDirectory(Mapping):
    """Lazy read-only frame -> SaliencyGrid mapping over a saliency directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._files = list_saliency_frames(directory)

    def __getitem__(self, frame: int) -> SaliencyGrid:
        return parse_saliency_grid(self._files[frame])

    def __contains__(self, frame) -> bool:
        return frame in self._files

    def __iter__(self):
        return iter(self._files)

    def __len__(self) -> int:
        return len(self._files)


# --------------------------------------------------------------------------- metadata

def parse_meta(source) -> SequenceMeta:
    kv: dict[str, str] = {}
    for lineno, line, name in _iter_lines(source):
        if "=" not in line:
            raise DataFormatError(f"expected key=value, got {line!r}", name, lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        kv[key] = val
        if key in ("fps", "width", "height"):
            _float(val, key, name, lineno)
    name = str(source) if isinstance(source, (str, os.PathLike)) else getattr(source, "name", "<stream>")
    for key in ("width", "height"):
        if key not in kv:
            raise DataFormatError(f"missing required key '{key}'", name)
    try:
        return SequenceMeta(
            dims=ImageDims(int(float(kv["width"])), int(float(kv["height"]))),
            fps=float(kv.get("fps", DEFAULT_FPS)),
            name=kv.get("name", ""),
            driver_id=kv.get("driver", ""),
        )
    except ValueError as exc:
        raise DataFormatError(str(exc), name) from None


def format_meta(meta: SequenceMeta) -> str:
    lines = []
    if meta.name:
        lines.append(f"name={meta.name}")
    if meta.driver_id:
        lines.append(f"driver={meta.driver_id}")
    lines += [f"fps={_num(meta.fps)}", f"width={meta.dims.width}", f"height={meta.dims.height}"]
    return "\n".join(lines) + "\n"


def write_meta(meta: SequenceMeta, sink) -> None:
    _write_text(sink, format_meta(meta))


# --------------------------------------------------------------------------- reports

HOTA_COLUMNS = ("HOTA", "DetPr", "DetRe", "DetA", "AssPr", "AssRe", "AssA", "Loc")
CATEGORY_NAMES = ("None", "Short", "Long")


@dataclass
class Report:
    """Tabular result: ordered columns, rows of plain values, optional provenance header."""

    columns: Sequence[str]
    rows: list[Sequence] = field(default_factory=list)
    header: Mapping[str, object] = field(default_factory=dict)

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, enum.Enum):
        return str(v.name)
    return str(v)


def render_report(report: Report, fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        for k, v in report.header.items():
            buf.write(f"# {k}={json.dumps(v, sort_keys=True) if not isinstance(v, str) else v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(report.columns)
        for r in report.rows:
            w.writerow([_cell(c) for c in r])
        return buf.getvalue()
    if fmt == "json":
        doc = {"header": dict(report.header), "columns": list(report.columns), "rows": report.records()}
        return json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, enum.Enum):
        return o.name
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_report(report: Report, fmt: str = "csv", sink=None) -> str:
    """Render ``report`` and optionally write it to ``sink`` (path or text stream)."""
    text = render_report(report, fmt)
    if sink is not None:
        try:
            _write_text(sink, text)
        except OSError as exc:
            raise OSError(f"cannot write report to {sink}: {exc.strerror or exc}") from exc
    return text


def pct(x: float) -> str:
    """Ratio rendered on a 0-100 scale with one decimal, as in tracking tables."""
    return f"{100.0 * x:.1f}"


def hota_report(rows: Mapping[str, "object"], header: Mapping | None = None) -> Report:
    """Table of HOTA sub-scores keyed by method or sequence name."""
    cols = ("Method",) + HOTA_COLUMNS
    out = []
    for name, res in rows.items():
        out.append([name] + [pct(v) for v in res.table_values()])
    return Report(cols, out, dict(header or {}))


def category_report(counts: Mapping, drivers: Mapping | None = None, header: Mapping | None = None) -> Report:
    """Census of billboards per significance category with average viewer counts."""
    ranges = {"None": "0 ms", "Short": "1-249 ms", "Long": "250+ ms"}
    rows = []
    for cat in CATEGORY_NAMES:
        avg = "-"
        if drivers is not None and drivers.get(cat) is not None:
            avg = f"{drivers[cat]:.1f}"
        rows.append([cat, ranges[cat], int(counts.get(cat, 0)), avg])
    return Report(("Category", "Gaze duration", "Billboards", "Avg drivers"), rows, dict(header or {}))
