import numpy as np
import pytest

from billboard_sig.data_io import FrameDetection
from billboard_sig.geometry import BoundingBox

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0][2:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")


def random_tracking_instance(rng, max_objects=5, max_frames=20, box_size=(20, 80)):
    """GT tracks plus perturbed predictions with id switches, misses and false positives.

    Returns two lists of FrameDetection.
    """
    n_obj = int(rng.integers(1, max_objects + 1))
    n_frames = int(rng.integers(1, max_frames + 1))
    gt, pred = [], []
    next_pid = 100
    for g in range(n_obj):
        w, h = rng.uniform(*box_size, size=2)
        x, y = rng.uniform(0, 200, size=2)
        vx, vy = rng.normal(0, 4, size=2)
        start = int(rng.integers(1, n_frames + 1))
        end = int(rng.integers(start, n_frames + 1))
        pid = next_pid
        next_pid += 1
        for f in range(start, end + 1):
            x += vx
            y += vy
            gt.append(FrameDetection(f, g, BoundingBox(x, y, w, h)))
            if rng.random() < 0.15:
                continue
            if rng.random() < 0.1:
                pid = next_pid
                next_pid += 1
            j = rng.normal(0, 0.12, size=4) * np.array([w, h, w, h])
            pred.append(FrameDetection(f, pid, BoundingBox(x + j[0], y + j[1], max(1.0, w + j[2]),
                                                           max(1.0, h + j[3]))))
    for f in range(1, n_frames + 1):
        if rng.random() < 0.2:
            w, h = rng.uniform(*box_size, size=2)
            x, y = rng.uniform(0, 200, size=2)
            pred.append(FrameDetection(f, int(rng.integers(100, next_pid + 2)), BoundingBox(x, y, w, h)))
    # drop duplicate (frame, id) pairs the random FP ids may create
    seen, clean = set(), []
    for d in pred:
        if (d.frame, d.id) not in seen:
            seen.add((d.frame, d.id))
            clean.append(d)
    return gt, clean


def as_tuples(dets):
    return [(d.frame, d.id, (d.box.x, d.box.y, d.box.w, d.box.h)) for d in dets]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
