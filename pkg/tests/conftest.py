import numpy as np
import pytest

from mhpbench.scene import InstanceMask, SceneAnnotation, ScoredScene

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(name, ok, detail=""):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        _ACCEPTANCE_LINES.append(f"{status}  {name}  {detail}".rstrip())
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_scene(image_id, *masks, size=None):
    return SceneAnnotation(image_id, tuple(InstanceMask(np.asarray(m)) for m in masks), size)


def make_pred(image_id, masks, scores, size=None):
    return ScoredScene(make_scene(image_id, *masks, size=size), tuple(scores))


def block(shape, rows, cols, value=1):
    out = np.zeros(shape, dtype=np.uint8)
    out[rows[0]:rows[1], cols[0]:cols[1]] = value
    return out
