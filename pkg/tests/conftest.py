from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from relabel.annotations import AnnotationSet, ImageInfo
from relabel.geometry import BBox, Detection

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


def make_set(boxes: dict[str, list], size: tuple[int, int] = (100, 100)) -> AnnotationSet:
    """Build an AnnotationSet from ``{image_id: [(x1, y1, x2, y2[, score]), ...]}``."""
    w, h = size
    images = [ImageInfo(i, w, h) for i in boxes]
    anns = {
        i: [Detection(BBox(*b[:4]), b[4] if len(b) > 4 else 1.0) for b in items]
        for i, items in boxes.items()
    }
    return AnnotationSet(images, anns)


def random_box(rng: np.random.Generator, w: float = 100.0, h: float = 100.0, min_size: float = 1.0) -> BBox:
    bw = rng.uniform(min_size, w / 2)
    bh = rng.uniform(min_size, h / 2)
    x1 = rng.uniform(0, w - bw)
    y1 = rng.uniform(0, h - bh)
    return BBox(x1, y1, x1 + bw, y1 + bh)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


# -- acceptance report: one line per criterion ---------------------------------

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _acceptance[name] = (report.outcome, getattr(report, "acceptance_summary", ""))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    doc = (item.obj.__doc__ or "").strip().splitlines()
    report.acceptance_summary = doc[0] if doc else ""


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance, key=lambda n: int(n.split("_")[2])):
        outcome, summary = _acceptance[name]
        number = name.split("_")[2]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {summary}")
