import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from exam_collusion.ingest import StudentExam, SubmissionEvent, Subtask, SubtaskCatalog  # noqa: E402

TOY_DIR = Path(__file__).resolve().parents[1] / "src" / "exam_collusion" / "data" / "toy"

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def make_exam(sid, events, points):
    """events: [(subtask_id, seconds)], points: {subtask_id: value}."""
    evs = sorted((SubmissionEvent(sid, t, float(s)) for t, s in events), key=lambda e: e.timestamp)
    return StudentExam(sid, tuple(evs), dict(points))


@pytest.fixture
def small_catalog():
    return SubtaskCatalog(
        [Subtask("1.1", "standard", 5.0), Subtask("1.2", "standard", 5.0), Subtask("2.1", "code", 5.0)],
        70,
        15.0,
    )


@pytest.fixture
def toy_dir():
    return TOY_DIR


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
