"""Synthetic exam cohorts for testing and demos.

Independent students work through the subtasks at their own pace; injected
colluders copy another student's log with timing jitter and identical points.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .ingest import StudentExam, Subtask, SubmissionEvent, SubtaskCatalog

# mean number of extra resubmissions per category
_RESUBMITS = {"standard": 0.6, "code": 2.5, "essay": 0.3}


def paper_catalog(group="test"):
    """Catalog shaped like the two exams: 70 minutes, 60 points.

    ``test``: 13 standard subtasks (1.1-5.2), three R code subtasks (6a-6c)
    and one essay (7). ``comparison``: 16 standard and three code subtasks.
    """
    if group == "test":
        standard = ["1.1", "1.2", "1.3", "2.1", "2.2", "2.3", "3.1", "3.2", "3.3",
                    "4.1", "4.2", "5.1", "5.2"]
        subtasks = [Subtask(s, "standard", 3.0) for s in standard]
        subtasks += [Subtask(s, "code", 5.0) for s in ("6a", "6b", "6c")]
        subtasks.append(Subtask("7", "essay", 6.0))
    elif group == "comparison":
        standard = ["1.1", "1.2", "1.3", "1.4", "2.1", "2.2", "2.3", "3.1", "3.2", "3.3",
                    "4.1", "4.2", "4.3", "5.1", "5.2", "5.3"]
        subtasks = [Subtask(s, "standard", 3.0) for s in standard]
        subtasks += [Subtask(s, "code", 4.0) for s in ("6a", "6b", "6c")]
    else:
        raise ValueError(f"unknown group {group!r}")
    return SubtaskCatalog(subtasks, 70, 60.0)


def make_student(rng, student_id, catalog):
    duration = catalog.n_intervals * 60.0
    order = list(range(len(catalog.subtasks)))
    # mostly catalog order, with some local reshuffling
    for k in range(len(order) - 1):
        if rng.random() < 0.25:
            order[k], order[k + 1] = order[k + 1], order[k]
    pace = rng.uniform(0.5, 0.95) * duration / len(order)
    t = rng.uniform(0.0, 180.0)
    ability = rng.beta(4.0, 2.0)
    events, points = [], {}
    for k in order:
        sub = catalog.subtasks[k]
        t += rng.exponential(pace)
        first = min(t, duration - 1.0)
        stamps = [first]
        for _ in range(rng.poisson(_RESUBMITS[sub.category])):
            stamps.append(min(stamps[-1] + rng.uniform(20.0, 300.0), duration + 30.0))
        events += [SubmissionEvent(student_id, sub.id, float(s)) for s in stamps]
        if rng.random() < ability:
            score = sub.max_points
        else:
            score = float(np.round(rng.uniform(0, sub.max_points) * 2) / 2)
        points[sub.id] = score
    events.sort(key=lambda e: e.timestamp)
    return StudentExam(student_id, tuple(events), points)


def make_cohort(n, catalog, rng, prefix="s"):
    width = max(3, len(str(n)))
    return [make_student(rng, f"{prefix}{k:0{width}d}", catalog) for k in range(n)]


def copy_student(rng, exam, student_id, jitter=30.0):
    """Copy ``exam`` with uniform ``+-jitter`` seconds on every event."""
    events = [
        SubmissionEvent(student_id, ev.subtask_id, max(0.0, ev.timestamp + rng.uniform(-jitter, jitter)))
        for ev in exam.events
    ]
    events.sort(key=lambda e: e.timestamp)
    return StudentExam(student_id, tuple(events), dict(exam.points))


def make_colluding_cohort(n_independent, n_pairs, catalog, rng, jitter=30.0, prefix="s"):
    """``n_independent`` students plus ``n_pairs`` colluding pairs.

    Each pair is a fresh independent student and a jittered copy of them.
    Returns ``(cohort, pairs)`` with the cohort shuffled.
    """
    cohort = make_cohort(n_independent + n_pairs, catalog, rng, prefix)
    pairs = []
    for k in range(n_pairs):
        base = cohort[n_independent + k]
        copy_id = f"{base.student_id}c"
        cohort.append(copy_student(rng, base, copy_id, jitter))
        pairs.append(tuple(sorted((base.student_id, copy_id))))
    perm = rng.permutation(len(cohort))
    return [cohort[i] for i in perm], pairs


def events_csv(cohort):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["student_id", "subtask_id", "timestamp_s"])
    for exam in cohort:
        for ev in exam.events:
            w.writerow([ev.student_id, ev.subtask_id, f"{ev.timestamp:.1f}"])
    return buf.getvalue()


def scores_csv(cohort, catalog):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["student_id"] + catalog.ids)
    for exam in cohort:
        w.writerow([exam.student_id] + [f"{exam.points.get(t, 0.0):g}" for t in catalog.ids])
    return buf.getvalue()


def write_cohort(cohort, catalog, directory):
    """Write ``events.csv``, ``scores.csv`` and ``catalog.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "events.csv").write_text(events_csv(cohort))
    (directory / "scores.csv").write_text(scores_csv(cohort, catalog))
    (directory / "catalog.json").write_text(json.dumps(catalog.to_dict(), indent=2) + "\n")
    return directory
