"""Reading event logs, score tables and subtask catalogs into per-student exams."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from ._validation import InputError

CATEGORIES = ("standard", "code", "essay")
EVENT_COLUMNS = ("student_id", "subtask_id", "timestamp_s")

# Plain decimal literals only; float() would also accept "nan", "inf" and "1_0".
_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


@dataclass(frozen=True)
class SubmissionEvent:
    student_id: str
    subtask_id: str
    timestamp: float


@dataclass(frozen=True)
class Subtask:
    id: str
    category: str
    max_points: float


@dataclass(frozen=True)
class SubtaskCatalog:
    subtasks: tuple
    duration_minutes: int
    max_total_points: float

    def __post_init__(self):
        object.__setattr__(self, "subtasks", tuple(self.subtasks))
        ids = [s.id for s in self.subtasks]
        if not ids:
            raise InputError("catalog has no subtasks")
        if len(set(ids)) != len(ids):
            raise InputError("catalog subtask ids are not unique")
        if int(self.duration_minutes) != self.duration_minutes or self.duration_minutes < 1:
            raise InputError("catalog duration_minutes must be a positive integer")
        for s in self.subtasks:
            if s.category not in CATEGORIES:
                raise InputError(f"subtask {s.id!r} has unknown category {s.category!r}")
            if not math.isfinite(s.max_points) or s.max_points < 0:
                raise InputError(f"subtask {s.id!r} has invalid max_points")
        total = sum(s.max_points for s in self.subtasks)
        if abs(total - self.max_total_points) > 1e-9:
            raise InputError(
                f"subtask max_points sum to {total}, catalog says {self.max_total_points}"
            )

    @property
    def ids(self):
        return [s.id for s in self.subtasks]

    @property
    def n_intervals(self):
        return int(self.duration_minutes)

    def index(self, subtask_id):
        return self.ids.index(subtask_id)

    def __contains__(self, subtask_id):
        return any(s.id == subtask_id for s in self.subtasks)

    def max_points_of(self, subtask_id):
        for s in self.subtasks:
            if s.id == subtask_id:
                return s.max_points
        raise KeyError(subtask_id)

    def category_counts(self):
        return {c: sum(s.category == c for s in self.subtasks) for c in CATEGORIES}

    def to_dict(self):
        return {
            "duration_minutes": int(self.duration_minutes),
            "max_total_points": self.max_total_points,
            "subtasks": [
                {"id": s.id, "category": s.category, "max_points": s.max_points}
                for s in self.subtasks
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            subtasks = [
                Subtask(str(s["id"]), str(s["category"]), float(s["max_points"]))
                for s in doc["subtasks"]
            ]
            return cls(subtasks, int(doc["duration_minutes"]), float(doc["max_total_points"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed catalog document: {exc}") from exc


@dataclass(frozen=True)
class StudentExam:
    student_id: str
    events: tuple
    points: Mapping[str, float]

    @property
    def active_minutes(self):
        if not self.events:
            return 0.0
        return max(0.0, (self.events[-1].timestamp - self.events[0].timestamp) / 60.0)

    @property
    def total_points(self):
        return sum(self.points.values())


@dataclass(frozen=True)
class CohortFilter:
    min_active_minutes: float = 10.0
    min_points_fraction: float = 0.05
    excluded_ids: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "excluded_ids", frozenset(self.excluded_ids))
        if not 0.0 <= self.min_points_fraction <= 1.0:
            raise InputError("min_points_fraction must lie in [0, 1]")
        if self.min_active_minutes < 0:
            raise InputError("min_active_minutes must be non-negative")

    def rejection_reason(self, exam, catalog):
        if exam.student_id in self.excluded_ids:
            return "excluded"
        if exam.active_minutes < self.min_active_minutes:
            return "short attendance"
        if exam.total_points < self.min_points_fraction * catalog.max_total_points:
            return "low points"
        return None


@dataclass(frozen=True)
class Removal:
    student_id: str
    reason: str


def _read_text(source):
    """Decode bytes, a file-like object or a filesystem path to text."""
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        path = Path(source)
        if not path.is_file():
            raise InputError(f"no such file: {path}")
        raw = path.read_bytes()
    elif hasattr(source, "read"):
        raw = source.read()
        if isinstance(raw, str):
            return raw
    else:
        raise TypeError(f"cannot read from {type(source).__name__}")
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise InputError(f"input is not valid UTF-8: {exc}") from exc


def _parse_number(text, what, line):
    text = text.strip()
    if not _NUMBER.match(text):
        raise InputError(f"malformed {what} {text!r}, line {line}")
    return float(text)


def load_catalog(source):
    try:
        doc = json.loads(_read_text(source))
    except json.JSONDecodeError as exc:
        raise InputError(f"catalog is not valid JSON: {exc}") from exc
    return SubtaskCatalog.from_dict(doc)


def parse_events(source, format="csv", catalog=None):
    """Parse an event log into a list of :class:`SubmissionEvent`.

    ``format`` is ``"csv"`` (header ``student_id,subtask_id,timestamp_s``) or
    ``"jsonl"`` (one object per line with the same keys). Row order is kept
    and nothing is deduplicated. Line numbers in error messages are 1-based
    and count the CSV header.
    """
    text = _read_text(source)
    if format == "csv":
        rows = _csv_event_rows(text)
    elif format in ("jsonl", "json-lines"):
        rows = _jsonl_event_rows(text)
    else:
        raise InputError(f"unknown event format {format!r}")

    events = []
    for line, sid, tid, ts in rows:
        if not sid:
            raise InputError(f"empty student_id, line {line}")
        if catalog is not None and tid not in catalog:
            raise InputError(f"unknown subtask_id {tid!r}, line {line}")
        if isinstance(ts, str):
            ts = _parse_number(ts, "timestamp", line)
        elif not isinstance(ts, (int, float)) or isinstance(ts, bool) or not math.isfinite(ts):
            raise InputError(f"malformed timestamp {ts!r}, line {line}")
        if ts < 0:
            raise InputError(f"negative timestamp, line {line}")
        events.append(SubmissionEvent(sid, tid, float(ts)))
    return events


def _csv_event_rows(text):
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise InputError("event file is empty, expected a header line")
    if tuple(h.strip() for h in header) != EVENT_COLUMNS:
        raise InputError(f"event header must be {','.join(EVENT_COLUMNS)}, got {','.join(header)}")
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise InputError(f"malformed row: expected 3 fields, got {len(row)}, line {line}")
        yield line, row[0].strip(), row[1].strip(), row[2]


def _jsonl_event_rows(text):
    for line, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed JSON, line {line}: {exc.msg}") from exc
        if not isinstance(obj, dict) or set(obj) != set(EVENT_COLUMNS):
            raise InputError(f"malformed row: keys must be {', '.join(EVENT_COLUMNS)}, line {line}")
        yield line, str(obj["student_id"]), str(obj["subtask_id"]), obj["timestamp_s"]


def parse_scores(source, catalog):
    """Parse a wide score table: one row per student, one column per subtask.

    The first column holds the student id whatever its header says. Blank
    cells count as 0 points.
    """
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise InputError("score file is empty, expected a header line")
    columns = [h.strip() for h in header[1:]]
    for col in columns:
        if col not in catalog:
            raise InputError(f"unknown subtask_id {col!r} in score header")
    if len(set(columns)) != len(columns):
        raise InputError("duplicate subtask column in score header")

    scores = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"malformed row: expected {len(header)} fields, line {line}")
        sid = row[0].strip()
        if not sid:
            raise InputError(f"empty student_id, line {line}")
        if sid in scores:
            raise InputError(f"duplicate student row {sid!r}, line {line}")
        points = {tid: 0.0 for tid in catalog.ids}
        for col, cell in zip(columns, row[1:]):
            if not cell.strip():
                continue
            value = _parse_number(cell, "points", line)
            if value < 0:
                raise InputError(f"negative points for {col!r}, line {line}")
            if value > catalog.max_points_of(col) + 1e-9:
                raise InputError(
                    f"points exceed maximum for {col!r} ({value} > {catalog.max_points_of(col)}), line {line}"
                )
            points[col] = value
        scores[sid] = points
    return scores


def assemble_cohort(events: Iterable[SubmissionEvent], scores, catalog, filter=None):
    """Join events with scores and apply the cohort filter.

    Returns ``(exams, removals)``. Exams are ordered by student id and each
    exam's events are sorted by (timestamp, subtask position), so the result
    does not depend on input row order.
    """
    filter = filter if filter is not None else CohortFilter()
    events = list(events)
    by_student = {}
    for ev in events:
        if ev.subtask_id not in catalog:
            raise InputError(f"unknown subtask_id {ev.subtask_id!r}")
        by_student.setdefault(ev.student_id, []).append(ev)

    only_events = sorted(set(by_student) - set(scores))
    only_scores = sorted(set(scores) - set(by_student))
    if only_events or only_scores:
        parts = []
        if only_events:
            parts.append(f"in events but not scores: {', '.join(only_events)}")
        if only_scores:
            parts.append(f"in scores but not events: {', '.join(only_scores)}")
        raise InputError("cannot reconcile events and scores; " + "; ".join(parts))

    order = {tid: k for k, tid in enumerate(catalog.ids)}
    exams, removals = [], []
    for sid in sorted(scores):
        points = {tid: 0.0 for tid in catalog.ids}
        for tid, value in scores[sid].items():
            if tid not in catalog:
                raise InputError(f"unknown subtask_id {tid!r} for student {sid!r}")
            points[tid] = float(value)
        evs = sorted(by_student[sid], key=lambda e: (e.timestamp, order[e.subtask_id]))
        exam = StudentExam(sid, tuple(evs), points)
        reason = filter.rejection_reason(exam, catalog)
        if reason is None:
            exams.append(exam)
        else:
            removals.append(Removal(sid, reason))
    return exams, removals


def load_cohort(events_path, scores_path, catalog_path, filter=None, events_format=None):
    """Convenience wrapper reading all three files from disk."""
    catalog = load_catalog(catalog_path)
    if events_format is None:
        events_format = "jsonl" if str(events_path).endswith((".jsonl", ".ndjson")) else "csv"
    events = parse_events(events_path, events_format, catalog)
    scores = parse_scores(scores_path, catalog)
    exams, removals = assemble_cohort(events, scores, catalog, filter)
    return exams, removals, catalog
