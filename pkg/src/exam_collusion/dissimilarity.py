"""Weighted global dissimilarity between students' exams.

Each subtask contributes two attributes: the absolute difference in points
and the Manhattan distance between minute-binned submission counts. Attribute
dissimilarities are normalized across the cohort, weighted and summed into
one pairwise matrix.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InputError, check_choice, check_finite, check_square_dissimilarity
from .ingest import SubtaskCatalog

SCHEME_MODES = ("paper", "equal")
NORMALIZE_MODES = ("range", "zscore", "none")

# Relative weights of the "paper" scheme. Event-pattern weights depend on the
# subtask category; every points attribute gets the same unit weight.
EVENT_RATIO = {"standard": 4, "code": 2, "essay": 2}
POINT_RATIO = 1


def bin_events(exam, catalog):
    """Count each subtask's submissions per one-minute interval.

    Interval ``m`` (0-based) covers ``[60 m, 60 (m + 1))`` seconds. Events at
    or after the end of the exam are counted in the final interval.
    """
    k = catalog.n_intervals
    counts = {tid: np.zeros(k, dtype=np.int64) for tid in catalog.ids}
    for ev in exam.events:
        m = min(int(ev.timestamp // 60.0), k - 1)
        counts[ev.subtask_id][m] += 1
    return counts


def point_dissimilarity(a, b):
    return abs(float(a) - float(b))


def event_dissimilarity(u, v):
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise InputError(f"count vectors differ in length: {u.shape} vs {v.shape}")
    return float(np.abs(u - v).sum())


@dataclass(frozen=True)
class AttributeScheme:
    """Per-subtask event-pattern and points weights, stored as exact fractions."""

    subtask_ids: tuple
    event_weights: tuple
    point_weights: tuple
    mode: str

    def __post_init__(self):
        n = len(self.subtask_ids)
        if not (len(self.event_weights) == len(self.point_weights) == n):
            raise InputError("scheme weight vectors do not match the subtask list")
        if any(w < 0 for w in self.event_weights + self.point_weights):
            raise InputError("scheme weights must be non-negative")
        total = sum(self.event_weights, Fraction(0)) + sum(self.point_weights, Fraction(0))
        if abs(float(total) - 1.0) > 1e-9:
            raise InputError(f"scheme weights sum to {float(total)}, expected 1")

    @property
    def h(self):
        """Number of attributes (two per subtask)."""
        return 2 * len(self.subtask_ids)

    def weights_array(self):
        """Float weights as an ``(n_subtasks, 2)`` array of (points, events)."""
        return np.array(
            [[float(p), float(e)] for p, e in zip(self.point_weights, self.event_weights)]
        )

    def to_dict(self):
        return {
            "mode": self.mode,
            "subtasks": [
                {
                    "id": tid,
                    "event_weight": float(e),
                    "point_weight": float(p),
                    "event_weight_exact": str(e),
                    "point_weight_exact": str(p),
                }
                for tid, e, p in zip(self.subtask_ids, self.event_weights, self.point_weights)
            ],
        }

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def rounded_table(self, decimals=3):
        return [
            (tid, round(float(e), decimals), round(float(p), decimals))
            for tid, e, p in zip(self.subtask_ids, self.event_weights, self.point_weights)
        ]


def build_scheme(catalog, mode="paper"):
    """Weight scheme for ``catalog``.

    ``paper`` uses event weights 4:2:2 for standard, code and essay subtasks
    against a points weight of 1 per subtask, scaled to sum to one. ``equal``
    gives each of the ``2 n`` attributes weight ``1 / (2 n)``.
    """
    check_choice(mode, SCHEME_MODES, "scheme mode")
    subtasks = list(catalog.subtasks)
    if not subtasks:
        raise InputError("cannot build a scheme for an empty catalog")
    ids = tuple(s.id for s in subtasks)
    if mode == "equal":
        w = Fraction(1, 2 * len(subtasks))
        return AttributeScheme(ids, (w,) * len(ids), (w,) * len(ids), mode)
    events = [EVENT_RATIO[s.category] for s in subtasks]
    total = sum(events) + POINT_RATIO * len(subtasks)
    return AttributeScheme(
        ids,
        tuple(Fraction(e, total) for e in events),
        tuple(Fraction(POINT_RATIO, total) for _ in subtasks),
        mode,
    )


def normalization_constants(raw, mode="range"):
    """Per-attribute divisors for ``raw`` of shape ``(n_attributes, n_pairs)``.

    A constant of ``None`` marks a degenerate attribute (all zero, or zero
    spread) which normalizes to all zeros.
    """
    check_choice(mode, NORMALIZE_MODES, "normalization mode")
    raw = np.asarray(raw, dtype=float)
    if mode == "none":
        return [1.0] * raw.shape[0]
    constants = []
    for row in raw:
        if mode == "range":
            c = float(row.max()) if row.size else 0.0
        else:
            c = float(row.std(ddof=1)) if row.size > 1 else 0.0
        constants.append(c if c > 0 else None)
    return constants


def apply_normalization(raw, constants):
    raw = np.asarray(raw, dtype=float)
    out = np.zeros_like(raw)
    for a, c in enumerate(constants):
        if c is not None:
            out[a] = raw[a] / c
    return out


def normalize_attributes(raw, mode="range"):
    """Normalize each attribute's pairwise dissimilarities.

    ``range`` divides by the attribute's largest pairwise value, ``zscore``
    by its sample standard deviation over pairs and ``none`` passes values
    through. Returns ``(normalized, constants)``.
    """
    constants = normalization_constants(raw, mode)
    return apply_normalization(raw, constants), constants


def _pairs(n):
    return np.triu_indices(n, k=1)


def attribute_dissimilarities(cohort, catalog):
    """Raw attribute dissimilarities, shape ``(2 n_subtasks, n_pairs)``.

    Rows alternate points, events for each subtask in catalog order.
    """
    n = len(cohort)
    iu = _pairs(n)
    rows = []
    binned = [bin_events(exam, catalog) for exam in cohort]
    for tid in catalog.ids:
        pts = np.array([exam.points.get(tid, 0.0) for exam in cohort], dtype=float)
        check_finite(pts, f"points for subtask {tid!r}")
        rows.append(np.abs(pts[:, None] - pts[None, :])[iu])
        counts = np.stack([b[tid] for b in binned])
        l1 = np.abs(counts[:, None, :] - counts[None, :, :]).sum(axis=-1)
        rows.append(l1[iu].astype(float))
    return np.vstack(rows) if rows else np.zeros((0, len(iu[0])))


def _combine(normalized, scheme, n):
    weights = scheme.weights_array().ravel()
    acc = np.zeros(normalized.shape[1])
    # Fixed attribute order keeps every pair's sum bit-identical across runs.
    for a in range(normalized.shape[0]):
        acc += weights[a] * normalized[a]
    acc /= scheme.h
    values = np.zeros((n, n))
    iu = _pairs(n)
    values[iu] = acc
    values[(iu[1], iu[0])] = acc
    return values


@dataclass
class DissimilarityMatrix:
    ids: tuple
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = tuple(str(i) for i in self.ids)
        self.values = check_square_dissimilarity(self.values)
        if len(self.ids) != self.values.shape[0]:
            raise InputError("ids do not match matrix dimension")
        if len(set(self.ids)) != len(self.ids):
            raise InputError("duplicate ids in dissimilarity matrix")

    def __len__(self):
        return len(self.ids)

    def condensed(self):
        return self.values[_pairs(len(self.ids))]

    def pair_ids(self):
        i, j = _pairs(len(self.ids))
        return [(self.ids[a], self.ids[b]) for a, b in zip(i, j)]

    def scaled(self, c):
        return DissimilarityMatrix(self.ids, self.values * c, dict(self.provenance))

    def take(self, order):
        order = list(order)
        return DissimilarityMatrix(
            [self.ids[k] for k in order], self.values[np.ix_(order, order)], dict(self.provenance)
        )

    def to_csv(self):
        lines = ["student_id," + ",".join(self.ids)]
        for sid, row in zip(self.ids, self.values):
            lines.append(sid + "," + ",".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {
            "ids": list(self.ids),
            "lower_triangle": [[float(x) for x in self.values[i, :i]] for i in range(len(self.ids))],
            "scheme": self.provenance.get("scheme"),
            "scheme_digest": self.provenance.get("scheme_digest"),
            "normalization": self.provenance.get("normalization"),
            "normalization_constants": self.provenance.get("normalization_constants"),
        }

    @classmethod
    def from_dict(cls, doc):
        n = len(doc["ids"])
        values = np.zeros((n, n))
        for i, row in enumerate(doc["lower_triangle"]):
            if len(row) != i:
                raise InputError(f"lower_triangle row {i} has {len(row)} entries, expected {i}")
            values[i, :i] = row
            values[:i, i] = row
        prov = {k: doc.get(k) for k in ("scheme", "scheme_digest", "normalization", "normalization_constants")}
        return cls(doc["ids"], values, prov)


def as_dissimilarity_matrix(X):
    """Accept a :class:`DissimilarityMatrix` or a square array-like."""
    if isinstance(X, DissimilarityMatrix):
        return X
    arr = check_square_dissimilarity(X)
    return DissimilarityMatrix([str(i) for i in range(arr.shape[0])], arr)


def _check_cohort(cohort, catalog):
    cohort = list(cohort)
    if len(cohort) < 2:
        raise InputError(f"need at least 2 students, got {len(cohort)}")
    ids = [exam.student_id for exam in cohort]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate student ids in cohort")
    for exam in cohort:
        for ev in exam.events:
            if ev.subtask_id not in catalog:
                raise InputError(f"unknown subtask_id {ev.subtask_id!r} for {exam.student_id!r}")
    return cohort


class ExamDissimilarity(TransformerMixin, BaseEstimator):
    """Turn a cohort of :class:`~exam_collusion.ingest.StudentExam` into a
    :class:`DissimilarityMatrix`.

    ``fit`` learns the per-attribute normalization constants from the
    cohort's pairs; ``transform`` applies them to any cohort on the same
    catalog.

    Parameters
    ----------
    catalog : SubtaskCatalog
    scheme : {"paper", "equal"} or AttributeScheme
    normalize : {"range", "zscore", "none"}
    """

    def __init__(self, catalog=None, scheme="paper", normalize="range"):
        self.catalog = catalog
        self.scheme = scheme
        self.normalize = normalize

    def _resolve(self):
        if not isinstance(self.catalog, SubtaskCatalog):
            raise InputError("ExamDissimilarity needs a SubtaskCatalog")
        check_choice(self.normalize, NORMALIZE_MODES, "normalize")
        if isinstance(self.scheme, AttributeScheme):
            if tuple(self.scheme.subtask_ids) != tuple(self.catalog.ids):
                raise InputError("scheme subtasks do not match the catalog")
            return self.scheme
        return build_scheme(self.catalog, self.scheme)

    def fit(self, X, y=None):
        cohort = _check_cohort(X, self.catalog)
        self.scheme_ = self._resolve()
        raw = attribute_dissimilarities(cohort, self.catalog)
        self.normalization_constants_ = normalization_constants(raw, self.normalize)
        self.n_features_in_ = self.scheme_.h
        return self

    def transform(self, X):
        check_is_fitted(self, "normalization_constants_")
        cohort = _check_cohort(X, self.catalog)
        raw = attribute_dissimilarities(cohort, self.catalog)
        return self._assemble(cohort, raw)

    def fit_transform(self, X, y=None):
        cohort = _check_cohort(X, self.catalog)
        self.scheme_ = self._resolve()
        raw = attribute_dissimilarities(cohort, self.catalog)
        self.normalization_constants_ = normalization_constants(raw, self.normalize)
        self.n_features_in_ = self.scheme_.h
        return self._assemble(cohort, raw)

    def _assemble(self, cohort, raw):
        normalized = apply_normalization(raw, self.normalization_constants_)
        values = _combine(normalized, self.scheme_, len(cohort))
        names = []
        for tid in self.catalog.ids:
            names += [f"points:{tid}", f"events:{tid}"]
        provenance = {
            "scheme": self.scheme_.to_dict(),
            "scheme_digest": self.scheme_.digest(),
            "normalization": self.normalize,
            "normalization_constants": dict(zip(names, self.normalization_constants_)),
        }
        return DissimilarityMatrix([e.student_id for e in cohort], values, provenance)


def global_dissimilarity(cohort, catalog, scheme="paper", normalize="range"):
    """Pairwise global dissimilarity matrix for ``cohort``."""
    return ExamDissimilarity(catalog, scheme, normalize).fit_transform(cohort)
