"""Flag test-cohort pairs that are extreme relative to a comparison cohort."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import InputError, check_finite
from .dissimilarity import as_dissimilarity_matrix

FENCE = 3.0


@dataclass(frozen=True)
class DistributionSummary:
    n_pairs: int
    mean: float
    sd: float
    median: float
    q1: float
    q3: float
    iqr: float
    lower_extreme_bound: float
    minimum: float
    maximum: float

    def to_dict(self):
        return {k: (float(v) if k != "n_pairs" else int(v)) for k, v in asdict(self).items()}


def summarize(values, fence=FENCE):
    """Location and spread summary with quartile fence ``Q1 - fence * IQR``.

    Quantiles interpolate linearly between order statistics: quantile ``p``
    of sorted ``x_1..x_n`` sits at position ``1 + (n - 1) p``.
    """
    x = check_finite(np.asarray(values, dtype=float).ravel(), "values")
    if x.size < 2:
        raise InputError(f"need at least 2 values to summarize, got {x.size}")
    q1, median, q3 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    iqr = q3 - q1
    return DistributionSummary(
        n_pairs=int(x.size),
        mean=float(x.mean()),
        sd=float(x.std(ddof=1)),
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        iqr=float(iqr),
        lower_extreme_bound=float(q1 - fence * iqr),
        minimum=float(x.min()),
        maximum=float(x.max()),
    )


def standardize(values):
    """z-scores using the sample (``n - 1``) standard deviation."""
    x = check_finite(np.asarray(values, dtype=float).ravel(), "values")
    if x.size < 2:
        raise InputError("need at least 2 values to standardize")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise InputError("cannot standardize values with zero standard deviation")
    return (x - x.mean()) / sd


@dataclass(frozen=True)
class FlaggedPair:
    a: str
    b: str
    d_raw: float
    z: float
    flagged: bool


@dataclass
class FlagReport:
    bound: float
    comparison_summary: DistributionSummary
    test_summary: DistributionSummary
    raw_comparison_summary: DistributionSummary
    raw_test_summary: DistributionSummary
    pairs: list
    strict: bool = False
    comparison_values: tuple = ()

    @property
    def flagged(self):
        return [p for p in self.pairs if p.flagged]

    def to_dict(self):
        return {
            "bound": float(self.bound),
            "strict": self.strict,
            "comparison_summary": self.comparison_summary.to_dict(),
            "test_summary": self.test_summary.to_dict(),
            "raw_comparison_summary": self.raw_comparison_summary.to_dict(),
            "raw_test_summary": self.raw_test_summary.to_dict(),
            "n_flagged": len(self.flagged),
            "pairs": [
                {"a": p.a, "b": p.b, "d_raw": float(p.d_raw), "z": float(p.z), "flagged": p.flagged}
                for p in self.pairs
            ],
            "comparison_values": [float(v) for v in self.comparison_values],
        }


class CollusionFlagger(BaseEstimator):
    """Learn the extreme-outlier fence from a comparison cohort and apply it
    to a test cohort.

    ``fit`` takes the comparison cohort's dissimilarity matrix, standardizes
    its pairwise values and stores ``bound_ = Q1 - fence * IQR`` of those
    z-scores. ``predict`` standardizes the test cohort's own pairs and flags
    those below the bound. With ``strict=True`` a flagged pair must also lie
    below the smallest comparison z-score.
    """

    def __init__(self, fence=FENCE, strict=False):
        self.fence = fence
        self.strict = strict

    def fit(self, X, y=None):
        dm = as_dissimilarity_matrix(X)
        if len(dm) < 3:
            raise InputError("comparison cohort needs at least 3 students")
        raw = dm.condensed()
        z = standardize(raw)
        self.comparison_values_ = raw
        self.raw_summary_ = summarize(raw, self.fence)
        self.summary_ = summarize(z, self.fence)
        self.bound_ = self.summary_.lower_extreme_bound
        self.comparison_min_z_ = float(z.min())
        return self

    def _threshold(self):
        if self.strict:
            return min(self.bound_, self.comparison_min_z_)
        return self.bound_

    def decision_function(self, X):
        """Standardized test-pair dissimilarities in condensed order."""
        dm = as_dissimilarity_matrix(X)
        if len(dm) < 3:
            raise InputError("test cohort needs at least 3 students")
        return standardize(dm.condensed())

    def predict(self, X):
        check_is_fitted(self, "bound_")
        return self.decision_function(X) < self._threshold()

    def report(self, X):
        check_is_fitted(self, "bound_")
        dm = as_dissimilarity_matrix(X)
        raw = dm.condensed()
        z = self.decision_function(dm)
        threshold = self._threshold()
        ids = dm.pair_ids()
        # stable sort keeps condensed (i, j) order among equal z-scores
        order = np.argsort(z, kind="stable")
        pairs = [
            FlaggedPair(ids[k][0], ids[k][1], float(raw[k]), float(z[k]), bool(z[k] < threshold))
            for k in order
        ]
        return FlagReport(
            bound=float(self.bound_),
            comparison_summary=self.summary_,
            test_summary=summarize(z, self.fence),
            raw_comparison_summary=self.raw_summary_,
            raw_test_summary=summarize(raw, self.fence),
            pairs=pairs,
            strict=bool(self.strict),
            comparison_values=tuple(float(v) for v in self.comparison_values_),
        )


def flag_pairs(test_matrix, comparison_matrix, strict=False, fence=FENCE):
    """Compare the two cohorts and return a :class:`FlagReport`."""
    return CollusionFlagger(fence=fence, strict=strict).fit(comparison_matrix).report(test_matrix)
