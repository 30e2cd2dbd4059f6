"""Precision, Recall and F-Measure at M, per user and averaged."""

import logging
from dataclasses import dataclass

from jtm.errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UserMetrics:
    precision: float
    recall: float
    f_measure: float


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f_measure: float
    users_evaluated: int
    users_skipped: int = 0

    def as_rows(self):
        return [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f_measure", self.f_measure),
        ]

    def to_csv(self):
        lines = ["metric,value,users"]
        lines += [f"{name},{value:.6f},{self.users_evaluated}" for name, value in self.as_rows()]
        return "\n".join(lines) + "\n"

    def to_table(self):
        lines = [f"{'metric':<10} {'value':>10}", "-" * 21]
        lines += [f"{name:<10} {value:>10.6f}" for name, value in self.as_rows()]
        lines.append(f"users evaluated: {self.users_evaluated}, skipped: {self.users_skipped}")
        return "\n".join(lines)


def metrics_for_user(retrieved, truth):
    """Set-overlap metrics for one user.

    The precision denominator is the number of distinct retrieved items,
    which is M unless the corpus held fewer than M items.
    """
    retrieved = set(retrieved)
    truth = set(truth)
    if not truth:
        raise DataError("ground truth set is empty")
    if not retrieved:
        raise DataError("retrieved set is empty")
    hits = len(retrieved & truth)
    precision = hits / len(retrieved)
    recall = hits / len(truth)
    if precision + recall == 0:
        f = 0.0
    else:
        f = 2 * precision * recall / (precision + recall)
    return UserMetrics(precision, recall, f)


def aggregate(per_user, skipped=0):
    """Arithmetic mean of each metric over evaluated users."""
    per_user = list(per_user)
    if not per_user:
        raise DataError("no users to aggregate")
    n = len(per_user)
    return MetricsReport(
        sum(m.precision for m in per_user) / n,
        sum(m.recall for m in per_user) / n,
        sum(m.f_measure for m in per_user) / n,
        n,
        skipped,
    )
