"""Evaluation metrics and clustering summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import adjusted_rand_score

from .errors import InputError, UndefinedMetricError


def _pair(y_true, y_pred):
    a = np.asarray(y_true, dtype=float).reshape(-1)
    b = np.asarray(y_pred, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise InputError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.size == 0:
        raise InputError("metric needs at least one value")
    return a, b


def rmse(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return math.sqrt(float(np.mean((a - b) ** 2)))


def auc(labels, scores) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic; ties count one half."""
    lab, s = _pair(labels, scores)
    if not np.all((lab == 0) | (lab == 1)):
        raise InputError("auc labels must be 0/1")
    pos = lab == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("auc is undefined when only one class is present")
    ranks = rankdata(s)  # average ranks give the half credit for ties
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


METRICS = {"rmse": rmse, "auc": auc}


@dataclass
class EvalReport:
    metric: str
    reps: list[float] = field(default_factory=list)
    model: str = "mldp"

    @property
    def n(self) -> int:
        return len(self.reps)

    @property
    def mean(self) -> float:
        return float(np.mean(self.reps))

    @property
    def std(self) -> float:
        return float(np.std(self.reps, ddof=1)) if self.n > 1 else 0.0

    @property
    def value(self) -> float:
        return self.mean

    def to_json(self) -> dict:
        return {"model": self.model, "metric": self.metric, "n": self.n, "mean": self.mean,
                "std": self.std, "reps": list(self.reps)}


def format_table(reports: list[EvalReport]) -> str:
    lines = [f"{'model':<10} {'metric':<6} {'n':>3} {'mean':>12} {'std':>12}"]
    for r in reports:
        lines.append(f"{r.model:<10} {r.metric:<6} {r.n:>3} {r.mean:>12.6f} {r.std:>12.6f}")
    return "\n".join(lines)


def adjusted_rand_index(a, b) -> float:
    return float(adjusted_rand_score(np.asarray(a), np.asarray(b)))


def posterior_similarity(label_draws) -> np.ndarray:
    """Fraction of draws in which each pair of samples shares a cluster."""
    Z = np.asarray(label_draws)
    psm = np.zeros((Z.shape[1], Z.shape[1]))
    for z in Z:
        psm += z[:, None] == z[None, :]
    return psm / Z.shape[0]


def point_clustering(label_draws) -> np.ndarray:
    """The sampled clustering closest in squared error to the posterior similarity matrix."""
    Z = np.asarray(label_draws)
    psm = posterior_similarity(Z)
    losses = [np.sum(((z[:, None] == z[None, :]) - psm) ** 2) for z in Z]
    return Z[int(np.argmin(losses))].copy()
