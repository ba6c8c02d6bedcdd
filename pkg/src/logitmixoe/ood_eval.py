"""OOD scores, the threshold rule and detection/classification metrics.

All scores are oriented so that higher means more ID-like. AUROC gives
half credit to ties (Mann-Whitney). FPR95 thresholds only at observed
scores, without interpolation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

from .model import softmax_probs
from .tensor import Tensor

SCORE_KINDS = ("msp", "max_logit", "logit_l2", "energy")


def _logits(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def scores(logits, kind: str = "msp") -> np.ndarray:
    """Score every row of ``logits`` (or a single vector)."""
    z = _logits(logits)
    if kind == "msp":
        return softmax_probs(z).max(axis=-1)
    if kind == "max_logit":
        return z.max(axis=-1)
    if kind == "logit_l2":
        return np.linalg.norm(z, axis=-1)
    if kind == "energy":
        return logsumexp(z, axis=-1)
    raise ValueError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")


def score(logits, kind: str = "msp") -> float:
    z = _logits(logits)
    if z.ndim != 1:
        raise ValueError(f"score expects a single logit vector, got shape {z.shape}")
    return float(scores(z, kind))


def decide(s: float, tau: float) -> str:
    return "in" if s >= tau else "out"


@dataclass
class ScoreSet:
    id_scores: np.ndarray
    ood_scores: np.ndarray
    score_kind: str = "msp"

    def __post_init__(self):
        self.id_scores = np.asarray(self.id_scores, dtype=np.float64).ravel()
        self.ood_scores = np.asarray(self.ood_scores, dtype=np.float64).ravel()

    def check(self) -> None:
        if len(self.id_scores) == 0 or len(self.ood_scores) == 0:
            raise ValueError("both ID and OOD score sets must be non-empty")
        if not (np.all(np.isfinite(self.id_scores)) and np.all(np.isfinite(self.ood_scores))):
            raise ValueError("scores must be finite")


def auroc(s: ScoreSet) -> float:
    s.check()
    n_id, n_ood = len(s.id_scores), len(s.ood_scores)
    ranks = rankdata(np.concatenate([s.id_scores, s.ood_scores]), method="average")
    # U counts (id > ood) pairs plus half the ties; a half-integer, exact in float64
    u = ranks[:n_id].sum() - n_id * (n_id + 1) / 2.0
    total = float(n_id) * n_ood
    # evaluate the smaller side first so swapping ID/OOD sums to exactly 1
    if 2.0 * u <= total:
        return float(u / total)
    return float(1.0 - (total - u) / total)


def threshold_at_95_tpr(s: ScoreSet) -> float:
    """Largest observed score tau with at least 95% of ID scores >= tau.

    Any candidate above the ceil(0.95 n)-th largest ID score admits too few
    ID samples, so that score is the answer.
    """
    s.check()
    n = len(s.id_scores)
    need = (95 * n + 99) // 100  # ceil(0.95 n) in integers
    return float(np.sort(s.id_scores)[::-1][need - 1])


def fpr_at_95_tpr(s: ScoreSet) -> float:
    tau = threshold_at_95_tpr(s)
    return float(np.count_nonzero(s.ood_scores >= tau) / len(s.ood_scores))


def accuracy(logits, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) matches the label."""
    z = _logits(logits)
    labels = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] < 1 or len(labels) != z.shape[0]:
        raise ValueError(f"accuracy needs (B, K) logits with B >= 1 matching labels, got {z.shape}")
    return float(np.mean(np.argmax(z, axis=1) == labels))


@dataclass
class MetricRow:
    method: str
    score_kind: str
    accuracy: float
    auroc: float
    fpr95: float
    id_mean: float
    id_std: float
    ood_mean: float
    ood_std: float


@dataclass
class MetricsReport:
    rows: list[MetricRow]

    def get(self, score_kind: str) -> MetricRow:
        for r in self.rows:
            if r.score_kind == score_kind:
                return r
        raise KeyError(score_kind)

    def write_csv(self, path: str | Path) -> None:
        """One row per (method, score kind); AUROC and FPR95 in percent."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "score_kind", "accuracy", "auroc_x100", "fpr95_x100",
                        "id_mean", "id_std", "ood_mean", "ood_std"])
            for r in self.rows:
                w.writerow([r.method, r.score_kind, repr(r.accuracy), repr(100.0 * r.auroc),
                            repr(100.0 * r.fpr95), repr(r.id_mean), repr(r.id_std),
                            repr(r.ood_mean), repr(r.ood_std)])

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps([asdict(r) for r in self.rows], indent=1, sort_keys=True)
                              + "\n")


def evaluate_logits(method: str, id_logits, id_labels, ood_logits,
                    kinds=SCORE_KINDS) -> MetricsReport:
    """Accuracy on ID plus AUROC/FPR95 of ID vs OOD for each score kind."""
    acc = accuracy(id_logits, id_labels)
    rows = []
    for kind in kinds:
        ss = ScoreSet(scores(id_logits, kind), scores(ood_logits, kind), kind)
        rows.append(MetricRow(
            method=method, score_kind=kind, accuracy=acc, auroc=auroc(ss),
            fpr95=fpr_at_95_tpr(ss),
            id_mean=float(ss.id_scores.mean()), id_std=float(ss.id_scores.std()),
            ood_mean=float(ss.ood_scores.mean()), ood_std=float(ss.ood_scores.std()),
        ))
    return MetricsReport(rows)
