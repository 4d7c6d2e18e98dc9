"""Detection and root-cause evaluation: point adjustment, precision/recall/
F1, rank-based AUC, and HitRate/NDCG at a percentage cutoff."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ContractError, UndefinedMetricError
from .scoring import localize_root_causes


def truth_segments(truth: np.ndarray) -> list[tuple[int, int]]:
    """Maximal contiguous runs of 1s as inclusive (start, end) pairs."""
    truth = np.asarray(truth)
    segments = []
    start = None
    for idx, val in enumerate(truth):
        if val and start is None:
            start = idx
        elif not val and start is not None:
            segments.append((start, idx - 1))
            start = None
    if start is not None:
        segments.append((start, len(truth) - 1))
    return segments


def point_adjust(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Mark a whole true segment detected if any prediction inside it fires.

    Predictions outside true segments are left untouched.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ContractError(
            f"pred length {pred.shape} does not match truth length {truth.shape}"
        )
    adjusted = pred.copy()
    for start, end in truth_segments(truth):
        if adjusted[start : end + 1].any():
            adjusted[start : end + 1] = 1
    return adjusted


def auc_score(scores: np.ndarray, truth: np.ndarray) -> float | None:
    """Rank-based AUC (ties count one half); None when truth has one class."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = stats.rankdata(scores)
    pos_rank_sum = ranks[truth == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class EvalResult:
    precision: float
    recall: float
    f1: float
    auc: float | None
    tp: int
    fp: int
    fn: int
    tn: int
    hitrate: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "hitrate": {str(p): v for p, v in self.hitrate.items()},
            "ndcg": {str(p): v for p, v in self.ndcg.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalResult":
        d = json.loads(text)
        return cls(
            precision=d["precision"],
            recall=d["recall"],
            f1=d["f1"],
            auc=d["auc"],
            tp=d["tp"],
            fp=d["fp"],
            fn=d["fn"],
            tn=d["tn"],
            hitrate={int(p): v for p, v in d.get("hitrate", {}).items()},
            ndcg={int(p): v for p, v in d.get("ndcg", {}).items()},
        )

    def table(self) -> str:
        """Fixed-order metric table for CLI output."""

        def fmt(v: float | None) -> str:
            return "  n/a " if v is None else f"{v:.4f}"

        cells = [
            ("precision", fmt(self.precision)),
            ("recall", fmt(self.recall)),
            ("f1", fmt(self.f1)),
            ("auc", fmt(self.auc)),
            ("h@100", fmt(self.hitrate.get(100))),
            ("h@150", fmt(self.hitrate.get(150))),
            ("n@100", fmt(self.ndcg.get(100))),
            ("n@150", fmt(self.ndcg.get(150))),
        ]
        head = " | ".join(name.ljust(9) for name, _ in cells)
        row = " | ".join(val.ljust(9) for _, val in cells)
        return head + "\n" + row


def detection_metrics(
    scores: np.ndarray, truth: np.ndarray, threshold: float
) -> EvalResult:
    """Point-adjusted precision/recall/F1 plus threshold-free AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if scores.shape != truth.shape:
        raise ContractError(
            f"scores length {scores.shape} does not match truth length {truth.shape}"
        )
    pred = (scores > threshold).astype(np.int64)
    adjusted = point_adjust(pred, truth)
    tp = int(((adjusted == 1) & (truth == 1)).sum())
    fp = int(((adjusted == 1) & (truth == 0)).sum())
    fn = int(((adjusted == 0) & (truth == 1)).sum())
    tn = int(((adjusted == 0) & (truth == 0)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalResult(
        precision=precision,
        recall=recall,
        f1=f1,
        auc=auc_score(scores, truth),
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


def _cutoff(truth_size: int, p: float) -> int:
    return max(1, math.floor(p * truth_size / 100.0))


def hitrate_at_p(ranked: Sequence[int], truth_set: set[int], p: float) -> float:
    """Fraction of ground-truth sensors found in the top floor(p% * |GT|)."""
    if not truth_set:
        raise UndefinedMetricError("hitrate is undefined for an empty truth set")
    if p < 1:
        raise ValueError("p must be >= 1 (a percentage)")
    cut = _cutoff(len(truth_set), p)
    return len(set(ranked[:cut]) & truth_set) / len(truth_set)


def ndcg_at_p(ranked: Sequence[int], truth_set: set[int], p: float) -> float:
    """Binary-relevance NDCG over the top floor(p% * |GT|) positions."""
    if not truth_set:
        raise UndefinedMetricError("ndcg is undefined for an empty truth set")
    if p < 1:
        raise ValueError("p must be >= 1 (a percentage)")
    cut = _cutoff(len(truth_set), p)
    dcg = sum(
        (1.0 / math.log2(rank + 1)) if item in truth_set else 0.0
        for rank, item in enumerate(ranked[:cut], start=1)
    )
    ideal = sum(
        1.0 / math.log2(rank + 1)
        for rank in range(1, min(cut, len(truth_set)) + 1)
    )
    return dcg / ideal


def segment_root_cause_metrics(
    rs_by_step: dict[int, np.ndarray],
    adjusted_pred: np.ndarray,
    truth: np.ndarray,
    rc_truth: dict[tuple[int, int], set[int]],
    offsets: np.ndarray,
    percentages: Sequence[int] = (100, 150),
) -> tuple[dict[int, float], dict[int, float]]:
    """Per-segment HitRate/NDCG averaged over detected true segments.

    ``rs_by_step`` maps absolute timestep -> per-sensor score vector;
    ``offsets`` gives the absolute timestep of each entry of ``adjusted_pred``
    and ``truth``. Scores inside each detected segment are max-pooled before
    ranking against that segment's truth set.
    """
    hit: dict[int, list[float]] = {p: [] for p in percentages}
    gain: dict[int, list[float]] = {p: [] for p in percentages}
    offset_of = {int(t): idx for idx, t in enumerate(offsets)}
    for (start, end), sensors in sorted(rc_truth.items()):
        idx = [offset_of[t] for t in range(start, end + 1) if t in offset_of]
        if not idx or not sensors:
            continue
        if not adjusted_pred[idx].any():
            continue  # segment missed entirely; no ranking to grade
        pooled = None
        for t in range(start, end + 1):
            if t in rs_by_step:
                vec = rs_by_step[t]
                pooled = vec if pooled is None else np.maximum(pooled, vec)
        if pooled is None:
            continue
        ranked = [i for i, _ in localize_root_causes(pooled, len(pooled))]
        for p in percentages:
            hit[p].append(hitrate_at_p(ranked, sensors, p))
            gain[p].append(ndcg_at_p(ranked, sensors, p))
    mean = lambda xs: float(np.mean(xs)) if xs else 0.0
    return {p: mean(hit[p]) for p in percentages}, {p: mean(gain[p]) for p in percentages}
