"""Anomaly scores, extreme-value thresholding, and root-cause ranking."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InsufficientCalibrationError


def root_cause_scores(
    x: np.ndarray,
    x_hat: np.ndarray,
    s: np.ndarray,
    s_tilde: np.ndarray,
    blend: float,
) -> np.ndarray:
    """Per-variable blend of prediction and reconstruction errors.

    rs_i = sqrt(sum_m (x_i - x_hat_i)^2 + blend * sum_{w,m} (S_i - S~_i)^2)
    """
    if blend < 0:
        raise ValueError("blend must be >= 0")
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    pred_sq = ((x - x_hat) ** 2).sum(axis=-1)  # (N,)
    if blend == 0:
        return np.sqrt(pred_sq)
    s, s_tilde = np.asarray(s, dtype=np.float64), np.asarray(s_tilde, dtype=np.float64)
    rec_sq = ((s - s_tilde) ** 2).sum(axis=(0, 2))  # (N,)
    return np.sqrt(pred_sq + blend * rec_sq)


def anomaly_score(rs: np.ndarray) -> float:
    """Mean of the per-variable root-cause scores."""
    rs = np.asarray(rs, dtype=np.float64)
    if rs.size < 1:
        raise ValueError("need at least one variable")
    return float(rs.mean())


def localize_root_causes(rs: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k sensors by score, descending; ties broken by lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rs = np.asarray(rs, dtype=np.float64)
    order = sorted(range(rs.size), key=lambda i: (-rs[i], i))
    return [(i, float(rs[i])) for i in order[: min(k, rs.size)]]


# ---------------------------------------------------------------------------
# Peak-over-threshold calibration
# ---------------------------------------------------------------------------

@dataclass
class PotFit:
    threshold: float
    init_level: float
    n_exceedances: int
    shape: float | None  # None on the fallback path
    scale: float | None
    fallback: bool
    risk: float


def _gpd_log_likelihood(peaks: np.ndarray, shape: float, scale: float) -> float:
    if scale <= 0:
        return -math.inf
    n = peaks.size
    if abs(shape) < 1e-12:
        return -n * math.log(scale) - float(peaks.sum()) / scale
    z = 1.0 + shape * peaks / scale
    if (z <= 0).any():
        return -math.inf
    return -n * math.log(scale) - (1.0 + 1.0 / shape) * float(np.log(z).sum())


def _gpd_fit(peaks: np.ndarray) -> tuple[float, float]:
    """Profile-likelihood (Grimshaw) GPD fit, shape restricted to (-0.5, 1).

    Max-likelihood candidates come from roots of the Grimshaw equation; the
    exponential fit (shape 0, scale = mean) is always a candidate, which keeps
    the fit stable on degenerate or multi-modal exceedance samples where an
    unconstrained optimizer collapses the scale.
    """
    from scipy.optimize import brentq

    y_min, y_max, y_mean = peaks.min(), peaks.max(), peaks.mean()
    candidates: list[tuple[float, float]] = [(0.0, float(max(y_mean, 1e-12)))]

    def grimshaw_w(t: float) -> float:
        s = 1.0 + t * peaks
        u = 1.0 + float(np.log(s).mean())
        v = float(np.mean(1.0 / s))
        return u * v - 1.0

    eps = 1e-8 / max(y_max, 1.0)
    right = 2.0 * (y_mean - y_min) / (y_min**2) if y_min > 0 else 0.0
    intervals = [(-1.0 / y_max + eps, -eps)]
    if right > eps:
        intervals.append((eps, right))
    for lo, hi in intervals:
        if not lo < hi:
            continue
        grid = np.linspace(lo, hi, 64)
        values = np.array([grimshaw_w(t) for t in grid])
        for a, b, fa, fb in zip(grid, grid[1:], values, values[1:]):
            if np.isfinite(fa) and np.isfinite(fb) and fa * fb < 0:
                try:
                    t_root = brentq(grimshaw_w, a, b)
                except ValueError:
                    continue
                shape = float(np.log(1.0 + t_root * peaks).mean())
                if abs(shape) > 1e-12:
                    candidates.append((shape, shape / t_root))
    best = max(
        (c for c in candidates if -0.5 < c[0] < 1.0),
        key=lambda c: _gpd_log_likelihood(peaks, *c),
    )
    return best[0], max(best[1], 1e-12)


def pot_threshold(
    calibration_scores: Iterable[float],
    risk: float,
    init_quantile: float = 0.98,
) -> PotFit:
    """Extreme-value threshold: fit exceedances over the init level with a
    generalized Pareto tail and solve it for exceedance probability ``risk``.

    With fewer than 10 exceedances the empirical (1 - risk) quantile is used
    instead and the result is flagged as a fallback. The threshold never
    drops below the init level.
    """
    scores = np.asarray(list(calibration_scores), dtype=np.float64)
    if scores.size < 50:
        raise InsufficientCalibrationError(
            f"need at least 50 calibration scores, got {scores.size}"
        )
    if not 0.0 < risk < 0.5:
        raise ValueError("risk must lie in (0, 0.5)")
    level = float(np.quantile(scores, init_quantile))
    peaks = scores[scores > level] - level
    n = scores.size
    if peaks.size < 10:
        threshold = max(float(np.quantile(scores, 1.0 - risk)), level)
        return PotFit(
            threshold=threshold,
            init_level=level,
            n_exceedances=int(peaks.size),
            shape=None,
            scale=None,
            fallback=True,
            risk=risk,
        )
    shape, scale = _gpd_fit(peaks)
    ratio = risk * n / peaks.size
    if abs(shape) < 1e-9:
        threshold = level - scale * math.log(ratio)
    else:
        threshold = level + (scale / shape) * (ratio ** (-shape) - 1.0)
    threshold = max(float(threshold), level)
    return PotFit(
        threshold=threshold,
        init_level=level,
        n_exceedances=int(peaks.size),
        shape=shape,
        scale=scale,
        fallback=False,
        risk=risk,
    )


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class AnomalyReport:
    """Per-timestep scores, verdicts, and ranked root causes."""

    timesteps: np.ndarray  # absolute test indices whose windows were scored
    scores: np.ndarray
    threshold: float
    blend: float
    risk: float
    root_causes: list[list[tuple[int, float]]] = field(default_factory=list)
    pot_fallback: bool = False

    @property
    def verdicts(self) -> np.ndarray:
        return (self.scores > self.threshold).astype(np.int64)

    def to_jsonl(self) -> str:
        header = {
            "threshold": self.threshold,
            "q": self.risk,
            "beta": self.blend,
            "pot_fallback": self.pot_fallback,
        }
        lines = [json.dumps(header, sort_keys=True)]
        verdicts = self.verdicts
        for idx, t in enumerate(self.timesteps):
            causes = self.root_causes[idx] if idx < len(self.root_causes) else []
            lines.append(
                json.dumps(
                    {
                        "t": int(t),
                        "score": float(self.scores[idx]),
                        "verdict": int(verdicts[idx]),
                        "root_causes": [[int(i), float(v)] for i, v in causes],
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path: str | Path) -> "AnomalyReport":
        lines = Path(path).read_text().splitlines()
        header = json.loads(lines[0])
        ts, scores, causes = [], [], []
        for line in lines[1:]:
            if not line.strip():
                continue
            rec = json.loads(line)
            ts.append(rec["t"])
            scores.append(rec["score"])
            causes.append([(int(i), float(v)) for i, v in rec["root_causes"]])
        return cls(
            timesteps=np.asarray(ts, dtype=np.int64),
            scores=np.asarray(scores, dtype=np.float64),
            threshold=float(header["threshold"]),
            blend=float(header["beta"]),
            risk=float(header["q"]),
            root_causes=causes,
            pot_fallback=bool(header.get("pot_fallback", False)),
        )
