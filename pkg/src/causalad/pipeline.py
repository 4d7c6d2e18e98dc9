"""Per-window inference pipeline, detection/diagnosis flows, and timing."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .config import Hyperparams
from .data import Dataset, SampleWindow, TimeSeriesMatrix, iter_window_arrays
from .errors import ContractError, MeasurementError
from .graphs import CausalGraph, finalize_causal_graph
from .metrics import detection_metrics, point_adjust, segment_root_cause_metrics
from .model import (
    AnomalyDetector,
    ModelCheckpoint,
    RecurrentState,
    build_model,
    train_model,
)
from .scoring import (
    AnomalyReport,
    anomaly_score,
    localize_root_causes,
    pot_threshold,
    root_cause_scores,
)
from .torchutil import window_tensors


@dataclass
class RepresentationBundle:
    """Per-window representations plus optional attention snapshots."""

    d_causal: np.ndarray  # (N, l)
    d_corr: np.ndarray  # (N, 2l)
    d_temporal: np.ndarray  # (N, l)
    fused: np.ndarray  # (N, l)
    attn_causal: np.ndarray | None = None  # (N, N*window)
    attn_node: np.ndarray | None = None  # (N, N)
    attn_edge: np.ndarray | None = None  # (N, N)
    attn_temporal: np.ndarray | None = None  # (window, window)


def forward_window(
    window: SampleWindow,
    state: RecurrentState,
    model: AnomalyDetector,
    trace: bool = False,
) -> tuple[np.ndarray, np.ndarray, float, RepresentationBundle, RecurrentState]:
    """Run one window through the full stack (noise-free).

    Returns (x_hat, s_tilde, recon_loss, bundle, next_state).
    """
    if window.history.shape != (model.hp.window, model.n_sensors, model.dim):
        raise ContractError(
            f"window shape {window.history.shape} does not match checkpoint "
            f"{(model.hp.window, model.n_sensors, model.dim)}"
        )
    history, target = window_tensors(window, model.dtype)
    with torch.no_grad():
        out = model.forward_window(history, target, state, sample=False, trace=trace)
    bundle = RepresentationBundle(
        d_causal=out.d_causal.numpy(),
        d_corr=out.d_corr.numpy(),
        d_temporal=out.d_temporal.numpy(),
        fused=out.fused.numpy(),
        attn_causal=None if out.attn_causal is None else out.attn_causal.numpy(),
        attn_node=None if out.attn_node is None else out.attn_node.numpy(),
        attn_edge=None if out.attn_edge is None else out.attn_edge.numpy(),
        attn_temporal=None if out.attn_temporal is None else out.attn_temporal.numpy(),
    )
    return (
        out.x_hat.numpy(),
        out.s_tilde.numpy(),
        float(out.recon_loss),
        bundle,
        out.state,
    )


def attention_to_lag_tensor(attn: np.ndarray, n_sensors: int, window: int) -> np.ndarray:
    """(N, N*window) attention -> (N effect, N cause, window positions)."""
    return attn.reshape(n_sensors, n_sensors, window)


@dataclass
class DetectionResult:
    report: AnomalyReport
    rs_by_step: dict[int, np.ndarray]
    mean_attention: np.ndarray | None  # (N, N, window), averaged over windows
    traces: list[dict[str, Any]]
    predicted: np.ndarray  # (W, N, m)
    reconstructed_last: np.ndarray  # (W, N, m): last history row of each window


def detect(
    model: AnomalyDetector,
    cp: ModelCheckpoint,
    test: TimeSeriesMatrix,
    collect_attention: bool = False,
    trace: bool = False,
) -> DetectionResult:
    """Score every test window, threshold with POT, rank root causes.

    ``test`` must already be normalized with the checkpoint's parameters.
    The POT calibration series comes from the checkpoint (validation-slice
    scores recorded at train time).
    """
    hp = model.hp
    histories, targets, ts = iter_window_arrays(test.values, hp.window)
    n_windows = histories.shape[0]
    h_t = torch.as_tensor(histories, dtype=model.dtype)
    x_t = torch.as_tensor(targets, dtype=model.dtype)

    scores = np.empty(n_windows)
    rs_by_step: dict[int, np.ndarray] = {}
    mean_attn: np.ndarray | None = None
    traces: list[dict[str, Any]] = []
    predicted = np.empty_like(targets)
    recon_last = np.empty_like(targets)

    state = model.zero_state()
    with torch.no_grad():
        for w in range(n_windows):
            out = model.forward_window(
                h_t[w], x_t[w], state, sample=False, trace=collect_attention or trace
            )
            state = out.state
            rs = root_cause_scores(
                targets[w], out.x_hat.numpy(), histories[w], out.s_tilde.numpy(), hp.score_blend
            )
            rs_by_step[int(ts[w])] = rs
            scores[w] = anomaly_score(rs)
            predicted[w] = out.x_hat.numpy()
            recon_last[w] = out.s_tilde.numpy()[-1]
            if collect_attention and out.attn_causal is not None:
                attn = attention_to_lag_tensor(
                    out.attn_causal.numpy(), model.n_sensors, hp.window
                )
                mean_attn = attn if mean_attn is None else mean_attn + attn
            if trace:
                record = {"t": int(ts[w])}
                if out.attn_causal is not None:
                    alpha = out.attn_causal.numpy()
                    record["causal_row_sums"] = alpha.sum(axis=1).tolist()
                    record["candidate_set_sizes"] = (
                        (alpha >= hp.causal_threshold).sum(axis=1).tolist()
                    )
                if out.attn_node is not None:
                    record["node_row_sums"] = out.attn_node.numpy().sum(axis=1).tolist()
                    record["edge_row_sums"] = out.attn_edge.numpy().sum(axis=1).tolist()
                if out.attn_temporal is not None:
                    record["temporal_row_sums"] = (
                        out.attn_temporal.numpy().sum(axis=1).tolist()
                    )
                traces.append(record)
    if mean_attn is not None:
        mean_attn = mean_attn / n_windows

    fit = pot_threshold(cp.calibration_scores, hp.pot_risk, hp.pot_init_quantile)
    verdicts = scores > fit.threshold
    root_causes = [
        localize_root_causes(rs_by_step[int(ts[w])], model.n_sensors) if verdicts[w] else []
        for w in range(n_windows)
    ]
    report = AnomalyReport(
        timesteps=ts,
        scores=scores,
        threshold=fit.threshold,
        blend=hp.score_blend,
        risk=hp.pot_risk,
        root_causes=root_causes,
        pot_fallback=fit.fallback,
    )
    return DetectionResult(
        report=report,
        rs_by_step=rs_by_step,
        mean_attention=mean_attn,
        traces=traces,
        predicted=predicted,
        reconstructed_last=recon_last,
    )


def evaluate_report(
    report: AnomalyReport,
    test: TimeSeriesMatrix,
    rs_by_step: dict[int, np.ndarray] | None = None,
    percentages: tuple[int, ...] = (100, 150),
):
    """Detection metrics on the scored range, plus RCA metrics when
    per-step score vectors and root-cause truth are available."""
    if test.anomaly_labels is None:
        raise ContractError("test series carries no anomaly labels")
    truth = test.anomaly_labels[report.timesteps]
    result = detection_metrics(report.scores, truth, report.threshold)
    if rs_by_step is None and report.root_causes:
        rs_by_step = {
            int(t): np.asarray([v for _, v in sorted(causes)])
            for t, causes in zip(report.timesteps, report.root_causes)
            if causes
        }
    if rs_by_step and test.root_cause_labels:
        adjusted = point_adjust(report.verdicts, truth)
        hit, gain = segment_root_cause_metrics(
            rs_by_step,
            adjusted,
            truth,
            test.root_cause_labels,
            report.timesteps,
            percentages,
        )
        result.hitrate = hit
        result.ndcg = gain
    return result


# ---------------------------------------------------------------------------
# Diagnosis artifacts
# ---------------------------------------------------------------------------

def diagnose(
    model: AnomalyDetector,
    cp: ModelCheckpoint,
    test: TimeSeriesMatrix,
    out_dir: str | Path,
    top_k: int = 5,
    margin: int = 50,
    plot: bool = False,
) -> list[Path]:
    """Emit static per-anomaly reports: ranked root causes, thresholded
    causal edges, and actual/predicted/reconstructed traces as CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    det = detect(model, cp, test, collect_attention=True)
    report = det.report
    verdicts = report.verdicts
    written: list[Path] = []

    # Group flagged windows into contiguous segments.
    segments: list[tuple[int, int]] = []
    start = None
    for idx, v in enumerate(verdicts):
        if v and start is None:
            start = idx
        elif not v and start is not None:
            segments.append((start, idx - 1))
            start = None
    if start is not None:
        segments.append((start, len(verdicts) - 1))

    t_of = report.timesteps
    for seg_no, (a, b) in enumerate(segments):
        seg_dir = out / f"anomaly_{seg_no:03d}_t{int(t_of[a])}-{int(t_of[b])}"
        seg_dir.mkdir(exist_ok=True)
        pooled = None
        attn_sum = None
        for idx in range(a, b + 1):
            rs = det.rs_by_step[int(t_of[idx])]
            pooled = rs if pooled is None else np.maximum(pooled, rs)
        ranking = localize_root_causes(pooled, len(pooled))
        (seg_dir / "root_causes.json").write_text(
            json.dumps(
                {
                    "t_start": int(t_of[a]),
                    "t_end": int(t_of[b]),
                    "ranking": [[int(i), float(v)] for i, v in ranking],
                },
                indent=2,
            )
            + "\n"
        )
        written.append(seg_dir / "root_causes.json")

        if det.mean_attention is not None:
            graph = finalize_causal_graph(
                det.mean_attention, model.hp.causal_threshold, int(t_of[b])
            )
            (seg_dir / "causal_edges.json").write_text(graph.to_json() + "\n")
            written.append(seg_dir / "causal_edges.json")

        lo = max(0, a - margin)
        hi = min(len(t_of) - 1, b + margin)
        sensors = [i for i, _ in ranking[:top_k]]
        header = ["t"] + [
            f"{kind}_{test.sensor_names[i]}"
            for i in sensors
            for kind in ("actual", "predicted", "reconstructed")
        ] + ["anomaly_score", "threshold"]
        rows = []
        for idx in range(lo, hi + 1):
            t = int(t_of[idx])
            row = [str(t)]
            for i in sensors:
                actual = test.values[i, t, 0]
                pred = det.predicted[idx, i, 0]
                recon = det.reconstructed_last[idx, i, 0]  # reconstructs step t-1
                row += [f"{actual:.6g}", f"{pred:.6g}", f"{recon:.6g}"]
            row += [f"{report.scores[idx]:.6g}", f"{report.threshold:.6g}"]
            rows.append(",".join(row))
        trace_path = seg_dir / "traces.csv"
        trace_path.write_text(",".join(header) + "\n" + "\n".join(rows) + "\n")
        written.append(trace_path)

        if plot:
            _plot_segment(seg_dir, test, det, report, sensors, lo, hi)
            written.append(seg_dir / "traces.png")
    return written


def _plot_segment(seg_dir, test, det, report, sensors, lo, hi):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t_of = report.timesteps
    ts = [int(t_of[i]) for i in range(lo, hi + 1)]
    fig, axes = plt.subplots(len(sensors) + 1, 1, figsize=(8, 2 * (len(sensors) + 1)))
    for row, i in enumerate(sensors):
        ax = axes[row]
        ax.plot(ts, [test.values[i, t, 0] for t in ts], "k-", label="actual")
        ax.plot(ts, [det.predicted[idx, i, 0] for idx in range(lo, hi + 1)], "r--", label="predicted")
        ax.plot(ts, [det.reconstructed_last[idx, i, 0] for idx in range(lo, hi + 1)], "b-", alpha=0.6, label="reconstructed")
        ax.set_ylabel(test.sensor_names[i])
        if row == 0:
            ax.legend(loc="upper right", fontsize=7)
    ax = axes[-1]
    ax.plot(ts, [report.scores[idx] for idx in range(lo, hi + 1)], "g-", label="score")
    ax.axhline(report.threshold, color="orange", ls=":", label="threshold")
    ax.set_ylabel("score")
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(seg_dir / "traces.png", dpi=100)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Timing harness
# ---------------------------------------------------------------------------

def time_pipeline(
    ds: Dataset,
    cp: ModelCheckpoint,
    train_epochs: int = 1,
    instrument: bool = False,
) -> dict[str, float]:
    """Wall-clock cost: average train seconds per epoch and total inference
    seconds over all test windows."""
    hp = cp.hyperparams
    model = build_model(cp)
    test_norm = cp.normalizer.transform(ds.test.values) if cp.normalizer else ds.test.values
    if test_norm.shape[1] <= hp.window:
        raise MeasurementError(
            f"no test windows to time (T={test_norm.shape[1]}, window={hp.window})"
        )
    histories, targets, _ = iter_window_arrays(test_norm, hp.window)
    h_t = torch.as_tensor(histories, dtype=model.dtype)
    x_t = torch.as_tensor(targets, dtype=model.dtype)

    train_hp = Hyperparams.from_dict({**hp.to_dict(), "max_epochs": train_epochs, "patience": train_epochs + 1})
    t0 = time.perf_counter()
    train_model(ds, train_hp)
    train_seconds = (time.perf_counter() - t0) / train_epochs

    state = model.zero_state()
    per_window = 0.0
    t0 = time.perf_counter()
    with torch.no_grad():
        for w in range(h_t.shape[0]):
            if instrument:
                t1 = time.perf_counter()
            out = model.forward_window(h_t[w], x_t[w], state, sample=False)
            state = out.state
            if instrument:
                per_window += time.perf_counter() - t1
    inference_seconds = time.perf_counter() - t0

    result = {
        "train_seconds_per_epoch": train_seconds,
        "inference_seconds_total": inference_seconds,
        "n_test_windows": float(h_t.shape[0]),
    }
    if instrument:
        result["inference_seconds_sum_of_windows"] = per_window
    return result


def write_timing(result: dict[str, float], path: str | Path) -> None:
    Path(path).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
