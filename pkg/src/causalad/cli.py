"""Command-line entry point: generate, train, detect, diagnose, evaluate, sweep.

Every command reads a flat ``key = value`` config file (``--config``, or the
``CAUSALAD_CONFIG`` environment variable) with ``--set key=value`` overrides.
Exit codes: 0 success, 1 data or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from .config import Hyperparams, parse_ablation, read_config
from .data import (
    Dataset,
    SyntheticConfig,
    load_csv_dataset,
    normalize,
    write_synthetic,
)
from .errors import CausalADError
from .model import build_model, load_checkpoint, save_checkpoint, train_model
from .pipeline import detect, diagnose, evaluate_report, time_pipeline, write_timing

SWEEPABLE = {
    "omega": "window",
    "window": "window",
    "l": "embed_dim",
    "embed_dim": "embed_dim",
    "k": "top_k",
    "top_k": "top_k",
    "theta": "causal_threshold",
    "causal_threshold": "causal_threshold",
}


def parse_edges(text: str) -> list[tuple[int, int, int, float]]:
    """Parse ``cause->effect:lag:coef`` triples separated by commas."""
    edges = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        pair, _, rest = chunk.partition(":")
        lag_s, _, coef_s = rest.partition(":")
        cause_s, _, effect_s = pair.partition("->")
        edges.append((int(cause_s), int(effect_s), int(lag_s), float(coef_s)))
    return edges


def default_planted_edges(n: int) -> list[tuple[int, int, int, float]]:
    """A forward chain with varied lags; acyclic over sensors, hence stable."""
    coefs = (0.8, 0.7, 0.85, 0.75)
    edges = [(i, i + 1, (i % 3) + 1, coefs[i % 4]) for i in range(n - 1)]
    if n >= 3:
        edges.append((0, n - 1, 2, 0.5))
    return edges


def _run_dir(cfg: dict[str, Any], key: str = "out_dir") -> Path:
    if key in cfg:
        path = Path(str(cfg[key]))
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path("runs") / f"{stamp}-s{cfg.get('seed', 0)}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _hyperparams(cfg: dict[str, Any]) -> Hyperparams:
    fields = {f.name for f in dataclasses.fields(Hyperparams)}
    kwargs = {k: v for k, v in cfg.items() if k in fields}
    if "ablation" in kwargs:
        kwargs["ablation"] = parse_ablation(str(kwargs["ablation"]))
    return Hyperparams(**kwargs)


def _load_dataset(cfg: dict[str, Any]) -> Dataset:
    if "data_dir" in cfg:
        root = Path(str(cfg["data_dir"]))
        label = root / "test_label.csv"
        rc = root / "test_root_causes.txt"
        return load_csv_dataset(
            root / "train.csv",
            root / "test.csv",
            label if label.exists() else None,
            rc if rc.exists() else None,
            skip_header=bool(cfg.get("header", False)),
            name=root.name,
        )
    return load_csv_dataset(
        cfg["train_csv"],
        cfg["test_csv"],
        cfg.get("label_csv"),
        cfg.get("rc_file"),
        skip_header=bool(cfg.get("header", False)),
    )


def _synthetic_config(cfg: dict[str, Any]) -> SyntheticConfig:
    n = int(cfg.get("n_sensors", 8))
    edges = (
        parse_edges(str(cfg["edges"])) if "edges" in cfg else default_planted_edges(n)
    )
    kinds = tuple(
        tok.strip()
        for tok in str(cfg.get("anomaly_kinds", "spike,level_shift,correlation_break")).split(",")
        if tok.strip()
    )
    return SyntheticConfig(
        n_sensors=n,
        t_train=int(cfg.get("t_train", 4000)),
        t_test=int(cfg.get("t_test", 2000)),
        planted_edges=edges,
        noise_std=float(cfg.get("noise_std", 0.1)),
        anomaly_rate=float(cfg.get("anomaly_rate", 0.05)),
        anomaly_kinds=kinds,
        seed=int(cfg.get("seed", 0)),
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: dict[str, Any]) -> int:
    out = _run_dir(cfg)
    paths = write_synthetic(_synthetic_config(cfg), out)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


def cmd_train(cfg: dict[str, Any]) -> int:
    ds = _load_dataset(cfg)
    hp = _hyperparams(cfg)
    cp = train_model(ds, hp)
    out = _run_dir(cfg)
    ckpt_path = Path(str(cfg.get("checkpoint", out / "model.ckpt")))
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(cp, ckpt_path)
    hist_path = ckpt_path.with_suffix(".history.json")
    hist_path.write_text(json.dumps(cp.history, indent=2, sort_keys=True) + "\n")
    print(f"checkpoint: {ckpt_path}")
    print(f"history: {hist_path}")
    return 0


def cmd_detect(cfg: dict[str, Any]) -> int:
    ds = _load_dataset(cfg)
    cp = load_checkpoint(cfg["checkpoint"])
    model = build_model(cp)
    test = _normalized_test(ds, cp)
    result = detect(model, cp, test, trace=bool(cfg.get("trace", False)))
    out = _run_dir(cfg)
    report_path = Path(str(cfg.get("report", out / "report.jsonl")))
    report_path.parent.mkdir(parents=True, exist_ok=True)
    result.report.save(report_path)
    if result.traces:
        trace_path = report_path.with_suffix(".trace.jsonl")
        trace_path.write_text(
            "\n".join(json.dumps(rec, sort_keys=True) for rec in result.traces) + "\n"
        )
        print(f"trace: {trace_path}")
    flagged = int(result.report.verdicts.sum())
    print(f"report: {report_path}")
    print(f"threshold: {result.report.threshold:.6g}  flagged: {flagged}")
    return 0


def _normalized_test(ds: Dataset, cp) -> Any:
    from .data import TimeSeriesMatrix

    if cp.normalizer is None:
        return ds.test
    return TimeSeriesMatrix(
        cp.normalizer.transform(ds.test.values),
        list(ds.test.sensor_names),
        ds.test.anomaly_labels,
        ds.test.root_cause_labels,
    )


def cmd_diagnose(cfg: dict[str, Any]) -> int:
    ds = _load_dataset(cfg)
    cp = load_checkpoint(cfg["checkpoint"])
    model = build_model(cp)
    test = _normalized_test(ds, cp)
    out = _run_dir(cfg)
    written = diagnose(
        model,
        cp,
        test,
        out,
        top_k=int(cfg.get("top_k", 5)),
        margin=int(cfg.get("margin", 50)),
        plot=bool(cfg.get("plot", False)),
    )
    for path in written:
        print(path)
    return 0


def cmd_evaluate(cfg: dict[str, Any]) -> int:
    from .scoring import AnomalyReport

    ds = _load_dataset(cfg)
    report = AnomalyReport.load(cfg["report"])
    result = evaluate_report(report, ds.test)
    out = _run_dir(cfg)
    eval_path = Path(str(cfg.get("eval_out", out / "eval.json")))
    eval_path.parent.mkdir(parents=True, exist_ok=True)
    eval_path.write_text(result.to_json() + "\n")
    print(result.table())
    print(f"eval: {eval_path}")
    return 0


def cmd_sweep(cfg: dict[str, Any]) -> int:
    param = str(cfg["param"]).lower()
    if param not in SWEEPABLE:
        raise CausalADError(
            f"cannot sweep {param!r}; choose one of {sorted(set(SWEEPABLE))}"
        )
    field = SWEEPABLE[param]
    values = [v.strip() for v in str(cfg["values"]).split(",") if v.strip()]
    ds = _load_dataset(cfg)
    out = _run_dir(cfg)
    written = []
    for value in values:
        point_cfg = dict(cfg)
        point_cfg[field] = type(getattr(Hyperparams(), field))(value)
        hp = _hyperparams(point_cfg)
        cp = train_model(ds, hp)
        model = build_model(cp)
        test = _normalized_test(ds, cp)
        result = detect(model, cp, test)
        eval_result = evaluate_report(result.report, test, result.rs_by_step)
        path = out / f"eval_{field}_{value}.json"
        path.write_text(eval_result.to_json() + "\n")
        written.append(path)
        print(f"{field}={value}: f1={eval_result.f1:.4f} -> {path}")
    summary = out / "sweep_summary.json"
    summary.write_text(
        json.dumps({"param": field, "points": [str(p) for p in written]}, indent=2) + "\n"
    )
    return 0


def cmd_time(cfg: dict[str, Any]) -> int:
    ds = _load_dataset(cfg)
    cp = load_checkpoint(cfg["checkpoint"])
    result = time_pipeline(ds, cp, train_epochs=int(cfg.get("train_epochs", 1)))
    out = _run_dir(cfg)
    path = Path(str(cfg.get("timing_out", out / "timing.json")))
    write_timing(result, path)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "detect": cmd_detect,
    "diagnose": cmd_diagnose,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "time": cmd_time,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalad",
        description="Anomaly detection and root-cause analysis for multivariate time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", default=os.environ.get("CAUSALAD_CONFIG"))
        cmd.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config value",
        )
        if name == "sweep":
            cmd.add_argument("--param")
            cmd.add_argument("--values")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = read_config(args.config, args.overrides)
        for extra in ("param", "values"):
            if getattr(args, extra, None):
                cfg[extra] = getattr(args, extra)
        return COMMANDS[args.command](cfg)
    except (CausalADError, FileNotFoundError, KeyError, ValueError, OSError) as exc:
        kind = type(exc).__name__
        print(f"error ({kind}): {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
