"""Loading, normalization, windowing and synthesis of multivariate time series.

Conventions: a series is an array of shape ``(N, T, m)`` — N sensors, T
timestamps, m values per sensor per timestamp. CSV adapters emit ``m=1``
(one column per sensor, one row per timestamp, no header by default).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    CsvParseError,
    InsufficientDataError,
    LabelError,
    SchemaError,
    StabilityError,
)

Segment = tuple[int, int]  # inclusive (start, end) timestep range


@dataclass
class TimeSeriesMatrix:
    """Observations plus optional anomaly and root-cause labels."""

    values: np.ndarray  # (N, T, m), finite
    sensor_names: list[str]
    anomaly_labels: np.ndarray | None = None  # (T,) in {0,1}
    root_cause_labels: dict[Segment, set[int]] | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:  # (N, T) shorthand for m=1
            self.values = self.values[:, :, None]
        if self.values.ndim != 3:
            raise SchemaError(f"values must be (N, T, m), got shape {self.values.shape}")
        n, t, m = self.values.shape
        if min(n, t, m) < 1:
            raise SchemaError(f"N, T, m must all be >= 1, got {(n, t, m)}")
        if not np.all(np.isfinite(self.values)):
            raise SchemaError("values contain non-finite entries")
        if len(self.sensor_names) != n:
            raise SchemaError(f"expected {n} sensor names, got {len(self.sensor_names)}")
        if self.anomaly_labels is not None:
            self.anomaly_labels = np.asarray(self.anomaly_labels, dtype=np.int64)
            if self.anomaly_labels.shape != (t,):
                raise LabelError(
                    f"anomaly labels must have length T={t}, got {self.anomaly_labels.shape}"
                )
            if not np.isin(self.anomaly_labels, (0, 1)).all():
                raise LabelError("anomaly labels must be 0 or 1")
        if self.root_cause_labels is not None:
            for seg, sensors in self.root_cause_labels.items():
                bad = [i for i in sensors if not 0 <= i < n]
                if bad:
                    raise LabelError(f"root-cause indices {bad} out of range for N={n}")
                if not 0 <= seg[0] <= seg[1] < t:
                    raise LabelError(f"root-cause segment {seg} outside [0, {t})")

    @property
    def n_sensors(self) -> int:
        return self.values.shape[0]

    @property
    def n_timestamps(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


@dataclass
class Dataset:
    """A train/test pair sharing sensors; train is assumed anomaly-free."""

    train: TimeSeriesMatrix
    test: TimeSeriesMatrix
    name: str = "dataset"
    source: str = ""
    normalization: str = "raw"

    def __post_init__(self) -> None:
        if self.train.n_sensors != self.test.n_sensors or self.train.dim != self.test.dim:
            raise SchemaError(
                f"train {self.train.values.shape} and test {self.test.values.shape} "
                "disagree on N or m"
            )
        if self.train.sensor_names != self.test.sensor_names:
            raise SchemaError("train and test sensor names differ")
        if self.train.anomaly_labels is not None:
            raise LabelError("train series must not carry anomaly labels")


@dataclass
class SampleWindow:
    """History of the ``window`` steps immediately before ``t`` plus the row at ``t``."""

    history: np.ndarray  # (window, N, m), oldest first
    target: np.ndarray  # (N, m)
    t: int

    @property
    def width(self) -> int:
        return self.history.shape[0]


@dataclass
class NormalizerParams:
    """Per-channel statistics fit on the train split only."""

    method: str  # "minmax" or "zscore"
    stat_a: np.ndarray  # (N, m): min or mean
    stat_b: np.ndarray  # (N, m): max or std

    def transform(self, values: np.ndarray) -> np.ndarray:
        a = self.stat_a[:, None, :]
        b = self.stat_b[:, None, :]
        if self.method == "minmax":
            span = b - a
        else:
            span = b
        safe = np.where(span > 0, span, 1.0)
        out = (values - a) / safe
        # Constant train channels map to zero everywhere, also on test.
        return np.where(span > 0, out, 0.0)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "stat_a": self.stat_a.tolist(),
            "stat_b": self.stat_b.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizerParams":
        return cls(
            method=d["method"],
            stat_a=np.asarray(d["stat_a"], dtype=np.float64),
            stat_b=np.asarray(d["stat_b"], dtype=np.float64),
        )


@dataclass
class SyntheticConfig:
    """Planted lagged linear process with injected test anomalies."""

    n_sensors: int = 8
    t_train: int = 4000
    t_test: int = 2000
    dim: int = 1
    planted_edges: list[tuple[int, int, int, float]] = field(default_factory=list)
    # entries: (cause sensor j, effect sensor i, lag >= 1, coefficient)
    noise_std: float = 0.1
    noise_scales: list[float] | None = None  # optional per-sensor multipliers
    anomaly_rate: float = 0.05
    anomaly_kinds: tuple[str, ...] = ("spike", "level_shift", "correlation_break")
    seed: int = 0

    def __post_init__(self) -> None:
        valid = {"spike", "level_shift", "correlation_break"}
        unknown = set(self.anomaly_kinds) - valid
        if unknown:
            raise ValueError(f"unknown anomaly kinds: {sorted(unknown)}")
        if not 0.0 <= self.anomaly_rate < 0.5:
            raise ValueError("anomaly_rate must lie in [0, 0.5)")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")
        if self.noise_scales is not None:
            if len(self.noise_scales) != self.n_sensors:
                raise ValueError("noise_scales must list one factor per sensor")
            if any(s <= 0 for s in self.noise_scales):
                raise ValueError("noise_scales must be positive")
        for j, i, lag, _coef in self.planted_edges:
            if lag < 1:
                raise ValueError(f"edge ({j}->{i}) has lag {lag}; lags must be >= 1")
            for node in (i, j):
                if not 0 <= node < self.n_sensors:
                    raise ValueError(f"edge sensor {node} out of range")


# ---------------------------------------------------------------------------
# CSV adapters
# ---------------------------------------------------------------------------

def _read_csv_matrix(path: str | Path, skip_header: bool = False) -> np.ndarray:
    """Read a numeric CSV into a (T, N) float array with located errors."""
    rows: list[list[float]] = []
    width = None
    with open(path) as fh:
        lines = fh.read().splitlines()
    if skip_header and lines:
        lines = lines[1:]
    for lineno, line in enumerate(lines, start=2 if skip_header else 1):
        if not line.strip():
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise SchemaError(
                f"{path}:{lineno}: expected {width} columns, found {len(cells)}"
            )
        parsed = []
        for col, cell in enumerate(cells):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise CsvParseError(
                    f"{path}:{lineno}: column {col + 1}: not a number: {cell!r}"
                ) from None
        rows.append(parsed)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def _read_label_file(path: str | Path, expected_t: int) -> np.ndarray:
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(float(line)))
            except ValueError:
                raise LabelError(f"{path}:{lineno}: not an integer label: {line!r}") from None
    if len(labels) != expected_t:
        raise LabelError(
            f"{path}: expected {expected_t} labels (one per test row), got {len(labels)}"
        )
    arr = np.asarray(labels, dtype=np.int64)
    if not np.isin(arr, (0, 1)).all():
        raise LabelError(f"{path}: labels must be 0 or 1")
    return arr


def _read_root_cause_file(path: str | Path, n_sensors: int, t: int) -> dict[Segment, set[int]]:
    """Parse ``start-end:i1,i2,...`` lines; ranges and indices are 1-based."""
    out: dict[Segment, set[int]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                span, _, idx_part = line.partition(":")
                start_s, _, end_s = span.partition("-")
                start, end = int(start_s) - 1, int(end_s) - 1
                sensors = {int(tok) - 1 for tok in idx_part.split(",") if tok.strip()}
            except ValueError:
                raise LabelError(f"{path}:{lineno}: malformed root-cause line: {line!r}") from None
            if not 0 <= start <= end < t:
                raise LabelError(f"{path}:{lineno}: segment {start + 1}-{end + 1} outside 1..{t}")
            bad = [i for i in sensors if not 0 <= i < n_sensors]
            if bad:
                raise LabelError(f"{path}:{lineno}: sensor indices out of range: {bad}")
            out[(start, end)] = sensors
    return out


def load_csv_dataset(
    train_path: str | Path,
    test_path: str | Path,
    label_path: str | Path | None = None,
    rc_label_path: str | Path | None = None,
    skip_header: bool = False,
    name: str | None = None,
) -> Dataset:
    """Load a train/test CSV pair (one column per sensor, m=1)."""
    train_raw = _read_csv_matrix(train_path, skip_header)
    test_raw = _read_csv_matrix(test_path, skip_header)
    if train_raw.shape[1] != test_raw.shape[1]:
        raise SchemaError(
            f"train has {train_raw.shape[1]} columns but test has {test_raw.shape[1]}"
        )
    n = train_raw.shape[1]
    sensor_names = [f"sensor_{i}" for i in range(n)]
    labels = _read_label_file(label_path, test_raw.shape[0]) if label_path else None
    rc = (
        _read_root_cause_file(rc_label_path, n, test_raw.shape[0])
        if rc_label_path
        else None
    )
    train = TimeSeriesMatrix(train_raw.T[:, :, None], sensor_names)
    test = TimeSeriesMatrix(test_raw.T[:, :, None], sensor_names, labels, rc)
    return Dataset(train, test, name=name or Path(train_path).stem, source=str(train_path))


def write_csv_dataset(ds: Dataset, out_dir: str | Path) -> dict[str, Path]:
    """Write a dataset back to the CSV layout; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    def save_series(tsm: TimeSeriesMatrix, path: Path) -> None:
        if tsm.dim != 1:
            raise SchemaError("CSV layout only supports m=1")
        np.savetxt(path, tsm.values[:, :, 0].T, fmt="%.12g", delimiter=",")

    paths["train"] = out / "train.csv"
    paths["test"] = out / "test.csv"
    save_series(ds.train, paths["train"])
    save_series(ds.test, paths["test"])
    if ds.test.anomaly_labels is not None:
        paths["labels"] = out / "test_label.csv"
        np.savetxt(paths["labels"], ds.test.anomaly_labels, fmt="%d")
    if ds.test.root_cause_labels:
        paths["root_causes"] = out / "test_root_causes.txt"
        with open(paths["root_causes"], "w") as fh:
            for (start, end), sensors in sorted(ds.test.root_cause_labels.items()):
                idx = ",".join(str(i + 1) for i in sorted(sensors))
                fh.write(f"{start + 1}-{end + 1}:{idx}\n")
    return paths


# ---------------------------------------------------------------------------
# Normalization and windowing
# ---------------------------------------------------------------------------

def fit_normalizer(train: TimeSeriesMatrix, method: str) -> NormalizerParams:
    if method not in ("minmax", "zscore"):
        raise ValueError(f"unknown normalization method {method!r}")
    if method == "minmax":
        a = train.values.min(axis=1)
        b = train.values.max(axis=1)
    else:
        a = train.values.mean(axis=1)
        b = train.values.std(axis=1)
    return NormalizerParams(method=method, stat_a=a, stat_b=b)


def normalize(ds: Dataset, method: str = "minmax") -> tuple[Dataset, NormalizerParams]:
    """Scale train and test with statistics fit on train only."""
    params = fit_normalizer(ds.train, method)
    train = TimeSeriesMatrix(
        params.transform(ds.train.values), list(ds.train.sensor_names)
    )
    test = TimeSeriesMatrix(
        params.transform(ds.test.values),
        list(ds.test.sensor_names),
        ds.test.anomaly_labels,
        ds.test.root_cause_labels,
    )
    out = Dataset(train, test, name=ds.name, source=ds.source, normalization=method)
    return out, params


def make_windows(x: TimeSeriesMatrix, window: int) -> list[SampleWindow]:
    """Slice a series into T - window samples, one per target step t."""
    if window < 2:
        raise ValueError("window width must be >= 2")
    t_total = x.n_timestamps
    if t_total <= window:
        raise InsufficientDataError(
            f"need T > window, got T={t_total} with window={window}"
        )
    # (T, N, m) view so history slices are contiguous in time.
    by_time = np.ascontiguousarray(x.values.transpose(1, 0, 2))
    return [
        SampleWindow(history=by_time[t - window : t], target=by_time[t], t=t)
        for t in range(window, t_total)
    ]


def iter_window_arrays(
    values: np.ndarray, window: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized windowing: histories (W, window, N, m), targets (W, N, m), ts (W,)."""
    n, t_total, m = values.shape
    if t_total <= window:
        raise InsufficientDataError(
            f"need T > window, got T={t_total} with window={window}"
        )
    by_time = np.ascontiguousarray(values.transpose(1, 0, 2))
    idx = np.arange(window, t_total)
    hist = np.stack([by_time[t - window : t] for t in idx])
    return hist, by_time[idx], idx


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

def _companion_spectral_radius(cfg: SyntheticConfig) -> float:
    max_lag = max((lag for _, _, lag, _ in cfg.planted_edges), default=1)
    n = cfg.n_sensors
    size = n * max_lag
    comp = np.zeros((size, size))
    for j, i, lag, coef in cfg.planted_edges:
        comp[i, (lag - 1) * n + j] += coef
    if max_lag > 1:
        comp[n:, :-n] = np.eye(n * (max_lag - 1))
    return float(np.abs(np.linalg.eigvals(comp)).max())


def _simulate_var(
    cfg: SyntheticConfig, rng: np.random.Generator, steps: int, burn_in: int = 200
) -> np.ndarray:
    """Run the planted lagged linear process; returns (N, steps, m)."""
    n, m = cfg.n_sensors, cfg.dim
    max_lag = max((lag for _, _, lag, _ in cfg.planted_edges), default=1)
    total = steps + burn_in + max_lag
    x = np.zeros((total, n, m))
    noise = rng.normal(0.0, cfg.noise_std, size=(total, n, m))
    if cfg.noise_scales is not None:
        noise *= np.asarray(cfg.noise_scales)[None, :, None]
    x[:max_lag] = noise[:max_lag]
    for t in range(max_lag, total):
        x[t] = noise[t]
        for j, i, lag, coef in cfg.planted_edges:
            x[t, i] += coef * x[t - lag, j]
    return x[burn_in + max_lag :].transpose(1, 0, 2)


def _plan_segments(
    cfg: SyntheticConfig, rng: np.random.Generator
) -> list[tuple[Segment, str]]:
    """Pick non-overlapping anomaly segments totalling ~rate * T_test points."""
    budget = int(round(cfg.anomaly_rate * cfg.t_test))
    if budget == 0:
        return []
    lo = max(1, int(0.05 * cfg.t_test))  # keep clear of the series edges
    hi = int(0.98 * cfg.t_test)
    length_by_kind = {
        "spike": (1, 5),
        "level_shift": (10, 30),
        "correlation_break": (10, 30),
    }
    taken: list[Segment] = []
    plan: list[tuple[Segment, str]] = []
    total = 0
    attempts = 0
    # Fill to >= 90% of the budget, never exceeding it.
    while total < 0.9 * budget and attempts < 2000:
        attempts += 1
        kind = cfg.anomaly_kinds[int(rng.integers(len(cfg.anomaly_kinds)))]
        lmin, lmax = length_by_kind[kind]
        length = min(int(rng.integers(lmin, lmax + 1)), budget - total)
        if length < 1:
            break
        start = int(rng.integers(lo, max(lo + 1, hi - length)))
        end = start + length - 1
        if any(start <= e + 5 and end >= s - 5 for s, e in taken):
            continue
        taken.append((start, end))
        plan.append(((start, end), kind))
        total += length
    return sorted(plan)


def generate_synthetic(
    cfg: SyntheticConfig,
) -> tuple[Dataset, list[tuple[int, int, int, float]]]:
    """Generate a seeded train/test pair with planted causal structure.

    Anomalies are injected in the test split only; each injected segment
    records the affected sensors as its root-cause label.
    """
    radius = _companion_spectral_radius(cfg)
    if radius >= 1.0:
        raise StabilityError(
            f"planted process is unstable (spectral radius {radius:.3f} >= 1)"
        )
    rng = np.random.default_rng(cfg.seed)
    train_vals = _simulate_var(cfg, rng, cfg.t_train)
    test_vals = _simulate_var(cfg, rng, cfg.t_test)

    labels = np.zeros(cfg.t_test, dtype=np.int64)
    root_causes: dict[Segment, set[int]] = {}
    train_std = train_vals.std(axis=1).mean(axis=1)  # (N,)
    plan = _plan_segments(cfg, rng)
    for (start, end), kind in plan:
        labels[start : end + 1] = 1
        if kind == "spike":
            sensor = int(rng.integers(cfg.n_sensors))
            sign = 1.0 if rng.random() < 0.5 else -1.0
            size = rng.uniform(5.0, 10.0) * max(train_std[sensor], cfg.noise_std)
            test_vals[sensor, start : end + 1] += sign * size
            root_causes[(start, end)] = {sensor}
        elif kind == "level_shift":
            sensor = int(rng.integers(cfg.n_sensors))
            sign = 1.0 if rng.random() < 0.5 else -1.0
            size = rng.uniform(3.0, 5.0) * max(train_std[sensor], cfg.noise_std)
            test_vals[sensor, start : end + 1] += sign * size
            root_causes[(start, end)] = {sensor}
        else:  # correlation_break: re-drive one effect from independent noise
            if cfg.planted_edges:
                j, i, lag, coef = cfg.planted_edges[int(rng.integers(len(cfg.planted_edges)))]
                driver_std = test_vals[j].std()
                fake = rng.normal(0.0, driver_std, size=(end - start + 1, cfg.dim))
                shifted = np.arange(start, end + 1) - lag
                shifted = np.clip(shifted, 0, cfg.t_test - 1)
                test_vals[i, start : end + 1] += coef * (fake - test_vals[j, shifted])
                root_causes[(start, end)] = {i}
            else:
                sensor = int(rng.integers(cfg.n_sensors))
                test_vals[sensor, start : end + 1] = rng.normal(
                    0.0, 3.0 * cfg.noise_std, size=(end - start + 1, cfg.dim)
                )
                root_causes[(start, end)] = {sensor}

    if cfg.anomaly_rate > 0 and plan:
        frac = labels.mean()
        lo, hi = 0.8 * cfg.anomaly_rate, 1.2 * cfg.anomaly_rate
        if not lo <= frac <= hi:
            raise StabilityError(
                f"injected anomaly fraction {frac:.4f} outside [{lo:.4f}, {hi:.4f}]"
            )

    sensor_names = [f"sensor_{i}" for i in range(cfg.n_sensors)]
    train = TimeSeriesMatrix(train_vals, sensor_names)
    test = TimeSeriesMatrix(test_vals, sensor_names, labels, root_causes or None)
    ds = Dataset(train, test, name=f"synthetic-seed{cfg.seed}", source="synthetic")
    return ds, list(cfg.planted_edges)


def write_synthetic(
    cfg: SyntheticConfig, out_dir: str | Path
) -> dict[str, Path]:
    """Generate and persist a synthetic dataset plus its ground-truth sidecar."""
    ds, edges = generate_synthetic(cfg)
    paths = write_csv_dataset(ds, out_dir)
    sidecar = {
        "seed": cfg.seed,
        "n_sensors": cfg.n_sensors,
        "planted_edges": [
            {"cause": j, "effect": i, "lag": lag, "coef": coef}
            for j, i, lag, coef in edges
        ],
        "anomaly_segments": [
            {"start": s, "end": e, "sensors": sorted(sensors)}
            for (s, e), sensors in sorted((ds.test.root_cause_labels or {}).items())
        ],
    }
    path = Path(out_dir) / "ground_truth.json"
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    paths["ground_truth"] = path
    return paths
