"""CSV ingestion, chronological splits, sliding windows and synthetic series."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .normalization import DatasetScaler, apply_scaler, fit_scaler

TIMESTAMP_NAMES = {"date", "time", "timestamp", "datetime"}
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class RawSeries:
    values: np.ndarray  # (length, C)
    channels: list[str]
    timestamps: list[str] | None = None

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def _parse_float(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(path, has_timestamp: bool | None = None, delimiter: str = ",") -> RawSeries:
    """Read an ETT-style CSV: optional leading timestamp column, then numeric channels.

    With ``has_timestamp=None`` the first column is treated as a timestamp if
    its header is a common date name or its first cell is not numeric.
    Missing or non-numeric cells raise :class:`DataError` with 1-based
    row/column coordinates (row 1 is the header).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    if has_timestamp is None:
        has_timestamp = header[0].lower() in TIMESTAMP_NAMES or _parse_float(body[0][0]) is None
    first = 1 if has_timestamp else 0
    channels = header[first:]
    if not channels:
        raise DataError(f"{path}: no numeric columns")

    values = np.empty((len(body), len(channels)))
    stamps = [] if has_timestamp else None
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(row)} cells, header has {len(header)}")
        if has_timestamp:
            stamps.append(row[0])
        for j, cell in enumerate(row[first:]):
            cell = cell.strip()
            if cell == "":
                raise DataError(f"{path}: missing value at row {i + 2}, column {j + first + 1}")
            v = _parse_float(cell)
            if v is None or not math.isfinite(v):
                raise DataError(f"{path}: non-numeric value {cell!r} at row {i + 2}, column {j + first + 1}")
            values[i, j] = v
    return RawSeries(values, channels, stamps)


def save_csv(series: RawSeries, path) -> None:
    """Write ``series`` so that :func:`load_csv` reads it back bit-exactly."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["date"] if series.timestamps is not None else []) + list(series.channels))
        for i, row in enumerate(series.values):
            cells = [repr(float(v)) for v in row]
            if series.timestamps is not None:
                cells.insert(0, series.timestamps[i])
            w.writerow(cells)


@dataclass
class WindowDataset:
    """Standardized series plus window start indices for each split.

    ``regions`` are half-open row ranges that partition the series. A window
    starting at row ``i`` reads inputs ``[i, i+L)`` and targets
    ``[i+L, i+L+T)``; its targets always lie inside its own split's region
    (for train, after the first ``L`` rows), while validation and test inputs
    may reach back ``L`` rows into the preceding split.
    """

    values: np.ndarray
    scaler: DatasetScaler
    lookback: int
    horizon: int
    regions: dict[str, tuple[int, int]]
    starts: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def n_windows(self, split: str) -> int:
        return len(self.starts[split])

    def batch(self, split: str, idx=None) -> tuple[np.ndarray, np.ndarray]:
        """Gather ``(x, y)`` arrays of shape ``(B, L, C)`` and ``(B, T, C)``."""
        starts = self.starts[split] if idx is None else self.starts[split][idx]
        L, T = self.lookback, self.horizon
        x = self.values[starts[:, None] + np.arange(L)]
        y = self.values[starts[:, None] + L + np.arange(T)]
        return x, y


def split_boundaries(length: int, ratios) -> tuple[int, int]:
    """Row indices where validation and test begin (Informer convention)."""
    ratios = [float(r) for r in ratios]
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    n_train = int(length * ratios[0])
    n_test = int(length * ratios[2])
    n_val = length - n_train - n_test
    return n_train, n_train + n_val


def make_splits(series, ratios=(0.7, 0.1, 0.2), lookback: int = 96, horizon: int = 96,
                stride: int = 1, scale: bool = True, scaler: DatasetScaler | None = None) -> WindowDataset:
    """Chronological train/val/test split with stride-``stride`` windows.

    The scaler is fit on the training rows unless one is passed in (e.g. the
    scaler stored with a checkpoint) or ``scale`` is false.
    """
    values = series.values if isinstance(series, RawSeries) else np.asarray(series, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[0]
    b1, b2 = split_boundaries(n, ratios)
    regions = {"train": (0, b1), "val": (b1, b2), "test": (b2, n)}
    L, T = lookback, horizon
    problems = [] if stride >= 1 else [f"stride must be >= 1 (got {stride})"]
    stride = max(int(stride), 1)
    starts = {}
    for name, (lo, hi) in regions.items():
        first_target = max(lo, L)
        count = hi - first_target - T + 1
        if count < 1:
            problems.append(
                f"{name} split (rows {lo}..{hi}) is too short for one window of lookback {L} + horizon {T}"
            )
            continue
        starts[name] = np.arange(first_target - L, first_target - L + count, stride, dtype=np.int64)
    if problems:
        raise ConfigError(problems)
    if scaler is None:
        scaler = fit_scaler(values[:b1]) if scale else DatasetScaler.identity(values.shape[1])
    return WindowDataset(apply_scaler(values, scaler), scaler, L, T, regions, starts)


def synth_sine_trend(length: int, channels: int = 1, periods=(24,), trend_slope: float = 0.0,
                     noise_sigma: float = 0.0, seed: int = 0, amplitudes=None) -> RawSeries:
    """Linear trend plus unit sinusoids plus Gaussian noise, per channel.

    Channel ``c`` shifts every sinusoid's phase by ``c`` radians and scales the
    trend slope by ``1 + c/4`` so channels are distinct but deterministic.
    """
    if length < 1:
        raise ConfigError("synthetic length must be >= 1")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    amplitudes = [1.0] * len(periods) if amplitudes is None else list(amplitudes)
    cols = []
    for c in range(channels):
        col = trend_slope * (1.0 + c / 4.0) * t
        for p, a in zip(periods, amplitudes):
            col = col + a * np.sin(2.0 * np.pi * t / p + c)
        cols.append(col)
    values = np.stack(cols, axis=1)
    if noise_sigma > 0:
        values = values + rng.normal(0.0, noise_sigma, size=values.shape)
    return RawSeries(values, [f"ch{c}" for c in range(channels)])
