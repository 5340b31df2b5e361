"""Wall-clock scaling of a training epoch with look-back length and pyramid depth."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import ModelConfig, init_params
from .training import Adam, train_step


@dataclass
class BenchRow:
    lookback: int
    seconds_multi: float  # N = n_scales
    seconds_single: float  # N = 0
    ratio_multi_single: float
    ratio_to_previous: float | None  # time(L) / time(L_prev), multi-scale


def epoch_seconds(config: ModelConfig, batch_size: int = 32, n_batches: int = 4, repeats: int = 3,
                  seed: int = 0) -> float:
    """Best-of-``repeats`` time for ``n_batches`` optimizer steps on random data.

    The minimum is the least noisy estimate of the cost on a shared machine.
    """
    rng = np.random.default_rng(seed)
    model = init_params(config, seed)
    opt = Adam(model.parameters())
    xs = rng.standard_normal((n_batches, batch_size, config.lookback, config.channels))
    ys = rng.standard_normal((n_batches, batch_size, config.horizon, config.channels))
    train_step(model, opt, xs[0], ys[0], 1e-4)  # warm caches and the allocator
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for x, y in zip(xs, ys):
            train_step(model, opt, x, y, 1e-4)
        best = min(best, time.perf_counter() - t0)
    return best


def scaling_table(base: ModelConfig, lengths, batch_size: int = 32, n_batches: int = 4,
                  repeats: int = 3, seed: int = 0) -> list[BenchRow]:
    lengths = [int(v) for v in lengths]
    if not lengths or any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigError(f"bench lengths must be strictly ascending, got {lengths}")
    rows: list[BenchRow] = []
    for L in lengths:
        multi = epoch_seconds(replace(base, lookback=L), batch_size, n_batches, repeats, seed)
        single = epoch_seconds(replace(base, lookback=L, n_scales=0), batch_size, n_batches, repeats, seed)
        prev = rows[-1].seconds_multi if rows else None
        rows.append(BenchRow(L, multi, single, multi / single, None if prev is None else multi / prev))
    return rows


def write_table(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lookback", "seconds_multi", "seconds_single", "ratio_multi_single", "ratio_to_previous"])
        for r in rows:
            w.writerow([r.lookback, f"{r.seconds_multi:.6f}", f"{r.seconds_single:.6f}",
                        f"{r.ratio_multi_single:.4f}",
                        "" if r.ratio_to_previous is None else f"{r.ratio_to_previous:.4f}"])
