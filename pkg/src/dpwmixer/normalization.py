"""Per-window instance normalization and dataset-level standardization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError

EPS = 1e-5


@dataclass
class InstanceStats:
    mu: np.ndarray
    sigma: np.ndarray


def revin_normalize(x, eps: float = EPS, axis: int = 0) -> tuple[np.ndarray, InstanceStats]:
    """Standardize each channel of a look-back window by its own statistics.

    ``axis`` is the time axis; statistics keep their dims so they broadcast
    back over any batch layout. Standard deviation is the population one,
    floored at ``eps`` so constant channels map to zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[axis] < 1:
        raise ContractError("revin_normalize needs at least one time step")
    mu = x.mean(axis=axis, keepdims=True)
    sigma = np.maximum(x.std(axis=axis, keepdims=True), eps)
    return (x - mu) / sigma, InstanceStats(mu, sigma)


def revin_denormalize(y_norm, stats: InstanceStats) -> np.ndarray:
    y_norm = np.asarray(y_norm, dtype=np.float64)
    if y_norm.shape[-1] != stats.mu.shape[-1]:
        raise DimensionError(
            f"revin_denormalize: {y_norm.shape[-1]} channels but stats carry {stats.mu.shape[-1]}"
        )
    return y_norm * stats.sigma + stats.mu


@dataclass
class DatasetScaler:
    """Channelwise z-score fit on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, x) -> np.ndarray:
        return apply_scaler(x, self)

    def inverse(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetScaler":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))

    @classmethod
    def identity(cls, channels: int) -> "DatasetScaler":
        return cls(np.zeros(channels), np.ones(channels))


def fit_scaler(train, eps: float = EPS) -> DatasetScaler:
    train = np.asarray(train, dtype=np.float64)
    if train.ndim == 1:
        train = train[:, None]
    if train.shape[0] < 1:
        raise ContractError("fit_scaler needs a nonempty training split")
    return DatasetScaler(train.mean(axis=0), np.maximum(train.std(axis=0), eps))


def apply_scaler(x, scaler: DatasetScaler) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != scaler.mean.shape[0]:
        raise DimensionError(
            f"apply_scaler: data has {x.shape[-1]} channels, scaler has {scaler.mean.shape[0]}"
        )
    return (x - scaler.mean) / scaler.std
