"""Haar discrete wavelet transform and the multi-scale input pyramid.

All functions act along the time axis (axis 0 by default) and treat every
other axis as independent channels. Odd-length inputs are extended by one
copy of their final sample before decimation; for a length-2 filter this is
the same as mirror padding.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError

SQRT2 = math.sqrt(2.0)
K_LOW = np.array([1.0 / SQRT2, 1.0 / SQRT2])
K_HIGH = np.array([1.0 / SQRT2, -1.0 / SQRT2])


class DegenerateScaleWarning(UserWarning):
    """A pyramid level was asked to decompose a length-1 series."""


def pad_to_even(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Append one replicated tail sample when the length along ``axis`` is odd."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    if n < 1:
        raise ContractError("cannot decompose an empty series")
    if n % 2 == 0:
        return x
    last = np.take(x, [n - 1], axis=axis)
    return np.concatenate([x, last], axis=axis)


def dwt_step(x, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One Haar analysis level.

    Returns ``(approx, detail)``, each of length ``ceil(n / 2)`` along ``axis``.
    """
    xp = pad_to_even(x, axis)
    xp = np.moveaxis(xp, axis, 0)
    even, odd = xp[0::2], xp[1::2]
    approx = (even + odd) / SQRT2
    detail = (even - odd) / SQRT2
    return np.moveaxis(approx, 0, axis), np.moveaxis(detail, 0, axis)


def idwt_step(approx, detail, axis: int = 0) -> np.ndarray:
    """Inverse of :func:`dwt_step`; returns the (padded) parent series."""
    approx = np.asarray(approx, dtype=np.float64)
    detail = np.asarray(detail, dtype=np.float64)
    if approx.shape != detail.shape:
        raise DimensionError(f"idwt_step: approx {approx.shape} and detail {detail.shape} differ")
    a = np.moveaxis(approx, axis, 0)
    d = np.moveaxis(detail, axis, 0)
    out = np.empty((2 * a.shape[0],) + a.shape[1:])
    out[0::2] = (a + d) / SQRT2
    out[1::2] = (a - d) / SQRT2
    return np.moveaxis(out, 0, axis)


def energy(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum(x * x))


@dataclass
class PyramidLevel:
    parent: np.ndarray  # tail-padded input of this level
    approx: np.ndarray
    detail: np.ndarray


@dataclass
class WaveletPyramid:
    """Result of recursive Haar decomposition.

    ``scales_input`` is the list fed to the per-scale forecasters: the input
    itself followed by each approximation. ``levels`` keeps the detail
    coefficients and padded parents for diagnostics.
    """

    scales_input: list[np.ndarray]
    levels: list[PyramidLevel] = field(default_factory=list)

    @property
    def n_scales(self) -> int:
        return len(self.levels)

    def scale_lengths(self, axis: int = 0) -> list[int]:
        return [s.shape[axis] for s in self.scales_input]

    def energy_ledger(self) -> list[dict]:
        rows = []
        for j, lvl in enumerate(self.levels, start=1):
            e_parent = energy(lvl.parent)
            e_a, e_d = energy(lvl.approx), energy(lvl.detail)
            denom = max(e_parent, 1e-300)
            rows.append(
                {
                    "level": j,
                    "parent_energy": e_parent,
                    "approx_energy": e_a,
                    "detail_energy": e_d,
                    "rel_error": abs(e_parent - e_a - e_d) / denom if e_parent else abs(e_a + e_d),
                }
            )
        return rows


def _check_scales(x: np.ndarray, n_scales: int, axis: int) -> None:
    if n_scales < 0:
        raise ContractError(f"n_scales must be >= 0, got {n_scales}")
    if x.ndim == 0 or x.shape[axis] < 1:
        raise ContractError("cannot decompose an empty series")


def _warn_degenerate(length: int, level: int) -> None:
    if length == 1:
        warnings.warn(
            f"pyramid level {level} decomposes a length-1 series; the coarse scale is degenerate",
            DegenerateScaleWarning,
            stacklevel=3,
        )


def build_pyramid(x, n_scales: int, axis: int = 0) -> WaveletPyramid:
    x = np.asarray(x, dtype=np.float64)
    _check_scales(x, n_scales, axis)
    scales = [x]
    levels = []
    current = x
    for j in range(n_scales):
        _warn_degenerate(current.shape[axis], j + 1)
        parent = pad_to_even(current, axis)
        approx, detail = dwt_step(parent, axis)
        levels.append(PyramidLevel(parent, approx, detail))
        scales.append(approx)
        current = approx
    return WaveletPyramid(scales, levels)


def avg_pool_step(x, axis: int = 0) -> np.ndarray:
    """Window-2, stride-2 mean with the same tail-replication rule."""
    xp = np.moveaxis(pad_to_even(x, axis), axis, 0)
    return np.moveaxis((xp[0::2] + xp[1::2]) * 0.5, 0, axis)


def avg_pool_pyramid(x, n_scales: int, axis: int = 0) -> list[np.ndarray]:
    """Pooling counterpart of :func:`build_pyramid` (returns the scale list only)."""
    x = np.asarray(x, dtype=np.float64)
    _check_scales(x, n_scales, axis)
    scales = [x]
    for j in range(n_scales):
        _warn_degenerate(scales[-1].shape[axis], j + 1)
        scales.append(avg_pool_step(scales[-1], axis))
    return scales


def scale_lengths(length: int, n_scales: int) -> list[int]:
    """Series length at each pyramid scale: ``[L, ceil(L/2), ...]``."""
    out = [int(length)]
    for _ in range(n_scales):
        out.append((out[-1] + 1) // 2)
    return out
