import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpwmixer.errors import ContractError, DimensionError
from dpwmixer.normalization import (
    EPS,
    DatasetScaler,
    InstanceStats,
    apply_scaler,
    fit_scaler,
    revin_denormalize,
    revin_normalize,
)


def test_constant_channel():
    xn, stats = revin_normalize(np.array([[2.0], [2.0], [2.0]]))
    np.testing.assert_array_equal(xn, np.zeros((3, 1)))
    assert stats.mu.item() == 2.0 and stats.sigma.item() == EPS


def test_two_point_population_std():
    xn, stats = revin_normalize(np.array([[1.0], [3.0]]))
    assert stats.mu.item() == 2.0 and stats.sigma.item() == 1.0
    np.testing.assert_array_equal(xn[:, 0], [-1.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 50), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_normalize_denormalize_inverse(length, channels, seed):
    x = np.random.default_rng(seed).normal(3.0, 5.0, (length, channels))
    xn, stats = revin_normalize(x)
    assert np.max(np.abs(revin_denormalize(xn, stats) - x)) <= 1e-12


def test_batched_axis_keeps_dims():
    x = np.random.default_rng(0).standard_normal((4, 10, 3))
    xn, stats = revin_normalize(x, axis=1)
    assert stats.mu.shape == (4, 1, 3)
    np.testing.assert_allclose(xn.mean(axis=1), 0.0, atol=1e-14)
    np.testing.assert_allclose(xn.std(axis=1), 1.0, atol=1e-12)


def test_denormalize_examples():
    stats = InstanceStats(np.array([[1.5, -2.0]]), np.array([[3.0, 0.5]]))
    np.testing.assert_array_equal(revin_denormalize(np.zeros((4, 2)), stats), np.tile([1.5, -2.0], (4, 1)))
    ident = InstanceStats(np.zeros((1, 2)), np.ones((1, 2)))
    y = np.random.default_rng(1).standard_normal((5, 2))
    np.testing.assert_array_equal(revin_denormalize(y, ident), y)
    with pytest.raises(DimensionError):
        revin_denormalize(np.zeros((4, 3)), stats)


def test_empty_window_rejected():
    with pytest.raises(ContractError):
        revin_normalize(np.zeros((0, 2)))


def test_scaler_examples():
    s = fit_scaler(np.array([0.0, 2.0]))
    assert s.mean.item() == 1.0 and s.std.item() == 1.0
    np.testing.assert_array_equal(apply_scaler(np.array([[3.0]]), s), [[2.0]])
    const = fit_scaler(np.full((5, 1), 7.0))
    np.testing.assert_array_equal(apply_scaler(np.full((3, 1), 7.0), const), np.zeros((3, 1)))


def test_scaler_standardizes_training_split():
    train = np.random.default_rng(2).normal([1.0, -50.0, 1e3], [0.1, 4.0, 300.0], (400, 3))
    z = fit_scaler(train).transform(train)
    assert np.max(np.abs(z.mean(axis=0))) <= 1e-10
    assert np.max(np.abs(z.std(axis=0) - 1.0)) <= 1e-10


def test_scaler_round_trip_and_serialization():
    rng = np.random.default_rng(3)
    s = fit_scaler(rng.standard_normal((20, 2)) * 4 + 1)
    s2 = DatasetScaler.from_dict(s.to_dict())
    np.testing.assert_array_equal(s.mean, s2.mean)
    np.testing.assert_array_equal(s.std, s2.std)
    x = rng.standard_normal((6, 2))
    np.testing.assert_allclose(s.inverse(s.transform(x)), x, atol=1e-14)
    with pytest.raises(DimensionError):
        s.transform(np.zeros((2, 3)))
