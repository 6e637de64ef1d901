"""Tests for the straight-line path coefficients and guidance strength."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lflow.errors import ShapeMismatchError
from lflow.schedule import T_MAX_DEFAULT, T_MIN_DEFAULT, PathSchedule


@pytest.fixture
def schedule():
    return PathSchedule()


def test_coefficients_at_the_data_endpoint(schedule):
    assert schedule.alpha(0.0) == 1.0
    assert schedule.sigma(0.0) == 0.0


def test_coefficients_at_the_noise_endpoint(schedule):
    assert schedule.alpha(1.0) == 0.0
    assert schedule.sigma(1.0) == 1.0


def test_coefficients_at_a_quarter(schedule):
    assert schedule.alpha(0.25) == pytest.approx(0.75, abs=1e-15)
    assert schedule.sigma(0.25) == pytest.approx(0.25, abs=1e-15)


def test_derivatives_are_constant(schedule):
    for t in (0.0, 0.3, 1.0):
        assert schedule.alpha_dot(t) == -1.0
        assert schedule.sigma_dot(t) == 1.0


@settings(max_examples=60, deadline=None)
@given(t=st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
def test_coefficients_sum_to_one(t):
    schedule = PathSchedule()
    assert schedule.alpha(t) + schedule.sigma(t) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("t", [-0.1, 1.1, 2.0])
def test_times_outside_unit_interval_are_rejected(schedule, t):
    for fn in (schedule.alpha, schedule.sigma, schedule.alpha_dot, schedule.sigma_dot):
        with pytest.raises(ValueError):
            fn(t)


def test_default_clamp_window():
    assert T_MIN_DEFAULT == 1e-3
    assert T_MAX_DEFAULT == 1.0 - 1e-3
    schedule = PathSchedule()
    assert schedule.t_min == T_MIN_DEFAULT
    assert schedule.t_max == T_MAX_DEFAULT


def test_clamp_pins_both_ends(schedule):
    assert schedule.clamp(0.0) == schedule.t_min
    assert schedule.clamp(1.0) == schedule.t_max
    assert schedule.clamp(0.4) == 0.4


def test_guidance_coefficient_values(schedule):
    assert schedule.guidance_coefficient(1e-3) == pytest.approx(1e-3 / (1 - 1e-3), rel=1e-12)
    assert schedule.guidance_coefficient(0.5) == pytest.approx(1.0, abs=1e-15)
    assert schedule.guidance_coefficient(0.8) == pytest.approx(4.0, rel=1e-12)


def test_guidance_coefficient_clamps_out_of_window_times(schedule):
    top = schedule.guidance_coefficient(schedule.t_max)
    assert schedule.guidance_coefficient(0.99999) == top
    assert schedule.guidance_coefficient(1.0) == top


def test_guidance_coefficient_is_strictly_increasing(schedule):
    grid = np.linspace(schedule.t_min, schedule.t_max, 200)
    values = [schedule.guidance_coefficient(float(t)) for t in grid]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_interpolate_endpoints_are_exact_copies(schedule):
    z0 = np.array([2.0, 0.0])
    z1 = np.array([0.0, 2.0])
    np.testing.assert_array_equal(schedule.interpolate(z0, z1, 0.0), z0)
    np.testing.assert_array_equal(schedule.interpolate(z0, z1, 1.0), z1)


def test_interpolate_midpoint(schedule):
    out = schedule.interpolate(np.array([2.0, 0.0]), np.array([0.0, 2.0]), 0.5)
    np.testing.assert_allclose(out, [1.0, 1.0], atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(t=st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
def test_interpolating_a_point_with_itself_is_identity(t):
    z = np.array([0.3, -1.7, 2.2])
    np.testing.assert_allclose(PathSchedule().interpolate(z, z, t), z, atol=1e-15)


def test_interpolate_rejects_mismatched_shapes(schedule):
    with pytest.raises(ShapeMismatchError):
        schedule.interpolate(np.zeros(2), np.zeros(3), 0.5)


@pytest.mark.parametrize(
    "t_min,t_max",
    [(0.0, 0.5), (0.5, 0.5), (0.6, 0.4), (0.1, 1.0), (-0.1, 0.9)],
)
def test_schedule_rejects_bad_clamp_windows(t_min, t_max):
    with pytest.raises(ValueError):
        PathSchedule(t_min=t_min, t_max=t_max)
