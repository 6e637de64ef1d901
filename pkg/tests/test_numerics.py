"""Tests for the numeric substrate: DFTs, seeded randomness, field coercion.

The transform checks run two routes against each other wherever possible:
the FFT-backed functions versus explicit DFT matrices, plus the round-trip
and Parseval identities that any correct convention must satisfy.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lflow.errors import ImaginaryResidueError, NonFiniteError, ShapeMismatchError
from lflow.numerics import (
    as_field,
    dft2_forward,
    dft2_inverse,
    gaussian_vector,
    make_rng,
    require_finite,
)


def test_as_field_coerces_to_float64():
    out = as_field([[1, 2], [3, 4]])
    assert out.dtype == np.float64
    assert out.shape == (2, 2)


def test_as_field_enforces_requested_shape():
    with pytest.raises(ShapeMismatchError):
        as_field(np.zeros((2, 3)), shape=(3, 2))


def test_require_finite_rejects_nan_and_inf():
    with pytest.raises(NonFiniteError):
        require_finite("probe", np.array([0.0, np.nan]))
    with pytest.raises(NonFiniteError):
        require_finite("probe", np.array([np.inf]))


def test_forward_dft_of_constant_field_is_dc_only():
    spec = dft2_forward(np.full((4, 4), 0.75))
    assert spec[0, 0] == pytest.approx(16 * 0.75, abs=1e-12)
    rest = spec.copy()
    rest[0, 0] = 0.0
    assert np.max(np.abs(rest)) < 1e-12


def test_forward_dft_of_origin_delta_is_all_ones():
    field = np.zeros((3, 5))
    field[0, 0] = 1.0
    spec = dft2_forward(field)
    np.testing.assert_allclose(spec, np.ones((3, 5)), atol=1e-12)


def test_inverse_dft_of_all_ones_spectrum_is_origin_delta():
    field = dft2_inverse(np.ones((4, 4), dtype=np.complex128))
    expected = np.zeros((4, 4))
    expected[0, 0] = 1.0
    np.testing.assert_allclose(field, expected, atol=1e-12)


def test_inverse_dft_of_constant_spectrum_dc_gives_constant_field():
    spec = np.zeros((4, 4), dtype=np.complex128)
    spec[0, 0] = 16 * 0.3
    np.testing.assert_allclose(dft2_inverse(spec), np.full((4, 4), 0.3), atol=1e-12)


def test_round_trip_on_random_8x8_field():
    rng = make_rng(0)
    x = rng.normal(size=(8, 8))
    back = dft2_inverse(dft2_forward(x))
    assert np.max(np.abs(back - x)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(
    h=st.integers(min_value=1, max_value=64),
    w=st.integers(min_value=1, max_value=64),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_round_trip_identity_over_random_shapes(h, w, seed):
    x = make_rng(seed).normal(size=(h, w))
    back = dft2_inverse(dft2_forward(x))
    scale = max(1.0, float(np.max(np.abs(x))))
    assert np.max(np.abs(back - x)) < 1e-12 * scale


def test_forward_dft_matches_explicit_matrix():
    # Independent route: the raw double sum via explicit DFT matrices.
    h, w = 5, 7
    x = make_rng(3).normal(size=(h, w))
    fi = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    fj = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    reference = fi @ x @ fj.T
    np.testing.assert_allclose(dft2_forward(x), reference, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(
    h=st.integers(min_value=1, max_value=32),
    w=st.integers(min_value=1, max_value=32),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_parseval_under_the_documented_convention(h, w, seed):
    x = make_rng(seed).normal(size=(h, w))
    lhs = float(np.sum(x * x)) * (h * w)
    rhs = float(np.sum(np.abs(dft2_forward(x)) ** 2))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_forward_dft_rejects_non_finite_input():
    bad = np.zeros((4, 4))
    bad[1, 2] = np.nan
    with pytest.raises(NonFiniteError):
        dft2_forward(bad)


def test_forward_dft_rejects_non_2d_input():
    with pytest.raises(ShapeMismatchError):
        dft2_forward(np.zeros(8))


def test_inverse_dft_flags_non_hermitian_spectrum():
    spec = np.zeros((4, 4), dtype=np.complex128)
    spec[0, 1] = 1j
    with pytest.raises(ImaginaryResidueError):
        dft2_inverse(spec)


def test_inverse_dft_residue_threshold_scales_with_magnitude():
    # A large Hermitian spectrum accumulates rounding residue far above
    # the absolute threshold; the relative scaling must absorb it.
    x = 1e12 * make_rng(5).normal(size=(16, 16))
    back = dft2_inverse(dft2_forward(x))
    assert np.max(np.abs(back - x)) < 1e-3


def test_rng_streams_are_reproducible():
    a = make_rng(42).normal(size=16)
    b = make_rng(42).normal(size=16)
    np.testing.assert_array_equal(a, b)


def test_rng_streams_differ_across_seeds():
    a = make_rng(1).normal(size=16)
    b = make_rng(2).normal(size=16)
    assert np.max(np.abs(a - b)) > 0


def test_gaussian_vector_zero_std_returns_mean_without_drawing():
    rng = make_rng(9)
    out = gaussian_vector(rng, (3, 2), mean=1.5, std=0.0)
    np.testing.assert_array_equal(out, np.full((3, 2), 1.5))
    # The generator state must be untouched by the degenerate call.
    np.testing.assert_array_equal(rng.normal(size=4), make_rng(9).normal(size=4))


def test_gaussian_vector_determinism_per_seed():
    a = gaussian_vector(make_rng(42), (8,))
    b = gaussian_vector(make_rng(42), (8,))
    np.testing.assert_array_equal(a, b)


def test_gaussian_vector_moments_at_scale():
    draws = gaussian_vector(make_rng(7), (100_000,))
    assert abs(float(draws.mean())) < 0.02
    assert abs(float(draws.std()) - 1.0) < 0.02


def test_gaussian_vector_rejects_negative_std():
    with pytest.raises(ValueError):
        gaussian_vector(make_rng(0), (4,), std=-0.1)
