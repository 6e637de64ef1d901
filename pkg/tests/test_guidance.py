"""Tests for the likelihood gradient and the corrected velocity.

The linear-Gaussian setting makes everything here exact, so the tests
lean on explicit dense algebra written out locally: the structured
closed forms, the conjugate-gradient route, and the fused dense fast
path must all land on the same vectors to tight tolerances. The
correction-pass semantics get their own regression: with the matched
covariance, pass two rescales each measurement eigenmode by
sigma_y^2 / (sigma_y^2 + r^2 lambda), a consequence of the identity
t * g(t) * c(t) = r^2(t).
"""

import numpy as np
import pytest

from lflow.decoders import DiagonalScaleDecoder, IdentityDecoder
from lflow.errors import CgConvergenceError
from lflow.fields import (
    AnalyticGaussianField,
    CovarianceMode,
    eval_field,
    posterior_cov_scalar,
    posterior_mean,
)
from lflow.guidance import (
    ClosedFormSolver,
    ConjugateGradientSolver,
    GuidanceSpec,
    conjugate_gradient,
    corrected_velocity,
    inner_vector,
    likelihood_gradient,
    make_velocity,
)
from lflow.numerics import make_rng
from lflow.operators import (
    CircConvOperator,
    ConvDownsampleOperator,
    DenseOperator,
    Kernel,
    MaskOperator,
    build_gaussian_kernel,
    dense_materialize,
)


def dense_inner_vector(op, residual, sigma_y, r2):
    """Reference route: materialize A, solve S u = residual directly."""
    a = dense_materialize(op).matrix
    s_mat = sigma_y**2 * np.eye(a.shape[0]) + r2 * (a @ a.T)
    u = np.linalg.solve(s_mat, np.asarray(residual, dtype=np.float64).ravel())
    return (a.T @ u).reshape(op.input_shape)


def test_conjugate_gradient_matches_direct_solve():
    rng = make_rng(0)
    m = rng.normal(size=(12, 12))
    spd = m @ m.T + 12.0 * np.eye(12)
    rhs = rng.normal(size=12)
    got = conjugate_gradient(lambda v: spd @ v, rhs, tol=1e-14)
    np.testing.assert_allclose(got, np.linalg.solve(spd, rhs), atol=1e-9)


def test_conjugate_gradient_zero_rhs_short_circuits():
    calls = []

    def matvec(v):
        calls.append(1)
        return v

    out = conjugate_gradient(matvec, np.zeros(4))
    np.testing.assert_array_equal(out, np.zeros(4))
    assert calls == []


def test_conjugate_gradient_reports_non_convergence():
    rng = make_rng(1)
    m = rng.normal(size=(20, 20))
    spd = m @ m.T + 1e-8 * np.eye(20)
    with pytest.raises(CgConvergenceError) as info:
        conjugate_gradient(lambda v: spd @ v, rng.normal(size=20), tol=1e-14, max_iter=2)
    assert info.value.iterations == 2
    assert info.value.residual_norm > 0


def test_inner_vector_all_ones_mask_with_unit_noise():
    op = MaskOperator(np.ones((3, 3)))
    residual = make_rng(2).normal(size=9)
    out = inner_vector(op, residual, sigma_y=1.0, r2=0.0)
    np.testing.assert_allclose(out.ravel(), residual, atol=1e-15)


def test_inner_vector_delta_kernel_divides_by_the_scalar_denominator():
    op = CircConvOperator(Kernel(np.array([[1.0]])), (4, 4))
    residual = make_rng(3).normal(size=(4, 4))
    out = inner_vector(op, residual, sigma_y=0.3, r2=0.2)
    np.testing.assert_allclose(out, residual / (0.3**2 + 0.2), atol=1e-12)


def test_inner_vector_closed_form_vs_dense_solve_on_convolution():
    op = CircConvOperator(build_gaussian_kernel(3, 1.0), (16, 16))
    residual = make_rng(4).normal(size=(16, 16))
    closed = inner_vector(op, residual, sigma_y=0.1, r2=0.3)
    reference = dense_inner_vector(op, residual, 0.1, 0.3)
    scale = float(np.max(np.abs(reference)))
    assert np.max(np.abs(closed - reference)) < 1e-8 * scale


@pytest.mark.parametrize("kind", ["mask", "circconv", "convdown"])
def test_inner_vector_three_routes_agree(kind):
    rng = make_rng(5)
    shape = (16, 16)
    if kind == "mask":
        mask = (rng.uniform(size=shape) < 0.5).astype(np.float64)
        mask[0, 0] = 1.0
        op = MaskOperator(mask)
        residual = rng.normal(size=op.output_shape)
    elif kind == "circconv":
        op = CircConvOperator(build_gaussian_kernel(3, 1.0), shape)
        residual = rng.normal(size=shape)
    else:
        op = ConvDownsampleOperator(build_gaussian_kernel(3, 1.0), shape, 2)
        residual = rng.normal(size=op.output_shape)
    for r2 in (0.0, 0.1, 1.0):
        closed = inner_vector(op, residual, 0.1, r2)
        viacg = inner_vector(op, residual, 0.1, r2, solver=ConjugateGradientSolver(tol=1e-13))
        dense = dense_inner_vector(op, residual, 0.1, r2)
        scale = max(1.0, float(np.max(np.abs(dense))))
        assert np.max(np.abs(closed - dense)) < 1e-8 * scale
        assert np.max(np.abs(viacg - dense)) < 1e-8 * scale


def test_inner_vector_noiseless_measurements_still_solve():
    op = CircConvOperator(build_gaussian_kernel(3, 1.0), (8, 8))
    residual = make_rng(6).normal(size=(8, 8))
    closed = inner_vector(op, residual, sigma_y=0.0, r2=0.5)
    reference = dense_inner_vector(op, residual, 0.0, 0.5)
    assert np.max(np.abs(closed - reference)) < 1e-8 * float(np.max(np.abs(reference)))


def test_zero_residual_gives_zero_gradient():
    field = AnalyticGaussianField(sigma_latr=0.8)
    dec = IdentityDecoder((4, 4))
    op = CircConvOperator(build_gaussian_kernel(3, 1.0), (4, 4))
    z = make_rng(7).normal(size=(4, 4))
    t = 0.6
    y = op.apply(posterior_mean(field, z, t))
    spec = GuidanceSpec(sigma_y=0.1, k_steps=1)
    grad = likelihood_gradient(spec, field, dec, op, y, z, t)
    np.testing.assert_allclose(grad, np.zeros((4, 4)), atol=1e-12)


def test_gradient_hand_formula_at_the_midpoint():
    # Identity operator and decoder, unit prior, t = 1/2: the denoised
    # mean is z itself, c = 1, r^2 = 1/2, so the gradient is (y - z)/1.5.
    field = AnalyticGaussianField(sigma_latr=1.0)
    dec = IdentityDecoder((3, 3))
    op = CircConvOperator(Kernel(np.array([[1.0]])), (3, 3))
    rng = make_rng(8)
    z = rng.normal(size=(3, 3))
    y = rng.normal(size=(3, 3))
    spec = GuidanceSpec(sigma_y=1.0, k_steps=1)
    grad = likelihood_gradient(spec, field, dec, op, y, z, 0.5)
    np.testing.assert_allclose(grad, (y - z) / 1.5, atol=1e-12)


@pytest.mark.parametrize("kind", ["lflow", "eq17", "pigdm", "zero"])
def test_gradient_matches_explicit_marginal_gaussian(kind):
    # Independent algebra: grad = c A^T S^{-1} (y - c A z) written out here.
    rng = make_rng(9)
    a = rng.normal(size=(5, 8))
    op = DenseOperator(a)
    sigma = 1.2
    field = AnalyticGaussianField(sigma_latr=sigma)
    dec = IdentityDecoder((8,))
    y = rng.normal(size=5)
    z = rng.normal(size=8)
    mode = CovarianceMode(kind=kind)
    spec = GuidanceSpec(cov_mode=mode, sigma_y=0.2, k_steps=1)
    for t in (0.2, 0.5, 0.8):
        om = 1.0 - t
        c = om * sigma**2 / (om**2 * sigma**2 + t**2)
        r2 = posterior_cov_scalar(mode, t, field)
        s_mat = 0.2**2 * np.eye(5) + r2 * (a @ a.T)
        expected = c * (a.T @ np.linalg.solve(s_mat, y - c * (a @ z)))
        got = likelihood_gradient(spec, field, dec, op, y, z, t)
        assert np.max(np.abs(got - expected)) < 1e-10


def test_gradient_matches_finite_differences_of_the_marginal():
    from lflow.oracle import LinearGaussianModel, marginal_loglik

    rng = make_rng(10)
    a = DenseOperator(rng.normal(size=(5, 8)))
    model = LinearGaussianModel(a, prior_std=1.0, sigma_y=0.15)
    field = AnalyticGaussianField(sigma_latr=1.0)
    mode = CovarianceMode(kind="lflow")
    spec = GuidanceSpec(cov_mode=mode, sigma_y=0.15, k_steps=1)
    y = rng.normal(size=5)
    z = rng.normal(size=8)
    t = 0.45
    grad = likelihood_gradient(spec, field, model.decoder, a, y, z, t)
    eps = 1e-6
    for _ in range(5):
        d = rng.normal(size=8)
        d /= np.linalg.norm(d)
        fd = (
            marginal_loglik(model, y, z + eps * d, t, mode)
            - marginal_loglik(model, y, z - eps * d, t, mode)
        ) / (2 * eps)
        assert abs(fd - float(grad @ d)) < 1e-5 * max(1.0, abs(fd))


def test_corrected_velocity_with_zero_residual_is_unconditional():
    field = AnalyticGaussianField(sigma_latr=1.0)
    dec = IdentityDecoder((2,))
    op = DenseOperator(np.zeros((2, 2)))
    z = np.array([0.4, -1.1])
    spec = GuidanceSpec(sigma_y=0.1, k_steps=3)
    v = corrected_velocity(spec, field, dec, op, np.zeros(2), z, 0.5)
    np.testing.assert_allclose(v, eval_field(field, z, 0.5), atol=1e-14)


def test_single_pass_velocity_matches_the_exact_conditional_field():
    from lflow.oracle import LinearGaussianModel, conditional_score_velocity

    rng = make_rng(11)
    a = DenseOperator(rng.normal(size=(5, 8)))
    model = LinearGaussianModel(a, prior_std=1.0, sigma_y=0.2)
    field = AnalyticGaussianField(sigma_latr=1.0)
    spec = GuidanceSpec(cov_mode=CovarianceMode(kind="lflow"), sigma_y=0.2, k_steps=1)
    y = rng.normal(size=5)
    z = rng.normal(size=8)
    for t in (0.15, 0.5, 0.85):
        got = corrected_velocity(spec, field, model.decoder, a, y, z, t)
        want = conditional_score_velocity(model, y, z, t)
        assert np.max(np.abs(got - want)) < 1e-10


def test_one_vs_two_passes_difference_norm_is_reported():
    rng = make_rng(12)
    a = DenseOperator(rng.normal(size=(3, 4)))
    field = AnalyticGaussianField(sigma_latr=1.0)
    dec = IdentityDecoder((4,))
    y = rng.normal(size=3)
    z = rng.normal(size=4)
    one = GuidanceSpec(sigma_y=0.1, k_steps=1)
    two = GuidanceSpec(sigma_y=0.1, k_steps=2)
    v1 = corrected_velocity(one, field, dec, a, y, z, 0.5)
    v2 = corrected_velocity(two, field, dec, a, y, z, 0.5)
    diff = float(np.linalg.norm(v2 - v1))
    # Recorded, not bounded: the two-pass update genuinely moves.
    print(f"one-vs-two correction passes, velocity difference norm: {diff:.6e}")
    assert np.isfinite(diff)


def test_literal_repeated_update_is_idempotent():
    rng = make_rng(13)
    a = DenseOperator(rng.normal(size=(3, 4)))
    field = AnalyticGaussianField(sigma_latr=0.9)
    dec = IdentityDecoder((4,))
    y = rng.normal(size=3)
    z = rng.normal(size=4)
    base = dict(cov_mode=CovarianceMode(kind="lflow"), sigma_y=0.1)
    v1 = corrected_velocity(GuidanceSpec(k_steps=1, **base), field, dec, a, y, z, 0.6)
    for k in (2, 3, 5):
        spec = GuidanceSpec(k_steps=k, literal_update=True, **base)
        vk = corrected_velocity(spec, field, dec, a, y, z, 0.6)
        np.testing.assert_allclose(vk, v1, atol=1e-14)


def test_second_pass_rescales_measurement_modes_by_the_derived_factor():
    rng = make_rng(14)
    a = rng.normal(size=(5, 8))
    op = DenseOperator(a)
    sigma, sigma_y, t = 0.7, 0.15, 0.6
    field = AnalyticGaussianField(sigma_latr=sigma)
    dec = IdentityDecoder((8,))
    y = rng.normal(size=5)
    z = rng.normal(size=8)
    base = dict(cov_mode=CovarianceMode(kind="lflow"), sigma_y=sigma_y)
    v_uncond = eval_field(field, z, t)
    g = t / (1.0 - t)
    v1 = corrected_velocity(GuidanceSpec(k_steps=1, **base), field, dec, op, y, z, t)
    v2 = corrected_velocity(GuidanceSpec(k_steps=2, **base), field, dec, op, y, z, t)
    grad1 = (v_uncond - v1) / g
    grad2 = (v_uncond - v2) / g

    om = 1.0 - t
    c = om * sigma**2 / (om**2 * sigma**2 + t**2)
    r2 = t**2 * sigma**2 / (om**2 * sigma**2 + t**2)
    # The matched covariance turns t*g*c into r^2 on the nose.
    assert abs(t * g * c - r2) < 1e-14

    lam, q = np.linalg.eigh(a @ a.T)
    multiplier = sigma_y**2 / (sigma_y**2 + r2 * lam)
    lhs = q.T @ (a @ grad2)
    rhs = multiplier * (q.T @ (a @ grad1))
    scale = max(1.0, float(np.max(np.abs(rhs))))
    assert np.max(np.abs(lhs - rhs)) < 1e-11 * scale


def test_corrected_velocity_rejects_times_at_or_beyond_one():
    field = AnalyticGaussianField()
    dec = IdentityDecoder((2,))
    op = DenseOperator(np.eye(2))
    spec = GuidanceSpec()
    with pytest.raises(ValueError):
        corrected_velocity(spec, field, dec, op, np.zeros(2), np.zeros(2), 1.0)


@pytest.mark.parametrize("dec_kind", ["identity", "scale"])
def test_fused_dense_velocity_matches_the_generic_path(dec_kind):
    rng = make_rng(15)
    a = DenseOperator(rng.normal(size=(5, 8)))
    field = AnalyticGaussianField(sigma_latr=0.8)
    dec = IdentityDecoder((8,)) if dec_kind == "identity" else DiagonalScaleDecoder(1.4, (8,))
    y = rng.normal(size=5)
    spec = GuidanceSpec(cov_mode=CovarianceMode(kind="lflow"), sigma_y=0.1, k_steps=2)
    fast = make_velocity(spec, field, dec, a, y)
    z = rng.normal(size=8)
    # The generic reference solves the dense system by conjugate
    # gradients at its default tolerance, so agreement is capped there.
    for t in (0.1, 0.5, 0.9):
        want = corrected_velocity(spec, field, dec, a, y, z, t)
        np.testing.assert_allclose(fast(z, t), want, atol=1e-7, rtol=1e-7)


def test_fused_path_honors_the_literal_update_flag():
    rng = make_rng(16)
    a = DenseOperator(rng.normal(size=(4, 6)))
    field = AnalyticGaussianField(sigma_latr=1.0)
    dec = IdentityDecoder((6,))
    y = rng.normal(size=4)
    spec = GuidanceSpec(sigma_y=0.05, k_steps=2, literal_update=True)
    fast = make_velocity(spec, field, dec, a, y)
    z = rng.normal(size=6)
    want = corrected_velocity(spec, field, dec, a, y, z, 0.7)
    np.testing.assert_allclose(fast(z, 0.7), want, atol=1e-7, rtol=1e-7)


def test_make_velocity_generic_fallback_for_structured_operators():
    op = CircConvOperator(build_gaussian_kernel(3, 1.0), (6, 6))
    field = AnalyticGaussianField(sigma_latr=0.5)
    dec = IdentityDecoder((6, 6))
    y = make_rng(17).normal(size=(6, 6))
    spec = GuidanceSpec(sigma_y=0.1)
    velocity = make_velocity(spec, field, dec, op, y)
    z = make_rng(18).normal(size=(6, 6))
    np.testing.assert_allclose(
        velocity(z, 0.4), corrected_velocity(spec, field, dec, op, y, z, 0.4), atol=1e-14
    )


def test_guidance_spec_validation():
    with pytest.raises(ValueError):
        GuidanceSpec(sigma_y=-0.1)
    with pytest.raises(ValueError):
        GuidanceSpec(k_steps=0)
    with pytest.raises(ValueError):
        ConjugateGradientSolver(max_iter=0)
    with pytest.raises(ValueError):
        ConjugateGradientSolver(tol=0.0)
