"""Deterministic numeric substrate: fields, 2-D DFTs, seeded Gaussians.

Conventions, fixed once for the whole package:

* Real fields are 2-D float64 arrays (height, width), row-major. Measurement
  vectors may be 1-D; everything is 64-bit.
* The DFT is unnormalized forward, 1/N inverse (numpy's default), so
  Parseval reads ||x||^2 * N = ||x_hat||^2 with N = height * width. All
  frequency-domain quotients used elsewhere are scale-free, so this choice
  never leaks into results.
* Randomness comes from numpy's PCG64 via `make_rng`; identical seeds give
  identical streams on every platform.
"""

from __future__ import annotations

import numpy as np

from .errors import ImaginaryResidueError, NonFiniteError, ShapeMismatchError

RealField = np.ndarray
ComplexSpectrum = np.ndarray
SeededRng = np.random.Generator

IMAG_RESIDUE_TOL = 1e-9


def as_field(x, shape: tuple | None = None) -> RealField:
    """Coerce to a float64 array, optionally enforcing a shape."""
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None and arr.shape != tuple(shape):
        raise ShapeMismatchError(f"expected shape {tuple(shape)}, got {arr.shape}")
    return arr


def require_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def dft2_forward(field: RealField) -> ComplexSpectrum:
    """Unnormalized 2-D DFT of a real field.

    Rejects non-finite input: a NaN anywhere poisons the whole spectrum and
    every closed-form guidance solve downstream.
    """
    arr = as_field(field)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatchError(f"expected a 2-D field, got shape {arr.shape}")
    require_finite("dft2_forward input", arr)
    return np.fft.fft2(arr)


def dft2_inverse(spectrum: ComplexSpectrum) -> RealField:
    """Inverse 2-D DFT (1/N normalization), returning the real part.

    The imaginary residue must be negligible: it is discarded below
    IMAG_RESIDUE_TOL (scaled by the field's magnitude so large-amplitude
    fields are not penalized for ordinary rounding), and anything larger
    raises ImaginaryResidueError.
    """
    spec = np.asarray(spectrum, dtype=np.complex128)
    if spec.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D spectrum, got shape {spec.shape}")
    require_finite("dft2_inverse input", spec.view(np.float64))
    out = np.fft.ifft2(spec)
    real = np.ascontiguousarray(out.real)
    scale = max(1.0, float(np.max(np.abs(real))) if real.size else 1.0)
    worst = float(np.max(np.abs(out.imag))) if out.size else 0.0
    if worst > IMAG_RESIDUE_TOL * scale:
        raise ImaginaryResidueError(
            f"imaginary residue {worst:.3e} exceeds {IMAG_RESIDUE_TOL:.0e} "
            f"(scaled by {scale:.3g}); the filter chain is not Hermitian"
        )
    return real


def make_rng(seed: int) -> SeededRng:
    """Seeded generator with a platform-stable stream (PCG64)."""
    return np.random.Generator(np.random.PCG64(seed))


def gaussian_vector(rng: SeededRng, shape, mean: float = 0.0, std: float = 1.0):
    """I.i.d. Gaussian draws.

    std = 0 returns exactly `mean` everywhere without touching the
    generator (no degenerate sampling).
    """
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    if std == 0.0:
        return np.full(shape, float(mean), dtype=np.float64)
    return rng.normal(loc=mean, scale=std, size=shape)
