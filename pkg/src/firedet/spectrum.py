"""2D discrete Fourier analysis: transforms, centered shift, radial band
masks, and band-pass filtering of multi-channel images.

Conventions: forward transform is numpy's unnormalized DFT, inverse carries
the 1/(H*W) factor. "Centered" means the DC bin sits at (H//2, W//2).
Masks are real (H,W) grids in [0,1], shared across channels, and are
conjugate-symmetrized before application so filtered images stay real.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorops import DTYPE, ShapeError


class SpectralError(ValueError):
    """Inverse transform produced a non-negligible imaginary part."""


@dataclass
class Spectrum:
    """Per-channel complex frequency grids plus a centering flag."""

    values: np.ndarray  # complex, (C, H, W)
    centered: bool = False

    @property
    def shape(self):
        return self.values.shape


def dft2(image: np.ndarray) -> Spectrum:
    """Forward 2D DFT per channel; returns an uncentered spectrum."""
    if image.ndim != 3:
        raise ShapeError(f"expected (C,H,W) image, got shape {image.shape}")
    c, h, w = image.shape
    if h < 2 or w < 2:
        raise ShapeError(f"spatial dims must be >= 2, got {h}x{w}")
    return Spectrum(np.fft.fft2(image.astype(DTYPE, copy=False)), centered=False)


def idft2(spec: Spectrum, tol: float = 1e-2, return_residual: bool = False):
    """Inverse 2D DFT, returning the real part.

    Raises SpectralError when the residual imaginary magnitude exceeds
    `tol`, which signals a non-conjugate-symmetric spectrum where symmetry
    was expected.
    """
    if spec.centered:
        raise ShapeError("idft2 expects an uncentered spectrum")
    full = np.fft.ifft2(spec.values)
    residual = float(np.abs(full.imag).max()) if full.size else 0.0
    if residual > tol:
        raise SpectralError(
            f"residual imaginary magnitude {residual:.3g} exceeds {tol:.3g}")
    image = np.ascontiguousarray(full.real.astype(DTYPE, copy=False))
    if return_residual:
        return image, residual
    return image


def center_shift(spec: Spectrum) -> Spectrum:
    """Relocate the DC bin (0,0) -> (H//2, W//2)."""
    return Spectrum(np.fft.fftshift(spec.values, axes=(-2, -1)),
                    centered=not spec.centered)


def center_unshift(spec: Spectrum) -> Spectrum:
    """Inverse of center_shift."""
    return Spectrum(np.fft.ifftshift(spec.values, axes=(-2, -1)),
                    centered=not spec.centered)


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------

def radial_mask(h: int, w: int, r_lo: float, r_hi: float) -> np.ndarray:
    """Binary annulus: 1 where the Euclidean distance from (h//2, w//2)
    lies in [r_lo, r_hi] inclusive, else 0."""
    if not (0 <= r_lo <= r_hi):
        raise ValueError(f"need 0 <= r_lo <= r_hi, got [{r_lo}, {r_hi}]")
    du = np.arange(h, dtype=np.float64) - h // 2
    dv = np.arange(w, dtype=np.float64) - w // 2
    d = np.sqrt(du[:, None] ** 2 + dv[None, :] ** 2)
    return ((d >= r_lo) & (d <= r_hi)).astype(DTYPE)


def complement_mask(mask: np.ndarray) -> np.ndarray:
    """Pointwise 1 - mask."""
    return (1.0 - mask).astype(mask.dtype, copy=False)


def validate_mask(mask: np.ndarray) -> np.ndarray:
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2D, got shape {mask.shape}")
    if not np.all(np.isfinite(mask)):
        raise ValueError("mask contains non-finite values")
    if mask.min() < 0.0 or mask.max() > 1.0:
        raise ValueError("mask values must lie in [0, 1]")
    return mask


def _conjugate_partner(grid: np.ndarray) -> np.ndarray:
    """Value at each bin's conjugate-partner bin, in uncentered coordinates:
    partner(u, v) = (-u mod H, -v mod W)."""
    return np.roll(grid[..., ::-1, ::-1], (1, 1), axis=(-2, -1))


def symmetrize_mask(mask: np.ndarray) -> np.ndarray:
    """Average each centered-mask bin with its conjugate partner.

    Fixed point for radially symmetric masks; idempotent in general.
    Guarantees band_filter outputs are real.
    """
    unc = np.fft.ifftshift(mask, axes=(-2, -1))
    sym = 0.5 * (unc + _conjugate_partner(unc))
    return np.fft.fftshift(sym, axes=(-2, -1)).astype(mask.dtype, copy=False)


# ---------------------------------------------------------------------------
# Band-pass filtering
# ---------------------------------------------------------------------------

def centered_spectrum_batch(images: np.ndarray) -> np.ndarray:
    """fft2 of (N,C,H,W) images with the DC bin shifted to the center."""
    return np.fft.fftshift(np.fft.fft2(images), axes=(-2, -1))


def apply_centered_mask(spec_c: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Multiply centered (N,C,H,W) spectra by symmetrized per-image (N,H,W)
    masks (shared across channels) and inverse-transform to real images."""
    n, c, h, w = spec_c.shape
    if masks.shape != (n, h, w):
        raise ShapeError(f"masks shape {masks.shape} does not match spectra "
                         f"{spec_c.shape}")
    msym = symmetrize_mask(masks)
    filtered = np.fft.ifft2(
        np.fft.ifftshift(spec_c * msym[:, None], axes=(-2, -1)))
    return np.ascontiguousarray(filtered.real.astype(DTYPE, copy=False))


def band_filter_batch(images: np.ndarray, masks: np.ndarray,
                      want_cache: bool = False):
    """Filter (N,C,H,W) images by per-image centered (N,H,W) masks.

    Computes ifft(unshift(shift(fft(x)) * symmetrize(mask))).real with the
    mask shared across channels. With want_cache=True also returns the
    centered spectra needed by band_filter_mask_grad.
    """
    n, c, h, w = images.shape
    if masks.shape != (n, h, w):
        raise ShapeError(f"masks shape {masks.shape} does not match images "
                         f"{images.shape}")
    spec_c = centered_spectrum_batch(images)
    out = apply_centered_mask(spec_c, masks)
    if want_cache:
        return out, spec_c
    return out


def band_filter_mask_grad(grad_out: np.ndarray,
                          spec_c: np.ndarray) -> np.ndarray:
    """Gradient of band_filter_batch w.r.t. the (pre-symmetrization) masks.

    grad_out: (N,C,H,W) upstream gradient on the filtered images.
    spec_c:   (N,C,H,W) centered input spectra cached from the forward pass.
    Returns (N,H,W). The adjoint of the permutation pair shift/unshift is
    the opposite shift, and the adjoint of symmetrization is symmetrization
    itself (real grids).
    """
    h, w = grad_out.shape[-2:]
    grad_spec = np.fft.fftshift(np.fft.fft2(grad_out), axes=(-2, -1)) / (h * w)
    grad_msym = (grad_spec * np.conj(spec_c)).real.sum(axis=1)
    return symmetrize_mask(grad_msym.astype(DTYPE, copy=False))


def band_filter(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Single-image band filter: (C,H,W) image, (H,W) centered mask."""
    if image.ndim != 3:
        raise ShapeError(f"expected (C,H,W) image, got shape {image.shape}")
    if mask.shape != image.shape[-2:]:
        raise ShapeError(f"mask shape {mask.shape} does not match image "
                         f"spatial dims {image.shape[-2:]}")
    return band_filter_batch(image[None], mask[None])[0]
