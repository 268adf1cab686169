"""Frequency mask refinement: a shared convolutional encoder over the
log-magnitude spectrum feeding two independent decoders that emit a
mid-band mask and its complement, plus the band extraction helpers that
build the mid-band image and the pseudo-generated image.
"""

from __future__ import annotations

import numpy as np

from . import spectrum
from .tensorops import (DTYPE, Conv2d, PixelShuffle, ReLU, Sequential,
                        ShapeError, Sigmoid)

ENCODER_CHANNELS = (16, 32, 64, 128)
# four stride-2 layers contract H x W by 16x; one PixelShuffle(16) undoes it
UPSCALE = 16


def freq_feature_batch(images: np.ndarray) -> np.ndarray:
    """(N,3,H,W) -> per-channel log(1 + |centered spectrum|)."""
    spec = spectrum.centered_spectrum_batch(images)
    return np.log1p(np.abs(spec)).astype(DTYPE)


def freq_feature_from_spectrum(spec_c: np.ndarray) -> np.ndarray:
    """Log-magnitude feature from an already-computed centered spectrum."""
    return np.log1p(np.abs(spec_c)).astype(DTYPE)


def freq_feature(image: np.ndarray) -> np.ndarray:
    """Centered log-magnitude spectrum of a (3,H,W) image."""
    if image.ndim != 3:
        raise ShapeError(f"expected (C,H,W) image, got {image.shape}")
    return freq_feature_batch(image[None])[0]


class Fmre:
    """Four stride-2 encoder convs (3x3, pad 1) shrink HxW to H/16 x W/16;
    each decoder is one stride-1 conv to r^2 channels with r = H/16, a
    PixelShuffle(r) back to full resolution, and a sigmoid. Both decoders
    read the same encoder output."""

    def __init__(self, image_size: int, rng: np.random.Generator,
                 prefix: str = "fmre"):
        if image_size % 16 != 0:
            raise ShapeError(f"image size {image_size} not divisible by 16")
        self.image_size = image_size
        r = image_size // 16
        chans = ENCODER_CHANNELS
        enc_layers = []
        c_in = 3
        for i, c_out in enumerate(chans):
            enc_layers += [Conv2d(c_in, c_out, 3, stride=2, pad=1, rng=rng,
                                  name=f"{prefix}.encoder.{i}"), ReLU()]
            c_in = c_out
        self.encoder = Sequential(enc_layers)
        self.decoder_mid = self._make_decoder(chans[-1], r, rng,
                                              f"{prefix}.decoder_mid")
        self.decoder_mid_c = self._make_decoder(chans[-1], r, rng,
                                                f"{prefix}.decoder_mid_c")
        self._enc_out = None

    @staticmethod
    def _make_decoder(c_in, r, rng, name):
        return Sequential([
            Conv2d(c_in, r * r, 3, stride=1, pad=1, rng=rng, name=name),
            PixelShuffle(r),
            Sigmoid(),
        ])

    def params(self):
        return (self.encoder.params() + self.decoder_mid.params()
                + self.decoder_mid_c.params())

    def forward_batch(self, feature: np.ndarray, cache: bool = True):
        """(N,3,H,W) feature -> two (N,1,H,W) masks in (0,1)."""
        n, c, h, w = feature.shape
        if h % 16 != 0 or w % 16 != 0:
            raise ShapeError(f"feature dims {h}x{w} not divisible by 16")
        enc = self.encoder.forward(feature, cache=cache)
        m_mid = self.decoder_mid.forward(enc, cache=cache)
        m_mid_c = self.decoder_mid_c.forward(enc, cache=cache)
        return m_mid, m_mid_c

    def backward(self, grad_mid: np.ndarray, grad_mid_c: np.ndarray) -> None:
        g_enc = self.decoder_mid.backward(grad_mid)
        g_enc = g_enc + self.decoder_mid_c.backward(grad_mid_c)
        self.encoder.backward(g_enc)


def fmre_forward(feature: np.ndarray, model: Fmre):
    """Single-image forward: returns (m_mid, m_mid_c) as (H,W) masks."""
    m, mc = model.forward_batch(feature[None], cache=False)
    return m[0, 0], mc[0, 0]


def extract_mid(image: np.ndarray, m_mid: np.ndarray) -> np.ndarray:
    """Keep only the masked band: inverse-transform of spectrum * m_mid."""
    return spectrum.band_filter(image, m_mid)


def build_pseudo(image: np.ndarray, m_mid_c: np.ndarray) -> np.ndarray:
    """Pseudo-generated image: the input with the mid-band content removed
    via the complementary mask."""
    return spectrum.band_filter(image, m_mid_c)
