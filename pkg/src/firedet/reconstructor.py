"""Surrogate convolutional autoencoder used for the reconstruction step:
three stride-2 encoder convs (8x spatial downsampling) into a 4-channel
latent, a pixel-shuffle decoder back to image space, absolute-error maps,
and MSE pretraining on real images.
"""

from __future__ import annotations

import numpy as np

from . import data
from .tensorops import (DTYPE, AdamState, Clamp01, Conv2d, Param,
                        PixelShuffle, ReLU, Sequential, ShapeError,
                        adam_step, ensure_finite)

LATENT_CHANNELS = 4
DOWNSAMPLE = 8


class AutoEncoder:
    """Encoder: 3->32->64->128 stride-2 convs plus a stride-1 projection to
    4 latent channels. Decoder: stride-1 convs with three PixelShuffle(2)
    upsamplings back to 3 channels, output clamped to [0,1]."""

    def __init__(self, rng: np.random.Generator, prefix: str = "ae",
                 trainable: bool = True):
        self.trainable = trainable
        self.encoder = Sequential([
            Conv2d(3, 32, 3, stride=2, pad=1, rng=rng, name=f"{prefix}.encoder.0"),
            ReLU(),
            Conv2d(32, 64, 3, stride=2, pad=1, rng=rng, name=f"{prefix}.encoder.1"),
            ReLU(),
            Conv2d(64, 128, 3, stride=2, pad=1, rng=rng, name=f"{prefix}.encoder.2"),
            ReLU(),
            Conv2d(128, LATENT_CHANNELS, 3, stride=1, pad=1, rng=rng,
                   name=f"{prefix}.encoder.3"),
        ])
        self.decoder = Sequential([
            Conv2d(LATENT_CHANNELS, 128, 3, stride=1, pad=1, rng=rng,
                   name=f"{prefix}.decoder.0"),
            ReLU(),
            Conv2d(128, 128, 3, stride=1, pad=1, rng=rng, name=f"{prefix}.decoder.1"),
            PixelShuffle(2),
            ReLU(),
            Conv2d(32, 64, 3, stride=1, pad=1, rng=rng, name=f"{prefix}.decoder.2"),
            PixelShuffle(2),
            ReLU(),
            Conv2d(16, 32, 3, stride=1, pad=1, rng=rng, name=f"{prefix}.decoder.3"),
            PixelShuffle(2),
            ReLU(),
            Conv2d(8, 3, 3, stride=1, pad=1, rng=rng, name=f"{prefix}.decoder.4"),
            Clamp01(),
        ])

    def params(self) -> list[Param]:
        return self.encoder.params() + self.decoder.params()

    def encode_batch(self, images: np.ndarray, cache: bool = True) -> np.ndarray:
        n, c, h, w = images.shape
        if h % DOWNSAMPLE or w % DOWNSAMPLE:
            raise ShapeError(f"image dims {h}x{w} not divisible by {DOWNSAMPLE}")
        return self.encoder.forward(images, cache=cache)

    def decode_batch(self, latents: np.ndarray, cache: bool = True) -> np.ndarray:
        return self.decoder.forward(latents, cache=cache)

    def reconstruct_batch(self, images: np.ndarray, cache: bool = True) -> np.ndarray:
        return self.decode_batch(self.encode_batch(images, cache=cache), cache=cache)

    def backward_batch(self, grad_out: np.ndarray) -> np.ndarray:
        """Backprop a gradient on the reconstruction to a gradient on the
        input; parameter grads accumulate regardless of the trainable flag
        (the optimizer simply never sees frozen params)."""
        return self.encoder.backward(self.decoder.backward(grad_out))


def build_autoencoder(seed: int = 0, trainable: bool = True) -> AutoEncoder:
    return AutoEncoder(np.random.default_rng(np.random.SeedSequence([seed, 0xAE])),
                       trainable=trainable)


def ae_encode(ae: AutoEncoder, image: np.ndarray) -> np.ndarray:
    """(3,H,W) -> (4,H/8,W/8) latent."""
    return ae.encode_batch(image[None], cache=False)[0]


def ae_decode(ae: AutoEncoder, latent: np.ndarray) -> np.ndarray:
    """(4,h,w) latent -> (3,8h,8w) image in [0,1]."""
    return ae.decode_batch(latent[None], cache=False)[0]


def reconstruct(ae: AutoEncoder, image: np.ndarray) -> np.ndarray:
    """decode(encode(x)); deterministic."""
    return ae.reconstruct_batch(image[None], cache=False)[0]


def recon_error(x: np.ndarray, x_rec: np.ndarray) -> np.ndarray:
    """Per-pixel, per-channel absolute reconstruction residual |x_rec - x|."""
    if x.shape != x_rec.shape:
        raise ShapeError(f"shapes differ: {x.shape} vs {x_rec.shape}")
    return np.abs(x_rec - x)


def load_images(entries, image_size: int) -> np.ndarray:
    """Load and square-resize manifest entries into one (N,3,S,S) array."""
    return np.stack([data.resize_short_side(data.load_image(e.path), image_size)
                     for e in entries])


def mean_reconstruction_mse(ae: AutoEncoder, images: np.ndarray,
                            batch_size: int = 16) -> float:
    total, count = 0.0, 0
    for i in range(0, len(images), batch_size):
        batch = images[i:i + batch_size]
        rec = ae.reconstruct_batch(batch, cache=False)
        total += float(np.sum((rec.astype(np.float64) - batch) ** 2))
        count += batch.size
    return total / max(count, 1)


def pretrain_ae(manifest_entries, image_size: int, epochs: int = 10,
                lr: float = 1e-4, kl_weight: float = 0.0,
                batch_size: int = 16, seed: int = 0,
                log=None):
    """Train a fresh autoencoder on real-labeled images by mean-squared
    reconstruction error, with an optional latent magnitude penalty
    (0.5 * kl_weight * mean(z^2), the unit-variance KL surrogate).

    Returns (ae, history) where history has per-epoch train MSE and, when a
    val split exists, held-out MSE.
    """
    entries = list(manifest_entries)
    if not entries:
        raise ValueError("empty manifest")
    bad = [e.path for e in entries if e.label != "real"]
    if bad:
        raise ValueError(f"pretraining manifest must contain only real-labeled "
                         f"images; found {len(bad)} others (first: {bad[0]})")
    train_entries = data.split_entries(entries, "train") or entries
    val_entries = data.split_entries(entries, "val")

    train_images = load_images(train_entries, image_size)
    val_images = load_images(val_entries, image_size) if val_entries else None

    ae = build_autoencoder(seed)
    params = ae.params()
    state = AdamState.for_params(params, lr=lr)
    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0D]))

    history = {"train_mse": [], "val_mse": []}
    for epoch in range(epochs):
        order = order_rng.permutation(len(train_images))
        epoch_sq, epoch_n = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            x = train_images[idx]
            z = ae.encode_batch(x, cache=True)
            y = ae.decode_batch(z, cache=True)
            diff = y - x
            mse = float(np.mean(diff.astype(np.float64) ** 2))
            loss = mse
            grad_y = (2.0 / diff.size) * diff
            grad_z = ae.decoder.backward(grad_y)
            if kl_weight > 0.0:
                loss += 0.5 * kl_weight * float(np.mean(z.astype(np.float64) ** 2))
                grad_z = grad_z + (kl_weight / z.size) * z
            ae.encoder.backward(grad_z)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite pretraining loss at epoch {epoch} on batch "
                    f"indices {idx.tolist()}")
            adam_step(params, state)
            epoch_sq += mse * diff.size
            epoch_n += diff.size
        history["train_mse"].append(epoch_sq / max(epoch_n, 1))
        if val_images is not None:
            history["val_mse"].append(mean_reconstruction_mse(ae, val_images,
                                                              batch_size))
        if log is not None:
            val_part = (f" val_mse={history['val_mse'][-1]:.6f}"
                        if val_images is not None else "")
            log(f"epoch {epoch + 1}/{epochs} train_mse="
                f"{history['train_mse'][-1]:.6f}{val_part}")
    for p in params:
        ensure_finite(p.value, f"pretrained param {p.name}")
    return ae, history
