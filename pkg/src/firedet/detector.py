"""End-to-end detection pipeline: frequency feature -> mask refinement ->
pseudo-generated image -> two reconstruction-error maps -> binary
classifier, plus the training loop and single-image detection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data, losses, metrics, spectrum
from .config import Config
from .fmre import Fmre, freq_feature_from_spectrum
from .reconstructor import AutoEncoder, build_autoencoder, load_images
from .tensorops import (DTYPE, AdamState, Conv2d, GlobalAvgPool, Linear,
                        ReLU, Sequential, ShapeError, adam_step, sigmoid)

CLS_CHANNELS = (32, 64, 128)


class Classifier:
    """Small conv net over the 6-channel concatenated error maps:
    stride-2 3x3 convs 6->32->64->128, global average pool, linear head."""

    def __init__(self, rng: np.random.Generator, prefix: str = "cls"):
        layers = []
        c_in = 6
        for i, c_out in enumerate(CLS_CHANNELS):
            layers += [Conv2d(c_in, c_out, 3, stride=2, pad=1, rng=rng,
                              name=f"{prefix}.conv.{i}"), ReLU()]
            c_in = c_out
        layers += [GlobalAvgPool(), Linear(c_in, 1, rng=rng,
                                           name=f"{prefix}.head")]
        self.net = Sequential(layers)

    def params(self):
        return self.net.params()

    def forward_batch(self, error_maps: np.ndarray, cache: bool = True):
        if error_maps.shape[1] != 6:
            raise ShapeError(f"classifier expects 6 input channels, got "
                             f"{error_maps.shape[1]}")
        return self.net.forward(error_maps, cache=cache)[:, 0]

    def backward(self, grad_logit: np.ndarray) -> np.ndarray:
        return self.net.backward(grad_logit[:, None])


@dataclass
class DetectionResult:
    score: float
    label: str                 # "generated" iff score >= 0.5
    delta_x: np.ndarray        # (3,H,W)
    delta_x_pse: np.ndarray    # (3,H,W)
    m_mid: np.ndarray          # (H,W)
    m_mid_c: np.ndarray        # (H,W)


def preset_masks(size: int, r_lo: float, r_hi: float):
    """Analytic mid-band annulus target and its complement, cached per
    (size, radii)."""
    key = (size, float(r_lo), float(r_hi))
    if key not in _PRESET_CACHE:
        m = spectrum.radial_mask(size, size, r_lo, r_hi)
        _PRESET_CACHE[key] = (m, spectrum.complement_mask(m))
    return _PRESET_CACHE[key]


_PRESET_CACHE: dict = {}


class Detector:
    def __init__(self, fmre: Fmre, ae: AutoEncoder, cls: Classifier,
                 image_size: int):
        self.fmre = fmre
        self.ae = ae
        self.cls = cls
        self.image_size = image_size

    def trainable_params(self):
        params = self.fmre.params() + self.cls.params()
        if self.ae.trainable:
            params = params + self.ae.params()
        return params

    def all_params(self):
        return self.fmre.params() + self.ae.params() + self.cls.params()

    def _check_input(self, x: np.ndarray):
        n, c, h, w = x.shape
        if c != 3 or h != self.image_size or w != self.image_size:
            raise ShapeError(f"expected (N,3,{self.image_size},"
                             f"{self.image_size}) input, got {x.shape}")

    def forward_batch(self, x: np.ndarray, want_mid: bool = False) -> dict:
        """Inference pass (no gradient caches) over (N,3,S,S) in [0,1]."""
        self._check_input(x)
        spec_c = spectrum.centered_spectrum_batch(x)
        feat = freq_feature_from_spectrum(spec_c)
        m4, mc4 = self.fmre.forward_batch(feat, cache=False)
        m, mc = m4[:, 0], mc4[:, 0]
        x_pse = spectrum.apply_centered_mask(spec_c, mc)
        x_rec = self.ae.reconstruct_batch(x, cache=False)
        x_pse_rec = self.ae.reconstruct_batch(x_pse, cache=False)
        delta_x = np.abs(x_rec - x)
        delta_pse = np.abs(x_pse_rec - x_pse)
        logit = self.cls.forward_batch(
            np.concatenate([delta_x, delta_pse], axis=1), cache=False)
        out = {"score": sigmoid(logit), "logit": logit, "m_mid": m,
               "m_mid_c": mc, "delta_x": delta_x, "delta_x_pse": delta_pse,
               "x_pse": x_pse}
        if want_mid:
            out["x_mid"] = spectrum.apply_centered_mask(spec_c, m)
        return out

    def forward(self, image: np.ndarray) -> DetectionResult:
        out = self.forward_batch(image[None])
        score = float(out["score"][0])
        return DetectionResult(
            score=score,
            label="generated" if score >= 0.5 else "real",
            delta_x=out["delta_x"][0], delta_x_pse=out["delta_x_pse"][0],
            m_mid=out["m_mid"][0], m_mid_c=out["m_mid_c"][0])

    def score_images(self, images: np.ndarray, batch_size: int = 16):
        scores = []
        for i in range(0, len(images), batch_size):
            scores.append(self.forward_batch(images[i:i + batch_size])["score"])
        return np.concatenate(scores) if scores else np.zeros(0, dtype=DTYPE)

    # ------------------------------------------------------------------
    # Training
    # ------------------------------------------------------------------

    def train_step(self, x: np.ndarray, y: np.ndarray, target_mid: np.ndarray,
                   target_mid_c: np.ndarray, weights: losses.LossWeights,
                   state: AdamState) -> dict:
        """One optimizer step on a batch; returns the loss components."""
        self._check_input(x)
        n, _, s, _ = x.shape

        spec_c = spectrum.centered_spectrum_batch(x)
        feat = freq_feature_from_spectrum(spec_c)
        m4, mc4 = self.fmre.forward_batch(feat, cache=True)
        m, mc = m4[:, 0], mc4[:, 0]
        x_mid = spectrum.apply_centered_mask(spec_c, m)
        x_pse = spectrum.apply_centered_mask(spec_c, mc)

        if self.ae.trainable:
            joint = self.ae.reconstruct_batch(np.concatenate([x, x_pse]),
                                              cache=True)
            x_rec, x_pse_rec = joint[:n], joint[n:]
        else:
            x_rec = self.ae.reconstruct_batch(x, cache=False)
            x_pse_rec = self.ae.reconstruct_batch(x_pse, cache=True)

        delta_x = np.abs(x_rec - x)
        delta_pse = np.abs(x_pse_rec - x_pse)
        cls_in = np.concatenate([delta_x, delta_pse], axis=1)
        logit = self.cls.forward_batch(cls_in, cache=True)
        score = sigmoid(logit)

        l_ce = losses.loss_ce(y, score)
        l_mid = losses.loss_mid_rec(x_mid, delta_x)
        l_mask = losses.loss_mask(m, mc, np.broadcast_to(target_mid, m.shape),
                                  np.broadcast_to(target_mid_c, mc.shape))
        total = losses.total_loss(l_mid, l_mask, l_ce, weights)

        # --- backward ---
        g_logit = (weights.lambda2 * (score - y) / n).astype(DTYPE)
        g_cls_in = self.cls.backward(g_logit)
        g_dx_cls, g_dpse = g_cls_in[:, :3], g_cls_in[:, 3:]

        sgn_pse = np.sign(x_pse_rec - x_pse)
        g_x_pse = -g_dpse * sgn_pse
        if self.ae.trainable:
            numel_mid = x_mid.size
            g_delta_x = g_dx_cls + (weights.lambda0 * 2.0 / numel_mid) * (
                delta_x - x_mid)
            g_x_rec = g_delta_x * np.sign(x_rec - x)
            g_joint = self.ae.backward_batch(
                np.concatenate([g_x_rec, g_dpse * sgn_pse]))
            g_x_pse = g_x_pse + g_joint[n:]
        else:
            g_x_pse = g_x_pse + self.ae.backward_batch(g_dpse * sgn_pse)

        g_x_mid = ((weights.lambda0 * 2.0 / x_mid.size)
                   * (x_mid - delta_x)).astype(DTYPE)
        g_m = spectrum.band_filter_mask_grad(g_x_mid, spec_c)
        g_mc = spectrum.band_filter_mask_grad(g_x_pse.astype(DTYPE), spec_c)

        numel_m = m.size
        gap = 1.0 - m - mc
        g_m += (weights.lambda1 * 2.0 / numel_m) * (m - target_mid - gap)
        g_mc += (weights.lambda1 * 2.0 / numel_m) * (mc - target_mid_c - gap)
        self.fmre.backward(g_m[:, None].astype(DTYPE),
                           g_mc[:, None].astype(DTYPE))

        adam_step(self.trainable_params(), state)
        if not self.ae.trainable:
            for p in self.ae.params():
                p.zero_grad()
        return {"l_mid_rec": l_mid, "l_mask": l_mask, "l_ce": l_ce,
                "total": total}


def build_detector(config: Config, ae: AutoEncoder | None = None) -> Detector:
    seed = config.seed
    fmre = Fmre(config.image_size,
                np.random.default_rng(np.random.SeedSequence([seed, 0xF3])))
    cls = Classifier(np.random.default_rng(np.random.SeedSequence([seed, 0xC7])))
    if ae is None:
        ae = build_autoencoder(seed)
    ae.trainable = not config.ae_frozen
    return Detector(fmre, ae, cls, config.image_size)


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

def save_detector(path, det: Detector, config: Config,
                  meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta["kind"] = "detector"
    ckpt.save_checkpoint(path, ckpt.params_to_tensors(det.all_params()),
                         config=config.to_dict(), meta=meta)


def load_detector(path):
    """Returns (detector, config, meta)."""
    header, tensors = ckpt.load_checkpoint(path)
    meta = header.get("meta", {})
    if meta.get("kind") != "detector":
        raise ckpt.CheckpointError(
            f"{path}: expected a detector checkpoint, got kind "
            f"{meta.get('kind')!r}")
    config = Config.from_dict(header["config"])
    det = build_detector(config)
    ckpt.tensors_into_params(tensors, det.all_params(), what=str(path))
    return det, config, meta


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _epoch_metrics(det: Detector, images: np.ndarray, labels: np.ndarray,
                   batch_size: int) -> dict:
    scores, gaps = [], []
    for i in range(0, len(images), batch_size):
        out = det.forward_batch(images[i:i + batch_size])
        scores.append(out["score"])
        gaps.append(np.abs(1.0 - out["m_mid"] - out["m_mid_c"]).mean())
    scores = np.concatenate(scores)
    return {
        "val_auc": metrics.auc(scores, labels),
        "val_acc": metrics.acc(scores, labels),
        "mask_gap": float(np.mean(gaps)),
    }


def train(entries, config: Config, ae: AutoEncoder,
          log_path=None, ckpt_path=None, epoch_log_path=None,
          progress=None):
    """Optimize FMRE + classifier (and the AE too when unfrozen) under the
    combined objective. Writes a per-step CSV log, per-epoch metrics, and a
    checkpoint after every epoch. Returns (detector, history).
    """
    config.validate()
    train_entries = data.split_entries(entries, "train")
    label_set = {e.label for e in train_entries}
    if len(label_set) < 2:
        raise ValueError(f"train split must contain both classes, found "
                         f"{sorted(label_set) or 'none'}")
    val_entries = data.split_entries(entries, "val")

    size = config.image_size
    train_images = load_images(train_entries, size)
    train_labels = np.array([1.0 if e.label == "generated" else 0.0
                             for e in train_entries], dtype=DTYPE)
    val_images = load_images(val_entries, size) if val_entries else None
    val_labels = (np.array([1.0 if e.label == "generated" else 0.0
                            for e in val_entries], dtype=DTYPE)
                  if val_entries else None)

    det = build_detector(config, ae=ae)
    weights = losses.LossWeights(config.lambda0, config.lambda1, config.lambda2)
    r_lo, r_hi = config.radii()
    target_mid, target_mid_c = preset_masks(size, r_lo, r_hi)
    state = AdamState.for_params(det.trainable_params(), lr=config.lr)
    order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5F]))

    history = {"steps": [], "epochs": []}
    log_fh = open(log_path, "w", newline="") if log_path else None
    log_csv = None
    if log_fh:
        log_csv = csv.writer(log_fh)
        log_csv.writerow(["step", "l_mid_rec", "l_mask", "l_ce", "total"])

    def record_epoch(epoch: int, train_loss: float):
        row = {"epoch": epoch, "train_loss": train_loss}
        if val_images is not None:
            row.update(_epoch_metrics(det, val_images, val_labels,
                                      config.batch_size))
        history["epochs"].append(row)
        if progress:
            progress(row)

    try:
        record_epoch(0, float("nan"))
        step = 0
        for epoch in range(1, config.epochs + 1):
            order = order_rng.permutation(len(train_images))
            epoch_total, epoch_batches = 0.0, 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                batch = np.stack([
                    data.augment(train_images[i], config.augment,
                                 data.rng_for(config.seed, epoch, int(i)))
                    for i in idx])
                y = train_labels[idx]
                try:
                    comps = det.train_step(batch, y, target_mid, target_mid_c,
                                           weights, state)
                except FloatingPointError as exc:
                    raise FloatingPointError(
                        f"{exc}; epoch {epoch}, batch indices {idx.tolist()}")
                if not np.isfinite(comps["total"]):
                    raise FloatingPointError(
                        f"non-finite training loss at epoch {epoch}, batch "
                        f"indices {idx.tolist()}: {comps}")
                step += 1
                history["steps"].append({"step": step, **comps})
                if log_csv:
                    log_csv.writerow([step,
                                      f"{comps['l_mid_rec']:.8f}",
                                      f"{comps['l_mask']:.8f}",
                                      f"{comps['l_ce']:.8f}",
                                      f"{comps['total']:.8f}"])
                epoch_total += comps["total"]
                epoch_batches += 1
            record_epoch(epoch, epoch_total / max(epoch_batches, 1))
            if ckpt_path:
                save_detector(ckpt_path, det, config,
                              meta={"epoch": epoch, "steps": step})
    finally:
        if log_fh:
            log_fh.close()
    if epoch_log_path:
        with open(epoch_log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_auc", "val_acc",
                             "mask_gap"])
            for row in history["epochs"]:
                writer.writerow([row["epoch"], f"{row['train_loss']:.8f}",
                                 f"{row.get('val_auc', '')}",
                                 f"{row.get('val_acc', '')}",
                                 f"{row.get('mask_gap', '')}"])
    return det, history


def detect(image_path, det: Detector, config: Config) -> DetectionResult:
    """Load, resize per the data pipeline, and run the forward pass."""
    image = data.load_image(image_path)
    image = data.resize_short_side(image, config.image_size)
    return det.forward(image)
