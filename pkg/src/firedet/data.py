"""Dataset manifests, image I/O, train-time augmentation, resizing, and the
robustness-sweep perturbation operators.

Images are (3,H,W) float32 tensors in [0,1] everywhere. Manifests are JSON
Lines files, one {"path","label","split"} object per line.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .tensorops import DTYPE, ShapeError

LABELS = ("real", "generated")
SPLITS = ("train", "val", "test")


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    path: str
    label: str
    split: str


def write_manifest(entries: list[ManifestEntry], path) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps({"path": e.path, "label": e.label,
                                 "split": e.split}) + "\n")


def load_manifest(path, check_paths: bool = True) -> list[ManifestEntry]:
    """Parse and validate a JSONL manifest.

    Checks labels/splits are valid, referenced files exist, and no path is
    duplicated across splits.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    entries = []
    seen: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}")
            for key in ("path", "label", "split"):
                if key not in obj:
                    raise ManifestError(f"{path}:{lineno}: missing field {key!r}")
            if obj["label"] not in LABELS:
                raise ManifestError(f"{path}:{lineno}: bad label {obj['label']!r}")
            if obj["split"] not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: bad split {obj['split']!r}")
            prev = seen.get(obj["path"])
            if prev is not None and prev != obj["split"]:
                raise ManifestError(
                    f"{path}:{lineno}: {obj['path']} appears in both "
                    f"{prev!r} and {obj['split']!r} splits")
            seen[obj["path"]] = obj["split"]
            if check_paths and not Path(obj["path"]).exists():
                raise ManifestError(f"{path}:{lineno}: file not found: "
                                    f"{obj['path']}")
            entries.append(ManifestEntry(obj["path"], obj["label"], obj["split"]))
    if not entries:
        raise ManifestError(f"manifest is empty: {path}")
    return entries


def split_entries(entries, split: str):
    return [e for e in entries if e.split == split]


# ---------------------------------------------------------------------------
# Image I/O
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Decode a PNG/JPEG file to a (3,H,W) float32 tensor in [0,1].

    Grayscale inputs are replicated to 3 channels.
    """
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            arr = np.asarray(img, dtype=DTYPE) / 255.0
    except (OSError, ValueError) as exc:
        raise IOError(f"cannot read image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(image: np.ndarray, path, quality: int | None = None) -> None:
    """Write a (3,H,W) or (1,H,W)/(H,W) tensor in [0,1] as PNG or JPEG.

    Pixel values are round(255 * v), matching the documented dump contract.
    """
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    data = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    img = Image.fromarray(data.transpose(1, 2, 0))
    if quality is not None:
        img.save(path, quality=quality)
    else:
        img.save(path)


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Encode/decode through a real in-memory JPEG codec at `quality`."""
    if not 1 <= quality <= 100:
        raise ValueError(f"jpeg quality must be in [1,100], got {quality}")
    data = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data.transpose(1, 2, 0)).save(buf, format="JPEG",
                                                  quality=int(quality))
    buf.seek(0)
    arr = np.asarray(Image.open(buf).convert("RGB"), dtype=DTYPE) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# Geometry: bilinear sampling, resize, rotate
# ---------------------------------------------------------------------------

def _bilinear_gather(image: np.ndarray, ys: np.ndarray, xs: np.ndarray):
    """Sample (C,H,W) at fractional (ys, xs) grids with edge clamping."""
    c, h, w = image.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(DTYPE)
    wx = (xs - x0).astype(DTYPE)
    top = image[:, y0, x0] * (1 - wx) + image[:, y0, x1] * wx
    bot = image[:, y1, x0] * (1 - wx) + image[:, y1, x1] * wx
    return top * (1 - wy) + bot * wy


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resize of a (C,H,W) tensor."""
    c, h, w = image.shape
    if (out_h, out_w) == (h, w):
        return image.copy()
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    grid_y = np.repeat(ys[:, None], out_w, axis=1)
    grid_x = np.repeat(xs[None, :], out_h, axis=0)
    return np.ascontiguousarray(_bilinear_gather(image, grid_y, grid_x))


def center_crop(image: np.ndarray, crop_h: int, crop_w: int) -> np.ndarray:
    c, h, w = image.shape
    top = (h - crop_h) // 2
    left = (w - crop_w) // 2
    return image[:, top:top + crop_h, left:left + crop_w]


def resize_short_side(image: np.ndarray, target: int = 256) -> np.ndarray:
    """Bilinear-resize so min(H,W) == target, then center crop to square."""
    c, h, w = image.shape
    if h < 1 or w < 1:
        raise ShapeError(f"degenerate image shape {image.shape}")
    scale = target / min(h, w)
    new_h = max(target, int(round(h * scale)))
    new_w = max(target, int(round(w * scale)))
    resized = bilinear_resize(image, new_h, new_w)
    return np.ascontiguousarray(center_crop(resized, target, target))


def rotate_image(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center, bilinear sampling with edge clamp."""
    c, h, w = image.shape
    theta = math.radians(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    # inverse map: rotate destination coords by -theta
    src_y = cy + dy * math.cos(theta) - dx * math.sin(theta)
    src_x = cx + dy * math.sin(theta) + dx * math.cos(theta)
    return np.ascontiguousarray(_bilinear_gather(image, src_y, src_x))


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), normalized."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return image.copy()
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel = (kernel / kernel.sum()).astype(DTYPE)
    padded = np.pad(image, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius + 1, axis=1)
    out = win @ kernel
    padded = np.pad(out, ((0, 0), (0, 0), (radius, radius)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius + 1, axis=2)
    return np.ascontiguousarray((win @ kernel).astype(DTYPE))


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    """Enable probabilities and magnitude ranges for each train-time
    augmentation. Every op defaults to probability 0.1."""

    flip_p: float = 0.1
    crop_p: float = 0.1
    crop_scale: tuple = (0.8, 1.0)
    jitter_p: float = 0.1
    jitter_delta: float = 0.1          # brightness/contrast factor range
    gray_p: float = 0.1
    cutout_p: float = 0.1
    cutout_max_frac: float = 1.0 / 8.0  # max erased area fraction
    noise_p: float = 0.1
    noise_sigma_max: float = 0.05
    blur_p: float = 0.1
    blur_sigma_max: float = 1.5
    jpeg_p: float = 0.1
    jpeg_quality: tuple = (60, 95)
    rotate_p: float = 0.1
    rotate_max_deg: float = 15.0
    seed: int = 0

    def validate(self) -> list[str]:
        errors = []
        for name in ("flip_p", "crop_p", "jitter_p", "gray_p", "cutout_p",
                     "noise_p", "blur_p", "jpeg_p", "rotate_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                errors.append(f"augment.{name} must be in [0,1], got {p}")
        if self.crop_p > 0 and not (0 < self.crop_scale[0] < self.crop_scale[1] <= 1):
            errors.append(f"augment.crop_scale must satisfy 0<lo<hi<=1, "
                          f"got {self.crop_scale}")
        if self.jpeg_p > 0 and not (1 <= self.jpeg_quality[0] <= self.jpeg_quality[1] <= 100):
            errors.append(f"augment.jpeg_quality must be an ascending range "
                          f"in [1,100], got {self.jpeg_quality}")
        for name in ("jitter_delta", "cutout_max_frac", "noise_sigma_max",
                     "blur_sigma_max", "rotate_max_deg"):
            if getattr(self, name) < 0:
                errors.append(f"augment.{name} must be >= 0")
        return errors

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(**{f: 0.0 for f in ("flip_p", "crop_p", "jitter_p",
                                       "gray_p", "cutout_p", "noise_p",
                                       "blur_p", "jpeg_p", "rotate_p")})


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent deterministic generator derived from (seed, *keys)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def augment(image: np.ndarray, config: AugmentConfig,
            rng: np.random.Generator) -> np.ndarray:
    """Apply each enabled augmentation independently with its probability;
    output clamped to [0,1]."""
    x = image
    if rng.random() < config.flip_p:
        x = x[:, :, ::-1]
    if rng.random() < config.crop_p:
        lo, hi = config.crop_scale
        frac = rng.uniform(lo, hi)
        c, h, w = x.shape
        ch, cw = max(1, int(round(h * frac))), max(1, int(round(w * frac)))
        top = rng.integers(0, h - ch + 1)
        left = rng.integers(0, w - cw + 1)
        x = bilinear_resize(x[:, top:top + ch, left:left + cw], h, w)
    if rng.random() < config.jitter_p:
        d = config.jitter_delta
        bright = 1.0 + rng.uniform(-d, d)
        contrast = 1.0 + rng.uniform(-d, d)
        mean = x.mean()
        x = (x * bright - mean) * contrast + mean
    if rng.random() < config.gray_p:
        lum = 0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2]
        x = np.repeat(lum[None], 3, axis=0)
    if rng.random() < config.cutout_p:
        c, h, w = x.shape
        max_side = math.sqrt(config.cutout_max_frac)
        ch = max(1, int(rng.uniform(0.1, max_side) * h))
        cw = max(1, int(rng.uniform(0.1, max_side) * w))
        top = rng.integers(0, h - ch + 1)
        left = rng.integers(0, w - cw + 1)
        x = x.copy()
        x[:, top:top + ch, left:left + cw] = 0.0
    if rng.random() < config.noise_p:
        sigma = rng.uniform(0.0, config.noise_sigma_max)
        x = x + rng.normal(0.0, sigma, size=x.shape).astype(DTYPE)
    if rng.random() < config.blur_p:
        x = gaussian_blur(np.ascontiguousarray(x),
                          rng.uniform(0.0, config.blur_sigma_max))
    if rng.random() < config.jpeg_p:
        q = int(rng.integers(config.jpeg_quality[0], config.jpeg_quality[1] + 1))
        x = jpeg_roundtrip(np.clip(x, 0.0, 1.0), q)
    if rng.random() < config.rotate_p:
        x = rotate_image(np.ascontiguousarray(x),
                         rng.uniform(-config.rotate_max_deg, config.rotate_max_deg))
    return np.ascontiguousarray(np.clip(x, 0.0, 1.0).astype(DTYPE))


# ---------------------------------------------------------------------------
# Perturbations (robustness sweep)
# ---------------------------------------------------------------------------

PERTURB_KINDS = ("jpeg", "center_crop", "gaussian_blur", "gaussian_noise")


def perturb(image: np.ndarray, kind: str, level: float,
            seed: int = 0) -> np.ndarray:
    """Apply one named perturbation at the given level.

    jpeg: quality factor in [1,100]; center_crop: crop factor in (0,1] with
    resize back; gaussian_blur / gaussian_noise: standard deviation.
    """
    if kind == "jpeg":
        return jpeg_roundtrip(image, int(level))
    if kind == "center_crop":
        if not 0.0 < level <= 1.0:
            raise ValueError(f"crop factor must be in (0,1], got {level}")
        c, h, w = image.shape
        ch, cw = max(1, int(round(h * level))), max(1, int(round(w * level)))
        return bilinear_resize(center_crop(image, ch, cw), h, w)
    if kind == "gaussian_blur":
        return gaussian_blur(image, level)
    if kind == "gaussian_noise":
        if level < 0:
            raise ValueError(f"noise sigma must be >= 0, got {level}")
        if level == 0:
            return image.copy()
        rng = rng_for(seed, 0xA0)
        out = image + rng.normal(0.0, level, size=image.shape).astype(DTYPE)
        return np.clip(out, 0.0, 1.0).astype(DTYPE)
    raise ValueError(f"unknown perturbation kind {kind!r}; "
                     f"expected one of {PERTURB_KINDS}")


# ---------------------------------------------------------------------------
# Procedural texture corpus (desk-scale "real" class)
# ---------------------------------------------------------------------------

def synth_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """One random RGB texture with energy spread across low, mid, and high
    frequency bands: smooth color field + oriented plaids + soft blobs +
    band-limited grain."""
    s = size
    yy, xx = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    yn, xn = yy / s, xx / s
    lum = np.zeros((s, s), dtype=np.float64)

    # smooth base: a couple of low-frequency waves
    for _ in range(rng.integers(1, 3)):
        fy, fx = rng.uniform(-3, 3, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        lum += rng.uniform(0.2, 0.5) * np.sin(2 * np.pi * (fy * yn + fx * xn) + phase)

    # oriented mid-band plaids (cycles roughly in the preset annulus)
    for _ in range(rng.integers(2, 6)):
        freq = rng.uniform(0.15 * s, 0.45 * s)
        angle = rng.uniform(0, np.pi)
        fy, fx = freq * np.sin(angle), freq * np.cos(angle)
        phase = rng.uniform(0, 2 * np.pi)
        lum += rng.uniform(0.05, 0.25) * np.sin(2 * np.pi * (fy * yn + fx * xn) + phase)

    # soft-edged blobs (broadband edges)
    for _ in range(rng.integers(1, 5)):
        cy, cx = rng.uniform(0, s, size=2)
        radius = rng.uniform(0.05 * s, 0.3 * s)
        sharp = rng.uniform(1.0, 4.0)
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        lum += rng.uniform(-0.4, 0.4) / (1.0 + np.exp((d - radius) * sharp))

    # band-limited grain
    grain = rng.normal(0.0, 1.0, size=(s, s))
    g = gaussian_blur(grain[None].astype(DTYPE), rng.uniform(0.4, 1.2))[0]
    lum += rng.uniform(0.02, 0.12) * g / (np.std(g) + 1e-8)

    lum -= lum.min()
    lum /= max(lum.max(), 1e-8)
    lum = 0.1 + 0.8 * lum

    # colorize: per-channel gain plus a slowly varying tint
    img = np.empty((3, s, s), dtype=np.float64)
    for ch in range(3):
        gain = rng.uniform(0.6, 1.0)
        fy, fx = rng.uniform(-1.5, 1.5, size=2)
        tint = 0.08 * np.sin(2 * np.pi * (fy * yn + fx * xn) + rng.uniform(0, 2 * np.pi))
        img[ch] = lum * gain + tint
    return np.clip(img, 0.0, 1.0).astype(DTYPE)


def build_texture_corpus(out_dir, count: int, size: int, seed: int,
                         prefix: str = "real") -> list[str]:
    """Write `count` procedural textures as PNGs; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        rng = rng_for(seed, 0x7E, i)
        img = synth_texture(rng, size)
        p = out_dir / f"{prefix}_{i:05d}.png"
        save_image(img, p)
        paths.append(str(p))
    return paths
