"""Command-line entry points.

Subcommands: make-corpus, pretrain-ae, train, detect, analyze, eval.
Every command exits 0 on success and nonzero with a single-line
"fire: error: ..." message on stderr otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data, detector, metrics, reconstructor, spectrum
from .config import Config, ConfigError, scaled_radii

# Fig-2-style preset analysis bands at the 256x256 reference resolution:
# two low-pass discs, their high-pass complements, and the mid annulus.
ANALYZE_BANDS_REF = ((0.0, 40.0), (40.0, math.inf), (0.0, 120.0),
                     (120.0, math.inf), (40.0, 120.0))


def _fail(msg: str) -> int:
    print(f"fire: error: {msg}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# make-corpus
# ---------------------------------------------------------------------------

def _assign_splits(paths, label):
    n = len(paths)
    n_train = int(n * 0.7)
    n_val = int(n * 0.15)
    entries = []
    for i, p in enumerate(paths):
        split = ("train" if i < n_train
                 else "val" if i < n_train + n_val else "test")
        entries.append(data.ManifestEntry(str(p), label, split))
    return entries


def cmd_make_corpus(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.ae is None:
        if args.count < 4:
            return _fail("--count must be at least 4")
        half = args.count // 2
        real_paths = data.build_texture_corpus(out, half, args.size,
                                               args.seed, prefix="real")
        src_paths = data.build_texture_corpus(out, args.count - half,
                                              args.size, args.seed + 1,
                                              prefix="src")
        data.write_manifest(_assign_splits(real_paths, "real"),
                            out / "pretrain.jsonl")
        data.write_manifest(_assign_splits(src_paths, "real"),
                            out / "sources.jsonl")
        print(json.dumps({"reals": len(real_paths), "sources": len(src_paths),
                          "pretrain_manifest": str(out / "pretrain.jsonl"),
                          "sources_manifest": str(out / "sources.jsonl")}))
        return 0

    # second phase: round-trip the source pool through the AE into fakes
    ae, header = load_ae_checkpoint(args.ae)
    sources = data.load_manifest(out / "sources.jsonl")
    fake_entries = []
    for i, entry in enumerate(sources):
        img = data.resize_short_side(data.load_image(entry.path), args.size)
        fake = reconstructor.reconstruct(ae, img)
        if args.fake_jpeg_quality is not None:
            fake = data.jpeg_roundtrip(fake, args.fake_jpeg_quality)
        p = out / f"fake_{i:05d}.png"
        data.save_image(fake, p)
        fake_entries.append(data.ManifestEntry(str(p), "generated",
                                               entry.split))
    reals = data.load_manifest(out / "pretrain.jsonl")
    data.write_manifest(reals + fake_entries, out / "detect.jsonl")
    print(json.dumps({"fakes": len(fake_entries),
                      "detect_manifest": str(out / "detect.jsonl")}))
    return 0


# ---------------------------------------------------------------------------
# pretrain-ae
# ---------------------------------------------------------------------------

def save_ae_checkpoint(path, ae, image_size, meta=None):
    meta = dict(meta or {})
    meta["kind"] = "ae"
    ckpt.save_checkpoint(path, ckpt.params_to_tensors(ae.params()),
                         config={"image_size": image_size}, meta=meta)


def load_ae_checkpoint(path):
    header, tensors = ckpt.load_checkpoint(path)
    if header.get("meta", {}).get("kind") not in ("ae", "detector"):
        raise ckpt.CheckpointError(f"{path}: not an autoencoder checkpoint")
    ae = reconstructor.build_autoencoder(0)
    ae_tensors = {k: v for k, v in tensors.items() if k.startswith("ae.")}
    ckpt.tensors_into_params(ae_tensors, ae.params(), what=str(path))
    return ae, header


def cmd_pretrain_ae(args) -> int:
    entries = data.load_manifest(args.manifest)
    ae, history = reconstructor.pretrain_ae(
        entries, image_size=args.size, epochs=args.epochs, lr=args.lr,
        kl_weight=args.kl, batch_size=args.batch_size, seed=args.seed,
        log=lambda msg: print(msg, file=sys.stderr))
    meta = {"epochs": args.epochs, "seed": args.seed,
            "final_train_mse": history["train_mse"][-1] if history["train_mse"] else None,
            "final_val_mse": history["val_mse"][-1] if history["val_mse"] else None}
    save_ae_checkpoint(args.out, ae, args.size, meta)
    print(json.dumps({"checkpoint": str(args.out),
                      "train_mse": history["train_mse"],
                      "val_mse": history["val_mse"]}))
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    config = Config.from_file(args.config) if args.config else Config()
    if args.seed is not None:
        config.seed = args.seed
    if args.epochs is not None:
        config.epochs = args.epochs
    config.validate()
    entries = data.load_manifest(args.manifest)
    ae, _ = load_ae_checkpoint(args.ae)
    ae.trainable = not config.ae_frozen
    out = Path(args.out)
    log_path = args.log or out.with_suffix(".log.csv")
    epoch_log = out.with_suffix(".epochs.csv")
    det, history = detector.train(
        entries, config, ae, log_path=log_path, ckpt_path=out,
        epoch_log_path=epoch_log,
        progress=lambda row: print(
            f"epoch {row['epoch']}: loss={row['train_loss']:.5f} "
            f"val_auc={row.get('val_auc', float('nan')):.4f}",
            file=sys.stderr))
    detector.save_detector(out, det, config,
                           meta={"epoch": config.epochs,
                                 "steps": len(history["steps"])})
    final = history["epochs"][-1] if history["epochs"] else {}
    print(json.dumps({"checkpoint": str(out), "log": str(log_path),
                      "val_auc": final.get("val_auc"),
                      "val_acc": final.get("val_acc")}))
    return 0


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------

def _minmax(arr: np.ndarray) -> np.ndarray:
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def cmd_detect(args) -> int:
    det, config, _ = detector.load_detector(args.ckpt)
    result = detector.detect(args.image, det, config)
    if args.dump_dir:
        dump = Path(args.dump_dir)
        dump.mkdir(parents=True, exist_ok=True)
        data.save_image(_minmax(result.delta_x), dump / "delta_x.png")
        data.save_image(_minmax(result.delta_x_pse), dump / "delta_x_pse.png")
        data.save_image(result.m_mid, dump / "m_mid.png")
        data.save_image(result.m_mid_c, dump / "m_mid_c.png")
        image = data.resize_short_side(data.load_image(args.image),
                                       config.image_size)
        x_pse = spectrum.band_filter(image, result.m_mid_c)
        data.save_image(x_pse, dump / "x_pse.png")
    print(json.dumps({"score": result.score, "label": result.label}))
    return 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def _parse_bands(spec_str: str):
    bands = []
    for part in spec_str.split(","):
        lo, _, hi = part.partition(":")
        bands.append((float(lo), math.inf if hi.strip() in ("inf", "")
                      else float(hi)))
    return bands


def _unsharp(image: np.ndarray, amount: float = 1.0) -> np.ndarray:
    """100% sharpening for print-style visibility of faint residuals."""
    blurred = data.gaussian_blur(image, 1.0)
    return np.clip(image + amount * (image - blurred), 0.0, 1.0)


def _spectrum_png(image: np.ndarray) -> np.ndarray:
    """Grayscale centered log-magnitude spectrum, min-max normalized."""
    spec = spectrum.center_shift(spectrum.dft2(image))
    mag = np.log1p(np.abs(spec.values)).mean(axis=0)
    return _minmax(mag)


def cmd_analyze(args) -> int:
    ae, header = load_ae_checkpoint(args.ae)
    size = args.size or int(header.get("config", {}).get("image_size", 256))
    image = data.resize_short_side(data.load_image(args.image), size)
    scale = size / 256.0
    if args.bands:
        bands = _parse_bands(args.bands)
    else:
        bands = [(lo * scale, hi if math.isinf(hi) else hi * scale)
                 for lo, hi in ANALYZE_BANDS_REF]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    summary = {"image": str(args.image), "size": size,
               "input_energy": float(np.sum(image.astype(np.float64) ** 2)),
               "bands": []}
    for i, (lo, hi) in enumerate(bands, 1):
        mask = spectrum.radial_mask(size, size, lo, hi)
        filtered = spectrum.band_filter(image, mask)
        data.save_image(np.clip(filtered, 0.0, 1.0), out / f"filtered_{i}.png")
        data.save_image(_spectrum_png(filtered), out / f"spectrum_{i}.png")
        summary["bands"].append({
            "r_lo": lo, "r_hi": "inf" if math.isinf(hi) else hi,
            "energy": float(np.sum(filtered.astype(np.float64) ** 2))})

    # error maps for the original and for the mid-band-removed pseudo image
    mid_lo, mid_hi = bands[-1]
    mid_mask = spectrum.radial_mask(size, size, mid_lo, mid_hi)
    pseudo = spectrum.band_filter(image, spectrum.complement_mask(mid_mask))
    delta_orig = reconstructor.recon_error(image,
                                           reconstructor.reconstruct(ae, image))
    pseudo_in = np.clip(pseudo, 0.0, 1.0)
    delta_pse = reconstructor.recon_error(pseudo_in,
                                          reconstructor.reconstruct(ae, pseudo_in))
    for name, delta in (("delta_original", delta_orig),
                        ("delta_pseudo", delta_pse)):
        img = _minmax(delta)
        if args.sharpen:
            img = _unsharp(img)
        data.save_image(img, out / f"{name}.png")
    summary["mean_delta_original"] = float(delta_orig.mean())
    summary["mean_delta_pseudo"] = float(delta_pse.mean())
    with open(out / "analysis.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary))
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    det, config, _ = detector.load_detector(args.ckpt)
    entries = data.load_manifest(args.manifest)
    test_entries = data.split_entries(entries, "test")
    if not test_entries:
        return _fail("manifest has no test split")
    images = reconstructor.load_images(test_entries, config.image_size)
    labels = np.array([1 if e.label == "generated" else 0
                       for e in test_entries])

    fire_scores = det.score_images(images, config.batch_size)
    base_scores = metrics.baseline_scores(images, det.ae, config.batch_size)
    summary = {
        "clean_auc": metrics.auc(fire_scores, labels),
        "clean_acc": metrics.acc(fire_scores, labels),
        "baseline_auc": metrics.auc(base_scores, labels),
        "baseline_acc": metrics.acc(base_scores, labels),
        "rows": [],
    }
    if args.perturb:
        report = metrics.perturb_sweep(
            lambda imgs: det.score_images(imgs, config.batch_size),
            images, labels, seed=args.seed or 0)
        summary["rows"] = report["rows"]
        if args.report:
            with open(args.report, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["kind", "level", "auc", "acc"])
                writer.writerow(["clean", 0, summary["clean_auc"],
                                 summary["clean_acc"]])
                for row in report["rows"]:
                    writer.writerow([row["kind"], row["level"], row["auc"],
                                     row["acc"]])
    print(json.dumps(summary))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fire",
        description="Frequency-guided reconstruction-error detector for "
                    "generated images")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus",
                       help="generate a procedural texture corpus, then "
                            "(with --ae) the round-tripped fake class")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ae", default=None,
                   help="AE checkpoint; second phase builds fakes + detect.jsonl")
    p.add_argument("--fake-jpeg-quality", type=int, default=None)
    p.set_defaults(func=cmd_make_corpus)

    p = sub.add_parser("pretrain-ae", help="train the surrogate autoencoder "
                                           "on real images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--kl", type=float, default=0.0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pretrain_ae)

    p = sub.add_parser("train", help="train the detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ae", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--log", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score one image")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dump-dir", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("analyze", help="band-filter an image and export "
                                       "filtered images, spectra, error maps")
    p.add_argument("--image", required=True)
    p.add_argument("--ae", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bands", default=None,
                   help="comma-separated lo:hi radii, e.g. 0:10,10:30,30:inf")
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--sharpen", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--perturb", action="store_true")
    p.add_argument("--report", default=None, help="CSV path for the sweep")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, data.ManifestError, ckpt.CheckpointError,
            ValueError, OSError, FloatingPointError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
