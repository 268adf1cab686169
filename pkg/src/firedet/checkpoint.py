"""Named-tensor checkpoint container.

File layout: 8-byte little-endian header length, UTF-8 JSON header, then a
payload of concatenated little-endian float32 buffers. The header carries
{format_version, config, meta, tensors} where tensors maps each name to
{dtype, shape, byte_offset, byte_len} relative to the payload start.
Header JSON is serialized with sorted keys and tensors are laid out in
sorted-name order, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray],
                    config: dict | None = None,
                    meta: dict | None = None) -> None:
    index = {}
    buffers = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = arr.tobytes()
        index[name] = {"dtype": "f32", "shape": list(arr.shape),
                       "byte_offset": offset, "byte_len": len(raw)}
        buffers.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config or {},
        "meta": meta or {},
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in buffers:
            fh.write(raw)


def load_checkpoint(path):
    """Returns (header dict, {name: float32 array})."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}")
    if len(blob) < 8:
        raise CheckpointError(f"checkpoint {path} is truncated")
    (header_len,) = struct.unpack("<Q", blob[:8])
    if 8 + header_len > len(blob):
        raise CheckpointError(f"checkpoint {path}: header length exceeds file")
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint {path}: bad header: {exc}")
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path}: format_version "
            f"{header.get('format_version')!r} != {FORMAT_VERSION}")
    payload = blob[8 + header_len:]
    tensors = {}
    for name, info in header.get("tensors", {}).items():
        if info.get("dtype") != "f32":
            raise CheckpointError(f"{path}: tensor {name}: unsupported dtype "
                                  f"{info.get('dtype')!r}")
        off, ln = info["byte_offset"], info["byte_len"]
        shape = tuple(info["shape"])
        if off < 0 or ln < 0 or off + ln > len(payload):
            raise CheckpointError(f"{path}: tensor {name}: region "
                                  f"[{off}, {off + ln}) outside payload")
        if int(np.prod(shape, dtype=np.int64)) * 4 != ln:
            raise CheckpointError(f"{path}: tensor {name}: shape {shape} "
                                  f"inconsistent with byte_len {ln}")
        arr = np.frombuffer(payload, dtype="<f4", count=ln // 4,
                            offset=off).reshape(shape)
        tensors[name] = np.ascontiguousarray(arr)
    return header, tensors


def params_to_tensors(params) -> dict[str, np.ndarray]:
    out = {}
    for p in params:
        if not p.name:
            raise CheckpointError("cannot checkpoint an unnamed param")
        if p.name in out:
            raise CheckpointError(f"duplicate param name {p.name!r}")
        out[p.name] = p.value
    return out


def tensors_into_params(tensors: dict[str, np.ndarray], params,
                        what: str = "checkpoint") -> None:
    """Copy named tensors into an existing param list, strictly."""
    by_name = {}
    for p in params:
        by_name[p.name] = p
    missing = [n for n in by_name if n not in tensors]
    if missing:
        raise CheckpointError(f"{what}: missing tensors {missing[:4]}"
                              f"{'...' if len(missing) > 4 else ''}")
    for name, p in by_name.items():
        arr = tensors[name]
        if arr.shape != p.value.shape:
            raise CheckpointError(f"{what}: tensor {name} has shape "
                                  f"{arr.shape}, expected {p.value.shape}")
        p.value[...] = arr
