"""Checkpoint container: length-prefixed JSON header + raw float32 payload.

Layout on disk:

    bytes 0..7    header length N, little-endian uint64
    bytes 8..8+N  UTF-8 JSON header
    rest          parameter payload, little-endian float32, in header order

The header carries the format version, the encoder config (enough to rebuild
the model skeleton), the attribute list, a parameter index of
{name, shape, dtype, byte_offset}, the payload's SHA-256, and free-form
training provenance.  Loading validates all of it: version, offsets
(contiguous, non-overlapping, covering the payload exactly), and the digest,
so a flipped payload byte is rejected rather than silently read.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from congater import FORMAT_VERSION
from congater.encoder import EncoderConfig, EncoderModel
from congater.tensor import Tensor


class CheckpointError(ValueError):
    """Raised when a checkpoint file fails validation."""


def save_checkpoint(model: EncoderModel, path: str | Path,
                    provenance: dict | None = None) -> None:
    named = model.named_params()
    index = []
    chunks = []
    offset = 0
    for name in named:
        data = named[name].values.astype("<f4").tobytes()
        index.append({"name": name, "shape": list(named[name].shape),
                      "dtype": "f4", "byte_offset": offset})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "encoder_config": model.config.to_dict(),
        "attributes": sorted(model.config.attributes),
        "params": index,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "provenance": provenance if provenance is not None else model.provenance,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_header(path: str | Path) -> dict:
    with Path(path).open("rb") as fh:
        prefix = fh.read(8)
        if len(prefix) != 8:
            raise CheckpointError(f"{path}: truncated header length prefix")
        (header_len,) = struct.unpack("<Q", prefix)
        blob = fh.read(header_len)
    if len(blob) != header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        return json.loads(blob.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: header is not valid JSON: {err}") from None


def load_checkpoint(path: str | Path) -> EncoderModel:
    path = Path(path)
    header = read_header(path)
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {header.get('format_version')} "
                              f"unsupported (expected {FORMAT_VERSION})")
    with path.open("rb") as fh:
        (header_len,) = struct.unpack("<Q", fh.read(8))
        fh.seek(8 + header_len)
        payload = fh.read()
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header "
                              f"declares {header.get('payload_bytes')}")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch; file is corrupt")

    index = header.get("params", [])
    expected_offset = 0
    for entry in sorted(index, key=lambda e: e["byte_offset"]):
        if entry.get("dtype") != "f4":
            raise CheckpointError(f"{path}: unsupported dtype {entry.get('dtype')!r} "
                                  f"for {entry.get('name')!r}")
        if entry["byte_offset"] != expected_offset:
            raise CheckpointError(f"{path}: parameter {entry['name']!r} at offset "
                                  f"{entry['byte_offset']}, expected {expected_offset} "
                                  "(overlap or gap)")
        expected_offset += int(np.prod(entry["shape"], dtype=np.int64)) * 4 \
            if entry["shape"] else 4
    if expected_offset != len(payload):
        raise CheckpointError(f"{path}: index covers {expected_offset} bytes, "
                              f"payload has {len(payload)}")

    config = EncoderConfig.from_dict(header["encoder_config"])
    model = EncoderModel(config)
    named = model.named_params()
    index_names = {entry["name"] for entry in index}
    if index_names != set(named):
        missing = sorted(set(named) - index_names)
        extra = sorted(index_names - set(named))
        raise CheckpointError(f"{path}: parameter names do not match the model "
                              f"(missing {missing[:3]}, extra {extra[:3]})")
    for entry in index:
        tensor_obj = named[entry["name"]]
        if list(tensor_obj.shape) != entry["shape"]:
            raise CheckpointError(f"{path}: shape mismatch for {entry['name']!r}: "
                                  f"{entry['shape']} vs {list(tensor_obj.shape)}")
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        start = entry["byte_offset"]
        raw = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        tensor_obj.values = raw.astype(np.float64).reshape(tensor_obj.shape)
    model.provenance = header.get("provenance", {})
    return model


def quantize_model(model: EncoderModel) -> None:
    """Round every parameter to its float32 value in place.

    A freshly trained float64 model differs from its checkpoint at the last
    bits; serving always quantizes first so save/load round trips are
    bit-exact against live predictions.
    """
    for param in model.named_params().values():
        param.values = param.values.astype("<f4").astype(np.float64)


def checkpoint_digest(path: str | Path) -> str:
    """Digest of the whole file; used as a cache key component."""
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
