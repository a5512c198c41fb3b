"""Self-describing binary checkpoints for model parameters.

Layout: an 8-byte magic, a little-endian uint64 header length, a JSON header
(model config, its digest, the tensor manifest with explicit shapes, and a
hash of the payload), then the raw float64 tensor data in manifest order.
The digests make truncation, bit rot and silent shape drift loud errors.
"""

import dataclasses
import hashlib
import json
import struct

import numpy as np

from .model import ModelConfig, ModelParameters

MAGIC = b"IARNCKP1"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, corrupt or mismatching checkpoint file."""


def config_digest(config):
    """Stable digest of a model config (also stored inside checkpoints)."""
    blob = json.dumps(dataclasses.asdict(config), sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(params, path):
    """Write parameters to ``path``; round-trips bitwise via load_checkpoint."""
    if not params.all_finite():
        raise CheckpointError("refusing to save non-finite parameters")
    manifest = []
    chunks = []
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        manifest.append({"name": name, "shape": list(t.data.shape)})
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(params.config),
        "config_digest": config_digest(params.config),
        "tensors": manifest,
        "body_sha256": hashlib.sha256(body).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(body)


def load_checkpoint(path, expect_backbone=None, expect_encoder=None):
    """Read parameters back; verifies magic, digests and every tensor shape.

    ``expect_backbone`` / ``expect_encoder`` guard against loading a
    checkpoint trained for a different model variant.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("%s: not a checkpoint file" % path)
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header_end = 16 + header_len
    if len(blob) < header_end:
        raise CheckpointError("%s: truncated header" % path)
    try:
        header = json.loads(blob[16:header_end].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError("%s: corrupt header (%s)" % (path, exc))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError("%s: unsupported format version %r"
                              % (path, header.get("format_version")))
    config = ModelConfig(**header["config"])
    if config_digest(config) != header["config_digest"]:
        raise CheckpointError("%s: config digest mismatch" % path)
    if expect_backbone is not None and config.backbone != expect_backbone:
        raise CheckpointError("%s: checkpoint backbone is %r, expected %r"
                              % (path, config.backbone, expect_backbone))
    if expect_encoder is not None and config.encoder_mode != expect_encoder:
        raise CheckpointError("%s: checkpoint encoder mode is %r, expected %r"
                              % (path, config.encoder_mode, expect_encoder))
    body = blob[header_end:]
    if hashlib.sha256(body).hexdigest() != header["body_sha256"]:
        raise CheckpointError("%s: payload hash mismatch (truncated or corrupt)"
                              % path)
    params = ModelParameters(config)
    stored = {entry["name"]: tuple(entry["shape"]) for entry in header["tensors"]}
    expected = {name: t.data.shape for name, t in params.items()}
    if stored != expected:
        raise CheckpointError(
            "%s: tensor manifest does not match the %s/%s architecture"
            % (path, config.backbone, config.encoder_mode))
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset)
        params.tensors[entry["name"]].data = arr.reshape(shape).astype(
            np.float64).copy()
        offset += count * 8
    if offset != len(body):
        raise CheckpointError("%s: payload size mismatch" % path)
    return params
