"""Versioned binary checkpoint container.

Layout: an 8-byte magic, a little-endian uint32 manifest length, the manifest
JSON (sorted keys, so identical states produce identical bytes), then the raw
little-endian float64 array payloads in manifest order. The manifest records
the network config, a hash of it, the training iteration, array shapes, and
per-norm calibration flags.
"""

import hashlib
import json
import struct

import numpy as np

from .model import DepthNet, NetConfig

MAGIC = b"RDCKPT01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: NetConfig):
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(net: DepthNet, path, iteration=0):
    arrays = net.state_arrays()
    names = sorted(arrays)
    manifest = {
        "version": VERSION,
        "iteration": int(iteration),
        "config": net.config.to_dict(),
        "config_hash": config_hash(net.config),
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
        "calibrated": net.calibrated_flags(),
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild the network from a checkpoint; returns (net, iteration)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        try:
            manifest = json.loads(fh.read(blob_len))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt manifest: {exc}") from None
        if manifest.get("version") != VERSION:
            raise CheckpointError(f"unsupported version {manifest.get('version')}")
        config = NetConfig.from_dict(manifest["config"])
        if manifest["config_hash"] != config_hash(config):
            raise CheckpointError("config hash mismatch")
        arrays = {}
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = fh.read(count * 8)
            if len(data) != count * 8:
                raise CheckpointError(f"truncated payload at {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    net = DepthNet(config)
    net.load_state(arrays, manifest["calibrated"])
    return net, int(manifest["iteration"])
