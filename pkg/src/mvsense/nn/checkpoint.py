"""CKP1 checkpoints: canonical config text followed by length-prefixed f32 blobs.

Layout (little-endian)::

    "CKP1"  u32 config_len  <config JSON>  u32 blob_count
    per blob: u32 element_count  f32[element_count]
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptStream, ParseError, ShapeMismatch
from .network import Network, NetworkConfig

MAGIC = b"CKP1"


def save(net: Network, path) -> None:
    text = net.cfg.to_json().encode()
    blobs = net.state()
    parts = [MAGIC, struct.pack("<I", len(text)), text, struct.pack("<I", len(blobs))]
    for b in blobs:
        parts.append(struct.pack("<I", b.size))
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def _read(path) -> tuple[NetworkConfig, list[np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CorruptStream(f"{path}: not a CKP1 checkpoint")
    pos = 4
    try:
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        cfg = NetworkConfig.from_json(data[pos:pos + n].decode())
        pos += n
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        blobs = []
        for _ in range(count):
            (size,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + 4 * size > len(data):
                raise ParseError(f"{path}: truncated weight blob", pos)
            blobs.append(np.frombuffer(data, dtype="<f4", count=size, offset=pos))
            pos += 4 * size
    except struct.error as exc:
        raise ParseError(f"{path}: truncated checkpoint ({exc})", pos) from None
    if pos != len(data):
        raise CorruptStream(f"{path}: {len(data) - pos} trailing bytes")
    return cfg, blobs


def load(path, dtype=np.float64) -> Network:
    cfg, blobs = _read(path)
    net = Network(cfg, dtype=dtype)
    load_weights(net, path, strict=True, _parsed=(cfg, blobs))
    return net


def load_weights(net: Network, path, strict: bool = True, _parsed=None) -> int:
    """Copy blobs into ``net``; returns how many tensors were loaded.

    With ``strict=False`` tensors whose sizes differ (for instance a
    classifier trained on another class count) keep their fresh
    initialisation, which is how fine-tuning from another corpus starts.
    """
    _, blobs = _parsed or _read(path)
    params = net.state()
    if strict and len(blobs) != len(params):
        raise ShapeMismatch(f"checkpoint has {len(blobs)} tensors, network has {len(params)}")
    loaded = 0
    for p, b in zip(params, blobs):
        if p.size != b.size:
            if strict:
                raise ShapeMismatch(f"checkpoint tensor of {b.size} values does not fit {p.shape}")
            continue
        p[...] = b.reshape(p.shape)
        loaded += 1
    return loaded
