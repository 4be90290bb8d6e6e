"""Small binary/text interchange formats: raw RGB, MVF1, TNS1, PGM/PPM, MV CSV."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .codec import VideoSequence
from .errors import CorruptStream, InvalidInput, ParseError

MVF_MAGIC = b"MVF1"
TNS_MAGIC = b"TNS1"


def write_rgb(path, video: VideoSequence) -> None:
    """Raw planar RGB: frames x (R plane, G plane, B plane), no header."""
    Path(path).write_bytes(np.ascontiguousarray(video.frames, dtype=np.uint8).tobytes())


def read_rgb(path, width: int, height: int, fps: int = 25) -> VideoSequence:
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    frame_size = 3 * width * height
    if frame_size == 0 or raw.size % frame_size:
        raise InvalidInput(
            f"{path}: {raw.size} bytes is not a whole number of {width}x{height} RGB frames")
    return VideoSequence(width, height, fps, raw.reshape(-1, 3, height, width).copy())


def write_mvf(path, fields) -> None:
    """MVF1: magic, u32 frame_count, then per frame u16 cols, u16 rows, i16 (dx, dy) row-major."""
    out = bytearray(MVF_MAGIC)
    out += struct.pack("<I", len(fields))
    for f in fields:
        out += struct.pack("<HH", f.cols, f.rows)
        out += np.rint(f.grid).astype("<i2").tobytes()
    Path(path).write_bytes(bytes(out))


def read_mvf(path) -> list[np.ndarray]:
    """Return one (rows, cols, 2) int16 grid per stored frame."""
    data = Path(path).read_bytes()
    if data[:4] != MVF_MAGIC:
        raise CorruptStream(f"{path}: not an MVF1 file")
    if len(data) < 8:
        raise ParseError("truncated MVF1 header", len(data))
    (n,) = struct.unpack_from("<I", data, 4)
    pos, grids = 8, []
    for k in range(n):
        if pos + 4 > len(data):
            raise ParseError(f"truncated MVF1 frame {k} header", pos)
        cols, rows = struct.unpack_from("<HH", data, pos)
        pos += 4
        size = rows * cols * 2 * 2
        if pos + size > len(data):
            raise ParseError(f"truncated MVF1 frame {k} grid", len(data))
        grids.append(np.frombuffer(data, dtype="<i2", count=rows * cols * 2, offset=pos)
                     .reshape(rows, cols, 2).copy())
        pos += size
    return grids


def write_mv_csv(path, fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "row", "col", "dx", "dy"])
        for f in fields:
            g = f.grid
            for r in range(f.rows):
                for c in range(f.cols):
                    w.writerow([f.frame_index, r, c, _num(g[r, c, 0]), _num(g[r, c, 1])])


def _num(v: float):
    return int(v) if float(v).is_integer() else float(v)


def write_pgm(path, mask: np.ndarray) -> None:
    """Binary PGM with active cells at 255 and inactive at 0."""
    img = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def write_ppm(path, frame: np.ndarray) -> None:
    """Binary PPM from a planar (3, H, W) frame."""
    _, h, w = frame.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode()
                           + np.ascontiguousarray(frame.transpose(1, 2, 0), dtype=np.uint8).tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (returns (H, W)) or PPM (returns (3, H, W))."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    kind, w, h, _ = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    body = np.frombuffer(parts[4], dtype=np.uint8)
    if kind == b"P5":
        return body[:w * h].reshape(h, w).copy()
    if kind == b"P6":
        return body[:w * h * 3].reshape(h, w, 3).transpose(2, 0, 1).copy()
    raise InvalidInput(f"{path}: unsupported PNM kind {kind!r}")


def write_tensor(path, array: np.ndarray) -> None:
    """TNS1: magic, u8 rank, u32 extents[rank], f32 data row-major."""
    a = np.asarray(array)
    if a.ndim > 255:
        raise InvalidInput("rank exceeds 255")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("tensor holds non-finite values")
    head = TNS_MAGIC + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    Path(path).write_bytes(head + np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != TNS_MAGIC:
        raise CorruptStream(f"{path}: not a TNS1 file")
    rank = data[4]
    shape = struct.unpack_from(f"<{rank}I", data, 5)
    off = 5 + 4 * rank
    count = int(np.prod(shape)) if shape else 1
    if len(data) - off != 4 * count:
        raise ParseError(f"TNS1 payload holds {len(data) - off} bytes, expected {4 * count}", len(data))
    return np.frombuffer(data, dtype="<f4", offset=off).reshape(shape).astype(np.float64)
