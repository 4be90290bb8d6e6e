"""Block-based motion-compensated codec whose MVs are parseable without texture.

Frames are uint8 arrays shaped ``(3, height, width)`` (planar RGB). Each
16x16 macroblock is either Intra (per-channel DC prediction) or Inter (four
8x8 partitions, each with its own integer motion vector). A motion vector
``(dx, dy)`` predicts sample ``(x, y)`` from ``reference[y + dy, x + dx]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .bitstream import (
    FRAME_HEADER, FRAME_I, FRAME_P, INTER, INTRA, MB, PART, RES_LEN,
    ByteAccessCounter, FrameIndex, StreamHeader, charge_residual_read,
    iter_mb_records, read_header, rle_decode_residual, rle_encode_residual,
)
from .errors import CorruptStream, InvalidConfig, InvalidInput

DEFAULT_INTRA_SAD_THRESHOLD = MB * MB * 48
_OUTSIDE = 1 << 16  # padding value: any block touching it loses to (0, 0)


@dataclass(frozen=True)
class VideoSequence:
    width: int
    height: int
    fps: int
    frames: np.ndarray  # (n, 3, height, width) uint8

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise InvalidInput(f"frames must be shaped (n, 3, H, W), got {frames.shape}")
        if frames.shape[2:] != (self.height, self.width):
            raise InvalidInput(
                f"frame size {frames.shape[3]}x{frames.shape[2]} != declared {self.width}x{self.height}")
        if self.width <= 0 or self.height <= 0 or self.width % MB or self.height % MB:
            raise InvalidInput(f"{self.width}x{self.height} is not a positive multiple of {MB}")
        if frames.dtype != np.uint8:
            if frames.size and (frames.min() < 0 or frames.max() > 255):
                raise InvalidInput("sample values must lie in [0, 255]")
            frames = frames.astype(np.uint8)
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, VideoSequence):
            return NotImplemented
        return ((self.width, self.height, self.fps) == (other.width, other.height, other.fps)
                and np.array_equal(self.frames, other.frames))


@dataclass(frozen=True)
class CodecConfig:
    gop_length: int = 30
    q: int = 4
    s: int = 8
    intra_sad_threshold: int = DEFAULT_INTRA_SAD_THRESHOLD

    def validate(self) -> None:
        if not 1 <= self.gop_length <= 0xFFFF:
            raise InvalidConfig(f"gop_length must be in [1, 65535], got {self.gop_length}")
        if not 1 <= self.q <= 255:
            raise InvalidConfig(f"quant step q must be in [1, 255], got {self.q}")
        if not 1 <= self.s <= 127:
            raise InvalidConfig(f"search range s must be in [1, 127], got {self.s}")
        if self.intra_sad_threshold < 0:
            raise InvalidConfig("intra_sad_threshold must be non-negative")


@dataclass(frozen=True)
class EncodedVideo:
    """An MVB1 bitstream. Parsing is lazy; ``data`` is the single source of truth."""

    data: bytes
    header: StreamHeader = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "data", bytes(self.data))
        object.__setattr__(self, "header", read_header(self.data))

    @property
    def frame_count(self) -> int:
        return self.header.frame_count

    @cached_property
    def frame_types(self) -> list[int]:
        idx = FrameIndex(self.data, self.header)
        return [idx[k].frame_type for k in range(self.frame_count)]

    @property
    def p_frame_indices(self) -> list[int]:
        return [k for k, t in enumerate(self.frame_types) if t == FRAME_P]

    def __len__(self) -> int:
        return len(self.data)


def luma(frame: np.ndarray) -> np.ndarray:
    """Integer BT.601 luma of a (3, H, W) frame, rounded half up."""
    f = frame.astype(np.int64)
    return (299 * f[0] + 587 * f[1] + 114 * f[2] + 500) // 1000


def quantize(residual: np.ndarray, q: int) -> np.ndarray:
    """round_half_away_from_zero(residual / q) in exact integer arithmetic."""
    mag = (2 * np.abs(residual) + q) // (2 * q)
    return np.sign(residual) * mag


def candidate_order(s: int) -> list[tuple[int, int]]:
    """Search positions ordered by the tie-break: |dy|, then |dx|, then raster."""
    cands = [(dy, dx) for dy in range(-s, s + 1) for dx in range(-s, s + 1)]
    cands.sort(key=lambda c: (abs(c[0]), abs(c[1]), c[0], c[1]))
    return cands


def block_match(cur_y: np.ndarray, ref_y: np.ndarray, s: int, block: int = PART):
    """Exhaustive integer-pel block matching of every ``block``-sized partition.

    Only displacements that keep the whole partition inside the reference
    are eligible. Returns ``(mvs, sads)`` with mvs shaped (rows, cols, 2)
    holding (dx, dy) and sads shaped (rows, cols).
    """
    h, w = cur_y.shape
    rows, cols = h // block, w // block
    cur = cur_y.astype(np.int64)
    pad = np.pad(ref_y.astype(np.int64), s, constant_values=_OUTSIDE)
    best = np.full((rows, cols), np.iinfo(np.int64).max, dtype=np.int64)
    mvs = np.zeros((rows, cols, 2), dtype=np.int64)
    for dy, dx in candidate_order(s):
        shifted = pad[s + dy:s + dy + h, s + dx:s + dx + w]
        sad = np.abs(cur - shifted).reshape(rows, block, cols, block).sum(axis=(1, 3))
        better = sad < best
        if better.any():
            best[better] = sad[better]
            mvs[better] = (dx, dy)
    return mvs, best


def dc_prediction(canvas: np.ndarray, y: int, x: int) -> np.ndarray:
    """Per-channel DC predictor from the decoded left column and top row."""
    parts = []
    if x > 0:
        parts.append(canvas[:, y:y + MB, x - 1])
    if y > 0:
        parts.append(canvas[:, y - 1, x:x + MB])
    if not parts:
        return np.full(3, 128, dtype=np.int64)
    border = np.concatenate(parts, axis=1).astype(np.int64)
    n = border.shape[1]
    return (border.sum(axis=1) + n // 2) // n


def inter_prediction(ref: np.ndarray, y: int, x: int, mvs: np.ndarray) -> np.ndarray:
    """Motion-compensated 16x16 prediction; ``mvs`` is (4, 2) in partition raster order."""
    h, w = ref.shape[1:]
    pred = np.empty((3, MB, MB), dtype=np.int64)
    for p in range(4):
        py, px = divmod(p, 2)
        dx, dy = int(mvs[p, 0]), int(mvs[p, 1])
        sy, sx = y + py * PART + dy, x + px * PART + dx
        if sy < 0 or sx < 0 or sy + PART > h or sx + PART > w:
            raise CorruptStream(f"MV ({dx}, {dy}) at MB ({x}, {y}) points outside the reference")
        pred[:, py * PART:(py + 1) * PART, px * PART:(px + 1) * PART] = \
            ref[:, sy:sy + PART, sx:sx + PART]
    return pred


def reconstruct(pred: np.ndarray, levels: np.ndarray, q: int) -> np.ndarray:
    return np.clip(pred + q * levels, 0, 255)


def _dc_block(canvas, y, x):
    return np.broadcast_to(dc_prediction(canvas, y, x)[:, None, None], (3, MB, MB))


def _code_mb(src_blk, pred, q):
    levels = quantize(src_blk - pred, q)
    payload = rle_encode_residual(levels.reshape(3, -1))
    return payload, reconstruct(pred, levels, q)


def _encode_frame(src: np.ndarray, ref: np.ndarray | None, cfg: CodecConfig) -> tuple[bytes, np.ndarray]:
    h, w = src.shape[1:]
    mb_rows, mb_cols = h // MB, w // MB
    src = src.astype(np.int64)
    rec = np.zeros_like(src)
    out = bytearray()
    if ref is not None:
        mvs, sads = block_match(luma(src), luma(ref), cfg.s)
        mb_sad = sads.reshape(mb_rows, 2, mb_cols, 2).sum(axis=(1, 3))
    for m in range(mb_rows * mb_cols):
        my, mx = divmod(m, mb_cols)
        y, x = my * MB, mx * MB
        blk = src[:, y:y + MB, x:x + MB]
        if ref is None or mb_sad[my, mx] > cfg.intra_sad_threshold:
            payload, recon = _code_mb(blk, _dc_block(rec, y, x), cfg.q)
            out.append(INTRA)
        else:
            mb_mvs = mvs[2 * my:2 * my + 2, 2 * mx:2 * mx + 2].reshape(4, 2)
            payload, recon = _code_mb(blk, inter_prediction(ref, y, x, mb_mvs), cfg.q)
            out.append(INTER)
            out += struct.pack("<8b", *mb_mvs.ravel().tolist())
        out += RES_LEN.pack(len(payload))
        out += payload
        rec[:, y:y + MB, x:x + MB] = recon
    return bytes(out), rec


def encode(video: VideoSequence, cfg: CodecConfig | None = None) -> EncodedVideo:
    """Encode ``video``; the encoder tracks the decoder's reconstruction loop."""
    cfg = cfg or CodecConfig()
    cfg.validate()
    if video.fps > 255:
        raise InvalidInput(f"fps {video.fps} does not fit the u8 header field")
    if video.width > 0xFFFF or video.height > 0xFFFF:
        raise InvalidInput("frame dimensions do not fit u16 header fields")
    header = StreamHeader(video.width, video.height, video.fps, cfg.gop_length,
                          cfg.q, cfg.s, len(video))
    out = bytearray(header.pack())
    ref = None
    for k, frame in enumerate(video.frames):
        intra = k % cfg.gop_length == 0
        payload, ref = _encode_frame(frame, None if intra else ref, cfg)
        out += FRAME_HEADER.pack(FRAME_I if intra else FRAME_P, len(payload))
        out += payload
    return EncodedVideo(bytes(out))


def decode_mb(data: bytes, rec, canvas: np.ndarray, ref: np.ndarray | None, y: int, x: int,
              q: int, counter: ByteAccessCounter | None = None) -> None:
    """Reconstruct one MB record in place into ``canvas``.

    Intra MBs predict from ``canvas`` neighbours; Inter MBs from ``ref``.
    """
    levels = rle_decode_residual(data[rec.residual_offset:rec.residual_offset + rec.residual_len])
    charge_residual_read(counter, rec.residual_len)
    if rec.mode == INTRA:
        pred = _dc_block(canvas, y, x)
    else:
        if ref is None:
            raise CorruptStream("Inter MB inside an I-frame")
        pred = inter_prediction(ref, y, x, rec.mvs)
    canvas[:, y:y + MB, x:x + MB] = reconstruct(pred, levels.reshape(3, MB, MB), q)


def decode_frame_payload(data: bytes, entry, header: StreamHeader, ref: np.ndarray | None,
                         counter: ByteAccessCounter | None = None) -> np.ndarray:
    if entry.frame_type == FRAME_P and ref is None:
        raise CorruptStream(f"P-frame {entry.index} has no reference")
    canvas = np.zeros((3, header.height, header.width), dtype=np.int64)
    for m, rec in enumerate(iter_mb_records(data, entry, header.mbs_per_frame, counter,
                                            skip_residuals=False)):
        my, mx = divmod(m, header.mb_cols)
        decode_mb(data, rec, canvas, ref, my * MB, mx * MB, header.q, counter)
    return canvas


class FrameDecoder:
    """Decode-loop cursor over one bitstream.

    ``decode(k)`` returns the true reconstruction of frame ``k``, starting
    from the nearest preceding I-frame, or continuing from the cursor when the
    last decoded frame is an ancestor of ``k``. ``touched`` records every
    frame whose payload was read; reading one again is not charged twice.

    ``pending`` maps frames whose MB records were already charged by another
    pass (selective rendering) to the residual bytes that pass left
    uncharged; decoding such a frame charges only those bytes, so every byte
    is counted once.
    """

    def __init__(self, bitstream: EncodedVideo, counter: ByteAccessCounter | None = None):
        self.data = bitstream.data
        self.counter = counter
        if counter is not None:
            counter.header_bytes += len(bitstream.header.pack())
        self.header = bitstream.header
        self.index = FrameIndex(self.data, self.header, counter)
        self.touched: set[int] = set()
        self.pending: dict[int, int] = {}
        self._pos: int | None = None
        self._frame: np.ndarray | None = None

    def decode(self, k: int) -> np.ndarray:
        if not 0 <= k < self.header.frame_count:
            raise IndexError(f"frame index {k} out of range [0, {self.header.frame_count})")
        start = k - k % self.header.gop_length
        if self._pos is not None and start <= self._pos <= k:
            start, ref = self._pos + 1, self._frame
        else:
            ref = None
        for j in range(start, k + 1):
            entry = self.index[j]
            if j in self.touched:
                # bytes already counted; re-reading them costs time, not coverage
                ref = decode_frame_payload(self.data, entry, self.header, ref)
            elif j in self.pending:
                ref = decode_frame_payload(self.data, entry, self.header, ref)
                charge_residual_read(self.counter, self.pending.pop(j))
            else:
                ref = decode_frame_payload(self.data, entry, self.header, ref, self.counter)
            self.touched.add(j)
        self._pos, self._frame = k, ref
        return ref.astype(np.uint8)


def decode(bitstream: EncodedVideo, counter: ByteAccessCounter | None = None) -> VideoSequence:
    dec = FrameDecoder(bitstream, counter)
    h = bitstream.header
    frames = np.empty((h.frame_count, 3, h.height, h.width), dtype=np.uint8)
    for k in range(h.frame_count):
        frames[k] = dec.decode(k)
    dec.index.finish()
    return VideoSequence(h.width, h.height, h.fps, frames)


def decode_frame(bitstream: EncodedVideo, index: int,
                 counter: ByteAccessCounter | None = None) -> np.ndarray:
    """Random access: decode frame ``index`` reading only its ancestors."""
    if not 0 <= index < bitstream.frame_count:
        raise IndexError(f"frame index {index} out of range [0, {bitstream.frame_count})")
    dec = FrameDecoder(bitstream, counter)
    frame = dec.decode(index)
    dec.index.charge_skipped(dec.touched)
    return frame
