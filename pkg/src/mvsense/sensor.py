"""The codec as an activity sensor: MV fields, activity maps, selective decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bitstream import (
    FRAME_P, INTER, INTRA, MB, PART, ByteAccessCounter, FrameIndex,
    iter_mb_records, read_header,
)
from .codec import EncodedVideo, FrameDecoder, decode_mb
from .errors import InvalidConfig, InvalidInput

__all__ = [
    "ActivityMap", "ByteAccessCounter", "MotionVectorField", "SelectiveDecodeConfig",
    "activity_map", "extract_mv_fields", "fill_intra", "interpolate_field",
    "selective_decode", "mb_mv_grid",
]


@dataclass(frozen=True)
class MotionVectorField:
    """Per-frame grid of codec motion vectors.

    ``grid[r, c] = (dx, dy)`` in pixels for the ``block_size`` block at row
    ``r``, column ``c``. ``filled[r, c]`` is True for cells that carry no
    coded MV (Intra MBs); their values are placeholders until
    :func:`fill_intra` runs, after which they hold the filled estimate.
    """

    frame_index: int
    grid: np.ndarray
    filled: np.ndarray
    block_size: int = PART

    @property
    def rows(self) -> int:
        return self.grid.shape[0]

    @property
    def cols(self) -> int:
        return self.grid.shape[1]

    def to_flow(self) -> np.ndarray:
        """Forward displacement of content, which is the negated MV."""
        return -self.grid


@dataclass(frozen=True)
class ActivityMap:
    frame_index: int
    active: np.ndarray  # (mb_rows, mb_cols) bool
    threshold: float


@dataclass(frozen=True)
class SelectiveDecodeConfig:
    """Full decode every ``x`` frames (``math.inf``: frame 0 only), render every ``r``."""

    x: float = 10
    r: int = 10
    a: float = 0.0

    def validate(self) -> None:
        if not (self.x == math.inf or (float(self.x).is_integer() and self.x >= 1)):
            raise InvalidConfig(f"X must be an integer >= 1 or inf, got {self.x}")
        if int(self.r) != self.r or self.r < 1:
            raise InvalidConfig(f"R must be an integer >= 1, got {self.r}")
        if self.r > self.x:
            raise InvalidConfig(f"R={self.r} exceeds X={self.x}; need 1 <= R <= X")
        if self.a < 0:
            raise InvalidConfig(f"A must be >= 0, got {self.a}")

    def is_full(self, k: int) -> bool:
        return k == 0 if self.x == math.inf else k % int(self.x) == 0

    def is_render(self, k: int) -> bool:
        return k % int(self.r) == 0


def _record_grid(records, mb_rows: int, mb_cols: int):
    grid = np.zeros((2 * mb_rows, 2 * mb_cols, 2), dtype=np.float64)
    filled = np.zeros((2 * mb_rows, 2 * mb_cols), dtype=bool)
    for m, rec in enumerate(records):
        my, mx = divmod(m, mb_cols)
        sl = (slice(2 * my, 2 * my + 2), slice(2 * mx, 2 * mx + 2))
        if rec.mode == INTER:
            grid[sl] = rec.mvs.reshape(2, 2, 2)
        else:
            filled[sl] = True
    return grid, filled


def extract_mv_fields(bitstream: EncodedVideo, counter: ByteAccessCounter | None = None
                      ) -> tuple[list[MotionVectorField], ByteAccessCounter]:
    """Parse MVs of every P-frame, skipping all residual payloads and I-frames."""
    counter = counter if counter is not None else ByteAccessCounter()
    data = bitstream.data
    header = read_header(data, counter)
    index = FrameIndex(data, header, counter)
    fields_, touched = [], set()
    for k in range(header.frame_count):
        entry = index[k]
        if entry.frame_type != FRAME_P:
            continue
        touched.add(k)
        grid, filled = _record_grid(iter_mb_records(data, entry, header.mbs_per_frame, counter),
                                    header.mb_rows, header.mb_cols)
        fields_.append(MotionVectorField(k, grid, filled))
    index.finish()
    index.charge_skipped(touched)
    return fields_, counter


_NEIGHBOURS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]


def fill_intra(field: MotionVectorField) -> MotionVectorField:
    """Fill Intra cells with the componentwise median of available 8-neighbours.

    Passes are synchronous: a cell filled in pass ``n`` becomes available as
    a neighbour from pass ``n + 1``. Cells never reached become (0, 0).
    """
    grid = field.grid.astype(np.float64).copy()
    pending = field.filled.copy()
    rows, cols = pending.shape
    while pending.any():
        available = ~pending
        updates = {}
        for r, c in zip(*np.nonzero(pending)):
            vals = [grid[r + dr, c + dc] for dr, dc in _NEIGHBOURS
                    if 0 <= r + dr < rows and 0 <= c + dc < cols and available[r + dr, c + dc]]
            if vals:
                updates[(r, c)] = np.median(np.array(vals), axis=0)
        if not updates:
            break
        for (r, c), v in updates.items():
            grid[r, c] = v
            pending[r, c] = False
    grid[pending] = 0.0
    return MotionVectorField(field.frame_index, grid, field.filled.copy(), field.block_size)


def _bilinear_axis(n_coarse: int, factor: int):
    """Sample positions (in coarse-cell index units) of the finer cell centres."""
    j = np.arange(n_coarse * factor)
    u = np.clip((j + 0.5) / factor - 0.5, 0, n_coarse - 1)
    i0 = np.minimum(np.floor(u).astype(int), n_coarse - 1)
    i1 = np.minimum(i0 + 1, n_coarse - 1)
    return i0, i1, u - i0


def interpolate_field(field: MotionVectorField, target_block_size: int) -> MotionVectorField:
    """Resample to ``target_block_size`` (8 or 4) by bilinear interpolation at finer centres."""
    if target_block_size not in (4, 8):
        raise InvalidInput(f"unsupported target block size {target_block_size}; use 8 or 4")
    if target_block_size == field.block_size:
        return field
    if field.block_size % target_block_size:
        raise InvalidInput(f"cannot refine {field.block_size} to {target_block_size}")
    f = field.block_size // target_block_size
    r0, r1, wr = _bilinear_axis(field.rows, f)
    c0, c1, wc = _bilinear_axis(field.cols, f)
    g = field.grid
    wr, wc = wr[:, None, None], wc[None, :, None]
    top = g[r0][:, c0] * (1 - wc) + g[r0][:, c1] * wc
    bot = g[r1][:, c0] * (1 - wc) + g[r1][:, c1] * wc
    grid = top * (1 - wr) + bot * wr
    filled = np.repeat(np.repeat(field.filled, f, axis=0), f, axis=1)
    return MotionVectorField(field.frame_index, grid, filled, target_block_size)


def mb_mv_grid(field: MotionVectorField) -> tuple[np.ndarray, np.ndarray]:
    """Per-MB (max |component| over partitions, intra flag) from an 8x8-block field."""
    if field.block_size != PART:
        raise InvalidInput("activity is defined on the native 8x8 partition grid")
    mag = np.abs(field.grid).max(axis=2)
    mbr, mbc = field.rows // 2, field.cols // 2
    peak = mag.reshape(mbr, 2, mbc, 2).max(axis=(1, 3))
    intra = field.filled.reshape(mbr, 2, mbc, 2).any(axis=(1, 3))
    return peak, intra


def activity_map(field: MotionVectorField, a: float) -> ActivityMap:
    """MB is active iff it is Intra or any partition MV component exceeds ``a`` in magnitude."""
    peak, intra = mb_mv_grid(field)
    return ActivityMap(field.frame_index, intra | (peak > a), a)


def _mb_active(rec, a: float) -> bool:
    return rec.mode == INTRA or bool(np.abs(rec.mvs).max() > a)


def selective_decode(bitstream: EncodedVideo, cfg: SelectiveDecodeConfig,
                     counter: ByteAccessCounter | None = None
                     ) -> tuple[list[tuple[int, np.ndarray]], ByteAccessCounter]:
    """Sparse full decoding plus MV-driven texture rendering on a running canvas.

    Frames with ``k % X == 0`` are decoded exactly and reset the canvas. Other
    frames with ``k % R == 0`` are rendered: each active MB is motion
    compensated from the canvas, its residual added, and the result written
    back. Inactive MBs keep the canvas texture and their residuals are skipped.
    """
    cfg.validate()
    counter = counter if counter is not None else ByteAccessCounter()
    dec = FrameDecoder(bitstream, counter)
    header, data = dec.header, dec.data
    out = []
    canvas = None
    touched = set()
    for k in range(header.frame_count):
        if cfg.is_full(k):
            canvas = dec.decode(k).astype(np.int64)
        elif cfg.is_render(k) and canvas is not None:
            entry = dec.index[k]
            touched.add(k)
            ref = canvas.copy()
            inactive = 0
            for m, rec in enumerate(iter_mb_records(data, entry, header.mbs_per_frame, counter,
                                                    skip_residuals=False)):
                if _mb_active(rec, cfg.a):
                    my, mx = divmod(m, header.mb_cols)
                    decode_mb(data, rec, canvas, ref, my * MB, mx * MB, header.q, counter)
                else:
                    inactive += rec.residual_len
            # a later full decode may still need this frame as a reference
            dec.pending[k] = inactive
        else:
            continue
        out.append((k, canvas.astype(np.uint8)))
    dec.index.finish()
    for nbytes in dec.pending.values():
        counter.residual_bytes_skipped += nbytes
    dec.index.charge_skipped(touched | dec.touched)
    return out, counter
