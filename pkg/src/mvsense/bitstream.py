"""MVB1 container layout, residual run-length coding and byte accounting.

Layout (little-endian)::

    "MVB1" u16 width u16 height u8 fps u16 gop_length u8 q u8 s u32 frame_count
    per frame:  u8 frame_type (0=I, 1=P)  u32 frame_payload_len  <MB records>
    MB record:  u8 mode (0=Intra, 1=Inter)  [4 x (i8 dx, i8 dy) if Inter]
                u16 residual_len  <residual payload>

The residual payload holds three channel blocks (R, G, B). Each block is a
stream of 3-byte tokens ``(u8 run, i16 level)``: ``run`` zero samples are
followed by one sample equal to ``level``. ``(255, 0)`` ends a block and
zero-fills the remainder; ``(254, 0)`` therefore stands for 255 zeros.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from .errors import CorruptStream, ParseError

MAGIC = b"MVB1"
HEADER = struct.Struct("<4sHHBHBBI")
FRAME_HEADER = struct.Struct("<BI")
MB_MODE = struct.Struct("<B")
MB_MVS = struct.Struct("<8b")
RES_LEN = struct.Struct("<H")

FRAME_I, FRAME_P = 0, 1
INTRA, INTER = 0, 1

MB = 16
PART = 8
MB_SAMPLES = MB * MB

TOKEN = np.dtype([("run", "u1"), ("level", "<i2")])
END_RUN = 255
MAX_RUN = 254


@dataclass
class ByteAccessCounter:
    """Tally of how many bytes of a bitstream a parse touched.

    ``frame_bytes_skipped`` holds whole frame payloads jumped over through
    ``frame_payload_len``; the other fields cover bytes inside frames that
    were opened.
    """

    header_bytes: int = 0
    mv_bytes: int = 0
    residual_bytes_read: int = 0
    residual_bytes_skipped: int = 0
    frame_bytes_skipped: int = 0

    @property
    def bytes_read(self) -> int:
        return self.header_bytes + self.mv_bytes + self.residual_bytes_read

    @property
    def bytes_skipped(self) -> int:
        return self.residual_bytes_skipped + self.frame_bytes_skipped

    @property
    def total(self) -> int:
        return self.bytes_read + self.bytes_skipped

    def merge(self, other: "ByteAccessCounter") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    fps: int
    gop_length: int
    q: int
    s: int
    frame_count: int

    @property
    def mb_cols(self) -> int:
        return self.width // MB

    @property
    def mb_rows(self) -> int:
        return self.height // MB

    @property
    def mbs_per_frame(self) -> int:
        return self.mb_cols * self.mb_rows

    def pack(self) -> bytes:
        return HEADER.pack(MAGIC, self.width, self.height, self.fps, self.gop_length,
                           self.q, self.s, self.frame_count)


@dataclass(frozen=True)
class FrameEntry:
    index: int
    frame_type: int
    offset: int      # first byte of the MB records
    length: int      # frame_payload_len

    @property
    def end(self) -> int:
        return self.offset + self.length


def read_header(data: bytes, counter: ByteAccessCounter | None = None) -> StreamHeader:
    if len(data) < HEADER.size:
        raise ParseError("truncated stream header", len(data))
    magic, w, h, fps, gop, q, s, n = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptStream(f"bad magic {magic!r}, expected {MAGIC!r}")
    if w == 0 or h == 0 or w % MB or h % MB:
        raise CorruptStream(f"frame size {w}x{h} is not a positive multiple of {MB}")
    if gop < 1 or q < 1:
        raise CorruptStream("gop_length and q must be >= 1")
    if counter is not None:
        counter.header_bytes += HEADER.size
    return StreamHeader(w, h, fps, gop, q, s, n)


@dataclass
class MBRecord:
    """One parsed macroblock record. ``mvs`` is a (4, 2) array of (dx, dy)."""

    mode: int
    mvs: np.ndarray | None
    residual_offset: int
    residual_len: int


def iter_mb_records(data: bytes, entry: FrameEntry, n_mbs: int,
                    counter: ByteAccessCounter | None = None, skip_residuals: bool = True):
    """Yield MB records of one frame without touching residual bytes.

    With ``skip_residuals`` every residual payload is charged as skipped.
    Otherwise residuals are left uncharged and the consumer charges each one
    as read or skipped once it knows, which keeps every count monotone.
    """
    pos, end = entry.offset, entry.end
    for m in range(n_mbs):
        if pos + 1 > end:
            raise ParseError(f"frame {entry.index}: truncated MB {m}", pos)
        mode = data[pos]
        pos += 1
        mvs = None
        if mode == INTER:
            if pos + 8 > end:
                raise ParseError(f"frame {entry.index}: truncated MVs of MB {m}", pos)
            mvs = np.array(MB_MVS.unpack_from(data, pos), dtype=np.int64).reshape(4, 2)
            pos += 8
        elif mode != INTRA:
            raise CorruptStream(f"frame {entry.index}: MB {m} has unknown mode {mode}")
        if pos + 2 > end:
            raise ParseError(f"frame {entry.index}: truncated residual_len of MB {m}", pos)
        rlen = RES_LEN.unpack_from(data, pos)[0]
        pos += 2
        if pos + rlen > end:
            raise CorruptStream(
                f"frame {entry.index}: MB {m} residual_len {rlen} exceeds frame payload")
        if counter is not None:
            counter.header_bytes += 3
            if mvs is not None:
                counter.mv_bytes += 8
            if skip_residuals:
                counter.residual_bytes_skipped += rlen
        yield MBRecord(mode, mvs, pos, rlen)
        pos += rlen
    if pos != end:
        raise CorruptStream(
            f"frame {entry.index}: MB records end at {pos} but frame_payload_len ends at {end}")


def charge_residual_read(counter: ByteAccessCounter | None, nbytes: int) -> None:
    if counter is not None:
        counter.residual_bytes_read += nbytes


def rle_encode_block(levels: np.ndarray) -> bytes:
    """Run-length code one flattened channel block of quantized levels."""
    levels = np.asarray(levels).ravel()
    nz = np.flatnonzero(levels)
    runs = np.diff(nz, prepend=-1) - 1
    vals = levels[nz]
    if runs.size and runs.max() > MAX_RUN:
        r_out, v_out = [], []
        for r, v in zip(runs.tolist(), vals.tolist()):
            while r > MAX_RUN:
                r_out.append(MAX_RUN)
                v_out.append(0)
                r -= MAX_RUN + 1
            r_out.append(r)
            v_out.append(v)
        runs, vals = np.array(r_out), np.array(v_out)
    tok = np.empty(runs.size + 1, dtype=TOKEN)
    tok["run"][:-1] = runs
    tok["level"][:-1] = vals
    tok[-1] = (END_RUN, 0)
    return tok.tobytes()


def rle_encode_residual(levels: np.ndarray) -> bytes:
    """Code a (3, 16, 16) level array into the 3-block residual payload."""
    return b"".join(rle_encode_block(levels[c]) for c in range(levels.shape[0]))


def rle_decode_residual(payload: bytes, channels: int = 3, size: int = MB_SAMPLES) -> np.ndarray:
    """Inverse of :func:`rle_encode_residual`; returns an int64 (channels, size) array."""
    if len(payload) % TOKEN.itemsize:
        raise CorruptStream(f"residual payload length {len(payload)} is not a whole number of tokens")
    tok = np.frombuffer(payload, dtype=TOKEN)
    runs = tok["run"].astype(np.int64)
    lev = tok["level"].astype(np.int64)
    ends = np.flatnonzero((runs == END_RUN) & (lev == 0))
    if ends.size != channels or ends[-1] != tok.size - 1:
        raise CorruptStream(
            f"residual payload has {ends.size} block terminators, expected {channels} ending the payload")
    if np.any(runs == END_RUN) and np.count_nonzero(runs == END_RUN) != channels:
        raise CorruptStream("run 255 with a nonzero level")
    out = np.zeros((channels, size), dtype=np.int64)
    start = 0
    for c, stop in enumerate(ends):
        seg_runs = runs[start:stop]
        if seg_runs.size:
            pos = np.cumsum(seg_runs + 1) - 1
            if pos[-1] >= size:
                raise CorruptStream(f"residual block {c} overruns {size} samples")
            out[c, pos] = lev[start:stop]
        start = stop + 1
    return out


class FrameIndex:
    """Lazily built table of frame entries; frame headers are charged as read."""

    def __init__(self, data: bytes, header: StreamHeader, counter: ByteAccessCounter | None = None):
        self.data = data
        self.header = header
        self.counter = counter
        self.entries: list[FrameEntry] = []
        self._pos = HEADER.size

    def __len__(self) -> int:
        return self.header.frame_count

    def __getitem__(self, k: int) -> FrameEntry:
        if not 0 <= k < self.header.frame_count:
            raise IndexError(f"frame index {k} out of range [0, {self.header.frame_count})")
        while len(self.entries) <= k:
            self._scan_next()
        return self.entries[k]

    def _scan_next(self) -> None:
        k, pos, data = len(self.entries), self._pos, self.data
        if pos + FRAME_HEADER.size > len(data):
            raise ParseError(f"truncated header of frame {k}", pos)
        ftype, plen = FRAME_HEADER.unpack_from(data, pos)
        if ftype not in (FRAME_I, FRAME_P):
            raise CorruptStream(f"frame {k}: unknown frame type {ftype}")
        if (k % self.header.gop_length == 0) != (ftype == FRAME_I):
            raise CorruptStream(
                f"frame {k}: type {ftype} disagrees with gop_length {self.header.gop_length}")
        pos += FRAME_HEADER.size
        if pos + plen > len(data):
            raise ParseError(f"frame {k} payload of {plen} bytes runs past end of stream", len(data))
        self.entries.append(FrameEntry(k, ftype, pos, plen))
        if self.counter is not None:
            self.counter.header_bytes += FRAME_HEADER.size
        self._pos = pos + plen

    def finish(self) -> None:
        """Scan any remaining frames and reject trailing garbage."""
        if self.header.frame_count:
            self[self.header.frame_count - 1]
        if self._pos != len(self.data):
            raise CorruptStream(f"{len(self.data) - self._pos} trailing bytes after last frame")

    def charge_skipped(self, touched: set[int]) -> None:
        """Charge every scanned frame not in ``touched`` as a skipped payload."""
        if self.counter is None:
            return
        for e in self.entries:
            if e.index not in touched:
                self.counter.frame_bytes_skipped += e.length
