"""Network inputs: stacked MV volumes for the temporal stream, RGB crops for the spatial one.

Temporal volumes are (N_T, N_T, 2, T) arrays indexed (row, col, component,
time), component 0 being dx. Spatial inputs are (N_S, N_S, 3) arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codec import EncodedVideo
from .errors import InvalidConfig, InvalidInput, NoTemporalData
from .sensor import extract_mv_fields, fill_intra

# Plain ndarrays stand in for the tensor type; the shape conventions above apply.
TensorVolume = np.ndarray


@dataclass(frozen=True)
class TemporalInputConfig:
    n_t: int = 24
    t: int = 160
    crop_scales: tuple = (0.5, 0.667, 0.833, 1.0)

    def validate(self) -> None:
        if self.n_t < 8 or self.n_t % 8:
            raise InvalidConfig(f"N_T must be a positive multiple of 8, got {self.n_t}")
        if self.t < 1:
            raise InvalidConfig(f"T must be >= 1, got {self.t}")
        if not self.crop_scales or any(not 0 < c <= 1 for c in self.crop_scales):
            raise InvalidConfig("crop scales must lie in (0, 1]")


@dataclass(frozen=True)
class SpatialInputConfig:
    resize_short_side: int = 256
    n_s: int = 224
    crop_scales: tuple = (0.857, 1.0, 1.143)

    def validate(self) -> None:
        if self.n_s < 1 or self.resize_short_side < 1:
            raise InvalidConfig("spatial sizes must be positive")
        if self.n_s > self.resize_short_side * max(self.crop_scales):
            raise InvalidConfig(
                f"N_S={self.n_s} exceeds resize_short_side * max(d) = "
                f"{self.resize_short_side * max(self.crop_scales):.1f}")


TEMPORAL_DESK = TemporalInputConfig(n_t=8, t=32)
SPATIAL_DESK = SpatialInputConfig(resize_short_side=40, n_s=32)


# --- MV field gathering ----------------------------------------------------

def p_field_stack(source) -> np.ndarray:
    """(P, rows, cols, 2) stack of Intra-filled MV grids for every P-frame.

    ``source`` is an :class:`EncodedVideo`, a list of fields, or an already
    stacked array (returned unchanged).
    """
    if isinstance(source, np.ndarray):
        return source
    fields = extract_mv_fields(source)[0] if isinstance(source, EncodedVideo) else list(source)
    if not fields:
        raise NoTemporalData("stream has no P-frames, so there are no motion vectors to stack")
    return np.stack([fill_intra(f).grid for f in fields])


def collect_p_frames(source, start_index: int, t: int) -> list:
    """``t`` consecutive P-frame fields from ``start_index``, wrapping to the first P-frame."""
    if isinstance(source, EncodedVideo):
        source = extract_mv_fields(source)[0]
    n = len(source)
    if n == 0:
        raise NoTemporalData("stream has no P-frames, so there are no motion vectors to collect")
    if not 0 <= start_index < n:
        raise InvalidInput(f"start index {start_index} outside [0, {n})")
    return [source[(start_index + i) % n] for i in range(t)]


def window_at(stack: np.ndarray, start: int, t: int) -> np.ndarray:
    """``t`` consecutive entries of a P-field stack from ``start``, wrapping around."""
    idx = (start + np.arange(t)) % len(stack)
    return stack[idx]


# --- resampling ------------------------------------------------------------

def _axis_weights(n_in: int, n_out: int):
    """Bilinear taps mapping ``n_out`` cell centres onto ``n_in`` cells (edge clamped)."""
    u = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    u = np.clip(u, 0, n_in - 1)
    i0 = np.floor(u).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, u - i0


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize over the first two axes with half-pixel centres."""
    h, w = arr.shape[:2]
    if (h, w) == (out_h, out_w):
        return arr.astype(np.float64, copy=True)
    r0, r1, wr = _axis_weights(h, out_h)
    c0, c1, wc = _axis_weights(w, out_w)
    arr = arr.astype(np.float64)
    extra = (1,) * (arr.ndim - 2)
    wr = wr.reshape((-1, 1) + extra)
    wc = wc.reshape((1, -1) + extra)
    top = arr[r0][:, c0] * (1 - wc) + arr[r0][:, c1] * wc
    bot = arr[r1][:, c0] * (1 - wc) + arr[r1][:, c1] * wc
    return top * (1 - wr) + bot * wr


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# --- temporal volumes ------------------------------------------------------

def _temporal_volume(window: np.ndarray, n_t: int, y0: int, x0: int, size: int,
                     flip: bool) -> np.ndarray:
    """Crop, flip, resize and zero-centre a (T, rows, cols, 2) window."""
    crop = window[:, y0:y0 + size, x0:x0 + size, :]
    if flip:
        crop = crop[:, :, ::-1, :] * np.array([-1.0, 1.0])
    vol = resize_bilinear(crop.transpose(1, 2, 0, 3), n_t, n_t)  # (n_t, n_t, T, 2)
    vol -= vol.mean(axis=(0, 1), keepdims=True)
    return vol.transpose(0, 1, 3, 2).astype(np.float32)


def augment_temporal(fields, cfg: TemporalInputConfig, rng: np.random.Generator,
                     scale: float | None = None, flip: bool | None = None,
                     position: tuple[int, int] | None = None) -> TensorVolume:
    """Training volume: multi-scale random crop, random mirror, resize, zero-centre.

    ``fields`` is a list of T fields or a (T, rows, cols, 2) array. ``scale``,
    ``flip`` and ``position`` (x0, y0) override the random draws.
    """
    cfg.validate()
    window = p_field_stack(fields) if not isinstance(fields, np.ndarray) else fields
    rows, cols = window.shape[1:3]
    c = cfg.crop_scales[rng.integers(len(cfg.crop_scales))] if scale is None else scale
    size = _round_half_up(cfg.n_t * c)
    if size > rows or size > cols:
        raise InvalidConfig(f"crop of {size} cells does not fit the {cols}x{rows} MV grid")
    if position is None:
        x0 = int(rng.integers(cols - size + 1))
        y0 = int(rng.integers(rows - size + 1))
    else:
        x0, y0 = position
    if flip is None:
        flip = bool(rng.integers(2))
    return _temporal_volume(window, cfg.n_t, y0, x0, size, flip)


def crop_offsets(cols: int, rows: int, n: int) -> list[tuple[int, int]]:
    """(x0, y0) of the four corner crops followed by the centre crop."""
    if n > cols or n > rows:
        raise InvalidConfig(f"{n}x{n} test crop does not fit the {cols}x{rows} MV grid")
    dx, dy = cols - n, rows - n
    return [(0, 0), (dx, 0), (0, dy), (dx, dy), (dx // 2, dy // 2)]


def prepare_temporal_test_inputs(source, cfg: TemporalInputConfig,
                                 center_only: bool = False) -> list[TensorVolume]:
    """Two volumes (from P-frame 0 and #P // 2), each as 4 corners, centre and mirrored centre.

    ``center_only`` returns just the unmirrored centre crop of the first volume.
    """
    cfg.validate()
    stack = p_field_stack(source)
    rows, cols = stack.shape[1:3]
    offsets = crop_offsets(cols, rows, cfg.n_t)
    if center_only:
        x0, y0 = offsets[4]
        return [_temporal_volume(window_at(stack, 0, cfg.t), cfg.n_t, y0, x0, cfg.n_t, False)]
    out = []
    for start in (0, len(stack) // 2):
        window = window_at(stack, start, cfg.t)
        for x0, y0 in offsets:
            out.append(_temporal_volume(window, cfg.n_t, y0, x0, cfg.n_t, False))
        x0, y0 = offsets[4]
        out.append(_temporal_volume(window, cfg.n_t, y0, x0, cfg.n_t, True))
    return out


# --- spatial inputs --------------------------------------------------------

def resize_short_side(frame: np.ndarray, short: int) -> np.ndarray:
    """(3, H, W) uint8 frame to (H', W', 3) float with min(H', W') == ``short``."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise InvalidInput(f"expected a planar (3, H, W) frame, got {frame.shape}")
    h, w = frame.shape[1:]
    if h < 16 or w < 16:
        raise InvalidInput(f"frame {w}x{h} is smaller than 16x16")
    if h <= w:
        nh, nw = short, _round_half_up(w * short / h)
    else:
        nh, nw = _round_half_up(h * short / w), short
    return resize_bilinear(frame.transpose(1, 2, 0), nh, nw)


def _spatial_crop(img: np.ndarray, y0: int, x0: int, size: int, n_s: int, flip: bool) -> np.ndarray:
    crop = img[y0:y0 + size, x0:x0 + size]
    if flip:
        crop = crop[:, ::-1]
    out = resize_bilinear(crop, n_s, n_s)
    out -= out.mean(axis=(0, 1), keepdims=True)
    return out.astype(np.float32)


def prepare_spatial_train_input(frame: np.ndarray, cfg: SpatialInputConfig,
                                rng: np.random.Generator) -> TensorVolume:
    cfg.validate()
    img = resize_short_side(frame, cfg.resize_short_side)
    h, w = img.shape[:2]
    d = cfg.crop_scales[rng.integers(len(cfg.crop_scales))]
    size = min(_round_half_up(cfg.n_s * d), h, w)
    y0 = int(rng.integers(h - size + 1))
    x0 = int(rng.integers(w - size + 1))
    return _spatial_crop(img, y0, x0, size, cfg.n_s, bool(rng.integers(2)))


def spatial_test_indices(n: int, count: int = 5) -> list[int]:
    """Evenly spaced picks round(i * (n - 1) / (count - 1)), rounding halves up."""
    if n < 1:
        raise InvalidInput("need at least one frame")
    return [_round_half_up(i * (n - 1) / (count - 1)) for i in range(count)]


def prepare_spatial_test_inputs(frames, cfg: SpatialInputConfig,
                                center_only: bool = False) -> list[TensorVolume]:
    """Centre crop and its mirror for 5 evenly spaced frames (10 inputs)."""
    cfg.validate()
    frames = list(frames)
    picks = spatial_test_indices(len(frames))
    if center_only:
        picks = picks[2:3]
    out = []
    for i in picks:
        img = resize_short_side(frames[i], cfg.resize_short_side)
        h, w = img.shape[:2]
        size = min(cfg.n_s, h, w)
        y0, x0 = (h - size) // 2, (w - size) // 2
        out.append(_spatial_crop(img, y0, x0, size, cfg.n_s, False))
        if not center_only:
            out.append(_spatial_crop(img, y0, x0, size, cfg.n_s, True))
    return out


def to_channels_first(volume: np.ndarray) -> np.ndarray:
    """Network layout: (H, W, 2, T) -> (2, T, H, W); (H, W, 3) -> (3, H, W)."""
    if volume.ndim == 4:
        return np.ascontiguousarray(volume.transpose(2, 3, 0, 1))
    if volume.ndim == 3:
        return np.ascontiguousarray(volume.transpose(2, 0, 1))
    raise InvalidInput(f"unsupported volume rank {volume.ndim}")
