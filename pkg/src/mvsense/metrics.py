"""Flow accuracy, rendering fidelity, throughput and deployment cost."""

from __future__ import annotations

import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bitstream import ByteAccessCounter
from .codec import EncodedVideo, decode
from .errors import InvalidInput
from .sensor import SelectiveDecodeConfig, extract_mv_fields, selective_decode

SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


# --- end-point error ------------------------------------------------------

def area_average(flow: np.ndarray, block: int) -> np.ndarray:
    """Average a (H, W, 2) dense flow over non-overlapping ``block`` squares."""
    flow = np.asarray(flow, dtype=np.float64)
    h, w = flow.shape[:2]
    if h % block or w % block:
        raise InvalidInput(f"{w}x{h} flow is not divisible into {block}x{block} blocks")
    return flow.reshape(h // block, block, w // block, block, 2).mean(axis=(1, 3))


def _as_grid(flow, block: int) -> np.ndarray:
    """Bring a field or dense flow to a (rows, cols, 2) grid at ``block`` resolution."""
    if hasattr(flow, "to_flow"):
        grid, own = flow.to_flow(), flow.block_size
    else:
        grid, own = np.asarray(flow, dtype=np.float64), 1
    if own == block:
        return grid
    if block % own:
        raise InvalidInput(f"cannot area-average {own}-pixel cells to {block}-pixel cells")
    f = block // own
    rows, cols = grid.shape[:2]
    if rows % f or cols % f:
        raise InvalidInput(f"{cols}x{rows} grid is not divisible by {f}")
    return grid.reshape(rows // f, f, cols // f, f, 2).mean(axis=(1, 3))


def epe(estimated, reference, at_resolution: int = 8, border: int = 0,
        mask: np.ndarray | None = None) -> float:
    """Mean end-point error at ``at_resolution``-pixel cells.

    ``estimated`` may be a :class:`~mvsense.sensor.MotionVectorField` (its
    negated MVs are the forward flow) or a dense (H, W, 2) flow;
    ``reference`` a dense (H, W, 2) flow. ``border`` drops that many cells on
    every side; ``mask`` selects cells explicitly.
    """
    a = _as_grid(estimated, at_resolution)
    b = _as_grid(reference, at_resolution)
    if a.shape != b.shape:
        raise InvalidInput(f"flow grids differ after resampling: {a.shape} vs {b.shape}")
    err = np.sqrt(((a - b) ** 2).sum(axis=2))
    if border:
        err = err[border:-border, border:-border]
        if mask is not None:
            mask = mask[border:-border, border:-border]
    if mask is not None:
        err = err[mask]
    if err.size == 0:
        raise InvalidInput("no positions left to evaluate")
    return float(err.mean())


def sequence_epe(fields, truth, at_resolution: int = 8, border: int = 0) -> float:
    """Mean EPE over MV fields against the matching frames of a GroundTruthFlow."""
    vals = [epe(f, truth.flow[f.frame_index], at_resolution, border) for f in fields]
    if not vals:
        raise InvalidInput("no motion vector fields to evaluate")
    return float(np.mean(vals))


# --- SSIM -----------------------------------------------------------------

def _luma_f(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[0] != 3:
            raise InvalidInput(f"expected planar RGB (3, H, W), got {img.shape}")
        return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
    if img.ndim != 2:
        raise InvalidInput(f"expected a 2-D luma or (3, H, W) image, got {img.shape}")
    return img


def _box_mean(x: np.ndarray, win: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(x, (win, win)).mean(axis=(2, 3))


def ssim(img_a, img_b, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all ``window`` x ``window`` luma windows (stride 1, uniform weights)."""
    a, b = _luma_f(img_a), _luma_f(img_b)
    if a.shape != b.shape:
        raise InvalidInput(f"image sizes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < window:
        raise InvalidInput(f"images smaller than the {window}x{window} window")
    mu_a, mu_b = _box_mean(a, window), _box_mean(b, window)
    var_a = _box_mean(a * a, window) - mu_a * mu_a
    var_b = _box_mean(b * b, window) - mu_b * mu_b
    cov = _box_mean(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def video_ssim(frames_a, frames_b) -> float:
    """Per-video score: mean per-frame SSIM."""
    vals = [ssim(a, b) for a, b in zip(frames_a, frames_b, strict=True)]
    return float(np.mean(vals))


# --- cost model -----------------------------------------------------------

COMPONENTS = ("flow", "decode", "t-stream", "s-stream")


@dataclass(frozen=True)
class CostInputs:
    """Throughput ``fps`` and instance price ``price`` ($/hr) per component; ``frames`` = A."""

    fps: dict
    price: dict
    frames: float

    def validate(self) -> None:
        if self.frames <= 0:
            raise InvalidInput("frame count A must be positive")
        for c in COMPONENTS:
            if c not in self.fps or c not in self.price:
                raise InvalidInput(f"missing cost component {c!r}")
            if not self.fps[c] > 0:
                raise InvalidInput(f"FPS of {c!r} must be positive, got {self.fps[c]}")
            if self.price[c] < 0:
                raise InvalidInput(f"price of {c!r} must be non-negative")


def cost_component(inputs: CostInputs, component: str) -> float:
    """Dollar cost of one component: A/3600 * P/F."""
    inputs.validate()
    return inputs.frames / 3600.0 * inputs.price[component] / inputs.fps[component]


def cost_total(inputs: CostInputs) -> float:
    return sum(cost_component(inputs, c) for c in COMPONENTS)


CPU_PRICE = 0.333  # $/hr, r3.xlarge
GPU_PRICE = 0.9    # $/hr, p2.xlarge
UCF101_SPLIT1_FRAMES = 180 * 3783
# No FPS is given for this flow cell; back-solved from its 0.006 dollar cost.
EMV_FLOW_FPS = UCF101_SPLIT1_FRAMES / 3600 * CPU_PRICE / 0.006

TABLE7_PRESET = {
    "Proposed, X=10": ({"flow": 18226, "decode": 1180, "t-stream": 3105, "s-stream": 1228},
                       {"flow": CPU_PRICE, "decode": CPU_PRICE, "t-stream": GPU_PRICE, "s-stream": GPU_PRICE}),
    "Proposed, X=50": ({"flow": 18226, "decode": 2016, "t-stream": 3105, "s-stream": 1228},
                       {"flow": CPU_PRICE, "decode": CPU_PRICE, "t-stream": GPU_PRICE, "s-stream": GPU_PRICE}),
    "TSCNN (fusion)": ({"flow": 18.64, "decode": 168, "t-stream": 185, "s-stream": 252},
                       {"flow": GPU_PRICE, "decode": CPU_PRICE, "t-stream": GPU_PRICE, "s-stream": GPU_PRICE}),
    "EMV + RGB-CNN": ({"flow": EMV_FLOW_FPS, "decode": 168, "t-stream": 1537, "s-stream": 252},
                      {"flow": CPU_PRICE, "decode": CPU_PRICE, "t-stream": GPU_PRICE, "s-stream": GPU_PRICE}),
}


def cost_table(preset: dict | None = None, frames: float = UCF101_SPLIT1_FRAMES) -> list[dict]:
    """Rows of (framework, C_flow, C_decode, C_t, C_s, C_tot), unrounded."""
    rows = []
    for name, (fps, price) in (preset or TABLE7_PRESET).items():
        inp = CostInputs(fps, price, frames)
        comps = [cost_component(inp, c) for c in COMPONENTS]
        rows.append({"framework": name, "C_flow": comps[0], "C_decode": comps[1],
                     "C_t": comps[2], "C_s": comps[3], "C_tot": sum(comps)})
    return rows


# --- throughput -----------------------------------------------------------

TASKS = ("extract-mv", "selective-decode", "full-decode")
CURVE_XS = (1, 2, 5, 10, 25, 50, 100)


@dataclass
class BenchResult:
    task: str
    x: float | None
    r: int | None
    a: float | None
    frames: int
    seconds: float
    fps: float
    counter: ByteAccessCounter = field(default_factory=ByteAccessCounter)
    runs: list = field(default_factory=list)

    def row(self) -> dict:
        return {"task": self.task, "X": _fmt(self.x), "R": _fmt(self.r), "A": _fmt(self.a),
                "frames": self.frames, "seconds": self.seconds, "fps": self.fps,
                "residual_bytes_read": self.counter.residual_bytes_read,
                "residual_bytes_skipped": self.counter.residual_bytes_skipped}


BENCH_COLUMNS = ("task", "X", "R", "A", "frames", "seconds", "fps",
                 "residual_bytes_read", "residual_bytes_skipped")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _runner(task: str, cfg: SelectiveDecodeConfig | None):
    if task == "extract-mv":
        return lambda bs, c: extract_mv_fields(bs, c)
    if task == "full-decode":
        return lambda bs, c: decode(bs, c)
    if task == "selective-decode":
        return lambda bs, c: selective_decode(bs, cfg, c)
    raise InvalidInput(f"unknown bench task {task!r}; choose from {', '.join(TASKS)}")


def bench(bitstreams, task: str, repetitions: int = 3,
          cfg: SelectiveDecodeConfig | None = None) -> BenchResult:
    """Frames per second of ``task`` over a corpus: total frames / median wall-clock.

    Each repetition runs the whole corpus in this process. Byte counters come
    from the first repetition (every repetition touches the same bytes).
    """
    bitstreams = list(bitstreams)
    if not bitstreams:
        raise InvalidInput("bench needs a non-empty corpus")
    if repetitions < 1:
        raise InvalidInput("repetitions must be >= 1")
    if task == "selective-decode":
        cfg = cfg or SelectiveDecodeConfig()
        cfg.validate()
    run = _runner(task, cfg)
    frames = sum(bs.frame_count for bs in bitstreams)
    total = ByteAccessCounter()
    runs = []
    for rep in range(repetitions):
        counters = [ByteAccessCounter() for _ in bitstreams]
        t0 = time.perf_counter()
        for bs, c in zip(bitstreams, counters):
            run(bs, c)
        runs.append(time.perf_counter() - t0)
        if rep == 0:
            for c in counters:
                total.merge(c)
    seconds = statistics.median(runs)
    x = r = a = None
    if cfg is not None and task == "selective-decode":
        x, r, a = cfg.x, cfg.r, cfg.a
    return BenchResult(task, x, r, a, frames, seconds, frames / seconds, total, runs)


def _run_one(args) -> ByteAccessCounter:
    task, cfg, data = args
    counter = ByteAccessCounter()
    _runner(task, cfg)(EncodedVideo(data), counter)
    return counter


def bench_parallel(bitstreams, task: str, jobs: int, repetitions: int = 3,
                   cfg: SelectiveDecodeConfig | None = None) -> BenchResult:
    """Like ``bench`` but spreads videos over ``jobs`` worker processes.

    The pool is started before timing, so the wall-clock covers dispatch and
    decoding only. Reported apart from the single-process numbers.
    """
    bitstreams = list(bitstreams)
    if not bitstreams:
        raise InvalidInput("bench needs a non-empty corpus")
    if repetitions < 1 or jobs < 1:
        raise InvalidInput("repetitions and jobs must be >= 1")
    if task == "selective-decode":
        cfg = cfg or SelectiveDecodeConfig()
        cfg.validate()
    _runner(task, cfg)
    work = [(task, cfg, bs.data) for bs in bitstreams]
    frames = sum(bs.frame_count for bs in bitstreams)
    runs, total = [], ByteAccessCounter()
    with ProcessPoolExecutor(jobs) as pool:
        list(pool.map(int, range(jobs)))  # warm the workers
        for rep in range(repetitions):
            t0 = time.perf_counter()
            counters = list(pool.map(_run_one, work))
            runs.append(time.perf_counter() - t0)
            if rep == 0:
                for c in counters:
                    total.merge(c)
    seconds = statistics.median(runs)
    x = r = a = None
    if task == "selective-decode":
        x, r, a = cfg.x, cfg.r, cfg.a
    return BenchResult(task, x, r, a, frames, seconds, frames / seconds, total, runs)


def curve_config(x, r: int = 10, a: float = 0.0) -> SelectiveDecodeConfig:
    """Selective-decode settings of one curve point; R is capped at X."""
    r_eff = int(min(r, x)) if not math.isinf(x) else r
    return SelectiveDecodeConfig(x=x, r=r_eff, a=a)


def fps_curve(bitstreams, xs=CURVE_XS, r: int = 10, a: float = 0.0,
              repetitions: int = 3) -> list[BenchResult]:
    """Selective-decode FPS at each X. Points are measured round-robin so drift in
    machine speed spreads over all X instead of biasing the later ones."""
    bitstreams = list(bitstreams)
    cfgs = [curve_config(x, r, a) for x in xs]
    per_x = [[] for _ in xs]
    for _ in range(repetitions):
        for i, cfg in enumerate(cfgs):
            per_x[i].append(bench(bitstreams, "selective-decode", 1, cfg))
    out = []
    for cfg, results in zip(cfgs, per_x):
        first = results[0]
        secs = statistics.median(res.seconds for res in results)
        out.append(BenchResult("selective-decode", cfg.x, cfg.r, cfg.a, first.frames, secs,
                               first.frames / secs, first.counter, [res.seconds for res in results]))
    return out


def ssim_curve(bitstreams, xs=CURVE_XS, r: int = 10, a: float = 0.0) -> list[tuple]:
    """(X, mean SSIM) where each video scores the mean SSIM of its emitted frames
    against the full decode, and the corpus score is the mean over videos."""
    bitstreams = list(bitstreams)
    if not bitstreams:
        raise InvalidInput("ssim curve needs a non-empty corpus")
    full = [decode(bs).frames for bs in bitstreams]
    rows = []
    for x in xs:
        cfg = curve_config(x, r, a)
        scores = []
        for bs, ref in zip(bitstreams, full):
            out, _ = selective_decode(bs, cfg)
            scores.append(video_ssim([f for _, f in out], [ref[k] for k, _ in out]))
        rows.append((x, float(np.mean(scores))))
    return rows
