"""Synthetic labelled videos with exact ground-truth motion.

Every video is a static textured background with one textured object on top.
The object moves according to ``motion_kind``; its flow is exact for
``translate``/``oscillate``/``static`` and approximate for ``rotate-approx``.
Translated objects wrap around the frame edges (toroidal motion).
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .codec import CodecConfig, VideoSequence, encode
from .errors import InvalidSpec
from .formats import write_rgb

TEXTURES = ("noise", "checker", "gradient", "stripes")
MOTIONS = ("translate", "oscillate", "rotate-approx", "static")


class InvalidSpecWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one video.

    ``velocity`` is (vx, vy) in pixels/frame. For ``oscillate`` it is the
    velocity of the first half period and ``period`` the full period in
    frames, so the amplitude is ``|v| * period / 4``. ``angular_speed``
    (radians/frame) only applies to ``rotate-approx``. ``object_scale`` is the
    object side as a fraction of the shorter frame side; ``None`` makes the
    object cover the whole frame.
    """

    class_id: int = 0
    texture_kind: str = "noise"
    motion_kind: str = "translate"
    velocity: tuple[int, int] = (2, 0)
    num_frames: int = 40
    width: int = 320
    height: int = 240
    seed: int = 0
    period: int = 8
    angular_speed: float = 0.08
    object_scale: float | None = 0.5
    fps: int = 25

    def validate(self) -> None:
        if self.texture_kind not in TEXTURES:
            raise InvalidSpec(f"unknown texture_kind {self.texture_kind!r}; choose from {TEXTURES}")
        if self.motion_kind not in MOTIONS:
            raise InvalidSpec(f"unknown motion_kind {self.motion_kind!r}; choose from {MOTIONS}")
        if self.num_frames < 1 or self.width < 16 or self.height < 16:
            raise InvalidSpec("need num_frames >= 1 and frames of at least 16x16")
        if self.width % 16 or self.height % 16:
            raise InvalidSpec(f"{self.width}x{self.height} is not a multiple of 16")
        if self.motion_kind == "oscillate" and (self.period < 2 or self.period % 2):
            raise InvalidSpec(f"oscillation period must be an even integer >= 2, got {self.period}")
        if any(int(v) != v for v in self.velocity):
            raise InvalidSpec(f"velocity must be integer pixels/frame, got {self.velocity}")

    @property
    def amplitude(self) -> float:
        return max(abs(v) for v in self.velocity) * self.period / 4


@dataclass(frozen=True)
class GroundTruthFlow:
    """Dense forward flow: ``flow[t, y, x] = (dx, dy)`` moved between frames t-1 and t."""

    flow: np.ndarray  # (n, H, W, 2) float32; frame 0 is all zero


def velocity_schedule(spec: SyntheticSpec) -> np.ndarray:
    """Per-frame displacement (n, 2); entry t is the motion from t-1 to t."""
    n = spec.num_frames
    v = np.asarray(spec.velocity, dtype=np.int64)
    sched = np.zeros((n, 2), dtype=np.int64)
    if spec.motion_kind == "translate":
        sched[1:] = v
    elif spec.motion_kind == "oscillate":
        half = spec.period // 2
        t = np.arange(1, n)
        sign = np.where(((t - 1) // half) % 2 == 0, 1, -1)
        sched[1:] = sign[:, None] * v
    return sched


def _texture(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    c0 = rng.integers(30, 226, size=3)
    c1 = rng.integers(30, 226, size=3)
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == "noise":
        img = c0[:, None, None] + rng.integers(-70, 71, size=(3, h, w))
    elif kind == "checker":
        cell = int(rng.integers(4, 9))
        mask = ((yy // cell + xx // cell) % 2).astype(bool)
        img = np.where(mask[None], c0[:, None, None], c1[:, None, None])
        img = img + rng.integers(-6, 7, size=(3, h, w))
    elif kind == "gradient":
        theta = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(theta) * xx + np.sin(theta) * yy)
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1)
        img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp
        img = img + rng.integers(-3, 4, size=(3, h, w))
    else:  # stripes
        period = rng.uniform(6, 12)
        theta = rng.choice([0.0, np.pi / 2, np.pi / 4, 3 * np.pi / 4])
        phase = (np.cos(theta) * xx + np.sin(theta) * yy) * 2 * np.pi / period
        s = 0.5 + 0.5 * np.sin(phase)
        img = c0[:, None, None] * (1 - s) + c1[:, None, None] * s
        img = img + rng.integers(-4, 5, size=(3, h, w))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _check_search_range(spec: SyntheticSpec, search_range: int) -> None:
    if spec.motion_kind in ("translate", "oscillate") and max(map(abs, spec.velocity)) > search_range:
        warnings.warn(
            f"velocity {spec.velocity} exceeds codec search range {search_range}; "
            "MVs cannot represent this motion", InvalidSpecWarning, stacklevel=3)


def generate(spec: SyntheticSpec, search_range: int = 8
             ) -> tuple[VideoSequence, GroundTruthFlow, int]:
    """Render ``spec`` into a video plus its exact (or approximate) forward flow."""
    spec.validate()
    _check_search_range(spec, search_range)
    rng = np.random.default_rng(spec.seed)
    n, h, w = spec.num_frames, spec.height, spec.width
    bg = _texture(spec.texture_kind, h, w, rng)
    if spec.object_scale is None:
        oh, ow = h, w
    else:
        side = max(8, int(round(min(h, w) * spec.object_scale)))
        oh = ow = min(side, h, w)
    obj = _texture(spec.texture_kind, oh, ow, rng)
    y0 = int(rng.integers(0, h))
    x0 = int(rng.integers(0, w))
    frames = np.empty((n, 3, h, w), dtype=np.uint8)
    flow = np.zeros((n, h, w, 2), dtype=np.float32)

    if spec.motion_kind == "rotate-approx":
        cy, cx = (h - 1) / 2, (w - 1) / 2
        radius = min(oh, ow) / 2
        yy, xx = np.mgrid[0:h, 0:w]
        ry, rx = yy - cy, xx - cx
        disc = ry ** 2 + rx ** 2 <= radius ** 2
        oc = (oh - 1) / 2
        omega = spec.angular_speed
        for t in range(n):
            ang = omega * t
            # material point now at (rx, ry) started at angle -ang
            sx = np.cos(ang) * rx + np.sin(ang) * ry
            sy = -np.sin(ang) * rx + np.cos(ang) * ry
            iy = np.clip(np.rint(sy + oc).astype(int), 0, oh - 1)
            ix = np.clip(np.rint(sx + oc).astype(int), 0, ow - 1)
            frame = bg.copy()
            frame[:, disc] = obj[:, iy[disc], ix[disc]]
            frames[t] = frame
            if t:
                px = np.cos(omega) * rx + np.sin(omega) * ry
                py = -np.sin(omega) * rx + np.cos(omega) * ry
                flow[t, disc, 0] = (rx - px)[disc]
                flow[t, disc, 1] = (ry - py)[disc]
        return VideoSequence(w, h, spec.fps, frames), GroundTruthFlow(flow), spec.class_id

    sched = velocity_schedule(spec)
    pos = np.cumsum(sched, axis=0) + np.array([x0, y0])
    for t in range(n):
        px, py = int(pos[t, 0]), int(pos[t, 1])
        rows = (py + np.arange(oh)) % h
        cols = (px + np.arange(ow)) % w
        frame = bg.copy()
        frame[:, rows[:, None], cols[None, :]] = obj
        frames[t] = frame
        if t and sched[t].any():
            flow[t, rows[:, None], cols[None, :]] = sched[t]
    return VideoSequence(w, h, spec.fps, frames), GroundTruthFlow(flow), spec.class_id


# Class templates: (texture or None for random per video, motion, velocity, random h-sign)
MOTION_TEMPLATES = [
    ("static", (0, 0), False),
    ("translate", (2, 0), True),
    ("translate", (0, -2), False),
    ("translate", (0, 2), False),
    ("oscillate", (2, 0), True),
    ("rotate-approx", (0, 0), False),
    ("oscillate", (0, 2), False),
    ("translate", (2, 2), True),
]
FACTORIAL_TEXTURES = ("noise", "checker")
FACTORIAL_MOTIONS = [
    ("translate", (2, 0), True),
    ("oscillate", (2, 0), True),
    ("static", (0, 0), False),
    ("translate", (0, 2), False),
]


def class_recipe(class_id: int, n_classes: int, design: str) -> tuple[str | None, str, tuple[int, int], bool]:
    """Texture/motion recipe of a class under a dataset design.

    ``complementarity``: class c has texture ``c % 2`` and motion ``c // 2``,
    so classes 0/2 share texture and differ in motion while 0/1 share motion
    and differ in texture. ``motion``: every class has its own motion and
    textures are drawn at random per video.
    """
    if design == "complementarity":
        if not 3 <= n_classes <= 2 * len(FACTORIAL_MOTIONS):
            raise InvalidSpec(f"complementarity design needs 3..{2 * len(FACTORIAL_MOTIONS)} classes")
        motion, vel, flip = FACTORIAL_MOTIONS[class_id // 2]
        return FACTORIAL_TEXTURES[class_id % 2], motion, vel, flip
    if design == "motion":
        if not 2 <= n_classes <= len(MOTION_TEMPLATES):
            raise InvalidSpec(f"motion design supports 2..{len(MOTION_TEMPLATES)} classes")
        motion, vel, flip = MOTION_TEMPLATES[class_id]
        return None, motion, vel, flip
    raise InvalidSpec(f"unknown dataset design {design!r}")


@dataclass
class ManifestRecord:
    video_id: str
    class_id: int
    split: str
    spec: SyntheticSpec
    path: str = ""
    rgb_path: str = ""

    def to_json(self) -> str:
        d = {"video_id": self.video_id, "class_id": self.class_id, "split": self.split,
             "path": self.path, "rgb_path": self.rgb_path, **asdict(self.spec)}
        d["velocity"] = list(self.spec.velocity)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        d = json.loads(line)
        spec_keys = {f for f in SyntheticSpec.__dataclass_fields__}
        spec = SyntheticSpec(**{k: (tuple(v) if k == "velocity" else v)
                                for k, v in d.items() if k in spec_keys})
        return cls(d["video_id"], d["class_id"], d["split"], spec,
                   d.get("path", ""), d.get("rgb_path", ""))


def build_dataset(n_classes: int, n_videos_per_class: int, split_ratio: float = 0.8,
                  seed: int = 0, design: str = "complementarity", width: int = 64,
                  height: int = 64, num_frames: int = 40) -> list[ManifestRecord]:
    """Deterministic manifest of labelled synthetic videos with disjoint splits."""
    if n_classes < 2:
        raise InvalidSpec("need at least 2 classes")
    if not 0.0 <= split_ratio <= 1.0:
        raise InvalidSpec("split_ratio must be in [0, 1]")
    root = np.random.SeedSequence(seed)
    records = []
    n_train = int(round(n_videos_per_class * split_ratio))
    children = root.spawn(n_classes)
    for c in range(n_classes):
        texture, motion, vel, flip = class_recipe(c, n_classes, design)
        rng = np.random.default_rng(children[c])
        order = rng.permutation(n_videos_per_class)
        for i in range(n_videos_per_class):
            tex = texture or TEXTURES[int(rng.integers(len(TEXTURES)))]
            sign = int(rng.choice([-1, 1])) if flip else 1
            spec = SyntheticSpec(
                class_id=c, texture_kind=tex, motion_kind=motion,
                velocity=(sign * vel[0], vel[1]), num_frames=num_frames,
                width=width, height=height, seed=int(rng.integers(2 ** 31)))
            split = "train" if order[i] < n_train else "test"
            records.append(ManifestRecord(f"c{c:02d}_v{i:03d}", c, split, spec))
    return records


# Fixed benchmark corpus: 100 videos of 100 frames. The short GOP keeps I-frames
# close to every full-decode target, so throughput grows with X at every step.
BENCH_CODEC = CodecConfig(gop_length=3, q=4, s=4)


def bench_dataset(seed: int = 0) -> list[ManifestRecord]:
    return build_dataset(5, 20, split_ratio=0.5, seed=seed, design="motion", num_frames=100)


def _materialise(args):
    rec, out_dir, cfg = args
    video, _, _ = generate(rec.spec, search_range=cfg.s)
    rec.path = f"{rec.video_id}.mvb"
    rec.rgb_path = f"{rec.video_id}.rgb"
    (out_dir / rec.path).write_bytes(encode(video, cfg).data)
    write_rgb(out_dir / rec.rgb_path, video)
    return rec


def write_dataset(records: list[ManifestRecord], out_dir: str | Path,
                  codec_cfg: CodecConfig | None = None, jobs: int = 1) -> Path:
    """Render, encode and store every record; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = codec_cfg or CodecConfig(gop_length=1000, q=4, s=4)
    work = [(replace(r), out_dir, cfg) for r in records]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            done = list(pool.map(_materialise, work))
    else:
        done = [_materialise(w) for w in work]
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("".join(r.to_json() + "\n" for r in done))
    return manifest


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    return [ManifestRecord.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]
