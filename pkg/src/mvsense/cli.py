"""``mvsense`` command line: one subcommand per pipeline operation.

Every run writes a JSON run manifest (argv, resolved config with the source
of each value, input hashes, version, seed, outputs) before its outputs, and
``mvsense --replay MANIFEST`` re-executes it and compares output hashes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import datagen, evaluation, metrics, plotting
from .codec import CodecConfig, EncodedVideo, decode, encode
from .errors import ConfigError, DataError, InvalidConfig, InvalidInput
from .formats import read_rgb, write_mv_csv, write_mvf, write_pgm, write_ppm, write_rgb
from .sensor import (
    SelectiveDecodeConfig, activity_map, extract_mv_fields, fill_intra, selective_decode,
)

log = logging.getLogger("mvsense")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONFIG = 0, 2, 3, 4


# --- argument types -----------------------------------------------------------

def _interval(text: str) -> float:
    """Decoding interval: a positive integer or ``inf``."""
    if str(text).strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'inf', got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"interval must be >= 1, got {v}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _interval_list(text: str) -> tuple:
    return tuple(_interval(t) for t in str(text).split(",") if t.strip())


def _task_list(text: str) -> tuple:
    tasks = tuple(t.strip() for t in str(text).split(",") if t.strip())
    bad = [t for t in tasks if t not in metrics.TASKS]
    if bad or not tasks:
        raise argparse.ArgumentTypeError(f"unknown task(s) {bad}; choose from {', '.join(metrics.TASKS)}")
    return tasks


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


# --- presets ------------------------------------------------------------------

GEN_PRESETS = {
    "motion": dict(design="motion", classes=6, videos_per_class=40, frames=40, width=64,
                   height=64, split_ratio=0.8, gop=1000, q=4, s=4),
    "complementarity": dict(design="complementarity", classes=4, videos_per_class=40, frames=40,
                            width=64, height=64, split_ratio=0.8, gop=1000, q=4, s=4),
    "bench": dict(design="motion", classes=5, videos_per_class=20, frames=100, width=64,
                  height=64, split_ratio=0.5, gop=datagen.BENCH_CODEC.gop_length,
                  q=datagen.BENCH_CODEC.q, s=datagen.BENCH_CODEC.s),
}

_TRAIN_COMMON = dict(batch_size=32, lr=1e-2, momentum=0.9, lr_decay=0.1, lr_step=200,
                     iterations=300, dropout=0.5, weight_decay=0.005, init_from=None,
                     log_every=50)
TRAIN_PRESETS = {
    "temporal": dict(_TRAIN_COMMON, network="temporal3d-desk", n_t=8, t=32),
    "spatial": dict(_TRAIN_COMMON, network="spatial2d-desk", n_s=32, resize_short_side=40,
                    x=10, r=10, a=0.0),
}

PRESETS = {
    "encode": dict(width=None, height=None, fps=25, gop=30, q=4, s=8,
                   intra_threshold=CodecConfig().intra_sad_threshold),
    "decode": {},
    "extract-mv": dict(fill_intra=False),
    "render": dict(x=10, r=10, a=0.0),
    "activity": dict(a=0.0, scale=16),
    "bench": dict(tasks=metrics.TASKS, x=10, r=10, a=0.0, repetitions=3),
    "ssim-curve": dict(xs=metrics.CURVE_XS, r=10, a=0.0, repetitions=3, fps=True),
    "eval": dict(split="test", center_only=False, resize_short_side=40, x=10, r=10, a=0.0),
    "fuse-eval": {},
    "report": {},
    "cost": dict(frames=metrics.UCF101_SPLIT1_FRAMES),
}
COMMON = dict(seed=0, jobs=1)


def preset_for(ns) -> dict:
    if ns.command == "gen":
        base = GEN_PRESETS[ns.preset]
    elif ns.command == "train":
        base = TRAIN_PRESETS[ns.stream]
    else:
        base = PRESETS[ns.command]
    return dict(COMMON, **base)


# --- parser -------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run options")
    g.add_argument("--config", metavar="FILE",
                   help="key=value file of option values; command-line flags take precedence")
    g.add_argument("--seed", type=int, help="seed for every random choice (default: 0)")
    g.add_argument("--jobs", type=_positive_int,
                   help="worker processes across videos; 1 is bit-exact (default: 1)")
    g.add_argument("--run-manifest", metavar="PATH",
                   help="where to write the run manifest (default: next to the outputs)")


def _sel_flags(p, what: str, x_default: str = "10") -> None:
    p.add_argument("--x", type=_interval, help=f"full decode every X frames, or 'inf' for frame 0 only "
                                                f"({what}; default: {x_default})")
    p.add_argument("--r", type=_positive_int, help="render every R frames, 1 <= R <= X (default: 10)")
    p.add_argument("--a", type=float, help="activity threshold on MV magnitude, MBs need |MV| > A (default: 0)")


def _train_flags(p) -> None:
    p.add_argument("--batch-size", type=_positive_int, help="mini-batch size (default: 32)")
    p.add_argument("--lr", type=float, help="initial learning rate (default: 0.01)")
    p.add_argument("--momentum", type=float, help="SGD momentum (default: 0.9)")
    p.add_argument("--lr-decay", type=float, help="learning-rate factor per step (default: 0.1)")
    p.add_argument("--lr-step", type=_positive_int, help="iterations between decays (default: 200)")
    p.add_argument("--iterations", type=_positive_int, help="training iterations (default: 300)")
    p.add_argument("--dropout", type=float, help="drop probability of every dropout layer (default: 0.5)")
    p.add_argument("--weight-decay", type=float, help="L2 factor on conv/FC weights (default: 0.005)")
    p.add_argument("--init-from", metavar="CKPT",
                   help="start from this checkpoint; tensors of another size keep fresh weights")
    p.add_argument("--log-every", type=int, help="log mean loss every N iterations, 0 for quiet (default: 50)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvsense",
        description="Motion-vector sensing from MVB1 bitstreams: codec, selective decoding, "
                    "two-stream classification, benchmarks and cost.")
    parser.add_argument("--version", action="version", version=f"mvsense {__version__}")
    parser.add_argument("--replay", metavar="MANIFEST",
                        help="re-run the command recorded in a run manifest and compare output hashes")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, help_, **kw):
        p = sub.add_parser(name, help=help_, description=help_[0].upper() + help_[1:] + ".", **kw)
        return p

    p = add("gen", "generate a labelled synthetic corpus (MVB1 + raw RGB + manifest.jsonl)")
    p.add_argument("out_dir", help="output directory")
    p.add_argument("--preset", choices=sorted(GEN_PRESETS), default="motion",
                   help="built-in recipe whose values fill unset options (default: motion)")
    p.add_argument("--design", choices=("motion", "complementarity"),
                   help="class design: one motion per class, or texture x motion factorial")
    p.add_argument("--classes", type=_positive_int, help="number of classes")
    p.add_argument("--videos-per-class", type=_positive_int, help="videos per class")
    p.add_argument("--frames", type=_positive_int, help="frames per video")
    p.add_argument("--width", type=_positive_int, help="frame width, a multiple of 16")
    p.add_argument("--height", type=_positive_int, help="frame height, a multiple of 16")
    p.add_argument("--split-ratio", type=float, help="fraction of each class used for training")
    p.add_argument("--gop", type=_positive_int, help="I-frame interval of the encoder")
    p.add_argument("--q", type=_positive_int, help="quantiser step")
    p.add_argument("--s", type=_positive_int, help="block-matching search range in pixels")
    _common(p)

    p = add("encode", "encode raw planar RGB into an MVB1 bitstream")
    p.add_argument("input", help="raw RGB file (frames of R, G, B planes)")
    p.add_argument("output", help="MVB1 output path")
    p.add_argument("--width", type=_positive_int, help="frame width (required)")
    p.add_argument("--height", type=_positive_int, help="frame height (required)")
    p.add_argument("--fps", type=_positive_int, help="frame rate stored in the header (default: 25)")
    p.add_argument("--gop", type=_positive_int, help="I-frame interval (default: 30)")
    p.add_argument("--q", type=_positive_int, help="quantiser step, 1 is lossless (default: 4)")
    p.add_argument("--s", type=_positive_int, help="search range in pixels (default: 8)")
    p.add_argument("--intra-threshold", type=int,
                   help="MB SAD above which an MB is coded Intra (default: 12288)")
    _common(p)

    p = add("decode", "fully decode an MVB1 bitstream to raw planar RGB")
    p.add_argument("input", help="MVB1 bitstream")
    p.add_argument("output", help="raw RGB output path")
    _common(p)

    p = add("extract-mv", "parse motion vectors without touching residual bytes")
    p.add_argument("input", help="MVB1 bitstream")
    p.add_argument("--out", required=True, metavar="MVF", help="MVF1 output path")
    p.add_argument("--csv", metavar="PATH", help="also write (frame,row,col,dx,dy) rows")
    p.add_argument("--fill-intra", type=_bool, nargs="?", const=True,
                   help="replace Intra partitions by neighbour medians (default: false)")
    _common(p)

    p = add("render", "selectively decode and render frames to PPM")
    p.add_argument("input", help="MVB1 bitstream")
    p.add_argument("out_dir", help="directory for frame_NNNNN.ppm files")
    _sel_flags(p, "render")
    _common(p)

    p = add("activity", "write per-frame MB activity maps as PGM")
    p.add_argument("input", help="MVB1 bitstream")
    p.add_argument("out_dir", help="directory for activity_NNNNN.pgm files")
    p.add_argument("--a", type=float, help="activity threshold, MBs need |MV| > A (default: 0)")
    p.add_argument("--scale", type=_positive_int,
                   help="pixels per MB cell in the PGM; 16 gives frame size, 1 the MB grid (default: 16)")
    _common(p)

    p = add("bench", "measure frames per second of MV extraction and decoding")
    p.add_argument("inputs", nargs="+", help="MVB1 files or manifest.jsonl corpora")
    p.add_argument("--out-dir", required=True, help="directory for bench.csv and bench.svg")
    p.add_argument("--tasks", type=_task_list,
                   help="comma list of extract-mv, selective-decode, full-decode (default: all)")
    _sel_flags(p, "selective-decode task")
    p.add_argument("--repetitions", type=_positive_int, help="timed repetitions, median reported (default: 3)")
    _common(p)

    p = add("ssim-curve", "FPS and mean SSIM of selective decoding across decoding intervals")
    p.add_argument("inputs", nargs="+", help="MVB1 files or manifest.jsonl corpora")
    p.add_argument("--out-dir", required=True, help="directory for the curve CSV and SVG files")
    p.add_argument("--xs", type=_interval_list, help="comma list of X values (default: 1,2,5,10,25,50,100)")
    p.add_argument("--r", type=_positive_int, help="render interval, capped at X per point (default: 10)")
    p.add_argument("--a", type=float, help="activity threshold (default: 0)")
    p.add_argument("--repetitions", type=_positive_int, help="timed repetitions per X (default: 3)")
    p.add_argument("--fps", type=_bool, nargs="?", const=True,
                   help="also time each X; 'false' writes the SSIM curve only (default: true)")
    _common(p)

    p = add("train", "train the temporal (MV) or spatial (RGB) stream")
    p.add_argument("manifest", help="corpus manifest.jsonl")
    p.add_argument("--stream", choices=("temporal", "spatial"), required=True, help="which stream to train")
    p.add_argument("--out", required=True, metavar="CKPT", help="checkpoint output path")
    p.add_argument("--loss-csv", metavar="PATH", help="also write the per-iteration loss")
    p.add_argument("--network", help="network preset (default: temporal3d-desk or spatial2d-desk)")
    p.add_argument("--n-t", type=_positive_int, help="temporal crop side N_T, multiple of 8 (default: 8)")
    p.add_argument("--t", type=_positive_int, help="MV fields per temporal volume (default: 32)")
    p.add_argument("--n-s", type=_positive_int, help="spatial crop side (default: 32)")
    p.add_argument("--resize-short-side", type=_positive_int,
                   help="spatial frames are resized to this short side before cropping (default: 40)")
    _sel_flags(p, "spatial frame source")
    _train_flags(p)
    _common(p)

    p = add("eval", "score a corpus split with a trained checkpoint")
    p.add_argument("manifest", help="corpus manifest.jsonl")
    p.add_argument("model", help="checkpoint written by train")
    p.add_argument("--out", required=True, metavar="CSV", help="predictions CSV output path")
    p.add_argument("--split", choices=("train", "test"), help="which split to score (default: test)")
    p.add_argument("--center-only", type=_bool, nargs="?", const=True,
                   help="use the single centre crop instead of the full test protocol (default: false)")
    p.add_argument("--resize-short-side", type=_positive_int,
                   help="spatial frames are resized to this short side (default: 40)")
    _sel_flags(p, "spatial frame source")
    _common(p)

    p = add("fuse-eval", "fuse temporal and spatial predictions and score all raters")
    p.add_argument("temporal", help="temporal predictions CSV")
    p.add_argument("spatial", help="spatial predictions CSV")
    p.add_argument("--out-dir", required=True, help="directory for fused.csv and summary.csv")
    _common(p)

    p = add("report", "kappa matrix and per-class recall difference, as CSV and SVG")
    p.add_argument("temporal", help="temporal predictions CSV")
    p.add_argument("spatial", help="spatial predictions CSV")
    p.add_argument("--out-dir", required=True, help="directory for the report files")
    _common(p)

    p = add("cost", "dollar cost of classifying a dataset with each framework")
    p.add_argument("--preset", choices=("table7",), default="table7",
                   help="reference FPS and price inputs (default: table7)")
    p.add_argument("--frames", type=float,
                   help="frames needed for inference, A (default: 180 x 3783)")
    p.add_argument("--out", default="cost.csv", help="CSV output path; an SVG goes alongside (default: cost.csv)")
    _common(p)

    return parser


# --- config resolution --------------------------------------------------------

def _action_types(parser: argparse.ArgumentParser, command: str) -> dict:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    types = {}
    for act in sub.choices[command]._actions:
        if act.dest != "help":
            types[act.dest] = act.type or str
    return types


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{path}:{n}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value.strip("\"'")
    return out


def resolve(parser, ns) -> tuple[dict, dict]:
    """Merge flags > config file > preset; returns (values, source of each value)."""
    preset = preset_for(ns)
    types = _action_types(parser, ns.command)
    file_vals = read_config_file(ns.config) if ns.config else {}
    unknown = sorted(set(file_vals) - set(preset))
    if unknown:
        raise InvalidConfig(f"{ns.config}: unknown key(s) {', '.join(unknown)} for '{ns.command}'; "
                            f"valid keys: {', '.join(sorted(preset))}")
    values, sources = {}, {}
    for key, default in preset.items():
        flag = getattr(ns, key, None)
        if flag is not None:
            values[key], sources[key] = flag, "flag"
        elif key in file_vals:
            try:
                values[key] = types.get(key, str)(file_vals[key])
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise InvalidConfig(f"{ns.config}: bad value for {key}: {exc}") from None
            sources[key] = "config"
        else:
            values[key], sources[key] = default, "preset"
    return values, sources


# --- run manifest -------------------------------------------------------------

def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class RunManifest:
    subcommand: str
    argv: list
    cwd: str
    config: dict
    config_sources: dict
    version: str
    seed: int
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    output_hashes: dict = field(default_factory=dict)
    timing_outputs: list = field(default_factory=list)
    status: str = "running"
    error: str = ""

    def write(self, path) -> None:
        d = asdict(self)
        d["config"] = {k: _jsonable(v) for k, v in self.config.items()}
        atomic_write_text(path, json.dumps(d, indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            d = json.loads(Path(path).read_text())
            return cls(**d)
        except (json.JSONDecodeError, TypeError) as exc:
            raise InvalidInput(f"{path}: not a run manifest ({exc})") from None


class Run:
    """Tracks one invocation; the manifest is written before any output."""

    def __init__(self, ns, argv, config, sources, manifest_path=None):
        self.manifest = RunManifest(ns.command, list(argv), os.getcwd(), config, sources,
                                    __version__, config["seed"])
        self.path = manifest_path
        self.started = False

    def add_inputs(self, *paths) -> None:
        for p in paths:
            p = Path(p)
            if not p.is_file():
                raise InvalidInput(f"input {p} does not exist or is not a file")
            self.manifest.inputs[str(p)] = sha256_of(p)

    def start(self, default_manifest, outputs) -> None:
        self.path = Path(self.path or default_manifest)
        self.manifest.outputs = [str(o) for o in outputs]
        self.manifest.write(self.path)
        self.started = True

    def wrote(self, path, timing: bool = False) -> Path:
        p = str(path)
        self.manifest.output_hashes[p] = sha256_of(path)
        if timing:
            self.manifest.timing_outputs.append(p)
        return Path(path)

    def finish(self, error: str = "") -> None:
        if not self.started:
            return
        self.manifest.status = "failed" if error else "ok"
        self.manifest.error = error
        self.manifest.write(self.path)


# --- helpers ------------------------------------------------------------------

def _read_bitstream(path) -> EncodedVideo:
    return EncodedVideo(Path(path).read_bytes())


def _corpus_paths(inputs) -> list[Path]:
    """Expand manifest.jsonl arguments into their MVB1 files."""
    out = []
    for item in inputs:
        p = Path(item)
        if p.suffix == ".jsonl":
            if not p.is_file():
                raise InvalidInput(f"corpus manifest {p} does not exist")
            out.extend(p.parent / r.path for r in datagen.read_manifest(p))
        else:
            out.append(p)
    if not out:
        raise InvalidInput("no input bitstreams")
    return out


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def _sel_cfg(cfg) -> SelectiveDecodeConfig:
    sel = SelectiveDecodeConfig(x=cfg["x"], r=cfg["r"], a=cfg["a"])
    sel.validate()
    return sel


def _out_dir(path) -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise InvalidInput(f"{p} exists and is not a directory")
    p.mkdir(parents=True, exist_ok=True)
    return p


# --- subcommands --------------------------------------------------------------

def cmd_gen(ns, cfg, run: Run) -> None:
    codec_cfg = CodecConfig(gop_length=cfg["gop"], q=cfg["q"], s=cfg["s"])
    codec_cfg.validate()
    records = datagen.build_dataset(cfg["classes"], cfg["videos_per_class"], cfg["split_ratio"],
                                    cfg["seed"], cfg["design"], cfg["width"], cfg["height"],
                                    cfg["frames"])
    out = _out_dir(ns.out_dir)
    run.start(out / "gen.run.json", [out])
    manifest = datagen.write_dataset(records, out, codec_cfg, jobs=cfg["jobs"])
    for rec in datagen.read_manifest(manifest):
        run.wrote(out / rec.path)
        run.wrote(out / rec.rgb_path)
    run.wrote(manifest)
    print(f"{len(records)} videos written to {out}; manifest {manifest}")


def cmd_encode(ns, cfg, run: Run) -> None:
    if cfg["width"] is None or cfg["height"] is None:
        raise InvalidConfig("encode needs --width and --height for raw RGB input")
    run.add_inputs(ns.input)
    codec_cfg = CodecConfig(gop_length=cfg["gop"], q=cfg["q"], s=cfg["s"],
                            intra_sad_threshold=cfg["intra_threshold"])
    codec_cfg.validate()
    video = read_rgb(ns.input, cfg["width"], cfg["height"], cfg["fps"])
    bs = encode(video, codec_cfg)
    run.start(f"{ns.output}.run.json", [ns.output])
    Path(ns.output).write_bytes(bs.data)
    run.wrote(ns.output)
    print(f"{len(video)} frames, {len(bs.data)} bytes")


def cmd_decode(ns, cfg, run: Run) -> None:
    run.add_inputs(ns.input)
    video = decode(_read_bitstream(ns.input))
    run.start(f"{ns.output}.run.json", [ns.output])
    write_rgb(ns.output, video)
    run.wrote(ns.output)
    print(f"{len(video)} frames of {video.width}x{video.height}")


def cmd_extract_mv(ns, cfg, run: Run) -> None:
    run.add_inputs(ns.input)
    fields, counter = extract_mv_fields(_read_bitstream(ns.input))
    if cfg["fill_intra"]:
        fields = [fill_intra(f) for f in fields]
    outs = [ns.out] + ([ns.csv] if ns.csv else [])
    run.start(f"{ns.out}.run.json", outs)
    write_mvf(ns.out, fields)
    run.wrote(ns.out)
    if ns.csv:
        write_mv_csv(ns.csv, fields)
        run.wrote(ns.csv)
    print(f"{len(fields)} P-frame fields; residual bytes read {counter.residual_bytes_read}, "
          f"skipped {counter.residual_bytes_skipped}")


def cmd_render(ns, cfg, run: Run) -> None:
    run.add_inputs(ns.input)
    sel = _sel_cfg(cfg)
    frames, counter = selective_decode(_read_bitstream(ns.input), sel)
    out = _out_dir(ns.out_dir)
    run.start(out / "render.run.json", [out])
    for k, frame in frames:
        write_ppm(out / f"frame_{k:05d}.ppm", frame)
        run.wrote(out / f"frame_{k:05d}.ppm")
    print(f"{len(frames)} frames; residual bytes read {counter.residual_bytes_read}, "
          f"skipped {counter.residual_bytes_skipped}")


def cmd_activity(ns, cfg, run: Run) -> None:
    if cfg["a"] < 0:
        raise InvalidConfig(f"A must be >= 0, got {cfg['a']}")
    run.add_inputs(ns.input)
    fields, _ = extract_mv_fields(_read_bitstream(ns.input))
    out = _out_dir(ns.out_dir)
    run.start(out / "activity.run.json", [out])
    n = cfg["scale"]
    for f in fields:
        mask = activity_map(f, cfg["a"]).active
        path = out / f"activity_{f.frame_index:05d}.pgm"
        write_pgm(path, np.repeat(np.repeat(mask, n, axis=0), n, axis=1))
        run.wrote(path)
    print(f"{len(fields)} activity maps")


def _bench_rows(results):
    return [[_fmt(r.row()[c]) for c in metrics.BENCH_COLUMNS] for r in results]


def cmd_bench(ns, cfg, run: Run) -> None:
    paths = _corpus_paths(ns.inputs)
    run.add_inputs(*[p for p in ns.inputs if Path(p).suffix == ".jsonl"], *paths)
    bss = [_read_bitstream(p) for p in paths]
    sel = _sel_cfg(cfg) if "selective-decode" in cfg["tasks"] else None
    out = _out_dir(ns.out_dir)
    parallel = cfg["jobs"] > 1
    outs = [out / "bench.csv", out / "bench.svg"] + ([out / "bench_parallel.csv"] if parallel else [])
    run.start(out / "bench.run.json", outs)
    results = [metrics.bench(bss, t, cfg["repetitions"], sel) for t in cfg["tasks"]]
    _write_csv(out / "bench.csv", metrics.BENCH_COLUMNS, _bench_rows(results))
    run.wrote(out / "bench.csv", timing=True)
    plotting.plot_bench(results, out / "bench.svg")
    run.wrote(out / "bench.svg", timing=True)
    if parallel:
        par = [metrics.bench_parallel(bss, t, cfg["jobs"], cfg["repetitions"], sel) for t in cfg["tasks"]]
        _write_csv(out / "bench_parallel.csv", metrics.BENCH_COLUMNS, _bench_rows(par))
        run.wrote(out / "bench_parallel.csv", timing=True)
    for r in results:
        print(f"{r.task:17s} {r.fps:12.1f} fps  residual read {r.counter.residual_bytes_read}")


def cmd_ssim_curve(ns, cfg, run: Run) -> None:
    paths = _corpus_paths(ns.inputs)
    run.add_inputs(*[p for p in ns.inputs if Path(p).suffix == ".jsonl"], *paths)
    xs = cfg["xs"]
    if not xs:
        raise InvalidConfig("--xs needs at least one value")
    for x in xs:
        metrics.curve_config(x, cfg["r"], cfg["a"]).validate()
    bss = [_read_bitstream(p) for p in paths]
    out = _out_dir(ns.out_dir)
    outs = [out / "ssim_curve.csv", out / "ssim_curve.svg"]
    if cfg["fps"]:
        outs += [out / "fps_curve.csv", out / "fps_curve.svg"]
    run.start(out / "ssim-curve.run.json", outs)
    rows = metrics.ssim_curve(bss, xs, cfg["r"], cfg["a"])
    _write_csv(out / "ssim_curve.csv", ("X", "mean_ssim"), [[_fmt(x), repr(s)] for x, s in rows])
    run.wrote(out / "ssim_curve.csv")
    plotting.plot_ssim_curve(rows, out / "ssim_curve.svg")
    run.wrote(out / "ssim_curve.svg")
    for x, s in rows:
        print(f"X={_fmt(x):>4s}  SSIM {s:.4f}")
    if cfg["fps"]:
        results = metrics.fps_curve(bss, xs, cfg["r"], cfg["a"], cfg["repetitions"])
        _write_csv(out / "fps_curve.csv", metrics.BENCH_COLUMNS, _bench_rows(results))
        run.wrote(out / "fps_curve.csv", timing=True)
        plotting.plot_fps_curve(results, out / "fps_curve.svg")
        run.wrote(out / "fps_curve.svg", timing=True)
        for r in results:
            print(f"X={_fmt(r.x):>4s}  {r.fps:10.1f} fps")


def _corpus(manifest, run: Run):
    from .experiment import Corpus

    corpus = Corpus.open(manifest)
    run.add_inputs(manifest, *[corpus.root / r.path for r in corpus.records])
    return corpus


def cmd_train(ns, cfg, run: Run) -> None:
    from . import experiment
    from .nn import checkpoint
    from .nn.network import preset as net_preset
    from .nn.trainer import TrainConfig
    from .pipeline import SpatialInputConfig, TemporalInputConfig

    corpus = _corpus(ns.manifest, run)
    if cfg["init_from"]:
        run.add_inputs(cfg["init_from"])
    tcfg = TrainConfig(batch_size=cfg["batch_size"], lr=cfg["lr"], momentum=cfg["momentum"],
                       lr_decay=cfg["lr_decay"], lr_step=cfg["lr_step"],
                       iterations=cfg["iterations"], dropout=cfg["dropout"],
                       weight_decay=cfg["weight_decay"], seed=cfg["seed"])
    tcfg.validate()
    n = corpus.n_classes
    if ns.stream == "temporal":
        in_cfg = TemporalInputConfig(n_t=cfg["n_t"], t=cfg["t"])
        net_cfg = net_preset(cfg["network"], n_classes=n, n_t=cfg["n_t"], t=cfg["t"])
    else:
        in_cfg = SpatialInputConfig(resize_short_side=cfg["resize_short_side"], n_s=cfg["n_s"])
        net_cfg = net_preset(cfg["network"], n_classes=n, n_s=cfg["n_s"])
    in_cfg.validate()
    outs = [ns.out] + ([ns.loss_csv] if ns.loss_csv else [])
    run.start(f"{ns.out}.run.json", outs)
    if ns.stream == "temporal":
        net, losses = experiment.train_temporal(corpus, net_cfg, in_cfg, tcfg, cfg["init_from"],
                                                cfg["jobs"], log_every=cfg["log_every"])
    else:
        net, losses = experiment.train_spatial(corpus, net_cfg, in_cfg, tcfg, cfg["init_from"],
                                               cfg["jobs"], _sel_cfg(cfg), log_every=cfg["log_every"])
    checkpoint.save(net, ns.out)
    run.wrote(ns.out)
    if ns.loss_csv:
        _write_csv(ns.loss_csv, ("iteration", "loss"), [[i, repr(v)] for i, v in enumerate(losses)])
        run.wrote(ns.loss_csv)
    k = min(20, len(losses))
    print(f"{ns.stream} stream: loss {np.mean(losses[:k]):.4f} -> {np.mean(losses[-k:]):.4f} "
          f"over {len(losses)} iterations; saved {ns.out}")


def cmd_eval(ns, cfg, run: Run) -> None:
    from . import experiment
    from .nn import checkpoint
    from .pipeline import SpatialInputConfig, TemporalInputConfig

    corpus = _corpus(ns.manifest, run)
    run.add_inputs(ns.model)
    net = checkpoint.load(ns.model, dtype=np.float32)
    shape = tuple(net.cfg.input_shape)
    if net.cfg.n_classes != corpus.n_classes:
        raise InvalidInput(f"model predicts {net.cfg.n_classes} classes, corpus has {corpus.n_classes}")
    run.start(f"{ns.out}.run.json", [ns.out])
    if len(shape) == 4:
        in_cfg = TemporalInputConfig(n_t=shape[2], t=shape[1])
        scores = experiment.evaluate_temporal(net, corpus, in_cfg, cfg["split"], cfg["center_only"],
                                              cfg["jobs"])
    else:
        in_cfg = SpatialInputConfig(resize_short_side=cfg["resize_short_side"], n_s=shape[1])
        in_cfg.validate()
        scores = experiment.evaluate_spatial(net, corpus, in_cfg, cfg["split"], cfg["center_only"],
                                             cfg["jobs"], _sel_cfg(cfg))
    if not scores:
        raise InvalidInput(f"split {cfg['split']!r} of {ns.manifest} is empty")
    truth = experiment.truth_of(corpus, cfg["split"])
    evaluation.write_predictions(ns.out, scores, truth)
    run.wrote(ns.out)
    acc = evaluation.accuracy([s.predicted for s in scores], [truth[s.video_id] for s in scores])
    print(f"{scores[0].rater} accuracy {acc:.4f} on {len(scores)} {cfg['split']} videos")


def _load_pair(ns, run: Run):
    run.add_inputs(ns.temporal, ns.spatial)
    temporal, truth = evaluation.read_predictions(ns.temporal)
    spatial, truth_s = evaluation.read_predictions(ns.spatial)
    if truth != truth_s:
        raise InvalidInput("temporal and spatial prediction files disagree on ground truth")
    fused = evaluation.fuse_predictions(temporal, spatial)
    return temporal, spatial, fused, truth


def cmd_fuse_eval(ns, cfg, run: Run) -> None:
    temporal, spatial, fused, truth = _load_pair(ns, run)
    labels = evaluation.rater_labels(temporal, spatial, fused, truth)
    out = _out_dir(ns.out_dir)
    run.start(out / "fuse-eval.run.json", [out / "fused.csv", out / "summary.csv"])
    evaluation.write_predictions(out / "fused.csv", fused, truth)
    run.wrote(out / "fused.csv")
    rows = []
    for name in ("temporal", "spatial", "fused"):
        acc = evaluation.accuracy(labels[name], labels["truth"])
        kappa = evaluation.cohens_kappa(labels[name], labels["truth"])
        rows.append([name, repr(acc), repr(kappa)])
        print(f"{name:9s} accuracy {acc:.4f}  kappa vs truth {kappa:.4f}")
    _write_csv(out / "summary.csv", ("rater", "accuracy", "kappa_vs_truth"), rows)
    run.wrote(out / "summary.csv")


def cmd_report(ns, cfg, run: Run) -> None:
    temporal, spatial, fused, truth = _load_pair(ns, run)
    labels = evaluation.rater_labels(temporal, spatial, fused, truth)
    names, matrix = evaluation.kappa_matrix(labels)
    n_classes = temporal[0].scores.size
    diff = evaluation.recall_difference(labels["temporal"], labels["spatial"], labels["truth"], n_classes)
    out = _out_dir(ns.out_dir)
    files = ["kappa_matrix.csv", "kappa_matrix.svg", "recall_difference.csv", "recall_difference.svg"]
    run.start(out / "report.run.json", [out / f for f in files])
    _write_csv(out / "kappa_matrix.csv", ["rater"] + names,
               [[a] + [repr(float(v)) for v in row] for a, row in zip(names, matrix)])
    plotting.plot_kappa(names, matrix, out / "kappa_matrix.svg")
    _write_csv(out / "recall_difference.csv", ("class", "recall_difference"),
               [[c, repr(float(d))] for c, d in enumerate(diff)])
    plotting.plot_recall_difference(diff, out / "recall_difference.svg")
    for f in files:
        run.wrote(out / f)
    print(f"kappa matrix over {', '.join(names)}; {int(np.sum(diff > 0))} of {n_classes} classes lean temporal")


COST_COLUMNS = ("framework", "C_flow", "C_decode", "C_t", "C_s", "C_tot")


def cmd_cost(ns, cfg, run: Run) -> None:
    if cfg["frames"] <= 0:
        raise InvalidConfig(f"--frames must be positive, got {cfg['frames']}")
    rows = metrics.cost_table(metrics.TABLE7_PRESET, cfg["frames"])
    out = Path(ns.out)
    svg = out.with_suffix(".svg")
    run.start(f"{out}.run.json", [out, svg])
    out.parent.mkdir(parents=True, exist_ok=True)
    table = [[r["framework"]] + [f"{r[c]:.3f}" for c in COST_COLUMNS[1:]] for r in rows]
    _write_csv(out, COST_COLUMNS, table)
    run.wrote(out)
    plotting.plot_cost(rows, svg)
    run.wrote(svg)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(COST_COLUMNS)
    w.writerows(table)


COMMANDS = {
    "gen": cmd_gen, "encode": cmd_encode, "decode": cmd_decode, "extract-mv": cmd_extract_mv,
    "render": cmd_render, "activity": cmd_activity, "bench": cmd_bench,
    "ssim-curve": cmd_ssim_curve, "train": cmd_train, "eval": cmd_eval,
    "fuse-eval": cmd_fuse_eval, "report": cmd_report, "cost": cmd_cost,
}


# --- entry point --------------------------------------------------------------

def replay(path) -> int:
    """Re-execute a recorded run from its working directory and compare output hashes."""
    old = RunManifest.read(path)
    here = os.getcwd()
    os.chdir(old.cwd)
    try:
        code = main(old.argv)
        if code != EXIT_OK:
            return code
        changed = []
        for p, digest in old.output_hashes.items():
            if p in old.timing_outputs:
                continue
            if not Path(p).is_file() or sha256_of(p) != digest:
                changed.append(p)
    finally:
        os.chdir(here)
    if changed:
        print(f"mvsense: replay differs in {len(changed)} output(s): {', '.join(changed[:5])}",
              file=sys.stderr)
        return EXIT_DATA
    print(f"replay reproduced {len(old.output_hashes) - len(old.timing_outputs)} output(s) bit-exactly"
          + (f"; {len(old.timing_outputs)} timing output(s) not compared" if old.timing_outputs else ""))
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if ns.replay:
        if ns.command:
            parser.print_usage(sys.stderr)
            print("mvsense: error: --replay takes no subcommand", file=sys.stderr)
            return EXIT_USAGE
        try:
            return replay(ns.replay)
        except (DataError, OSError) as exc:
            print(f"mvsense: error: {exc}", file=sys.stderr)
            return EXIT_DATA
    if not ns.command:
        parser.print_usage(sys.stderr)
        print("mvsense: error: a subcommand is required (see mvsense --help)", file=sys.stderr)
        return EXIT_USAGE
    run = None
    try:
        cfg, sources = resolve(parser, ns)
        run = Run(ns, argv, cfg, sources, ns.run_manifest)
        COMMANDS[ns.command](ns, cfg, run)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, str(exc)
    except (DataError, OSError) as exc:
        code, msg = EXIT_DATA, str(exc)
    else:
        run.finish()
        return EXIT_OK
    if run is not None:
        run.finish(msg)
    print(f"mvsense {ns.command}: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
