"""Corpus-level training and evaluation of the two streams."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import EncodedVideo
from .datagen import ManifestRecord, read_manifest
from .evaluation import ClassScores, predict_spatial, predict_temporal
from .nn import checkpoint
from .nn.network import Network, NetworkConfig
from .nn.trainer import TrainConfig, train
from .pipeline import (
    SpatialInputConfig, TemporalInputConfig, augment_temporal, p_field_stack,
    prepare_spatial_train_input, to_channels_first, window_at,
)
from .sensor import SelectiveDecodeConfig, selective_decode

log = logging.getLogger(__name__)

SPATIAL_SOURCE = SelectiveDecodeConfig(x=10, r=10, a=0.0)


@dataclass
class Corpus:
    records: list[ManifestRecord]
    root: Path

    @classmethod
    def open(cls, manifest) -> "Corpus":
        manifest = Path(manifest)
        return cls(read_manifest(manifest), manifest.parent)

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def bitstream(self, rec: ManifestRecord) -> EncodedVideo:
        return EncodedVideo((self.root / rec.path).read_bytes())

    @property
    def n_classes(self) -> int:
        return max(r.class_id for r in self.records) + 1


def _pmap(fn, items, jobs: int):
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _stack_of(path) -> np.ndarray:
    return p_field_stack(EncodedVideo(Path(path).read_bytes())).astype(np.float32)


def _frames_of(args) -> list[np.ndarray]:
    path, sel = args
    return [f for _, f in selective_decode(EncodedVideo(Path(path).read_bytes()), sel)[0]]


def load_stacks(corpus: Corpus, records, jobs: int = 1) -> list[np.ndarray]:
    return _pmap(_stack_of, [corpus.root / r.path for r in records], jobs)


def load_frames(corpus: Corpus, records, sel: SelectiveDecodeConfig = SPATIAL_SOURCE,
                jobs: int = 1) -> list[list[np.ndarray]]:
    return _pmap(_frames_of, [(corpus.root / r.path, sel) for r in records], jobs)


def temporal_sampler(stacks, labels, cfg: TemporalInputConfig):
    labels = np.asarray(labels)

    def sample(rng, n):
        idx = rng.integers(len(stacks), size=n)
        xs = []
        for i in idx:
            st = stacks[i]
            window = window_at(st, int(rng.integers(len(st))), cfg.t)
            xs.append(to_channels_first(augment_temporal(window, cfg, rng)))
        return np.stack(xs), labels[idx]

    return sample


def spatial_sampler(frames, labels, cfg: SpatialInputConfig):
    labels = np.asarray(labels)

    def sample(rng, n):
        idx = rng.integers(len(frames), size=n)
        xs = []
        for i in idx:
            f = frames[i][int(rng.integers(len(frames[i])))]
            xs.append(to_channels_first(prepare_spatial_train_input(f, cfg, rng)))
        return np.stack(xs), labels[idx]

    return sample


def build_network(net_cfg: NetworkConfig, seed: int, init_from=None) -> Network:
    net = Network(net_cfg, seed=seed, dtype=np.float32)
    if init_from:
        n = checkpoint.load_weights(net, init_from, strict=False)
        log.info("initialised %d tensors from %s", n, init_from)
    return net


def train_temporal(corpus: Corpus, net_cfg: NetworkConfig, in_cfg: TemporalInputConfig,
                   train_cfg: TrainConfig, init_from=None, jobs: int = 1,
                   log_every: int = 0) -> tuple[Network, list[float]]:
    recs = corpus.split("train")
    stacks = load_stacks(corpus, recs, jobs)
    net = build_network(net_cfg, train_cfg.seed, init_from)
    losses = train(net, temporal_sampler(stacks, [r.class_id for r in recs], in_cfg), train_cfg, log_every)
    return net, losses


def train_spatial(corpus: Corpus, net_cfg: NetworkConfig, in_cfg: SpatialInputConfig,
                  train_cfg: TrainConfig, init_from=None, jobs: int = 1,
                  source: SelectiveDecodeConfig = SPATIAL_SOURCE,
                  log_every: int = 0) -> tuple[Network, list[float]]:
    recs = corpus.split("train")
    frames = load_frames(corpus, recs, source, jobs)
    net = build_network(net_cfg, train_cfg.seed, init_from)
    losses = train(net, spatial_sampler(frames, [r.class_id for r in recs], in_cfg), train_cfg, log_every)
    return net, losses


def evaluate_temporal(net, corpus: Corpus, in_cfg: TemporalInputConfig, split: str = "test",
                      center_only: bool = False, jobs: int = 1) -> list[ClassScores]:
    recs = corpus.split(split)
    stacks = load_stacks(corpus, recs, jobs)
    return [predict_temporal(net, st, in_cfg, r.video_id, center_only) for r, st in zip(recs, stacks)]


def evaluate_spatial(net, corpus: Corpus, in_cfg: SpatialInputConfig, split: str = "test",
                     center_only: bool = False, jobs: int = 1,
                     source: SelectiveDecodeConfig = SPATIAL_SOURCE) -> list[ClassScores]:
    recs = corpus.split(split)
    frames = load_frames(corpus, recs, source, jobs)
    return [predict_spatial(net, fr, in_cfg, r.video_id, center_only) for r, fr in zip(recs, frames)]


def truth_of(corpus: Corpus, split: str = "test") -> dict:
    return {r.video_id: r.class_id for r in corpus.split(split)}


# Desk-scale training recipes; config-overridable through the CLI.
TEMPORAL_TRAIN_DESK = TrainConfig(batch_size=32, lr=1e-2, lr_step=200, iterations=300, dropout=0.5)
SPATIAL_TRAIN_DESK = TrainConfig(batch_size=32, lr=1e-2, lr_step=200, iterations=300, dropout=0.5)
