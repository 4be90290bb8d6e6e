"""Test-time protocol, two-stream fusion and agreement statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, UndefinedKappa
from .pipeline import (
    SpatialInputConfig, TemporalInputConfig, prepare_spatial_test_inputs,
    prepare_temporal_test_inputs, to_channels_first,
)

RATERS = ("temporal", "spatial", "fused", "truth")


@dataclass
class ClassScores:
    video_id: str
    rater: str
    scores: np.ndarray
    n_inputs: int = 1

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(self.scores)):
            raise InvalidInput(f"{self.video_id}: non-finite class scores")

    @property
    def predicted(self) -> int:
        """Arg-max; ties go to the lowest class index."""
        return int(np.argmax(self.scores))


def _max_over_inputs(net, volumes, video_id: str, rater: str) -> ClassScores:
    batch = np.stack([to_channels_first(v) for v in volumes])
    probs = net.predict_proba(batch)
    return ClassScores(video_id, rater, probs.max(axis=0), len(volumes))


def predict_temporal(net, source, cfg: TemporalInputConfig, video_id: str = "",
                     center_only: bool = False) -> ClassScores:
    """Elementwise max of softmax scores over the 12 test volumes (or the single centre crop)."""
    return _max_over_inputs(net, prepare_temporal_test_inputs(source, cfg, center_only),
                            video_id, "temporal")


def predict_spatial(net, frames, cfg: SpatialInputConfig, video_id: str = "",
                    center_only: bool = False) -> ClassScores:
    """Elementwise max of softmax scores over 5 frames x (centre, mirrored centre)."""
    return _max_over_inputs(net, prepare_spatial_test_inputs(frames, cfg, center_only),
                            video_id, "spatial")


def fuse(a: ClassScores, b: ClassScores) -> ClassScores:
    """Average of the two streams' max-scores."""
    if a.scores.shape != b.scores.shape:
        raise InvalidInput(f"cannot fuse {a.scores.size} scores with {b.scores.size}")
    if a.video_id != b.video_id:
        raise InvalidInput(f"cannot fuse scores of {a.video_id!r} and {b.video_id!r}")
    return ClassScores(a.video_id, "fused", (a.scores + b.scores) / 2, a.n_inputs + b.n_inputs)


# --- agreement -------------------------------------------------------------

def accuracy(predicted, truth) -> float:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape or predicted.size == 0:
        raise InvalidInput("accuracy needs two aligned, non-empty label vectors")
    return float(np.mean(predicted == truth))


def per_class_recall(predicted, truth, n_classes: int) -> np.ndarray:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    out = np.empty(n_classes)
    for c in range(n_classes):
        members = truth == c
        if not members.any():
            raise InvalidInput(f"class {c} has no ground-truth videos, recall is undefined")
        out[c] = np.mean(predicted[members] == c)
    return out


def recall_difference(temporal, spatial, truth, n_classes: int) -> np.ndarray:
    """recall_c(temporal) - recall_c(spatial); positive means the class leans temporal."""
    return per_class_recall(temporal, truth, n_classes) - per_class_recall(spatial, truth, n_classes)


def cohens_kappa(a, b) -> float:
    """(p_o - p_e) / (1 - p_e), evaluated from integer counts to avoid rounding drift."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.size == 0:
        raise InvalidInput("kappa needs two aligned, non-empty label vectors")
    n = a.size
    agree = int(np.sum(a == b))
    classes = np.union1d(a, b)
    chance = sum(int(np.sum(a == c)) * int(np.sum(b == c)) for c in classes)
    if chance == n * n:
        if agree == n:
            return 1.0
        raise UndefinedKappa("both raters put every video in one class but disagree")
    return (agree * n - chance) / (n * n - chance)


def kappa_matrix(raters: dict) -> tuple[list[str], np.ndarray]:
    """Pairwise kappa over named label vectors; symmetric with unit diagonal."""
    names = list(raters)
    m = np.eye(len(names))
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            m[i, j] = m[j, i] = cohens_kappa(raters[names[i]], raters[names[j]])
    return names, m


# --- predictions CSV -------------------------------------------------------

def write_predictions(path, scores: list[ClassScores], truth: dict) -> None:
    """Rows of (video_id, rater, predicted, truth, score_0..score_{C-1})."""
    if not scores:
        raise InvalidInput("no predictions to write")
    n = scores[0].scores.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "rater", "predicted", "truth"] + [f"score_{c}" for c in range(n)])
        for s in scores:
            w.writerow([s.video_id, s.rater, s.predicted, truth[s.video_id]]
                       + [repr(float(v)) for v in s.scores])


def read_predictions(path) -> tuple[list[ClassScores], dict]:
    scores, truth = [], {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = [float(row[k]) for k in row if k.startswith("score_")]
            scores.append(ClassScores(row["video_id"], row["rater"], np.array(vals)))
            truth[row["video_id"]] = int(row["truth"])
    if not scores:
        raise InvalidInput(f"{path}: no prediction rows")
    return scores, truth


def fuse_predictions(temporal: list[ClassScores], spatial: list[ClassScores]) -> list[ClassScores]:
    by_id = {s.video_id: s for s in spatial}
    missing = [t.video_id for t in temporal if t.video_id not in by_id]
    if missing or len(by_id) != len(temporal):
        raise InvalidInput(f"temporal and spatial predictions cover different videos (e.g. {missing[:3]})")
    return [fuse(t, by_id[t.video_id]) for t in temporal]


def rater_labels(temporal, spatial, fused, truth: dict) -> dict:
    """Aligned label vectors keyed by rater name, ordered by the temporal list."""
    ids = [s.video_id for s in temporal]

    def pick(lst):
        by_id = {s.video_id: s.predicted for s in lst}
        return np.array([by_id[i] for i in ids])

    return {"temporal": pick(temporal), "spatial": pick(spatial), "fused": pick(fused),
            "truth": np.array([truth[i] for i in ids])}
