"""Property tests for the invariants every module promises."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import layer_grad_error, max_relative_error, numeric_grad, oracle_partition_sads, truncate_stream
from mvsense.bitstream import INTER, ByteAccessCounter, FrameIndex, iter_mb_records
from mvsense.codec import CodecConfig, FrameDecoder, VideoSequence, decode, encode, luma
from mvsense.datagen import SyntheticSpec, generate
from mvsense.evaluation import ClassScores, cohens_kappa, fuse, kappa_matrix
from mvsense.metrics import epe, ssim
from mvsense.nn.layers import ConvND, Dropout, FullyConnected, MaxPoolND, PReLU, SoftmaxCrossEntropy
from mvsense.pipeline import (
    SpatialInputConfig, TemporalInputConfig, augment_temporal, prepare_spatial_train_input,
    prepare_temporal_test_inputs,
)
from mvsense.sensor import SelectiveDecodeConfig, extract_mv_fields, selective_decode

seeds = st.integers(0, 2**32 - 1)


@st.composite
def videos(draw, max_frames=4, max_mbs=2):
    """Small videos mixing noise with shifted copies so block matching has real choices."""
    seed = draw(seeds)
    n = draw(st.integers(1, max_frames))
    w = 16 * draw(st.integers(1, max_mbs))
    h = 16 * draw(st.integers(1, max_mbs))
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, (3, h, w))
    frames = [base]
    for _ in range(n - 1):
        shift = rng.integers(-3, 4, size=2)
        nxt = np.roll(frames[-1], tuple(shift), axis=(1, 2)) + rng.integers(-8, 9, (3, h, w))
        frames.append(np.clip(nxt, 0, 255))
    return VideoSequence(w, h, 25, np.stack(frames).astype(np.uint8))


configs = st.builds(CodecConfig, gop_length=st.integers(1, 5), q=st.integers(1, 12),
                    s=st.integers(1, 4), intra_sad_threshold=st.sampled_from([0, 3000, 12288]))


# --- codec -----------------------------------------------------------------

@settings(max_examples=60)
@given(videos(), st.integers(1, 5), st.integers(1, 4))
def test_unit_quantiser_roundtrip_is_exact(video, gop, s):
    cfg = CodecConfig(gop_length=gop, q=1, s=s)
    bs = encode(video, cfg)
    assert decode(bs) == video
    # and the loop is closed: re-encoding the reconstruction reproduces the stream
    assert encode(decode(bs), cfg).data == bs.data


@settings(max_examples=40)
@given(videos(), configs)
def test_encoder_is_deterministic_and_well_formed(video, cfg):
    bs = encode(video, cfg)
    assert encode(video, cfg).data == bs.data
    idx = FrameIndex(bs.data, bs.header)
    n_mbs = (video.width // 16) * (video.height // 16)
    for k in range(len(video.frames)):
        assert (idx[k].frame_type == 0) == (k % cfg.gop_length == 0)
        recs = list(iter_mb_records(bs.data, idx[k], bs.header.mbs_per_frame))
        assert len(recs) == n_mbs
        for rec in recs:
            if rec.mode == INTER:
                assert np.abs(rec.mvs).max() <= cfg.s
    idx.finish()


@settings(max_examples=30)
@given(videos(max_frames=3), configs)
def test_recorded_mvs_are_sad_optimal(video, cfg):
    bs = encode(video, cfg)
    recon = decode(bs).frames
    idx = FrameIndex(bs.data, bs.header)
    cols = video.width // 16
    for k in range(1, len(video.frames)):
        if idx[k].frame_type == 0:
            continue
        cur, ref = luma(video.frames[k]), luma(recon[k - 1])
        for m, rec in enumerate(iter_mb_records(bs.data, idx[k], bs.header.mbs_per_frame)):
            if rec.mode != INTER:
                continue
            my, mx = divmod(m, cols)
            for p in range(4):
                py, px = divmod(p, 2)
                sads = oracle_partition_sads(cur, ref, 16 * my + 8 * py, 16 * mx + 8 * px, cfg.s)
                assert sads[tuple(rec.mvs[p])] == min(sads.values())


@settings(max_examples=40)
@given(videos(), configs)
def test_decode_frame_random_access_matches_decode(video, cfg):
    from mvsense.codec import decode_frame
    bs = encode(video, cfg)
    full = decode(bs).frames
    k = len(video.frames) - 1
    assert np.array_equal(decode_frame(bs, k), full[k])


# --- sensor ----------------------------------------------------------------

@settings(max_examples=40)
@given(videos(), configs)
def test_mv_parsing_never_reads_residuals(video, cfg):
    bs = encode(video, cfg)
    fields, counter = extract_mv_fields(bs)
    assert counter.residual_bytes_read == 0
    assert counter.total == len(bs.data)
    idx = FrameIndex(bs.data, bs.header)
    n_inter = sum(rec.mode == INTER for k in range(len(video.frames))
                  for rec in iter_mb_records(bs.data, idx[k], bs.header.mbs_per_frame))
    assert counter.mv_bytes == 8 * n_inter
    assert len(fields) == sum(k % cfg.gop_length != 0 for k in range(len(video.frames)))


@settings(max_examples=40)
@given(videos(max_frames=5), configs)
def test_selective_decode_with_x1_is_full_decode(video, cfg):
    bs = encode(video, cfg)
    out, counter = selective_decode(bs, SelectiveDecodeConfig(x=1, r=1, a=0))
    assert np.array_equal(np.stack([f for _, f in out]), decode(bs).frames)
    assert counter.total == len(bs.data)


@st.composite
def selective_configs(draw):
    x = draw(st.sampled_from([1, 2, 3, 4, math.inf]))
    r = draw(st.integers(1, 4 if math.isinf(x) else x))
    return SelectiveDecodeConfig(x=x, r=r, a=draw(st.sampled_from([0.0, 1.0, 2.5])))


@settings(max_examples=40)
@given(videos(max_frames=6), configs, selective_configs(), st.integers(1, 6))
def test_canvas_causality_and_byte_accounting(video, cfg, sel, cut):
    bs = encode(video, cfg)
    full, counter = selective_decode(bs, sel)
    assert counter.total == len(bs.data)
    assert [k for k, _ in full] == sorted(k for k, _ in full)
    cut = min(cut, len(video.frames))
    part, _ = selective_decode(truncate_stream(bs, cut), sel)
    prefix = [(k, f) for k, f in full if k < cut]
    assert [k for k, _ in part] == [k for k, _ in prefix]
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(part, prefix))


class MonotoneCounter(ByteAccessCounter):
    """Counter that refuses to let any field go down."""

    def __setattr__(self, name, value):
        assert value >= getattr(self, name, 0), f"{name} decreased"
        super().__setattr__(name, value)


@settings(max_examples=40)
@given(videos(max_frames=6), configs, selective_configs(), st.integers(0, 5))
def test_byte_counts_only_grow_and_cover_the_file(video, cfg, sel, k):
    bs = encode(video, cfg)
    k = min(k, len(video.frames) - 1)
    _, c = selective_decode(bs, sel, MonotoneCounter())
    assert c.total == len(bs.data)
    c = MonotoneCounter()
    extract_mv_fields(bs, c)
    assert c.total == len(bs.data)
    c = MonotoneCounter()
    dec = FrameDecoder(bs, c)
    dec.decode(k)
    dec.decode(len(video.frames) - 1)
    dec.decode(k)
    dec.index.finish()
    dec.index.charge_skipped(dec.touched)
    assert c.total == len(bs.data)


# --- datagen ---------------------------------------------------------------

@settings(max_examples=25)
@given(seeds, st.sampled_from(["noise", "checker", "gradient", "stripes"]),
       st.sampled_from(["translate", "oscillate", "static"]),
       st.tuples(st.integers(-3, 3), st.integers(-3, 3)))
def test_generation_is_reproducible_and_flow_exact(seed, texture, motion, vel):
    spec = SyntheticSpec(texture_kind=texture, motion_kind=motion, velocity=vel, seed=seed,
                         width=32, height=32, num_frames=4, object_scale=None)
    a, fa, _ = generate(spec)
    b, fb, _ = generate(spec)
    assert a == b and np.array_equal(fa.flow, fb.flow)
    if motion != "static":
        for t in range(1, 4):
            shift = (int(fa.flow[t, 0, 0, 1]), int(fa.flow[t, 0, 0, 0]))
            assert np.array_equal(a.frames[t], np.roll(a.frames[t - 1], shift, axis=(1, 2)))


# --- pipeline --------------------------------------------------------------

@settings(max_examples=60)
@given(seeds, st.sampled_from([8, 16]), st.integers(1, 6))
def test_temporal_volumes_are_zero_centred(seed, n_t, t):
    rng = np.random.default_rng(seed)
    window = rng.uniform(-8, 8, size=(t, n_t + 4, n_t + 6, 2))
    cfg = TemporalInputConfig(n_t=n_t, t=t)
    vol = augment_temporal(window, cfg, rng)
    assert np.abs(vol.astype(np.float64).mean(axis=(0, 1))).max() < 1e-6
    for v in prepare_temporal_test_inputs(window, cfg):
        assert np.abs(v.astype(np.float64).mean(axis=(0, 1))).max() < 1e-6


@settings(max_examples=60)
@given(seeds, st.sampled_from([0.5, 0.667, 0.833, 1.0]))
def test_flipping_twice_restores_the_volume(seed, scale):
    rng = np.random.default_rng(seed)
    cfg = TemporalInputConfig(n_t=8, t=3)
    window = rng.uniform(-5, 5, size=(3, 10, 12, 2))
    size = int(math.floor(8 * scale + 0.5))
    x0, y0 = int(rng.integers(12 - size + 1)), int(rng.integers(10 - size + 1))
    mirrored = window[:, :, ::-1] * np.array([-1.0, 1.0])
    plain = augment_temporal(window, cfg, None, scale=scale, flip=False, position=(x0, y0))
    twice = augment_temporal(mirrored, cfg, None, scale=scale, flip=True, position=(12 - size - x0, y0))
    assert np.allclose(plain, twice, atol=1e-5)


def test_input_shapes_hold_for_1000_seeds():
    tcfg = TemporalInputConfig(n_t=8, t=5)
    scfg = SpatialInputConfig(resize_short_side=40, n_s=32)
    window = np.random.default_rng(0).uniform(-4, 4, size=(5, 8, 8, 2))
    frame = np.random.default_rng(1).integers(0, 256, (3, 48, 64), dtype=np.uint8)
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        assert augment_temporal(window, tcfg, rng).shape == (8, 8, 2, 5)
        assert prepare_spatial_train_input(frame, scfg, rng).shape == (32, 32, 3)


# --- nn --------------------------------------------------------------------

def _separated(rng, shape):
    """Values at least 0.01 apart so finite differences never cross a max or a kink."""
    n = int(np.prod(shape))
    return ((rng.permutation(n) - n / 2 + 0.5) * 0.01).reshape(shape)


@settings(max_examples=100)
@given(seeds)
def test_gradients_match_finite_differences_for_every_layer(seed):
    rng = np.random.default_rng(seed)
    k3 = tuple(int(v) for v in rng.integers(1, 3, size=3))
    s3 = tuple(int(v) for v in rng.integers(1, 3, size=3))
    conv3 = ConvND(2, 2, k3, s3, int(rng.integers(0, 2)), rng)
    assert layer_grad_error(conv3, rng.standard_normal((1, 2, 4, 4, 4)), rng, max_entries=40) < 1e-4
    conv2 = ConvND(2, 3, (3, 2), (1, 2), int(rng.integers(0, 2)), rng)
    assert layer_grad_error(conv2, rng.standard_normal((2, 2, 5, 5)), rng, max_entries=40) < 1e-4
    pool3 = MaxPoolND((2, 2, 2), (2, 2, 2))
    assert layer_grad_error(pool3, _separated(rng, (1, 2, 4, 4, 4)), rng) < 1e-4
    pool2 = MaxPoolND((2, 2), (1, 2))
    assert layer_grad_error(pool2, _separated(rng, (2, 2, 3, 4)), rng) < 1e-4
    fc = FullyConnected(12, 4, rng)
    assert layer_grad_error(fc, rng.standard_normal((3, 3, 4)), rng) < 1e-4
    prelu = PReLU(3, init=float(rng.uniform(0, 0.5)))
    assert layer_grad_error(prelu, _separated(rng, (2, 3, 4)), rng) < 1e-4
    drop = Dropout(float(rng.uniform(0, 0.9)), np.random.default_rng(seed))
    assert layer_grad_error(drop, rng.standard_normal((2, 6)), rng) < 1e-4
    loss = SoftmaxCrossEntropy()
    logits = rng.standard_normal((3, 4))
    labels = rng.integers(0, 4, size=3)
    loss.forward(logits, labels)
    num = numeric_grad(lambda: loss.forward(logits, labels), logits, eps=1e-5)
    assert max_relative_error(loss.backward(), num) < 1e-4


# --- metrics ---------------------------------------------------------------

fields8 = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).normal(0, 3, (16, 16, 2)))


@given(fields8, fields8, fields8)
def test_epe_triangle_inequality(a, b, c):
    assert epe(a, c, 4) <= epe(a, b, 4) + epe(b, c, 4) + 1e-12


@settings(max_examples=40)
@given(seeds)
def test_ssim_symmetry_and_identity(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, (3, 16, 24))
    b = np.clip(a + rng.integers(-40, 41, a.shape), 0, 255)
    assert ssim(a, a) == 1.0
    assert ssim(a, b) == ssim(b, a)
    assert -1 < ssim(a, b) <= 1


# --- eval ------------------------------------------------------------------

scores = st.lists(st.floats(0, 1), min_size=2, max_size=6)


@given(scores, st.data(), st.floats(0.01, 100))
def test_fusion_commutes_is_idempotent_and_scale_free(xs, data, k):
    ys = data.draw(st.lists(st.floats(0, 1), min_size=len(xs), max_size=len(xs)))
    a, b = ClassScores("v", "temporal", xs), ClassScores("v", "spatial", ys)
    assert np.array_equal(fuse(a, b).scores, fuse(b, a).scores)
    assert np.array_equal(fuse(a, a).scores, a.scores)
    scaled = fuse(ClassScores("v", "temporal", np.array(xs) * k), ClassScores("v", "spatial", np.array(ys) * k))
    base = fuse(a, b).scores
    # positive scaling keeps the arg-max unless two classes tie within rounding
    top = np.flatnonzero(np.isclose(base, base.max(), rtol=1e-9, atol=0))
    assert scaled.predicted in top


labels = st.lists(st.integers(0, 3), min_size=2, max_size=40)


@given(labels, st.data())
def test_kappa_bounded_and_matrix_symmetric(a, data):
    b = data.draw(st.lists(st.integers(0, 3), min_size=len(a), max_size=len(a)))
    c = data.draw(st.lists(st.integers(0, 3), min_size=len(a), max_size=len(a)))
    try:
        k = cohens_kappa(a, b)
    except ArithmeticError:
        return
    assert k <= 1 + 1e-12
    assert cohens_kappa(a, a) == 1.0
    try:
        _, m = kappa_matrix({"a": np.array(a), "b": np.array(b), "c": np.array(c)})
    except ArithmeticError:
        return
    assert np.array_equal(m, m.T) and np.array_equal(np.diag(m), np.ones(3))
