"""Small video fixtures and brute-force oracles shared by the tests."""

import numpy as np

from mvsense.codec import VideoSequence


def random_video(rng, n=4, w=32, h=32, fps=25):
    return VideoSequence(w, h, fps, rng.integers(0, 256, size=(n, 3, h, w), dtype=np.uint8))


def smooth_texture(rng, h, w):
    """Low-frequency texture whose block SAD has a unique minimum at the true shift."""
    base = rng.integers(0, 256, size=(3, h // 4 + 2, w // 4 + 2)).astype(float)
    up = np.repeat(np.repeat(base, 4, axis=1), 4, axis=2)[:, :h, :w]
    noise = rng.integers(-20, 21, size=(3, h, w))
    return np.clip(up + noise, 0, 255).astype(np.uint8)


def translating_video(rng, shift=(3, 0), n=3, w=64, h=64):
    """Content moves by ``shift`` = (dx, dy) pixels per frame (toroidal)."""
    tex = smooth_texture(rng, h, w)
    frames = [np.roll(tex, (k * shift[1], k * shift[0]), axis=(1, 2)) for k in range(n)]
    return VideoSequence(w, h, 25, np.stack(frames))


def static_video(n=10, w=64, h=64, value=128):
    return VideoSequence(w, h, 25, np.full((n, 3, h, w), value, dtype=np.uint8))


def oracle_luma(frame):
    f = frame.astype(np.int64)
    return (299 * f[0] + 587 * f[1] + 114 * f[2] + 500) // 1000


def oracle_partition_sads(cur_y, ref_y, by, bx, s, block=8):
    """SAD of every in-frame candidate for one partition, as {(dx, dy): sad}."""
    h, w = ref_y.shape
    blk = cur_y[by:by + block, bx:bx + block].astype(np.int64)
    out = {}
    for dy in range(-s, s + 1):
        for dx in range(-s, s + 1):
            y, x = by + dy, bx + dx
            if 0 <= y and 0 <= x and y + block <= h and x + block <= w:
                out[(dx, dy)] = int(np.abs(blk - ref_y[y:y + block, x:x + block]).sum())
    return out


def truncate_stream(bitstream, n_frames):
    """A valid stream holding only the first ``n_frames`` frames."""
    from dataclasses import replace

    from mvsense.bitstream import FrameIndex
    from mvsense.codec import EncodedVideo

    idx = FrameIndex(bitstream.data, bitstream.header)
    end = idx[n_frames - 1].end
    head = replace(bitstream.header, frame_count=n_frames).pack()
    return EncodedVideo(head + bitstream.data[len(head):end])


def numeric_grad(f, x, eps=1e-3, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``x`` (modified in place)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = {}
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        out[i] = (up - down) / (2 * eps)
    return out


def max_relative_error(analytic, numeric):
    """Largest |a - n| / max(|a|, |n|), with entries below 1e-7 in both compared absolutely."""
    worst = 0.0
    for i, n in numeric.items():
        a = analytic.reshape(-1)[i]
        scale = max(abs(a), abs(n))
        worst = max(worst, abs(a - n) / scale if scale > 1e-7 else abs(a - n))
    return worst


def layer_grad_error(layer, x, rng, eps=1e-3, max_entries=None):
    """Worst relative error over the input and every parameter of ``layer``.

    The loss is a fixed random projection of the output, so the check is
    exact up to rounding for layers that are linear in the checked tensor.
    """
    out = layer.forward(x, train=True)
    proj = rng.standard_normal(out.shape)
    layer.backward(proj)
    analytic = {"x": None, **{k: g.copy() for k, g in layer.grads.items()}}
    mask = getattr(layer, "_mask", None)

    def loss():
        if mask is not None:  # hold the dropout mask fixed
            return float(np.sum(x * mask * proj))
        return float(np.sum(layer.forward(x, train=False) * proj))

    # input gradient needs a fresh forward to restore cached state
    layer.forward(x, train=False) if mask is None else None
    analytic["x"] = (layer.backward(proj) if mask is None else proj * mask).copy()

    def pick(arr):
        if max_entries is None or arr.size <= max_entries:
            return None
        return rng.choice(arr.size, max_entries, replace=False)

    worst = max_relative_error(analytic["x"], numeric_grad(loss, x, eps, pick(x)))
    for k, p in layer.params.items():
        worst = max(worst, max_relative_error(analytic[k], numeric_grad(loss, p, eps, pick(p))))
    return worst
