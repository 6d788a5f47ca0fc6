import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphcpd.dataio import Frame
from graphcpd.errors import ConfigError
from graphcpd.superpixel import SuperpixelParams, enforce_connectivity, is_connected_partition, slic_segment


def brute_slic_assign(values, S, m, iters):
    """Loop-based SLIC (no vectorization), before connectivity enforcement."""
    L, H, W = values.shape
    scale = np.mean(np.abs(values)) or 1.0
    X = values / scale
    centers = []
    for r in range(S // 2, H, S):
        for c in range(S // 2, W, S):
            centers.append([float(r), float(c), *X[:, r, c]])
    labels = np.zeros((H, W), int)
    for _ in range(iters):
        for i in range(H):
            for j in range(W):
                best, best_d = None, math.inf
                cands = [k for k, c in enumerate(centers) if abs(i - c[0]) <= S and abs(j - c[1]) <= S]
                for k in cands or range(len(centers)):
                    c = centers[k]
                    ds = math.sqrt(sum((X[b, i, j] - c[2 + b]) ** 2 for b in range(L)))
                    dxy = math.hypot(i - c[0], j - c[1])
                    d = ds + (m / S) * dxy
                    if d < best_d:
                        best, best_d = k, d
                labels[i, j] = best
        for k in range(len(centers)):
            idx = np.argwhere(labels == k)
            if len(idx):
                centers[k][0] = idx[:, 0].mean()
                centers[k][1] = idx[:, 1].mean()
                for b in range(L):
                    centers[k][2 + b] = X[b][labels == k].mean()
    return labels


def test_uniform_frame_gives_grid_voronoi():
    frame = Frame(np.full((3, 10, 10), 0.7))
    lab = slic_segment(frame, SuperpixelParams(5))
    assert lab.n_segments == 4
    assert sorted(lab.sizes().tolist()) == [25, 25, 25, 25]
    # oracle: nearest of the grid-initialized centers (2,2), (2,7), (7,2), (7,7)
    centers = [(2, 2), (2, 7), (7, 2), (7, 7)]
    expect = np.array([[min(range(4), key=lambda k: (i - centers[k][0]) ** 2 + (j - centers[k][1]) ** 2)
                        for j in range(10)] for i in range(10)])
    assert np.array_equal(lab.labels, expect)
    assert np.array_equal(lab.labels, brute_slic_assign(frame.values, 5, 10.0, 10))


def test_single_pixel():
    lab = slic_segment(Frame(np.ones((2, 1, 1))), SuperpixelParams(1))
    assert lab.n_segments == 1 and lab.labels.tolist() == [[0]]


def test_two_halves_respected():
    v = np.zeros((2, 10, 10))
    v[:, :, :5] = 1.0
    v[:, :, 5:] = 50.0
    lab = slic_segment(v, SuperpixelParams(5))
    brute = brute_slic_assign(v, 5, 10.0, 10)
    _, brute_relabel = np.unique(brute, return_inverse=True)
    assert np.array_equal(lab.labels, enforce_connectivity(brute, 5).labels)
    for k in range(lab.n_segments):
        cols = np.argwhere(lab.labels == k)[:, 1]
        assert cols.max() < 5 or cols.min() >= 5


def test_step_too_large():
    with pytest.raises(ConfigError):
        slic_segment(np.zeros((1, 3, 8)), SuperpixelParams(4))


@pytest.mark.parametrize("kw", [dict(step=0), dict(step=2, compactness=0), dict(step=2, iterations=0)])
def test_param_validation(kw):
    with pytest.raises(ConfigError):
        SuperpixelParams(**kw)


def test_connectivity_fixed_point():
    raw = np.array([[3, 3, 1], [3, 1, 1], [2, 2, 1]])
    out = enforce_connectivity(raw, 1)
    assert out.labels.tolist() == [[0, 0, 1], [0, 1, 1], [2, 2, 1]]


def test_enclosed_orphan_merges():
    raw = np.ones((3, 3), int)
    raw[1, 1] = 0
    out = enforce_connectivity(raw, 3)
    assert out.n_segments == 1


def test_checkerboard_collapses():
    out = enforce_connectivity(np.array([[0, 1], [1, 0]]), 2)
    assert out.n_segments == 1


def test_disconnected_label_is_split():
    raw = np.array([[0, 1, 0, 0, 0], [0, 1, 0, 0, 0]])
    out = enforce_connectivity(raw, 1)
    assert out.n_segments == 3
    assert is_connected_partition(out)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 14), st.integers(3, 14), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31))
def test_segmentation_properties(H, W, L, S, seed):
    S = min(S, H, W)
    rng = np.random.default_rng(seed)
    base = rng.uniform(0, 1, (L, 3, 3))
    v = np.kron(base, np.ones((1, math.ceil(H / 3), math.ceil(W / 3))))[:, :H, :W]
    v = v + 0.05 * rng.standard_normal(v.shape)
    params = SuperpixelParams(S)
    lab = slic_segment(v, params)
    # partition with contiguous ids, each segment 4-connected
    assert lab.flat.size == H * W
    assert is_connected_partition(lab)
    expect = math.ceil(H / S) * math.ceil(W / S)
    assert expect / 2 <= lab.n_segments <= 2 * expect
    # determinism
    assert slic_segment(v, params) == lab


def test_band_permutation_and_scaling_invariance(rng):
    v = rng.uniform(0, 1, (5, 12, 12))
    params = SuperpixelParams(4)
    lab = slic_segment(v, params)
    assert slic_segment(v[[3, 1, 4, 0, 2]], params) == lab
    assert slic_segment(4.0 * v, params) == lab
