import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mmgesture.dsp import AMP, PointCloud5D
from mmgesture.spectro import (DOMAINS, build_set, build_spectrogram, default_extents, dump_set,
                               normalize_resize, occupancy, stack)


def _frames(n=10, r=3.2, amp=2.0):
    return [PointCloud5D.from_spherical(amp, r, 0.3, 0.1, -0.05, frame_index=t) for t in range(n)]


def test_constant_range_draws_one_line():
    # [DERIVED] 3.2 m / (6.4 m / 128 bins) = bin 64
    s = build_spectrogram(_frames(), "RT", 128, (0.0, 6.4))
    assert s.grid.shape == (128, 10)
    assert np.array_equal(np.nonzero(s.grid)[0], np.full(10, 64))
    assert np.all(s.grid[64] == 2.0)
    assert s.bin_resolution == pytest.approx(0.05)
    assert s.bin_centers()[64] == pytest.approx(3.225)


def test_errors():
    with pytest.raises(ValueError):
        build_set([])
    with pytest.raises(ValueError):
        build_spectrogram(_frames(), "RT", 64, (1.0, 1.0))
    with pytest.raises(ValueError):
        normalize_resize(np.ones((4, 4)), 1, 4)


def test_out_of_extent_points_clamp_to_edges():
    frames = [PointCloud5D.from_spherical([1.0, 1.0], [-1.0, 9.0], 0, 0, 0)] * 8
    s = build_spectrogram(frames, "RT", 16, (0.0, 6.4))
    assert np.all(s.grid[0] == 1.0) and np.all(s.grid[-1] == 1.0)
    assert s.grid.sum() == 16.0


def test_set_has_all_domains_with_consistent_frames():
    ss = build_set(_frames(12))
    assert set(ss) == set(DOMAINS)
    assert {s.n_frames for s in ss.values()} == {12}
    assert set(default_extents()) == set(DOMAINS)


def _random_frames(seed, n=9):
    rng = np.random.default_rng(seed)
    out = []
    for t in range(n):
        k = rng.integers(0, 6)
        out.append(PointCloud5D.from_spherical(rng.uniform(0.1, 2, k), rng.uniform(0.5, 6, k),
                                               rng.uniform(-3, 3, k), rng.uniform(-1, 1, k),
                                               rng.uniform(-0.5, 0.5, k), frame_index=t))
    return out


@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 10))
def test_amplitude_linearity_all_domains(seed, scale):
    frames = _random_frames(seed)
    scaled = []
    for f in frames:
        p = f.points.copy()
        p[:, AMP] *= scale
        scaled.append(f.with_points(p))
    a, b = build_set(frames), build_set(scaled)
    for d in DOMAINS:
        assert np.allclose(b[d].grid, scale * a[d].grid, rtol=1e-12, atol=1e-12)


@given(seed=st.integers(0, 10_000))
def test_point_order_irrelevant(seed):
    frames = _random_frames(seed)
    rng = np.random.default_rng(seed + 1)
    shuffled = [f.with_points(f.points[rng.permutation(len(f))]) for f in frames]
    a, b = build_set(frames), build_set(shuffled)
    for d in DOMAINS:
        assert np.allclose(a[d].grid, b[d].grid, atol=1e-12)


def test_normalize_identity_dims():
    g = np.arange(12.0).reshape(3, 4)
    assert np.allclose(normalize_resize(g, 3, 4), g / 11.0)


def test_normalize_constant_gives_zero():
    assert not normalize_resize(np.full((5, 7), 3.0), 8, 8).any()


def test_bilinear_two_by_two_to_three_by_three():
    # [DERIVED] bilinear weights: centre = mean of the four corners = 1, normalized by 4
    out = normalize_resize(np.array([[0.0, 0.0], [0.0, 4.0]]), 3, 3)
    assert out[2, 2] == 1.0
    assert out[1, 1] == pytest.approx(0.25)
    assert out[0, 0] == 0.0
    assert out[1, 2] == pytest.approx(0.5)


def test_occupancy_examples():
    assert occupancy(np.zeros((4, 4))) == 0.0
    g = np.zeros((4, 4))
    g[:2] = 1.0
    assert occupancy(g, 0.5) == 0.5
    assert occupancy(np.full((3, 3), 2.0), 0.0) == 1.0
    assert occupancy(np.full((3, 3), 2.0), 1.0) == 0.0


@given(arrays(float, (6, 5), elements=st.floats(0, 10)), st.floats(0, 1), st.floats(0, 1))
def test_occupancy_non_increasing_in_threshold(grid, t1, t2):
    lo, hi = sorted((t1, t2))
    assert occupancy(grid, hi) <= occupancy(grid, lo)


def test_stack_shape_and_range():
    x = stack(build_set(_random_frames(3, 20)), ("RT", "DT", "HT"), 64)
    assert x.shape == (3, 64, 64)
    assert x.min() >= 0.0 and x.max() <= 1.0


def test_dump_set_round_trip(tmp_path):
    ss = build_set(_random_frames(5, 10), domains=("RT", "XT"))
    paths = dump_set(ss, tmp_path, "i_")
    assert [p.name for p in paths] == ["i_RT.txt", "i_XT.txt"]
    assert np.allclose(np.loadtxt(paths[0]), ss["RT"].grid, rtol=1e-8)
    assert "domain=RT" in paths[0].read_text().splitlines()[0]
