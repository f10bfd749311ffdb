import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmgesture.dsp import (PointCloud5D, RangeDopplerMap, angle_grid, beamform_angles,
                           extract_points, range_doppler_map, to_cartesian, to_spherical)
from mmgesture.radar import PointTarget, derive_resolutions, synth_if_cube
from scipy.signal import windows


def _rd(config, targets):
    return range_doppler_map(synth_if_cube(config, targets), config)


def test_zero_cube_gives_zero_map(config):
    rd = _rd(config, [])
    assert rd.data.shape == (16, 128, 256)
    assert not rd.magnitude.any()


def test_shape_mismatch_rejected(config):
    with pytest.raises(ValueError):
        range_doppler_map(np.zeros((16, 128, 256)), config)
    with pytest.raises(ValueError):
        range_doppler_map(np.zeros((2, 16, 256, 256)), config)


def test_single_tone_peak_bins(config):
    # [DERIVED] radar-core example: 3.2 m at rest -> range bin 64 +- 1, centre Doppler bin
    rd = _rd(config, [PointTarget(3.2)])
    k, l = np.unravel_index(rd.magnitude.argmax(), rd.magnitude.shape)
    assert abs(k - 64) <= 1
    assert l == rd.zero_doppler_bin


def test_two_targets_two_maxima(config):
    # [DERIVED] superposition: each peak at round(R / dr), round(v / dv) from centre
    res = derive_resolutions(config)
    tg = [PointTarget(1.5, 1.0), PointTarget(4.5, -2.0)]
    mag = _rd(config, tg).magnitude
    for t in tg:
        k = int(round(t.range / res.range_resolution))
        l = 128 + int(round(t.velocity / res.velocity_resolution))
        win = mag[k - 1:k + 2, l - 1:l + 2]
        assert win.max() == mag[k - 3:k + 4, l - 3:l + 4].max()
        assert win.max() > 0.5 * mag.max()


def test_on_grid_tone_scaled_to_amplitude(config):
    # [DERIVED] window-sum scaling: an on-bin tone of amplitude A peaks at A
    res = derive_resolutions(config)
    rd = _rd(config, [PointTarget(40 * res.range_resolution, 0.0, 0.0, 0.0, 2.5)])
    assert rd.magnitude.max() == pytest.approx(2.5, rel=1e-9)


def test_parseval_time_domain(config):
    # [DERIVED] with both FFTs complete, map energy = N_fast * N_slow * windowed energy
    rng = np.random.default_rng(4)
    cfg = config.replace(samples_per_chirp=64, chirps_per_frame=32)
    cube = rng.standard_normal((16, 32, 64)) + 1j * rng.standard_normal((16, 32, 64))
    wf = windows.hann(64, sym=False)
    ws = windows.hann(32, sym=False)
    windowed = cube * wf * ws[:, None]
    # the map keeps the lower half of the range spectrum; a half-band shift brings in the rest
    rd_lo = range_doppler_map(cube, cfg).data
    rd_hi = range_doppler_map(cube * np.exp(-1j * np.pi * np.arange(64)), cfg).data
    energy = (np.sum(np.abs(rd_lo) ** 2) + np.sum(np.abs(rd_hi) ** 2)) * (wf.sum() * ws.sum()) ** 2
    assert energy == pytest.approx(64 * 32 * np.sum(np.abs(windowed) ** 2), rel=1e-6)


def test_broadside_beamforming(config):
    rd = RangeDopplerMap(np.ones((16, 4, 4), complex), 0.05, 0.05)
    az, el, p = beamform_angles(rd, (1, 1), config)
    assert (az, el) == (0.0, 0.0)
    assert p == pytest.approx(16.0)


def test_quarter_wave_phase_gradient_gives_thirty_degrees(config):
    # [DERIVED] pi/2 per element at lambda/2 spacing -> sin(az) = 0.5
    cols = np.tile(np.arange(4), 4)
    snap = np.exp(1j * np.pi / 2 * cols)
    rd = RangeDopplerMap(np.broadcast_to(snap[:, None, None], (16, 2, 2)).copy(), 0.05, 0.05)
    az, el, _ = beamform_angles(rd, (0, 0), config)
    assert abs(np.rad2deg(az) - 30.0) <= 1.0
    assert abs(np.rad2deg(el)) <= 1.0


def test_off_axis_target_recovered_within_one_step(config):
    rd = _rd(config, [PointTarget(2.0, 0.0, np.deg2rad(20), np.deg2rad(-10))])
    k = int(np.argmax(rd.magnitude[:, rd.zero_doppler_bin]))
    az, el, _ = beamform_angles(rd, (k, rd.zero_doppler_bin), config)
    assert abs(np.rad2deg(az) - 20) <= 1 + 1e-9
    assert abs(np.rad2deg(el) + 10) <= 1 + 1e-9


def test_beamform_cell_out_of_bounds(config):
    rd = RangeDopplerMap(np.ones((16, 4, 4), complex), 0.05, 0.05)
    with pytest.raises(IndexError):
        beamform_angles(rd, (4, 0), config)


def test_angle_grid_layout(config):
    az, el, steer = angle_grid(config)
    assert len(az) == len(el) == 121
    assert steer.shape == (121 * 121, 16)


def test_empty_map_or_infinite_threshold_gives_empty_cloud(config):
    assert len(extract_points(_rd(config, []), config)) == 0
    rd = _rd(config, [PointTarget(2.0)])
    assert len(extract_points(rd, config, threshold_factor=np.inf)) == 0
    with pytest.raises(ValueError):
        extract_points(rd, config, threshold_factor=0.0)


def test_zero_range_bin_never_reported(config):
    res = derive_resolutions(config)
    rd = _rd(config, [PointTarget(0.4 * res.range_resolution, 0.0, 0.0, 0.0, 5.0),
                      PointTarget(2.0)])
    pc = extract_points(rd, config)
    assert len(pc) > 0
    assert (pc.range > 0).all()


@pytest.mark.parametrize("rhe, xyz", [
    ((2.0, 0.0, 0.0), (0.0, 2.0, 0.0)),
    ((2.0, np.deg2rad(30), 0.0), (1.0, np.sqrt(3), 0.0)),
    ((1.0, 0.0, np.deg2rad(90)), (0.0, 0.0, 1.0)),
])
def test_to_cartesian_examples(rhe, xyz):
    assert np.allclose(to_cartesian(*rhe), xyz, atol=1e-12)


@given(r=st.floats(0.01, 10), h=st.floats(-1.5, 1.5), e=st.floats(-1.5, 1.5))
def test_spherical_round_trip(r, h, e):
    back = to_spherical(*to_cartesian(r, h, e))
    assert np.allclose(back, (r, h, e), atol=1e-9, rtol=0)


def test_point_cloud_consistency():
    pc = PointCloud5D.from_spherical([1, 2], [1.0, 2.0], [0, 0.1], [0.2, -0.3], [0.1, 0.0])
    x, y, z = to_cartesian(pc.range, pc.azimuth, pc.elevation)
    assert np.allclose(pc.xyz, np.stack([x, y, z], 1), atol=1e-9)
    pc2 = PointCloud5D.from_cartesian(pc.amplitude, pc.velocity, *pc.xyz.T)
    assert np.allclose(pc2.points, pc.points, atol=1e-9)
    with pytest.raises(ValueError):
        PointCloud5D(np.zeros((3, 5)))
    assert len(PointCloud5D()) == 0


@settings(max_examples=15)
@given(r=st.floats(0.3, 6.0), v=st.floats(-6.0, 6.0), az=st.floats(-50, 50), el=st.floats(-50, 50))
def test_end_to_end_single_target(config, r, v, az, el):
    """Any noiseless target in the unambiguous region comes back within one cell."""
    res = derive_resolutions(config)
    rd = _rd(config, [PointTarget(r, v, np.deg2rad(az), np.deg2rad(el))])
    pc = extract_points(rd, config)
    best = pc.points[np.argmax(pc.amplitude)]
    assert abs(best[1] - r) <= res.range_resolution
    assert abs(best[2] - v) <= res.velocity_resolution
