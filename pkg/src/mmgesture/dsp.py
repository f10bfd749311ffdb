"""Range-Doppler processing, digital beamforming and 5D point extraction."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import windows

from .radar import RadarConfig, derive_resolutions, steering_phase

# column layout of PointCloud5D.points
AMP, RNG, VEL, AZ, EL, X, Y, Z = range(8)
COLUMNS = ("amplitude", "range", "velocity", "azimuth", "elevation", "x", "y", "z")


def to_cartesian(r, azimuth, elevation):
    """Spherical to Cartesian with y along boresight, x to the right, z up."""
    r = np.asarray(r, dtype=float)
    ce = np.cos(elevation)
    return r * ce * np.sin(azimuth), r * ce * np.cos(azimuth), r * np.sin(elevation)


def to_spherical(x, y, z):
    """Inverse of :func:`to_cartesian`; returns (range, azimuth, elevation)."""
    x, y, z = (np.asarray(a, dtype=float) for a in (x, y, z))
    r = np.sqrt(x * x + y * y + z * z)
    return r, np.arctan2(x, y), np.arctan2(z, np.hypot(x, y))


@dataclass
class PointCloud5D:
    """Detections of one radar frame.

    ``points`` is an ``(N, 8)`` float array with columns
    (amplitude, range, velocity, azimuth, elevation, x, y, z).
    """

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 8)))
    frame_index: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 8)
        if pts.ndim != 2 or pts.shape[1] != 8:
            raise ValueError(f"points must be (N, 8), got {pts.shape}")
        self.points = pts

    def __len__(self):
        return len(self.points)

    @classmethod
    def from_spherical(cls, amplitude, r, v, az, el, frame_index=0, timestamp=0.0):
        amplitude, r, v, az, el = np.broadcast_arrays(
            *(np.atleast_1d(np.asarray(a, dtype=float)) for a in (amplitude, r, v, az, el)))
        x, y, z = to_cartesian(r, az, el)
        return cls(np.stack([amplitude, r, v, az, el, x, y, z], axis=1), frame_index, timestamp)

    @classmethod
    def from_cartesian(cls, amplitude, v, x, y, z, frame_index=0, timestamp=0.0):
        amplitude, v, x, y, z = np.broadcast_arrays(
            *(np.atleast_1d(np.asarray(a, dtype=float)) for a in (amplitude, v, x, y, z)))
        r, az, el = to_spherical(x, y, z)
        return cls(np.stack([amplitude, r, v, az, el, x, y, z], axis=1), frame_index, timestamp)

    def with_points(self, points) -> "PointCloud5D":
        return PointCloud5D(points, self.frame_index, self.timestamp)

    @property
    def amplitude(self):
        return self.points[:, AMP]

    @property
    def range(self):
        return self.points[:, RNG]

    @property
    def velocity(self):
        return self.points[:, VEL]

    @property
    def azimuth(self):
        return self.points[:, AZ]

    @property
    def elevation(self):
        return self.points[:, EL]

    @property
    def xyz(self):
        return self.points[:, X:Z + 1]


@dataclass
class RangeDopplerMap:
    """Complex range-Doppler maps, one per virtual channel.

    ``data`` has shape ``(n_channels, n_range_bins, n_doppler_bins)``; the
    zero-velocity Doppler bin is ``n_doppler_bins // 2``.
    """

    data: np.ndarray
    range_resolution: float
    velocity_resolution: float

    @property
    def magnitude(self) -> np.ndarray:
        """Noncoherent channel-averaged magnitude, ``(range, doppler)``."""
        return np.abs(self.data).mean(axis=0)

    @property
    def zero_doppler_bin(self) -> int:
        return self.data.shape[2] // 2

    def range_of(self, k):
        return np.asarray(k) * self.range_resolution

    def velocity_of(self, l):
        return (np.asarray(l) - self.zero_doppler_bin) * self.velocity_resolution


def range_doppler_map(cube: np.ndarray, config: RadarConfig) -> RangeDopplerMap:
    """Hann-windowed fast-time then slow-time FFT of a single-frame cube.

    Accepts ``(channels, chirps, samples)`` or a one-frame 4D cube. Scaling
    is by the window sums, so an on-grid tone of amplitude A peaks at A.
    """
    cube = np.asarray(cube)
    if cube.ndim == 4:
        if cube.shape[0] != 1:
            raise ValueError("range_doppler_map processes one frame at a time")
        cube = cube[0]
    expected = (config.n_channels, config.chirps_per_frame, config.samples_per_chirp)
    if cube.shape != expected:
        raise ValueError(f"cube shape {cube.shape} does not match config {expected}")

    w_fast = windows.hann(config.samples_per_chirp, sym=False)
    w_slow = windows.hann(config.chirps_per_frame, sym=False)
    rng_fft = np.fft.fft(cube * w_fast, axis=2)[:, :, :config.n_range_bins]
    rd = np.fft.fftshift(np.fft.fft(rng_fft * w_slow[:, None], axis=1), axes=1)
    rd /= w_fast.sum() * w_slow.sum()
    res = derive_resolutions(config)
    return RangeDopplerMap(np.ascontiguousarray(rd.transpose(0, 2, 1)),
                           res.range_resolution, res.velocity_resolution)


@lru_cache(maxsize=8)
def angle_grid(config: RadarConfig, step_deg: float = 1.0, span_deg: float = 60.0):
    """Beamforming grid: (azimuths, elevations, steering matrix).

    The steering matrix has shape ``(n_el * n_az, n_channels)`` with
    elevation as the slow index.
    """
    n = int(round(span_deg / step_deg))
    ang = np.deg2rad(np.arange(-n, n + 1) * step_deg)
    el, az = np.meshgrid(ang, ang, indexing="ij")
    steer = np.exp(1j * steering_phase(config, az.ravel(), el.ravel()))
    steer.setflags(write=False)
    return ang, ang, steer


def _beamform(snapshots: np.ndarray, config, step_deg, span_deg):
    az, el, steer = angle_grid(config, step_deg, span_deg)
    power = np.abs(snapshots @ steer.conj().T) ** 2 / config.n_channels
    best = power.argmax(axis=1)
    i_el, i_az = np.divmod(best, len(az))
    return az[i_az], el[i_el], power[np.arange(len(best)), best]


def beamform_angles(rd: RangeDopplerMap, cell, config: RadarConfig,
                    step_deg: float = 1.0, span_deg: float = 60.0):
    """Bartlett scan of one range-Doppler cell over an azimuth x elevation grid.

    Returns ``(azimuth, elevation, steering_power)``, angles in radians.
    """
    k, l = cell
    _, n_r, n_d = rd.data.shape
    if not (0 <= k < n_r and 0 <= l < n_d):
        raise IndexError(f"cell {cell} outside map of shape {(n_r, n_d)}")
    az, el, p = _beamform(rd.data[:, k, l][None, :], config, step_deg, span_deg)
    return float(az[0]), float(el[0]), float(p[0])


def extract_points(rd: RangeDopplerMap, config: RadarConfig, threshold_factor: float = 8.0,
                   dynamic_range_db: float = 30.0, frame_index: int = 0,
                   timestamp: float = 0.0, step_deg: float = 1.0,
                   span_deg: float = 60.0) -> PointCloud5D:
    """Threshold the channel-summed map and beamform every detected cell.

    A cell is detected when its magnitude exceeds ``threshold_factor`` times
    the map median and lies within ``dynamic_range_db`` of the map peak.
    The zero-range bin is never reported.
    """
    if not threshold_factor > 0:
        raise ValueError("threshold_factor must be positive")
    mag = rd.magnitude
    peak = mag.max() if mag.size else 0.0
    if not peak > 0 or not np.isfinite(threshold_factor):
        return PointCloud5D(frame_index=frame_index, timestamp=timestamp)
    floor = peak * 10 ** (-dynamic_range_db / 20)
    hit = (mag > threshold_factor * np.median(mag)) & (mag >= floor)
    hit[0, :] = False
    k, l = np.nonzero(hit)
    if len(k) == 0:
        return PointCloud5D(frame_index=frame_index, timestamp=timestamp)
    az, el, _ = _beamform(rd.data[:, k, l].T, config, step_deg, span_deg)
    return PointCloud5D.from_spherical(mag[k, l], rd.range_of(k), rd.velocity_of(l), az, el,
                                       frame_index=frame_index, timestamp=timestamp)
