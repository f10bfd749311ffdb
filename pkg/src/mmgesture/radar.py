"""FMCW waveform model, IF-signal synthesis for point targets and resolutions."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.constants import speed_of_light

C = speed_of_light


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class RadarConfig:
    """Waveform, sampling and array geometry of a MIMO FMCW radar.

    Defaults reproduce the 60 GHz 4x4 module used for room-scale gestures.
    ``element_spacing`` of ``None`` means half a carrier wavelength.
    """

    carrier_frequency: float = 60.5e9
    bandwidth: float = 3.5e9
    chirp_slope: float = 118.24e12
    adc_rate: float = 10e6
    samples_per_chirp: int = 256
    chirps_per_frame: int = 256
    frame_period: float = 50e-3
    tx_count: int = 4
    rx_count: int = 4
    element_spacing: float | None = None

    def __post_init__(self):
        for name in ("carrier_frequency", "bandwidth", "chirp_slope", "adc_rate",
                     "frame_period"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("samples_per_chirp", "chirps_per_frame", "tx_count", "rx_count"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive count")
        if not _is_pow2(self.samples_per_chirp) or not _is_pow2(self.chirps_per_frame):
            raise ValueError("samples_per_chirp and chirps_per_frame must be powers of two")
        if self.element_spacing is not None and not self.element_spacing > 0:
            raise ValueError("element_spacing must be positive")
        if self.effective_bandwidth > 1.01 * self.bandwidth:
            raise ValueError(
                f"swept bandwidth {self.effective_bandwidth:.4g} Hz exceeds nominal "
                f"{self.bandwidth:.4g} Hz")

    @property
    def wavelength(self) -> float:
        return C / self.carrier_frequency

    @property
    def spacing(self) -> float:
        return self.wavelength / 2 if self.element_spacing is None else self.element_spacing

    @property
    def sampling_window(self) -> float:
        return self.samples_per_chirp / self.adc_rate

    @property
    def effective_bandwidth(self) -> float:
        return self.chirp_slope * self.sampling_window

    @property
    def chirp_interval(self) -> float:
        # back-to-back chirps fill the frame
        return self.frame_period / self.chirps_per_frame

    @property
    def n_channels(self) -> int:
        return self.tx_count * self.rx_count

    @property
    def n_range_bins(self) -> int:
        return self.samples_per_chirp // 2

    @property
    def resolutions(self) -> "ResolutionSpec":
        return derive_resolutions(self)

    def element_positions(self) -> np.ndarray:
        """(n_channels, 2) positions in metres along the (azimuth, elevation) axes.

        Virtual channel ``tx * rx_count + rx`` sits at column ``rx``, row ``tx``.
        """
        tx, rx = np.meshgrid(np.arange(self.tx_count), np.arange(self.rx_count),
                             indexing="ij")
        return self.spacing * np.stack([rx.ravel(), tx.ravel()], axis=1).astype(float)

    def replace(self, **changes) -> "RadarConfig":
        return dataclasses.replace(self, **changes)


_INT_FIELDS = {"samples_per_chirp", "chirps_per_frame", "tx_count", "rx_count"}


def load_config(path: str | Path) -> RadarConfig:
    """Read a ``key = value`` text file; ``#`` starts a comment."""
    known = {f.name for f in dataclasses.fields(RadarConfig)}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        if key == "element_spacing" and val.lower() in ("none", ""):
            values[key] = None
        elif key in _INT_FIELDS:
            values[key] = int(val)
        else:
            values[key] = float(val)
    return RadarConfig(**values)


def dump_config(config: RadarConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        lines.append(f"{f.name} = {getattr(config, f.name)!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ResolutionSpec:
    range_resolution: float
    velocity_resolution: float
    max_range: float
    max_velocity: float
    wavelength: float
    chirp_repetition_interval: float


def derive_resolutions(config: RadarConfig) -> ResolutionSpec:
    dr = C / (2 * config.effective_bandwidth)
    tc = config.chirp_interval
    dv = config.wavelength / (2 * config.chirps_per_frame * tc)
    return ResolutionSpec(
        range_resolution=dr,
        velocity_resolution=dv,
        max_range=(config.samples_per_chirp // 2) * dr,
        max_velocity=(config.chirps_per_frame // 2) * dv,
        wavelength=config.wavelength,
        chirp_repetition_interval=tc,
    )


@dataclass(frozen=True)
class PointTarget:
    range: float
    velocity: float = 0.0
    azimuth: float = 0.0
    elevation: float = 0.0
    amplitude: float = 1.0


def steering_phase(config: RadarConfig, azimuth, elevation) -> np.ndarray:
    """Per-channel phase (rad) of a plane wave from (azimuth, elevation).

    Broadcasts over the angle arguments; channel axis is last.
    """
    az = np.asarray(azimuth, dtype=float)[..., None]
    el = np.asarray(elevation, dtype=float)[..., None]
    pos = config.element_positions()
    u = np.cos(el) * np.sin(az)
    w = np.sin(el)
    return 2 * np.pi / config.wavelength * (pos[:, 0] * u + pos[:, 1] * w)


def synth_if_cube(config: RadarConfig, targets: Iterable, noise_stddev: float = 0.0,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Synthesize one frame of IF samples for a set of point targets.

    Targets are ``PointTarget`` or ``(range, velocity, azimuth, elevation,
    amplitude)`` tuples. Returns a complex array shaped
    ``(1, n_channels, chirps_per_frame, samples_per_chirp)``.

    Stop-and-go model: each target is frozen within a chirp and advances by
    ``velocity * T_c`` between chirps.
    """
    res = derive_resolutions(config)
    shape = (config.n_channels, config.chirps_per_frame, config.samples_per_chirp)
    cube = np.zeros(shape, dtype=complex)
    t_fast = np.arange(config.samples_per_chirp) / config.adc_rate
    m_slow = np.arange(config.chirps_per_frame)
    lam = config.wavelength

    for tgt in targets:
        if not isinstance(tgt, PointTarget):
            tgt = PointTarget(*tgt)
        if not 0 < tgt.range < res.max_range:
            raise ValueError(f"target range {tgt.range} m outside (0, {res.max_range:.4f})")
        if not abs(tgt.velocity) < res.max_velocity:
            raise ValueError(
                f"target velocity {tgt.velocity} m/s outside +-{res.max_velocity:.4f}")
        beat = 2 * config.chirp_slope * tgt.range / C
        fast = np.exp(2j * np.pi * beat * t_fast)
        slow = np.exp(1j * (4 * np.pi * tgt.range / lam
                            + 4 * np.pi * tgt.velocity * res.chirp_repetition_interval
                            * m_slow / lam))
        chan = np.exp(1j * steering_phase(config, tgt.azimuth, tgt.elevation))
        cube += tgt.amplitude * chan[:, None, None] * slow[None, :, None] * fast[None, None, :]

    if noise_stddev > 0:
        rng = np.random.default_rng() if rng is None else rng
        sigma = noise_stddev / np.sqrt(2)
        cube += sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return cube[None]
