"""Multi-domain time spectrograms built from point-cloud sequences."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .dsp import AMP, AZ, EL, RNG, VEL, X, Y, Z, PointCloud5D
from .radar import RadarConfig, derive_resolutions

DOMAINS = ("RT", "DT", "HT", "ET", "XT", "YT", "ZT")
DOMAIN_COLUMN = {"RT": RNG, "DT": VEL, "HT": AZ, "ET": EL, "XT": X, "YT": Y, "ZT": Z}
DEFAULT_BINS = 64
DEFAULT_STACK = ("RT", "DT", "HT")


@dataclass
class Spectrogram:
    """Accumulated amplitude over ``(bin, frame)`` for one physical axis.

    ``bin_origin`` is the physical value at the centre of bin 0.
    """

    domain: str
    grid: np.ndarray
    bin_resolution: float
    bin_origin: float

    @property
    def n_bins(self) -> int:
        return self.grid.shape[0]

    @property
    def n_frames(self) -> int:
        return self.grid.shape[1]

    def bin_centers(self) -> np.ndarray:
        return self.bin_origin + self.bin_resolution * np.arange(self.n_bins)


SpectrogramSet = dict  # domain tag -> Spectrogram


def default_extents(config: RadarConfig | None = None) -> dict[str, tuple[float, float]]:
    res = derive_resolutions(config or RadarConfig())
    a = np.deg2rad(60.0)
    return {
        "RT": (0.0, res.max_range),
        "DT": (-res.max_velocity, res.max_velocity),
        "HT": (-a, a),
        "ET": (-a, a),
        "XT": (-2.0, 2.0),
        "YT": (0.0, 6.4),
        "ZT": (-1.5, 1.5),
    }


def build_spectrogram(frames: Sequence[PointCloud5D], domain: str, n_bins: int,
                      extent: tuple[float, float]) -> Spectrogram:
    lo, hi = extent
    if not hi > lo:
        raise ValueError(f"{domain}: zero-width extent {extent}")
    if n_bins < 2:
        raise ValueError("need at least two bins")
    res = (hi - lo) / n_bins
    col = DOMAIN_COLUMN[domain]
    grid = np.zeros((n_bins, len(frames)))
    for t, frame in enumerate(frames):
        if len(frame) == 0:
            continue
        idx = np.floor((frame.points[:, col] - lo) / res).astype(int)
        np.clip(idx, 0, n_bins - 1, out=idx)
        np.add.at(grid[:, t], idx, frame.points[:, AMP])
    return Spectrogram(domain, grid, res, lo + res / 2)


def build_set(frames: Sequence[PointCloud5D], bins_per_domain: int | Mapping[str, int] = DEFAULT_BINS,
              extents: Mapping[str, tuple[float, float]] | None = None,
              domains: Sequence[str] = DOMAINS, config: RadarConfig | None = None) -> SpectrogramSet:
    """Bin every point of every frame into each requested domain.

    Points outside a domain's extent are clamped into the nearest edge bin.
    """
    if len(frames) == 0:
        raise ValueError("cannot build spectrograms from an empty frame list")
    ext = default_extents(config)
    if extents:
        ext.update(extents)
    out = {}
    for d in domains:
        n = bins_per_domain if isinstance(bins_per_domain, int) else bins_per_domain.get(d, DEFAULT_BINS)
        out[d] = build_spectrogram(frames, d, n, ext[d])
    return out


def resize_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resampling."""
    grid = np.asarray(grid, dtype=float)
    h, w = grid.shape
    rows = np.linspace(0, h - 1, out_h)
    cols = np.linspace(0, w - 1, out_w)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(grid, [rr, cc], order=1, mode="nearest")


def normalize_resize(spectrogram, out_h: int = 64, out_w: int = 64) -> np.ndarray:
    """Bilinear resize then min-max scale into [0, 1]; constant input gives zeros."""
    if out_h < 2 or out_w < 2:
        raise ValueError("output dimensions must be >= 2")
    grid = np.asarray(spectrogram.grid if isinstance(spectrogram, Spectrogram) else spectrogram,
                      dtype=float)
    # decide constancy on the input: interpolation roundoff must not be stretched to [0, 1]
    if grid.size == 0 or grid.max() == grid.min():
        return np.zeros((out_h, out_w))
    out = resize_bilinear(grid, out_h, out_w)
    lo, hi = out.min(), out.max()
    if hi - lo <= 0:
        return np.zeros_like(out)
    return (out - lo) / (hi - lo)


def occupancy(spectrogram, threshold: float = 0.1) -> float:
    """Fraction of cells strictly above ``threshold * max``."""
    grid = spectrogram.grid if isinstance(spectrogram, Spectrogram) else np.asarray(spectrogram)
    if grid.size == 0:
        raise ValueError("empty spectrogram")
    peak = grid.max()
    if peak <= 0:
        return 0.0
    return float(np.mean(grid > threshold * peak))


def stack(spec_set: SpectrogramSet, channels: Sequence[str] = DEFAULT_STACK,
          size: int = 64) -> np.ndarray:
    """Network input: selected domains normalized and resized to ``size x size``."""
    return np.stack([normalize_resize(spec_set[c], size, size) for c in channels])


def dump_set(spec_set: SpectrogramSet, directory: str | Path, prefix: str = "") -> list[Path]:
    """Write each spectrogram as a plain-text matrix (rows = bins, cols = frames)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for d, s in spec_set.items():
        p = directory / f"{prefix}{d}.txt"
        np.savetxt(p, s.grid, fmt="%.9g",
                   header=f"domain={d} bin_origin={s.bin_origin!r} bin_resolution={s.bin_resolution!r}")
        paths.append(p)
    return paths
