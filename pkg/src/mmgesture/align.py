"""Spatially adaptive point-cloud alignment.

Offsets of the user relative to boresight are estimated from range, height
and lateral spectrogram centroids, then every point is reprojected into a
front-facing view, density-denoised and translated to a canonical anchor.

Sign convention: ``AlignmentParams.azimuth_offset`` is the compensation
angle that the reprojection *adds* to each point azimuth, so a user standing
at azimuth -30 deg yields ``azimuth_offset = +30 deg``. The elevation offset
is subtracted and therefore has the same sign as the user's elevation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .dsp import AMP, AZ, EL, RNG, X, Z, PointCloud5D, to_cartesian, to_spherical
from .radar import RadarConfig, derive_resolutions
from .scene import GestureInstance
from .spectro import Spectrogram, build_set

log = logging.getLogger(__name__)

CANONICAL_ANCHOR = np.array([0.0, 1.0, 0.0])

# Aligned gestures live in a small box around the anchor, so their
# spectrograms can be binned much tighter than the room-wide defaults.
# Bin widths sit near the radar's range / velocity / angle resolution.
CANONICAL_EXTENTS = {
    "RT": (0.6, 1.4),
    "DT": (-0.8, 0.8),
    "HT": (np.deg2rad(-20.0), np.deg2rad(20.0)),
    "ET": (np.deg2rad(-15.0), np.deg2rad(15.0)),
    "XT": (-0.4, 0.4),
    "YT": (0.6, 1.4),
    "ZT": (-0.3, 0.3),
}
CANONICAL_BINS = {"RT": 16, "DT": 32, "HT": 40, "ET": 30, "XT": 16, "YT": 16, "ZT": 12}


class NoSignalError(ValueError):
    """No spectrogram cell exceeded the amplitude threshold."""


@dataclass(frozen=True)
class AlignmentParams:
    elevation_offset: float = 0.0
    azimuth_offset: float = 0.0
    mean_vertical_distance: float = 1.0
    reference_scale: float = 1.0
    activation_threshold: float = 2.5
    degenerate: bool = False
    dropped: int = 0

    def __post_init__(self):
        if abs(self.elevation_offset) >= np.pi / 2 or abs(self.azimuth_offset) >= np.pi / 2:
            raise ValueError("offsets must lie inside (-pi/2, pi/2)")
        if not self.mean_vertical_distance > 0:
            raise ValueError("mean vertical distance must be positive")

    @property
    def projection_active(self) -> bool:
        return self.mean_vertical_distance > self.activation_threshold


@dataclass(frozen=True)
class DenoiseParams:
    epsilon: float = 0.15
    min_points: int = 4

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")


def weighted_centroid(spectrogram, amplitude_threshold: float, bin_resolution: float | None = None,
                      bin_origin: float | None = None) -> float:
    """Mean physical bin value over all (bin, frame) cells above the threshold.

    Each passing cell contributes its bin value once (an indicator weight);
    with ``bin_origin = 0`` this is ``sum(i * res) / N_passing``.
    """
    if isinstance(spectrogram, Spectrogram):
        res = spectrogram.bin_resolution if bin_resolution is None else bin_resolution
        origin = spectrogram.bin_origin if bin_origin is None else bin_origin
        grid = spectrogram.grid
    else:
        grid = np.asarray(spectrogram, dtype=float)
        res = 1.0 if bin_resolution is None else bin_resolution
        origin = 0.0 if bin_origin is None else bin_origin
    if grid.size == 0:
        raise ValueError("empty spectrogram")
    grid = grid.reshape(grid.shape[0], -1)
    passing = grid > amplitude_threshold
    n = passing.sum()
    if n == 0:
        raise NoSignalError("no signal above threshold")
    bins = np.nonzero(passing)[0]
    return float(origin + res * bins.sum() / n)


def _arcsin_clamped(ratio: float, what: str) -> float:
    if abs(ratio) > 1:
        log.warning("degenerate %s ratio %.3f clamped to [-1, 1]", what, ratio)
    return float(np.arcsin(np.clip(ratio, -1.0, 1.0)))


def estimate_offsets(rt: Spectrogram, zt: Spectrogram, xt: Spectrogram,
                     thresholds: float | Sequence[float] = 0.5, relative: bool = True):
    """Return ``(elevation_offset, azimuth_offset, radial_distance)``.

    ``thresholds`` are fractions of each spectrogram's maximum when
    ``relative`` (default), otherwise absolute amplitudes, given as one value
    or one per (RT, ZT, XT).
    """
    th = np.broadcast_to(np.asarray(thresholds, dtype=float), (3,))
    if relative:
        th = th * [s.grid.max() for s in (rt, zt, xt)]
    dist = weighted_centroid(rt, th[0])
    vert = weighted_centroid(zt, th[1])
    horiz = weighted_centroid(xt, th[2])
    if not dist > 0:
        raise NoSignalError("non-positive radial distance")
    phi = _arcsin_clamped(vert / dist, "vertical")
    # compensation angle: opposite sign to the lateral displacement
    theta = _arcsin_clamped(-horiz / dist, "horizontal")
    return phi, theta, dist


def mean_vertical_distance(frames: Sequence[PointCloud5D]) -> float:
    pts = np.vstack([f.points for f in frames]) if len(frames) else np.zeros((0, 8))
    if len(pts) == 0:
        raise ValueError("empty instance")
    return float(np.mean(pts[:, RNG] * np.cos(pts[:, EL]) * np.cos(pts[:, AZ])))


def reproject(frames: Sequence[PointCloud5D], params: AlignmentParams):
    """Map every point into the canonical front-facing view.

    Returns ``(frames, n_dropped)``. Points whose shifted angle reaches
    +-pi/2 are dropped. The tangent warp by ``reference_scale`` only runs
    when the mean vertical distance exceeds the activation threshold.
    """
    phi, theta = params.elevation_offset, params.azimuth_offset
    if phi == 0.0 and theta == 0.0 and (params.reference_scale == 1.0 or not params.projection_active):
        return [f.with_points(f.points.copy()) for f in frames], 0
    cc = np.cos(phi) * np.cos(theta)
    out, dropped = [], 0
    for f in frames:
        p = f.points
        el_shift = p[:, EL] - phi
        az_shift = p[:, AZ] + theta
        ok = (np.abs(el_shift) < np.pi / 2) & (np.abs(az_shift) < np.pi / 2)
        dropped += int((~ok).sum())
        p, el_shift, az_shift = p[ok], el_shift[ok], az_shift[ok]
        if params.projection_active:
            el_b = np.arctan(params.reference_scale * np.tan(el_shift))
            az_b = np.arctan(params.reference_scale * np.tan(az_shift))
        else:
            el_b, az_b = el_shift, az_shift
        q = p.copy()
        q[:, RNG] = p[:, RNG] * cc
        q[:, EL] = el_b
        q[:, AZ] = az_b
        q[:, AMP] = p[:, AMP] / cc
        q[:, X:Z + 1] = np.stack(to_cartesian(q[:, RNG], az_b, el_b), axis=1)
        out.append(f.with_points(q))
    return out, dropped


def dbscan(points: np.ndarray, epsilon: float, min_points: int) -> np.ndarray:
    """Density clustering; returns labels with -1 for noise.

    A point is core when at least ``min_points`` points (itself included)
    lie within ``epsilon``.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    labels = np.full(n, -1)
    if n == 0:
        return labels
    tree = cKDTree(points)
    neigh = tree.query_ball_point(points, epsilon)
    core = np.array([len(nb) >= min_points for nb in neigh])
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        stack = [i]
        while stack:
            j = stack.pop()
            if not core[j]:
                continue
            for k in neigh[j]:
                if labels[k] == -1:
                    labels[k] = cluster
                    stack.append(k)
        cluster += 1
    return labels


def denoise_dbscan(frames: Sequence[PointCloud5D], params: DenoiseParams | None = None):
    """Remove points DBSCAN labels as noise over the aggregated cloud.

    Returns ``(frames, all_noise)``; when every point is noise the input is
    returned unchanged and ``all_noise`` is True.
    """
    params = DenoiseParams() if params is None else params
    sizes = [len(f) for f in frames]
    agg = np.vstack([f.points for f in frames]) if frames else np.zeros((0, 8))
    if len(agg) == 0:
        return list(frames), False
    labels = dbscan(agg[:, X:Z + 1], params.epsilon, params.min_points)
    if (labels < 0).all():
        log.warning("all %d points classified as noise; denoise skipped", len(agg))
        return list(frames), True
    keep = labels >= 0
    out, start = [], 0
    for f, n in zip(frames, sizes):
        out.append(f.with_points(f.points[keep[start:start + n]]))
        start += n
    return out, False


def center_normalize(frames: Sequence[PointCloud5D], anchor=CANONICAL_ANCHOR):
    """Translate so the amplitude-weighted aggregate centroid sits at ``anchor``."""
    agg = np.vstack([f.points for f in frames]) if frames else np.zeros((0, 8))
    if len(agg) == 0:
        raise ValueError("cannot center an empty instance")
    w = agg[:, AMP]
    if not w.sum() > 0:
        w = np.ones(len(agg))
    shift = np.asarray(anchor) - (w[:, None] * agg[:, X:Z + 1]).sum(axis=0) / w.sum()
    out = []
    for f in frames:
        q = f.points.copy()
        q[:, X:Z + 1] += shift
        r, az, el = to_spherical(q[:, X], q[:, X + 1], q[:, Z])
        q[:, RNG], q[:, AZ], q[:, EL] = r, az, el
        out.append(f.with_points(q))
    return out


@dataclass
class AlignConfig:
    """Knobs of the alignment pipeline.

    Offsets are estimated on dedicated fine, room-wide RT/ZT/XT grids so that
    far off-axis users are not clamped into edge bins.
    """

    amplitude_threshold: float = 0.5
    reference_scale: float = 1.0
    activation_threshold: float = 2.5
    denoise: DenoiseParams = DenoiseParams()
    estimation_bins: int = 256
    denoise_enabled: bool = True


def estimation_extents(config: RadarConfig | None = None) -> dict:
    r = derive_resolutions(config or RadarConfig()).max_range
    return {"RT": (0.0, r), "XT": (-r, r), "ZT": (-r / 2, r / 2)}


def align_instance(instance: GestureInstance, cfg: AlignConfig | None = None,
                   config: RadarConfig | None = None):
    """Estimate offsets, reproject, denoise and center one instance.

    Returns ``(aligned_instance, params)``. If no spectrogram cell passes
    the threshold the geometry is left untouched (only centered) and
    ``params.degenerate`` is set.
    """
    cfg = AlignConfig() if cfg is None else cfg
    frames = instance.frames
    total = sum(len(f) for f in frames)
    if total == 0:
        params = AlignmentParams(degenerate=True,
                                 reference_scale=cfg.reference_scale,
                                 activation_threshold=cfg.activation_threshold)
        return instance.with_frames([f.with_points(f.points.copy()) for f in frames]), params

    specs = build_set(frames, cfg.estimation_bins, estimation_extents(config),
                      domains=("RT", "ZT", "XT"), config=config)
    ybar = mean_vertical_distance(frames)
    try:
        phi, theta, _ = estimate_offsets(specs["RT"], specs["ZT"], specs["XT"],
                                         cfg.amplitude_threshold)
        degenerate = False
    except NoSignalError:
        log.warning("instance %s: no signal above threshold, passing through", instance.instance_id)
        phi = theta = 0.0
        degenerate = True
    params = AlignmentParams(phi, theta, max(ybar, 1e-9), cfg.reference_scale,
                             cfg.activation_threshold, degenerate)
    if degenerate:
        out = center_normalize(frames)
        return instance.with_frames(out), params

    out, dropped = reproject(frames, params)
    if cfg.denoise_enabled:
        out, _ = denoise_dbscan(out, cfg.denoise)
    if sum(len(f) for f in out) == 0:
        return instance.with_frames(out), replace(params, dropped=dropped)
    out = center_normalize(out)
    return instance.with_frames(out), replace(params, dropped=dropped)
