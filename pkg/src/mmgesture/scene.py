"""Synthetic gesture instances at arbitrary room placements.

Gestures are hand-plus-forearm scatterer sets following parametric
trajectories in a gesture-local frame (x right, y away from the radar, z up).
The user always faces the radar, so placing a gesture rotates this frame
onto the line of sight of the placement.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dsp import PointCloud5D, extract_points, range_doppler_map
from .radar import RadarConfig, derive_resolutions, synth_if_cube

CLASS_NAMES = ("push", "pull", "swipe-left", "swipe-right", "circle")
N_CLASSES = len(CLASS_NAMES)
BOUND = 0.4  # half-width of the cube the trajectory must stay in (m)
MAX_IF_SCATTERERS = 4


@dataclass
class GestureRealization:
    """Per-frame scatterers of one gesture in its local frame."""

    class_id: int
    positions: np.ndarray  # (T, K, 3)
    velocities: np.ndarray  # (T, K, 3)
    amplitudes: np.ndarray  # (T, K)
    frame_period: float

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]


def _ease(s):
    return 0.5 * (1 - np.cos(np.pi * np.clip(s, 0.0, 1.0)))


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_az(a):
    # rotates +y towards +x by azimuth a
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, s, 0], [-s, c, 0], [0, 0, 1]])


def _hand_path(class_id: int, rng: np.random.Generator) -> tuple[Callable, float]:
    """Return (displacement(s) for s in [0, 1], duration)."""
    scale = rng.uniform(0.85, 1.15)
    duration = rng.uniform(1.4, 1.8)
    t0 = rng.uniform(0.15, 0.3)
    t1 = t0 + rng.uniform(0.4, 0.55)
    tilt = _rot_az(np.deg2rad(rng.uniform(-8, 8))) @ _rot_x(np.deg2rad(rng.uniform(-8, 8)))
    base = np.array([0.0, -0.12, 0.05])

    def phase(s):
        return _ease((s - t0) / (t1 - t0))

    if class_id in (0, 1):
        sign = -1.0 if class_id == 0 else 1.0
        # shifted towards the body so the full stroke stays inside the bound
        start = base + [0, 0.04, 0] if class_id == 0 else base + [0, 0.04 - 0.22 * scale, 0]

        def path(s):
            return start + tilt @ np.array([0.0, sign * 0.22 * scale * phase(s), 0.0])
    elif class_id in (2, 3):
        def path(s):
            e = phase(s)
            d = np.array([0.22 * scale * (1 - 2 * e), -0.06 * np.sin(np.pi * e), 0.0])
            return base + [0, -0.1, 0] + tilt @ d
    elif class_id == 4:
        radius = 0.16 * scale

        def path(s):
            a = 2 * np.pi * phase(s)
            d = np.array([radius * np.sin(a), 0.0, radius * (np.cos(a) - 1) + radius])
            return base + [0, -0.12, -radius / 2] + tilt @ d
    else:
        raise ValueError(f"unknown gesture class {class_id}")
    return path, duration


def make_gesture(class_id: int, rng_seed, frame_period: float = 0.05,
                 n_hand: int = 4, n_arm: int = 2) -> GestureRealization:
    """Deterministic hand/forearm scatterer trajectories for one gesture class.

    Classes 2 and 3 drawn with the same seed are exact mirror images in x.
    """
    class_id = int(class_id)
    if class_id not in range(N_CLASSES):
        raise ValueError(f"unknown gesture class {class_id}")
    # swipe-right is the x-mirror of swipe-left, so both draw from the same stream
    rng = np.random.default_rng([2 if class_id == 3 else class_id, *np.atleast_1d(rng_seed)])
    path, duration = _hand_path(2 if class_id == 3 else class_id, rng)
    blob = np.clip(rng.normal(0, 0.025, (n_hand, 3)), -0.05, 0.05)
    elbow = np.array([0.14, 0.0, -0.22]) + rng.normal(0, 0.01, 3)
    fracs = np.arange(1, n_arm + 1) / (n_arm + 1)

    n_frames = int(round(duration / frame_period))
    times = np.arange(n_frames) * frame_period

    def scatterers(t):
        hand = path(t / duration)
        arm = elbow + fracs[:, None] * (hand - elbow)
        return np.vstack([hand + blob, arm])

    h = 1e-4
    pos = np.stack([scatterers(t) for t in times])
    vel = np.stack([(scatterers(t + h) - scatterers(t - h)) / (2 * h) for t in times])
    if class_id == 3:
        pos[..., 0] *= -1
        vel[..., 0] *= -1
    amps = np.ones(pos.shape[:2])
    return GestureRealization(class_id, pos, vel, amps, frame_period)


@dataclass(frozen=True)
class Placement:
    """User anchor relative to the radar boresight (metres, radians)."""

    distance: float
    azimuth_offset: float = 0.0
    elevation_offset: float = 0.0

    def __post_init__(self):
        if not 0.5 < self.distance < 6.3:
            raise ValueError(f"distance {self.distance} outside (0.5, 6.3) m")
        if abs(self.azimuth_offset) > np.deg2rad(60) + 1e-12:
            raise ValueError("azimuth offset beyond 60 degrees")
        if abs(self.elevation_offset) > np.deg2rad(30) + 1e-12:
            raise ValueError("elevation offset beyond 30 degrees")

    @classmethod
    def deg(cls, distance, azimuth_deg=0.0, elevation_deg=0.0) -> "Placement":
        return cls(float(distance), float(np.deg2rad(azimuth_deg)), float(np.deg2rad(elevation_deg)))

    @property
    def obliquity(self) -> float:
        return float(np.cos(self.azimuth_offset) * np.cos(self.elevation_offset))

    def rotation(self) -> np.ndarray:
        return _rot_az(self.azimuth_offset) @ _rot_x(self.elevation_offset)

    def anchor(self) -> np.ndarray:
        return self.rotation() @ np.array([0.0, self.distance, 0.0])


# synthetic analogues of the six evaluation positions
DEFAULT_POSITIONS = {
    "P1": Placement.deg(2.0, 0, 0),
    "P2": Placement.deg(2.0, 30, 0),
    "P3": Placement.deg(3.5, 0, 0),
    "P4": Placement.deg(3.5, -30, 10),
    "P5": Placement.deg(5.0, 0, 0),
    "P6": Placement.deg(5.0, 25, -10),
}


def random_placements(n: int, rng: np.random.Generator, distance=(1.0, 5.5),
                      max_azimuth_deg=60.0, max_elevation_deg=30.0) -> list[Placement]:
    return [Placement.deg(rng.uniform(*distance),
                          rng.uniform(-max_azimuth_deg, max_azimuth_deg),
                          rng.uniform(-max_elevation_deg, max_elevation_deg))
            for _ in range(n)]


@dataclass
class SimOptions:
    r_ref: float = 2.0
    drop: bool = True
    amplitude_noise: float = 0.1
    clutter_rate: float = 0.3
    fade: bool = True

    @staticmethod
    def p_drop(r: float) -> float:
        return min(0.6, 0.08 * r)

    @staticmethod
    def p_outage(r: float) -> float:
        """Chance that the whole hand return fades below the detection floor in a frame."""
        return min(0.5, 0.1 * max(r - 1.5, 0.0))

    @classmethod
    def noiseless(cls, **kw) -> "SimOptions":
        kw.setdefault("fade", False)
        return cls(amplitude_noise=0.0, clutter_rate=0.0, **kw)


@dataclass
class PlacedGesture:
    """World-frame scatterers per frame: lists of positions, velocities, amplitudes."""

    class_id: int
    placement: Placement
    positions: list
    velocities: list
    amplitudes: list
    frame_period: float

    @property
    def n_frames(self) -> int:
        return len(self.positions)


def place_gesture(realization: GestureRealization, placement: Placement,
                  sim: SimOptions | None = None,
                  rng: np.random.Generator | int | None = None) -> PlacedGesture:
    """Move a realization to a placement with attenuation, sparsity and clutter.

    Amplitudes scale by ``(r_ref / distance)**2`` and the placement obliquity
    ``cos(az) * cos(el)``; each scatterer is dropped with probability
    ``min(0.6, 0.08 * distance)`` when ``sim.drop`` is set, and with
    ``sim.fade`` whole frames lose the hand return with ``sim.p_outage``.
    """
    sim = SimOptions() if sim is None else sim
    rng = np.random.default_rng(rng)
    rot = placement.rotation()
    anchor = placement.anchor()
    gain = (sim.r_ref / placement.distance) ** 2 * placement.obliquity
    p_drop = sim.p_drop(placement.distance) if sim.drop else 0.0
    p_out = sim.p_outage(placement.distance) if sim.fade else 0.0

    pos_out, vel_out, amp_out = [], [], []
    for t in range(realization.n_frames):
        pos = realization.positions[t] @ rot.T + anchor
        vel = realization.velocities[t] @ rot.T
        amp = realization.amplitudes[t] * gain
        keep = rng.random(len(pos)) >= p_drop
        if p_out and rng.random() < p_out:
            keep[:] = False
        pos, vel, amp = pos[keep], vel[keep], amp[keep]
        n_clutter = rng.poisson(sim.clutter_rate) if sim.clutter_rate > 0 else 0
        if n_clutter:
            r = rng.uniform(0.5, 6.0, n_clutter)
            az = np.deg2rad(rng.uniform(-60, 60, n_clutter))
            el = np.deg2rad(rng.uniform(-30, 30, n_clutter))
            cp = np.stack([r * np.cos(el) * np.sin(az), r * np.cos(el) * np.cos(az),
                           r * np.sin(el)], axis=1)
            cv = cp / r[:, None] * rng.uniform(-0.3, 0.3, (n_clutter, 1))
            pos = np.vstack([pos, cp])
            vel = np.vstack([vel, cv])
            amp = np.concatenate([amp, rng.uniform(0.05, 0.3, n_clutter)])
        pos_out.append(pos)
        vel_out.append(vel)
        amp_out.append(amp)
    return PlacedGesture(realization.class_id, placement, pos_out, vel_out, amp_out,
                         realization.frame_period)


@dataclass
class GestureInstance:
    frames: list
    label: int
    placement: Placement | None = None
    participant_seed: int = 0
    instance_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) < 8:
            raise ValueError(f"instance needs at least 8 frames, got {len(self.frames)}")
        if int(self.label) not in range(N_CLASSES):
            raise ValueError(f"invalid label {self.label}")

    def aggregate(self) -> np.ndarray:
        """All points of all frames stacked, ``(N, 8)``."""
        return np.vstack([f.points for f in self.frames])

    def with_frames(self, frames) -> "GestureInstance":
        return GestureInstance(list(frames), self.label, self.placement,
                               self.participant_seed, self.instance_id, dict(self.meta))


def _spherical_targets(pos, vel):
    r = np.linalg.norm(pos, axis=1)
    safe = np.where(r > 0, r, 1.0)
    az = np.arctan2(pos[:, 0], pos[:, 1])
    el = np.arcsin(np.clip(pos[:, 2] / safe, -1, 1))
    v = np.einsum("ij,ij->i", pos, vel) / safe
    return r, v, az, el


def render_instance(placed: PlacedGesture, config: RadarConfig | None = None,
                    mode: str = "direct", amplitude_noise: float = 0.0,
                    rng: np.random.Generator | int | None = None, if_noise: float = 0.0,
                    threshold_factor: float = 8.0, label: int | None = None,
                    instance_id: str = "", participant_seed: int = 0,
                    angle_step_deg: float = 1.0) -> GestureInstance:
    """Turn placed scatterers into a sequence of 5D point clouds.

    ``direct`` quantizes each scatterer onto the range, velocity and angle
    grids. ``through_if`` synthesizes IF cubes and runs the DSP chain, which
    is limited to a handful of scatterers per frame.
    """
    config = RadarConfig() if config is None else config
    if mode not in ("direct", "through_if"):
        raise ValueError(f"unknown render mode {mode!r}")
    res = derive_resolutions(config)
    rng = np.random.default_rng(rng)
    span = np.deg2rad(60.0)
    step = np.deg2rad(angle_step_deg)
    frames = []
    for t in range(placed.n_frames):
        pos, vel, amp = placed.positions[t], placed.velocities[t], placed.amplitudes[t]
        ts = t * placed.frame_period
        if mode == "through_if" and len(pos) > MAX_IF_SCATTERERS:
            raise ValueError(f"through_if mode supports at most {MAX_IF_SCATTERERS} "
                             f"scatterers per frame, frame {t} has {len(pos)}")
        if len(pos) == 0:
            frames.append(PointCloud5D(frame_index=t, timestamp=ts))
            continue
        r, v, az, el = _spherical_targets(pos, vel)
        ok = ((r > 0) & (r < res.max_range) & (np.abs(v) < res.max_velocity)
              & (np.abs(az) <= span) & (np.abs(el) <= span))
        r, v, az, el, a = r[ok], v[ok], az[ok], el[ok], amp[ok]
        if mode == "direct":
            rq = np.round(r / res.range_resolution) * res.range_resolution
            vq = np.round(v / res.velocity_resolution) * res.velocity_resolution
            azq = np.round(az / step) * step
            elq = np.round(el / step) * step
            if amplitude_noise > 0:
                a = a * np.abs(1 + amplitude_noise * rng.standard_normal(len(a)))
            keep = (rq > 0) & (rq <= res.max_range)
            frames.append(PointCloud5D.from_spherical(a[keep], rq[keep], vq[keep], azq[keep],
                                                      elq[keep], frame_index=t, timestamp=ts))
        else:
            cube = synth_if_cube(config, list(zip(r, v, az, el, a)), if_noise, rng)
            rd = range_doppler_map(cube, config)
            frames.append(extract_points(rd, config, threshold_factor, frame_index=t,
                                         timestamp=ts, step_deg=angle_step_deg))
    return GestureInstance(frames, placed.class_id if label is None else label,
                           placed.placement, participant_seed, instance_id)


def simulate_instance(class_id: int, placement: Placement, gesture_seed, place_seed,
                      config: RadarConfig | None = None, sim: SimOptions | None = None,
                      mode: str = "direct", instance_id: str = "",
                      participant_seed: int = 0) -> GestureInstance:
    """make_gesture -> place_gesture -> render_instance in one call."""
    config = RadarConfig() if config is None else config
    sim = SimOptions() if sim is None else sim
    real = make_gesture(class_id, gesture_seed, config.frame_period)
    rng = np.random.default_rng(place_seed)
    placed = place_gesture(real, placement, sim, rng)
    return render_instance(placed, config, mode, sim.amplitude_noise, rng,
                           instance_id=instance_id, participant_seed=participant_seed)


# ---------------------------------------------------------------------------
# dataset on disk


def placement_to_dict(p: Placement) -> dict:
    return asdict(p)


def placement_from_dict(d: Mapping) -> Placement:
    return Placement(float(d["distance"]), float(d["azimuth_offset"]), float(d["elevation_offset"]))


def write_instance(path: str | Path, instance: GestureInstance) -> None:
    """One line per frame: a JSON list of 8-tuples (amplitude, r, v, h, e, x, y, z)."""
    with open(path, "w") as fh:
        for frame in instance.frames:
            fh.write(json.dumps(frame.points.tolist()))
            fh.write("\n")


def read_instance(path: str | Path, label: int, frame_period: float = 0.05, **meta) -> GestureInstance:
    frames = []
    with open(path) as fh:
        for t, line in enumerate(fh):
            pts = np.array(json.loads(line), dtype=float).reshape(-1, 8)
            frames.append(PointCloud5D(pts, t, t * frame_period))
    return GestureInstance(frames, label, **meta)


@dataclass
class DatasetSpec:
    positions: Mapping[str, Placement] = field(default_factory=lambda: dict(DEFAULT_POSITIONS))
    classes: Sequence[int] = tuple(range(N_CLASSES))
    repetitions: int = 10
    participants: int = 5
    seed: int = 0
    sim: SimOptions = field(default_factory=SimOptions)


def _seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def generate_instances(spec: DatasetSpec, config: RadarConfig | None = None):
    """Yield ``(record, instance)`` pairs without touching the disk.

    The gesture realization depends on (seed, participant, class, repetition)
    only, so the same repetition is the same motion at every position.
    """
    if not spec.positions:
        raise ValueError("dataset spec needs at least one position")
    config = RadarConfig() if config is None else config
    for pi, (name, placement) in enumerate(spec.positions.items()):
        for c in spec.classes:
            for rep in range(spec.repetitions):
                participant = rep % max(spec.participants, 1)
                pseed = _seed(spec.seed, 7, participant)
                gseed = _seed(spec.seed, 1, participant, c, rep)
                iid = f"{name}_c{c}_r{rep:03d}"
                inst = simulate_instance(c, placement, gseed, _seed(spec.seed, 2, pi, c, rep),
                                         config, spec.sim, instance_id=iid,
                                         participant_seed=pseed)
                record = {
                    "id": iid,
                    "label": int(c),
                    "position": name,
                    "placement": placement_to_dict(placement),
                    "participant": participant,
                    "seed": gseed,
                    "path": f"instances/{iid}.txt",
                }
                inst.meta["position"] = name
                yield record, inst


def generate_random_instances(n: int, seed: int = 0, config: RadarConfig | None = None,
                              sim: SimOptions | None = None, **placement_kw):
    """Yield ``(record, instance)`` for ``n`` gestures at uniformly random placements.

    Classes cycle so the set stays balanced; motions are fresh draws,
    independent of the fixed-position dataset.
    """
    config = RadarConfig() if config is None else config
    rng = np.random.default_rng(_seed(seed, 11))
    for i, placement in enumerate(random_placements(n, rng, **placement_kw)):
        c = i % N_CLASSES
        iid = f"R{i:04d}_c{c}_r{i:03d}"
        gseed = _seed(seed, 12, i)
        inst = simulate_instance(c, placement, gseed, _seed(seed, 13, i), config, sim,
                                 instance_id=iid)
        inst.meta["position"] = "random"
        yield {"id": iid, "label": c, "position": "random",
               "placement": placement_to_dict(placement), "participant": 0,
               "seed": gseed, "path": f"instances/{iid}.txt"}, inst


def gen_dataset(spec: DatasetSpec, out_dir: str | Path,
                config: RadarConfig | None = None) -> list[dict]:
    """Write instance files plus ``manifest.jsonl``; returns the manifest records."""
    out = Path(out_dir)
    if not spec.positions:
        raise ValueError("dataset spec needs at least one position")
    (out / "instances").mkdir(parents=True, exist_ok=True)
    records = []
    for record, inst in generate_instances(spec, config):
        write_instance(out / record["path"], inst)
        records.append(record)
    write_manifest(out, records)
    return records


def write_manifest(out_dir: str | Path, records: Iterable[Mapping]) -> Path:
    path = Path(out_dir) / "manifest.jsonl"
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
    return path


def read_manifest(root: str | Path) -> list[dict]:
    with open(Path(root) / "manifest.jsonl") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_dataset(root: str | Path, frame_period: float = 0.05):
    """Yield ``(record, instance)`` for every manifest row."""
    root = Path(root)
    for rec in read_manifest(root):
        inst = read_instance(root / rec["path"], rec["label"], frame_period,
                             placement=placement_from_dict(rec["placement"]),
                             instance_id=rec["id"])
        inst.meta["position"] = rec.get("position")
        yield rec, inst
