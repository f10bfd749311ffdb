"""Acceptance criteria 1-9, one test each.

Every test records a one-line PASS/FAIL verdict with its measured runtime;
the lines are printed together at the end of the pytest run. Work shared
between criteria (dataset synthesis, classifier training) is timed once,
outside any criterion clock, and charged to every criterion that measures
it. The wire criterion reuses a trained model without paying for it.
"""

import itertools
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from mmgesture import nn
from mmgesture.align import AlignmentParams, align_instance, mean_vertical_distance, reproject
from mmgesture.dsp import AZ, EL, RNG, VEL, extract_points, range_doppler_map
from mmgesture.enhance import (DiscriminatorNet, EnhanceTrainConfig, GeneratorNet, compute_losses,
                               cycle_loss, discriminator_loss, train_enhancer)
from mmgesture.pipeline import (Pipeline, PipelineToggles, consistency_of, enhancer_domains,
                                evaluate_cross_position, featurize)
from mmgesture.radar import PointTarget, RadarConfig, derive_resolutions, synth_if_cube
from mmgesture.recognize import TrainConfig, accuracy
from mmgesture.scene import (DEFAULT_POSITIONS, DatasetSpec, SimOptions, generate_instances,
                             generate_random_instances, simulate_instance)
from mmgesture.service import StreamConfig, receive_messages, serve_stream
from mmgesture.spectro import occupancy
from mmgesture.wire import PredictionMessage, WireError, decode_message, encode_message

TRAIN, TEST = ["P1", "P3", "P5"], ["P2", "P4", "P6"]
SEEDS = (0, 1, 2)
SUITE_START = {}


@pytest.fixture(scope="module", autouse=True)
def _suite_clock():
    SUITE_START.setdefault("t", time.perf_counter())


class Criterion:
    """Times a criterion body and records its verdict line, even when an assert fails."""

    def __init__(self, log, n, title, budget, shared=0.0):
        self.log, self.n, self.title, self.budget, self.shared = log, n, title, budget, shared
        self.detail = ""

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0 + self.shared

    def check_budget(self):
        assert self.elapsed() < self.budget, f"runtime {self.elapsed():.1f} s over {self.budget} s"

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        why = "" if exc is None else f" | {str(exc).splitlines()[0] if str(exc) else exc_type.__name__}"
        self.log[self.n] = (f"{status} criterion {self.n} ({self.title}): {self.detail} "
                            f"[{self.elapsed():.1f} s / {self.budget} s]{why}")
        return False


@dataclass
class Experiment:
    raw: object
    aligned: object
    data_seconds: float
    runs: dict = field(default_factory=dict)  # (pipeline, seed) -> (report, model, seconds)

    def run(self, name, seed):
        if (name, seed) not in self.runs:
            t0 = time.perf_counter()
            data = self.raw if name == "raw" else self.aligned
            report, model = evaluate_cross_position(None, data, TRAIN, TEST, TrainConfig(seed=seed))
            self.runs[name, seed] = (report, model, time.perf_counter() - t0)
        return self.runs[name, seed]

    def prepare(self, seeds=SEEDS) -> None:
        """Train outside any criterion clock; each criterion charges the runs via ``seconds``."""
        for p in ("raw", "aligned"):
            for sd in seeds:
                self.run(p, sd)

    def seconds(self, seeds=SEEDS) -> float:
        return self.data_seconds + sum(self.run(p, s)[2] for p in ("raw", "aligned") for s in seeds)


@pytest.fixture(scope="module")
def experiment():
    """Six positions x five classes x 30 repetitions, featurized raw and aligned."""
    t0 = time.perf_counter()
    pairs = list(generate_instances(DatasetSpec(repetitions=30, seed=0)))
    raw = featurize(pairs, Pipeline(PipelineToggles.raw()))
    aligned = featurize(pairs, Pipeline(PipelineToggles()))
    return Experiment(raw, aligned, time.perf_counter() - t0)


# ---------------------------------------------------------------------------


def test_criterion_1_resolutions(acceptance_log):
    with Criterion(acceptance_log, 1, "resolution reproduction", 1.0) as c:
        res = derive_resolutions(RadarConfig())
        c.detail = (f"dr={res.range_resolution:.5f} m dv={res.velocity_resolution:.5f} m/s "
                    f"Rmax={res.max_range:.4f} m vmax={res.max_velocity:.4f} m/s")
        assert res.range_resolution == pytest.approx(0.05, rel=0.01)
        assert res.velocity_resolution == pytest.approx(0.05, rel=0.01)
        assert res.max_range == pytest.approx(6.4, rel=0.015)
        assert res.max_velocity == pytest.approx(6.4, rel=0.015)
        c.check_budget()


def test_criterion_2_dsp_oracle(acceptance_log):
    with Criterion(acceptance_log, 2, "DSP oracle", 60.0) as c:
        cfg = RadarConfig()
        res = derive_resolutions(cfg)
        rng = np.random.default_rng(2024)
        rv_ok = ang_ok = 0
        for _ in range(50):
            r, v = rng.uniform(0.3, 6.0), rng.uniform(-6.0, 6.0)
            az, el = rng.uniform(-50, 50), rng.uniform(-50, 50)
            rd = range_doppler_map(synth_if_cube(cfg, [PointTarget(r, v, np.deg2rad(az),
                                                                   np.deg2rad(el))]), cfg)
            pc = extract_points(rd, cfg)
            best = pc.points[np.argmax(pc.amplitude)]
            rv_ok += (abs(best[RNG] - r) <= res.range_resolution
                      and abs(best[VEL] - v) <= res.velocity_resolution)
            # beamforming grid step is 1 degree
            ang_ok += (abs(np.rad2deg(best[AZ]) - az) <= 1.0
                       and abs(np.rad2deg(best[EL]) - el) <= 1.0)
        c.detail = f"range+velocity {rv_ok}/50, angles {ang_ok}/50"
        assert rv_ok == 50
        assert ang_ok >= 48
        c.check_budget()


def _centroid_track(inst):
    return np.stack([(f.amplitude[:, None] * f.xyz).sum(0) / f.amplitude.sum()
                     for f in inst.frames if len(f)])


def test_criterion_3_alignment(acceptance_log):
    with Criterion(acceptance_log, 3, "alignment identity and compensation", 120.0) as c:
        sim = SimOptions.noiseless(drop=False)
        identical = 0
        for i in range(30):
            inst = simulate_instance(i % 5, DEFAULT_POSITIONS[TRAIN[i % 3]], 300 + i, 400 + i, sim=sim)
            out, dropped = reproject(inst.frames, AlignmentParams(0.0, 0.0,
                                                                  mean_vertical_distance(inst.frames)))
            identical += dropped == 0 and all(np.array_equal(a.points, b.points)
                                              for a, b in zip(inst.frames, out))
        worst = {}
        for off, ref in zip(TEST, TRAIN):  # same distance, frontal reference
            ratios = []
            for i in range(30):
                front = simulate_instance(i % 5, DEFAULT_POSITIONS[ref], 100 + i, 200 + i, sim=sim)
                moved = simulate_instance(i % 5, DEFAULT_POSITIONS[off], 100 + i, 200 + i, sim=sim)
                pre = np.sqrt(np.mean(np.sum((_centroid_track(front) - _centroid_track(moved)) ** 2, 1)))
                a, b = align_instance(front)[0], align_instance(moved)[0]
                post = np.sqrt(np.mean(np.sum((_centroid_track(a) - _centroid_track(b)) ** 2, 1)))
                ratios.append(post / pre)
            worst[off] = max(ratios)
        c.detail = (f"frontal identity {identical}/30, worst post/pre RMS "
                    + " ".join(f"{k}={v:.3f}" for k, v in worst.items()))
        assert identical == 30
        assert max(worst.values()) <= 0.2
        c.check_budget()


def test_criterion_4_consistency(acceptance_log, experiment):
    experiment.prepare(seeds=(0,))
    with Criterion(acceptance_log, 4, "consistency-metric direction", 300.0) as c:
        _, raw_model, _ = experiment.run("raw", 0)
        _, al_model, _ = experiment.run("aligned", 0)
        c.shared = experiment.seconds(seeds=(0,))
        before = consistency_of(raw_model, experiment.raw, only_test=True)
        after = consistency_of(al_model, experiment.aligned, only_test=True)
        drop = {k: 1 - getattr(after, k) / getattr(before, k)
                for k in ("centroid_spread", "csi_like", "igd_like")}
        c.detail = " ".join(f"{k} {getattr(before, k):.3f}->{getattr(after, k):.3f} "
                            f"(-{100 * d:.0f}%)" for k, d in drop.items())
        assert drop["centroid_spread"] >= 0.30
        assert drop["csi_like"] >= 0.30
        assert drop["igd_like"] >= 0.10
        c.check_budget()


def test_criterion_5_enhancement(acceptance_log, experiment):
    with Criterion(acceptance_log, 5, "enhancement properties", 600.0,
                   shared=experiment.data_seconds) as c:
        rng = np.random.default_rng(5)
        nets = {"E": GeneratorNet(rng=rng), "R": GeneratorNet(rng=rng),
                "A": DiscriminatorNet(rng=rng), "B": DiscriminatorNet(rng=rng)}
        s1, s2 = rng.uniform(0, 1, (2, 8, 8)), rng.uniform(0, 1, (2, 8, 8))
        worst = 0.0
        for name, net in nets.items():
            def total_and_grads(name=name):
                L = compute_losses(*nets.values(), s1, s2, 10.0)
                return L.total, L.grads[name]
            worst = max(worst, max(nn.gradient_check(net.params, total_and_grads, 1e-4).values()))
        A = nets["A"]
        worst = max(worst, max(nn.gradient_check(A.params, lambda: discriminator_loss(A, s2, s1),
                                                 1e-4).values()))

        sparse, dense, sparse_test = enhancer_domains(experiment.aligned)
        identity_cyc = cycle_loss(lambda s: s, lambda s: s, sparse_test, dense)

        enh = train_enhancer(sparse, dense, EnhanceTrainConfig(iterations=200, seed=0))
        c0, c1 = enh.history["probe_cyc"]
        out = enh.E(sparse_test)[:, 0]
        # per instance: enhanced channels vs the same channels before enhancement
        occ_in = np.array([occupancy(g) for g in sparse_test]).reshape(-1, 3).mean(1)
        occ_out = np.array([occupancy(g) for g in out]).reshape(-1, 3).mean(1)
        denser = float(np.mean(occ_out > occ_in))
        # a blank output has high min-max occupancy and a small cycle loss; rule that out
        intensity = out.mean() / sparse_test.mean()
        c.detail = (f"max grad err {worst:.1e}, identity L_cyc {identity_cyc}, "
                    f"L_cyc {c0:.4f}->{c1:.4f} ({c1 / c0:.2f}x), "
                    f"occupancy {occ_in.mean():.4f}->{occ_out.mean():.4f} denser on "
                    f"{100 * denser:.1f}% of {len(occ_in)}, intensity ratio {intensity:.2f}")
        assert worst <= 1e-3
        assert identity_cyc == 0.0
        assert c1 <= 0.5 * c0
        assert intensity >= 0.1
        assert denser >= 0.8, f"enhanced occupancy higher on {100 * denser:.1f}% < 80% of instances"
        c.check_budget()


def test_criterion_6_cross_position(acceptance_log, experiment):
    experiment.prepare()
    with Criterion(acceptance_log, 6, "cross-position generalization direction", 1200.0) as c:
        rep = {(p, s): experiment.run(p, s)[0] for p in ("raw", "aligned") for s in SEEDS}
        c.shared = experiment.seconds()
        unseen = {p: np.mean([rep[p, s].unseen_mean for s in SEEDS]) for p in ("raw", "aligned")}
        gap = {p: np.mean([rep[p, s].gap for s in SEEDS]) for p in ("raw", "aligned")}
        c.detail = (f"unseen raw {100 * unseen['raw']:.1f} aligned {100 * unseen['aligned']:.1f}, "
                    f"gap raw {100 * gap['raw']:.1f} aligned {100 * gap['aligned']:.1f} "
                    f"(per seed aligned-raw unseen: "
                    + ", ".join(f"{100 * (rep['aligned', s].unseen_mean - rep['raw', s].unseen_mean):+.1f}"
                                for s in SEEDS) + ")")
        assert unseen["aligned"] - unseen["raw"] >= 0.15
        assert 2 * gap["aligned"] <= gap["raw"]
        c.check_budget()


def test_criterion_7_random_positions(acceptance_log, experiment):
    experiment.prepare()
    with Criterion(acceptance_log, 7, "random free-position direction", 900.0) as c:
        pairs = list(generate_random_instances(200, seed=5))
        raw = featurize(pairs, Pipeline(PipelineToggles.raw()))
        aligned = featurize(pairs, Pipeline(PipelineToggles()))
        acc = {}
        for s in SEEDS:
            acc["raw", s] = accuracy(experiment.run("raw", s)[1].predict(raw.x), raw.labels)
            acc["aligned", s] = accuracy(experiment.run("aligned", s)[1].predict(aligned.x),
                                         aligned.labels)
        c.shared = experiment.seconds()
        lift = [acc["aligned", s] - acc["raw", s] for s in SEEDS]
        c.detail = ", ".join(f"seed {s}: raw {100 * acc['raw', s]:.1f} aligned "
                             f"{100 * acc['aligned', s]:.1f}" for s in SEEDS)
        assert min(lift) >= 0.25
        c.check_budget()


def test_criterion_8_wire(acceptance_log, experiment):
    experiment.prepare(seeds=(0,))
    with Criterion(acceptance_log, 8, "wire protocol", 30.0) as c:
        # magic | version | sequence 7 | timestamp 0 | label 3 | 0.75 as f32
        golden = bytes.fromhex("57564D4E 01 00000007 0000000000000000 03 3F400000".replace(" ", ""))
        assert encode_message(PredictionMessage(7, 0, 3, 0.75)) == golden
        assert decode_message(golden) == PredictionMessage(7, 0, 3, 0.75)

        rng = np.random.default_rng(8)
        crashes = accepted = 0
        bufs = [rng.integers(0, 256, 22, dtype=np.uint8).tobytes() for _ in range(20000)]
        bufs += [golden[:i] + bytes([b]) + golden[i + 1:] for i in range(22) for b in range(256)]
        for buf in bufs:
            try:
                decode_message(buf)
                accepted += 1
            except WireError:
                pass
            except Exception:  # anything but a clean rejection is a crash
                crashes += 1

        # trained aligned classifier (training charged to criterion 6)
        model = experiment.run("aligned", 0)[1]
        pipe = Pipeline()
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
        correct, latencies = 0, []
        try:
            for k in range(5):
                g = simulate_instance(k, DEFAULT_POSITIONS["P4"], 900 + k, 950 + k)
                n = len(g.frames)
                stats = serve_stream(iter(g.frames), model, pipe, StreamConfig(n, n, port=port))
                msgs = list(receive_messages(sock, count=stats.sent, timeout=2.0))
                latencies += stats.latencies
                correct += len(msgs) == 1 and msgs[0].label == k
            frames = [f for k in range(5) for f in
                      simulate_instance(k, DEFAULT_POSITIONS["P6"], 960 + k, 970 + k).frames]
            got = []
            t = threading.Thread(target=lambda: got.extend(receive_messages(sock, 100, timeout=5.0)))
            t.start()
            # endless replay paced at 5x the radar frame rate
            stats = serve_stream(itertools.cycle(frames), model, pipe,
                                 StreamConfig(32, 8, port=port, frame_interval=0.01),
                                 max_messages=100)
            t.join()
        finally:
            sock.close()
        seqs = [m.sequence for m in got]
        x = pipe.stacks([simulate_instance(0, DEFAULT_POSITIONS["P2"], 1, 1)])
        t0 = time.perf_counter()
        for _ in range(20):
            model.predict_proba(x)
        forward_ms = 1e3 * (time.perf_counter() - t0) / 20
        window_ms = 1e3 * float(np.mean(latencies + stats.latencies))
        c.detail = (f"golden ok, {len(bufs)} fuzzed buffers: {crashes} crashes "
                    f"({accepted} valid), loopback labels {correct}/5, "
                    f"100-message run gap-free={seqs == list(range(100))} "
                    f"({len(seqs)} received, {stats.dropped} windows dropped), "
                    f"window latency {window_ms:.1f} ms, forward pass {forward_ms:.2f} ms")
        assert crashes == 0
        assert correct == 5
        assert seqs == list(range(100))
        assert window_ms <= 50.0
        c.check_budget()


def test_criterion_9_suite_budget(acceptance_log, experiment):
    with Criterion(acceptance_log, 9, "full-suite budget", 3600.0) as c:
        c.shared = time.perf_counter() - SUITE_START["t"]
        c.detail = f"acceptance module wall time {c.shared / 60:.1f} min"
        c.check_budget()
