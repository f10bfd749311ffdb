"""Instance -> network input, and the cross-position experiment protocol."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .align import CANONICAL_BINS, CANONICAL_EXTENTS, AlignConfig, align_instance
from .enhance import GeneratorNet, enhance_stack
from .radar import RadarConfig
from .recognize import (EvalReport, TrainConfig, consistency_metrics, evaluate_positions,
                        l2_normalize, train_classifier)
from .scene import GestureInstance
from .spectro import DEFAULT_BINS, DEFAULT_STACK, build_set, stack

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineToggles:
    align: bool = True
    enhance: bool = False
    attention: bool = True

    @classmethod
    def raw(cls) -> "PipelineToggles":
        return cls(align=False, enhance=False, attention=True)


@dataclass
class Pipeline:
    toggles: PipelineToggles = PipelineToggles()
    channels: tuple = DEFAULT_STACK
    size: int = 64
    bins: int = DEFAULT_BINS
    align_cfg: AlignConfig = field(default_factory=AlignConfig)
    config: RadarConfig = field(default_factory=RadarConfig)
    enhancer: GeneratorNet | None = None
    enhance_channels: tuple = (0, 1, 2)

    def frames(self, inst: GestureInstance):
        if self.toggles.align:
            return align_instance(inst, self.align_cfg, self.config)[0].frames
        return inst.frames

    def spectrograms(self, inst: GestureInstance):
        """Aligned frames are binned over the canonical box, raw ones over the room."""
        frames = self.frames(inst)
        if self.toggles.align:
            return build_set(frames, CANONICAL_BINS, CANONICAL_EXTENTS, self.channels, self.config)
        return build_set(frames, self.bins, domains=self.channels, config=self.config)

    def stack(self, inst: GestureInstance) -> np.ndarray:
        return stack(self.spectrograms(inst), self.channels, self.size)

    def stacks(self, instances: Iterable[GestureInstance]) -> np.ndarray:
        x = np.stack([self.stack(i) for i in instances])
        if self.toggles.enhance:
            if self.enhancer is None:
                raise ValueError("enhance toggle set but no enhancer given")
            x = enhance_stack(self.enhancer, x, self.enhance_channels)
        return x


def is_test_rep(record) -> bool:
    """Held-out split: every fifth repetition."""
    rep = int(str(record["id"]).rsplit("_r", 1)[1])
    return rep % 5 == 4


@dataclass
class Featurized:
    x: np.ndarray
    labels: np.ndarray
    positions: np.ndarray
    test: np.ndarray
    distance: np.ndarray
    frontal: np.ndarray


def featurize(pairs: Sequence, pipeline: Pipeline) -> Featurized:
    """``pairs`` are ``(record, instance)`` tuples as produced by the dataset generator."""
    if not pairs:
        raise ValueError("empty dataset")
    recs = [r for r, _ in pairs]
    x = pipeline.stacks([i for _, i in pairs])
    pl = [r["placement"] for r in recs]
    return Featurized(x, np.array([r["label"] for r in recs]),
                      np.array([r["position"] for r in recs]),
                      np.array([is_test_rep(r) for r in recs]),
                      np.array([p["distance"] for p in pl]),
                      np.array([p["azimuth_offset"] == 0 and p["elevation_offset"] == 0 for p in pl]))


SPARSE_MIN_DISTANCE = 4.5
DENSE_MAX_DISTANCE = 2.5


def enhancer_domains(data: Featurized):
    """Unpaired single-channel image pools ``(sparse_train, dense_train, sparse_test)``.

    Sparse: gestures at >= 4.5 m. Dense: frontal gestures at <= 2.5 m.
    Every channel of a stack contributes one image.
    """
    sparse = data.distance >= SPARSE_MIN_DISTANCE
    dense = (data.distance <= DENSE_MAX_DISTANCE) & data.frontal
    h, w = data.x.shape[2:]

    def pool(m):
        return data.x[m].reshape(-1, h, w)

    return pool(sparse & ~data.test), pool(dense & ~data.test), pool(sparse & data.test)


def evaluate_cross_position(model, data: Featurized, train_positions: Sequence[str],
                            test_positions: Sequence[str], cfg: TrainConfig | None = None,
                            random_data: Featurized | None = None, config_echo=None):
    """Train on the train split of ``train_positions`` (unless ``model`` is given)
    and score the held-out split of every listed position.

    Returns ``(report, model)``. Positions in ``test_positions`` that are
    also training positions count as seen, so identical lists leave the
    unseen mean undefined.
    """
    train_positions, test_positions = list(train_positions), list(test_positions)
    if model is None:
        m = np.isin(data.positions, train_positions) & ~data.test
        if not m.any():
            raise ValueError("no training samples for the requested positions")
        model = train_classifier(data.x[m], data.labels[m], cfg)
    order = list(dict.fromkeys(train_positions + test_positions))
    m = np.isin(data.positions, order) & data.test
    if not m.any():
        raise ValueError("empty test set")
    # keep a stable position order in the report
    idx = np.concatenate([np.flatnonzero(m & (data.positions == p)) for p in order])
    rx = random_data.x if random_data is not None else None
    ry = random_data.labels if random_data is not None else None
    echo = {"train": ",".join(train_positions), "test": ",".join(test_positions)}
    echo.update(config_echo or {})
    report = evaluate_positions(model, data.x[idx], data.labels[idx], data.positions[idx],
                                train_positions, rx, ry, echo)
    return report, model


def grouped_features(model, data: Featurized, only_test: bool = False) -> dict:
    """L2-normalized penultimate features keyed by ``(class, position)``."""
    m = data.test if only_test else np.ones(len(data.labels), bool)
    f = l2_normalize(model.features(data.x[m]))
    labels, positions = data.labels[m], data.positions[m]
    groups = {}
    for key in dict.fromkeys(zip(labels.tolist(), positions.tolist())):
        sel = (labels == key[0]) & (positions == key[1])
        groups[key] = f[sel]
    return groups


def consistency_of(model, data: Featurized, only_test: bool = False):
    return consistency_metrics(grouped_features(model, data, only_test))


def toggles_echo(t: PipelineToggles) -> dict:
    return {k: int(v) for k, v in asdict(t).items()}
