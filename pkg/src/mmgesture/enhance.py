"""Unpaired sparse-to-dense spectrogram translation at micro scale.

Two generators map between the sparse domain S1 and the dense domain S2
(``E``: S1 -> S2, ``R``: S2 -> S1). Discriminator ``B`` judges S2 and ``A``
judges S1. Adversarial terms are least-squares; the cycle term is the mean
absolute reconstruction error in both directions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import modelio
from . import nn
from .spectro import Spectrogram, normalize_resize, resize_bilinear

log = logging.getLogger(__name__)


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return x[None, None], True
    if x.ndim == 3:
        return x[:, None], False
    return x, False


class GeneratorNet:
    """conv(1->8) -> residual block(8) -> conv(8->1), tanh output mapped to [0, 1].

    All convolutions are 3x3, stride 1, reflection padded; hidden units use
    tanh. A learnable gain feeds the centred input straight into the output
    pre-activation, so a fresh net starts close to a soft identity instead of
    a flat grey image (flat outputs are a cheap cycle-loss minimum on mostly
    empty spectrograms).
    """

    width = 8
    skip_init = 1.5

    def __init__(self, params=None, rng=None):
        if params is None:
            rng = np.random.default_rng(rng)
            w = self.width
            params = {
                "c1.w": nn.he_init(rng, (w, 1, 3, 3), 9), "c1.b": np.zeros(w),
                "ra.w": nn.he_init(rng, (w, w, 3, 3), 9 * w) * 0.5, "ra.b": np.zeros(w),
                "rb.w": nn.he_init(rng, (w, w, 3, 3), 9 * w) * 0.5, "rb.b": np.zeros(w),
                "out.w": nn.he_init(rng, (1, w, 3, 3), 9 * w) * 0.5, "out.b": np.zeros(1),
                "skip": np.array([self.skip_init]),
            }
        self.params = params

    @classmethod
    def zeros(cls):
        return cls({k: np.zeros_like(v) for k, v in cls(rng=0).params.items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, x):
        p = self.params
        x, squeeze = _as_batch(x)
        if x.shape[1] != 1:
            raise ValueError(f"generator expects 1 channel, got {x.shape[1]}")
        z1, c1 = nn.conv2d_forward(x, p["c1.w"], p["c1.b"], 1, 1, "reflect")
        h1, t1 = nn.tanh_forward(z1)
        za, ca = nn.conv2d_forward(h1, p["ra.w"], p["ra.b"], 1, 1, "reflect")
        ha, ta = nn.tanh_forward(za)
        zb, cb = nn.conv2d_forward(ha, p["rb.w"], p["rb.b"], 1, 1, "reflect")
        h2 = h1 + zb
        zo, co = nn.conv2d_forward(h2, p["out.w"], p["out.b"], 1, 1, "reflect")
        centred = 2 * x - 1
        t = np.tanh(zo + p["skip"][0] * centred)
        y = 0.5 * (t + 1)
        return y, (c1, t1, ca, ta, cb, co, t, centred, squeeze)

    def __call__(self, x):
        y, cache = self.forward(x)
        return y[0, 0] if cache[-1] else y

    def backward(self, dy, cache):
        c1, t1, ca, ta, cb, co, t, centred, _ = cache
        g = {}
        dzo = dy * 0.5 * (1 - t * t)
        g["skip"] = np.array([np.sum(dzo * centred)])
        dh2, g["out.w"], g["out.b"] = nn.conv2d_backward(dzo, co)
        dha, g["rb.w"], g["rb.b"] = nn.conv2d_backward(dh2, cb)
        dh1, g["ra.w"], g["ra.b"] = nn.conv2d_backward(nn.tanh_backward(dha, ta), ca)
        dh1 = dh1 + dh2
        dx, g["c1.w"], g["c1.b"] = nn.conv2d_backward(nn.tanh_backward(dh1, t1), c1)
        return dx + 2 * self.params["skip"][0] * dzo, g


class DiscriminatorNet:
    """Patch discriminator: two stride-2 3x3 convs (1->8->1), tanh between.

    Receptive field of one output cell: 3 pixels after the first layer
    (jump 2), 3 + 2*2 = 7 pixels after the second. A 64x64 input yields a
    16x16 decision map.
    """

    width = 8
    receptive_field = 7

    def __init__(self, params=None, rng=None):
        if params is None:
            rng = np.random.default_rng(rng)
            w = self.width
            params = {
                "d1.w": nn.he_init(rng, (w, 1, 3, 3), 9), "d1.b": np.zeros(w),
                "d2.w": nn.he_init(rng, (1, w, 3, 3), 9 * w) * 0.5, "d2.b": np.zeros(1),
            }
        self.params = params

    def forward(self, x):
        p = self.params
        x, squeeze = _as_batch(x)
        if x.shape[1] != 1:
            raise ValueError(f"discriminator expects 1 channel, got {x.shape[1]}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ValueError(f"input size {x.shape[2:]} must be divisible by 4")
        z1, c1 = nn.conv2d_forward(x, p["d1.w"], p["d1.b"], 2, 1, "zero")
        h1, t1 = nn.tanh_forward(z1)
        z2, c2 = nn.conv2d_forward(h1, p["d2.w"], p["d2.b"], 2, 1, "zero")
        return z2, (c1, t1, c2, squeeze)

    def __call__(self, x):
        y, cache = self.forward(x)
        return y[0, 0] if cache[-1] else y

    def backward(self, dy, cache):
        c1, t1, c2, _ = cache
        g = {}
        dh1, g["d2.w"], g["d2.b"] = nn.conv2d_backward(dy, c2)
        dx, g["d1.w"], g["d1.b"] = nn.conv2d_backward(nn.tanh_backward(dh1, t1), c1)
        return dx, g


def generator_forward(net: GeneratorNet, spectrogram):
    return net(spectrogram)


def discriminator_forward(net: DiscriminatorNet, spectrogram):
    return net(spectrogram)


class ReplayBuffer:
    """Pool of past generated images fed to a discriminator.

    Until full every query is stored and returned as is; afterwards each
    image is, with probability 1/2, swapped for a random stored one.
    """

    def __init__(self, capacity: int = 50, rng=None):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.items: list[np.ndarray] = []
        self.rng = np.random.default_rng(rng)

    def __len__(self):
        return len(self.items)

    def query(self, images: np.ndarray) -> np.ndarray:
        if self.capacity == 0:
            return images
        out = []
        for img in images:
            img = np.array(img, copy=True)
            if len(self.items) < self.capacity:
                self.items.append(img)
                out.append(img)
            elif self.rng.random() < 0.5:
                i = self.rng.integers(len(self.items))
                out.append(self.items[i])
                self.items[i] = img
            else:
                out.append(img)
        return np.stack(out)


def cycle_loss(E: Callable, R: Callable, s1, s2) -> float:
    """Mean L1 of R(E(s1)) - s1 plus mean L1 of E(R(s2)) - s2."""
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    # nets map (n, h, w) batches to (n, 1, h, w); keep the input layout so nothing broadcasts
    rec1 = np.reshape(R(np.reshape(E(s1), s1.shape)), s1.shape)
    rec2 = np.reshape(E(np.reshape(R(s2), s2.shape)), s2.shape)
    return float(np.mean(np.abs(rec1 - s1)) + np.mean(np.abs(rec2 - s2)))


@dataclass
class Losses:
    total: float
    gan_E: float
    gan_R: float
    cyc: float
    grads: dict = field(default_factory=dict)  # net name -> {tensor: grad}
    fake_dense: np.ndarray | None = None
    fake_sparse: np.ndarray | None = None


def _merge(a: dict, b: dict) -> dict:
    return {k: a.get(k, 0) + b.get(k, 0) for k in set(a) | set(b)}


def compute_losses(E: GeneratorNet, R: GeneratorNet, A: DiscriminatorNet, B: DiscriminatorNet,
                   batch_sparse, batch_dense, lam: float = 10.0) -> Losses:
    """Generator objective and its gradient for every parameter of all four nets."""
    s1, _ = _as_batch(batch_sparse)
    s2, _ = _as_batch(batch_dense)
    if len(s1) == 0 or len(s2) == 0:
        raise ValueError("empty batch")

    fake2, cE1 = E.forward(s1)
    rec1, cR1 = R.forward(fake2)
    fake1, cR2 = R.forward(s2)
    rec2, cE2 = E.forward(fake1)
    dB, cB = B.forward(fake2)
    dA, cA = A.forward(fake1)

    gan_E = float(np.mean((dB - 1) ** 2))
    gan_R = float(np.mean((dA - 1) ** 2))
    cyc = float(np.mean(np.abs(rec1 - s1)) + np.mean(np.abs(rec2 - s2)))
    total = gan_E + gan_R + lam * cyc
    if not np.isfinite([gan_E, gan_R, cyc]).all():
        raise FloatingPointError(f"non-finite loss: gan_E={gan_E} gan_R={gan_R} cyc={cyc}")

    dfake2, gB = B.backward(2 * (dB - 1) / dB.size, cB)
    dfake1, gA = A.backward(2 * (dA - 1) / dA.size, cA)
    dfake2_c, gR1 = R.backward(lam * np.sign(rec1 - s1) / s1.size, cR1)
    dfake1_c, gE2 = E.backward(lam * np.sign(rec2 - s2) / s2.size, cE2)
    _, gE1 = E.backward(dfake2 + dfake2_c, cE1)
    _, gR2 = R.backward(dfake1 + dfake1_c, cR2)
    grads = {"E": _merge(gE1, gE2), "R": _merge(gR1, gR2), "A": gA, "B": gB}
    return Losses(total, gan_E, gan_R, cyc, grads, fake2, fake1)


def discriminator_loss(D: DiscriminatorNet, real, fake):
    """Least-squares discriminator loss (real -> 1, fake -> 0) and gradients."""
    real, _ = _as_batch(real)
    fake, _ = _as_batch(fake)
    dr, cr = D.forward(real)
    df, cf = D.forward(fake)
    loss = 0.5 * (np.mean((dr - 1) ** 2) + np.mean(df ** 2))
    _, g1 = D.backward((dr - 1) / dr.size, cr)
    _, g2 = D.backward(df / df.size, cf)
    return float(loss), _merge(g1, g2)


@dataclass
class EnhanceTrainConfig:
    lam: float = 10.0
    learning_rate: float = 0.1
    disc_learning_rate: float = 0.5
    iterations: int = 200
    batch_size: int = 4
    buffer_capacity: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("cycle weight must be positive")


@dataclass
class Enhancer:
    E: GeneratorNet
    R: GeneratorNet
    A: DiscriminatorNet
    B: DiscriminatorNet
    history: dict = field(default_factory=dict)

    def params(self) -> dict:
        out = {}
        for name in ("E", "R", "A", "B"):
            for k, v in getattr(self, name).params.items():
                out[f"{name}.{k}"] = v
        return out

    def save(self, path):
        modelio.save(path, self.params(), {"kind": "enhancer"})

    @classmethod
    def load(cls, path) -> "Enhancer":
        params, meta = modelio.load(path)
        if meta.get("kind") != "enhancer":
            raise ValueError(f"{path} is not an enhancer parameter file")
        split = {n: {} for n in "ERAB"}
        for k, v in params.items():
            net, name = k.split(".", 1)
            split[net][name] = v
        return cls(GeneratorNet(split["E"]), GeneratorNet(split["R"]),
                   DiscriminatorNet(split["A"]), DiscriminatorNet(split["B"]))


def _sgd(params, grads, lr):
    for k, g in grads.items():
        params[k] -= lr * g


def train_enhancer(sparse, dense, cfg: EnhanceTrainConfig | None = None,
                   max_loss: float = 1e3) -> Enhancer:
    """Alternate generator and discriminator gradient-descent steps.

    ``sparse`` and ``dense`` are stacks of ``(H, W)`` images in [0, 1]; they
    need not be paired. Discriminators see generated samples through replay
    buffers. The per-iteration losses are kept in ``Enhancer.history``.
    """
    cfg = EnhanceTrainConfig() if cfg is None else cfg
    sparse = np.asarray(sparse, dtype=float)
    dense = np.asarray(dense, dtype=float)
    if len(sparse) == 0 or len(dense) == 0:
        raise ValueError("both domains need at least one image")
    rng = np.random.default_rng(cfg.seed)
    E, R = GeneratorNet(rng=rng), GeneratorNet(rng=rng)
    A, B = DiscriminatorNet(rng=rng), DiscriminatorNet(rng=rng)
    buf_sparse = ReplayBuffer(cfg.buffer_capacity, rng)
    buf_dense = ReplayBuffer(cfg.buffer_capacity, rng)
    hist = {k: [] for k in ("total", "gan_E", "gan_R", "cyc", "disc_A", "disc_B")}
    # fixed probe batch so the start/end cycle losses are comparable
    probe_s, probe_d = sparse[:16], dense[:16]
    hist["probe_cyc"] = [cycle_loss(E, R, probe_s, probe_d)]

    for it in range(cfg.iterations):
        s1 = sparse[rng.integers(len(sparse), size=cfg.batch_size)]
        s2 = dense[rng.integers(len(dense), size=cfg.batch_size)]
        L = compute_losses(E, R, A, B, s1, s2, cfg.lam)
        _sgd(E.params, L.grads["E"], cfg.learning_rate)
        _sgd(R.params, L.grads["R"], cfg.learning_rate)

        la, ga = discriminator_loss(A, s1, buf_sparse.query(L.fake_sparse))
        lb, gb = discriminator_loss(B, s2, buf_dense.query(L.fake_dense))
        _sgd(A.params, ga, cfg.disc_learning_rate)
        _sgd(B.params, gb, cfg.disc_learning_rate)

        for k, v in (("total", L.total), ("gan_E", L.gan_E), ("gan_R", L.gan_R),
                     ("cyc", L.cyc), ("disc_A", la), ("disc_B", lb)):
            hist[k].append(v)
        worst = max(L.total, la, lb)
        if not np.isfinite(worst) or worst > max_loss:
            raise FloatingPointError(f"enhancer training diverged at iteration {it}: loss {worst:.3g}")
    hist["probe_cyc"].append(cycle_loss(E, R, probe_s, probe_d))
    return Enhancer(E, R, A, B, hist)


def enhance_images(E: GeneratorNet, images) -> np.ndarray:
    return E(images)


def enhance_stack(E: GeneratorNet, stack: np.ndarray, channels: Sequence[int]) -> np.ndarray:
    """Replace the given channels of a ``(C, H, W)`` or ``(N, C, H, W)`` stack with E(channel)."""
    out = np.array(stack, dtype=float, copy=True)
    sel = list(channels)
    if not sel:
        return out
    if out.ndim == 3:
        out[sel] = E(out[sel])[:, 0]
    else:
        n, c, h, w = out.shape
        y = E(out[:, sel].reshape(n * len(sel), h, w))
        out[:, sel] = y.reshape(n, len(sel), h, w)
    return out


def enhance_set(E: GeneratorNet, spec_set: dict, channels: Sequence[str], size: int = 64) -> dict:
    """Enhance selected domains of a spectrogram set; others pass through untouched.

    Each selected grid is normalized and resized to ``size x size``,
    translated, then resized back and rescaled to its original peak.
    """
    out = dict(spec_set)
    for d in channels:
        s = spec_set[d]
        img = normalize_resize(s, size, size)
        y = E(img)
        back = resize_bilinear(y, *s.grid.shape) * max(float(s.grid.max()), 0.0)
        out[d] = Spectrogram(s.domain, back, s.bin_resolution, s.bin_origin)
    return out
