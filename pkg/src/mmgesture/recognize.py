"""Dual-branch channel attention, the compact CNN classifier and its metrics."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from . import modelio
from . import nn

log = logging.getLogger(__name__)

N_CLASSES = 5
SIGMOID_CLAMP = 30.0


# ---------------------------------------------------------------------------
# DBCA


def init_dbca(channels: int, reduction: int = 4, rng=None, shared: bool = False) -> dict:
    """Fusion weights for a DBCA block.

    With ``shared`` every output channel uses the same second-layer column,
    so identical input channels receive identical weights.
    """
    rng = np.random.default_rng(rng)
    hidden = max(channels // reduction, 1)
    w1 = nn.he_init(rng, (2 * channels, hidden), 2 * channels)
    w2 = rng.normal(0, np.sqrt(1.0 / hidden), (hidden, channels))
    if shared:
        w2[:] = w2[:, :1]
    return {"w1": w1, "b1": np.zeros(hidden), "w2": w2, "b2": np.zeros(channels)}


def dbca_forward(params: Mapping[str, np.ndarray], x: np.ndarray):
    """Rescale each channel of ``x`` (N, C, H, W) or (C, H, W) by a learned weight.

    Descriptors are the per-channel spatial mean and max; their
    concatenation passes affine -> ReLU -> affine -> sigmoid.
    Returns ``(out, weights, cache)``.
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    n, c, h, w = x.shape
    if params["w2"].shape[1] != c:
        raise ValueError(f"block expects {params['w2'].shape[1]} channels, got {c}")
    flat = x.reshape(n, c, h * w)
    avg = flat.mean(axis=2)
    arg = flat.argmax(axis=2)
    mx = np.take_along_axis(flat, arg[..., None], axis=2)[..., 0]
    d = np.concatenate([avg, mx], axis=1)
    z1, l1 = nn.linear_forward(d, params["w1"], params["b1"])
    a1, m1 = nn.relu_forward(z1)
    z2, l2 = nn.linear_forward(a1, params["w2"], params["b2"])
    # past |z| ~ 37 the sigmoid rounds to exactly 0 or 1; the clamp keeps weights strictly inside
    live = np.abs(z2) < SIGMOID_CLAMP
    s = nn.sigmoid(np.clip(z2, -SIGMOID_CLAMP, SIGMOID_CLAMP))
    out = x * s[:, :, None, None]
    cache = (x, s, arg, l1, m1, l2, live)
    if single:
        return out[0], s[0], cache
    return out, s, cache


def dbca_backward(dout, cache):
    x, s, arg, l1, m1, l2, live = cache
    if dout.ndim == 3:
        dout = dout[None]
    n, c, h, w = x.shape
    g = {}
    dx = dout * s[:, :, None, None]
    ds = (dout * x).sum(axis=(2, 3))
    dz2 = ds * s * (1 - s) * live
    da1, g["w2"], g["b2"] = nn.linear_backward(dz2, l2)
    dd, g["w1"], g["b1"] = nn.linear_backward(nn.relu_backward(da1, m1), l1)
    davg, dmx = dd[:, :c], dd[:, c:]
    dflat = dx.reshape(n, c, h * w) + davg[:, :, None] / (h * w)
    np.put_along_axis(dflat, arg[..., None],
                      np.take_along_axis(dflat, arg[..., None], axis=2) + dmx[..., None], axis=2)
    return dflat.reshape(n, c, h, w), g


@dataclass
class DbcaBlock:
    channels: int
    reduction: int = 4
    params: dict = None

    def __post_init__(self):
        if self.params is None:
            self.params = init_dbca(self.channels, self.reduction)

    def __call__(self, x):
        out, weights, _ = dbca_forward(self.params, x)
        return out, weights


# ---------------------------------------------------------------------------
# backbone


@dataclass
class BackboneConfig:
    in_channels: int = 3
    input_size: int = 64
    widths: tuple = (8, 16, 32)
    hidden: int = 64
    n_classes: int = N_CLASSES
    reduction: int = 4
    dropout: float = 0.3
    attention: bool = True


class BackboneNet:
    """Three conv-BN-ReLU-maxpool blocks, DBCA after block 2, two affine layers."""

    def __init__(self, cfg: BackboneConfig | None = None, rng=None, params=None, buffers=None):
        self.cfg = cfg = BackboneConfig() if cfg is None else cfg
        self.meta: dict = {}
        self.history: dict = {"loss": [], "accuracy": []}
        if cfg.input_size % 8:
            raise ValueError("input size must be divisible by 8")
        if params is None:
            rng = np.random.default_rng(rng)
            params, buffers = {}, {}
            cin = cfg.in_channels
            for i, cout in enumerate(cfg.widths, 1):
                params[f"b{i}.w"] = nn.he_init(rng, (cout, cin, 3, 3), 9 * cin)
                params[f"b{i}.b"] = np.zeros(cout)
                params[f"b{i}.gamma"] = np.ones(cout)
                params[f"b{i}.beta"] = np.zeros(cout)
                buffers[f"b{i}.mean"] = np.zeros(cout)
                buffers[f"b{i}.var"] = np.ones(cout)
                cin = cout
            for k, v in init_dbca(cfg.widths[1], cfg.reduction, rng).items():
                params[f"dbca.{k}"] = v
            flat = cfg.widths[-1] * (cfg.input_size // 8) ** 2
            params["fc1.w"] = nn.he_init(rng, (flat, cfg.hidden), flat)
            params["fc1.b"] = np.zeros(cfg.hidden)
            params["fc2.w"] = nn.he_init(rng, (cfg.hidden, cfg.n_classes), cfg.hidden) * 0.1
            params["fc2.b"] = np.zeros(cfg.n_classes)
        self.params = params
        self.buffers = buffers

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, x, train: bool = False, rng=None):
        """Return ``(logits, features, cache)``; ``rng`` enables dropout in train mode."""
        cfg, p, b = self.cfg, self.params, self.buffers
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            x = x[None]
        expected = (cfg.in_channels, cfg.input_size, cfg.input_size)
        if x.shape[1:] != expected:
            raise ValueError(f"input shape {x.shape[1:]} does not match {expected}")
        drop_rng = rng if train else None
        caches = []
        h = x
        for i in range(1, len(cfg.widths) + 1):
            z, cc = nn.conv2d_forward(h, p[f"b{i}.w"], p[f"b{i}.b"], 1, 1, "zero")
            z, cb = nn.batchnorm_forward(z, p[f"b{i}.gamma"], p[f"b{i}.beta"],
                                         b[f"b{i}.mean"], b[f"b{i}.var"], train)
            z, cr = nn.relu_forward(z)
            z, cp = nn.maxpool2_forward(z)
            cd = None
            if i == 2 and cfg.attention:
                z, _, cd = dbca_forward({k[5:]: v for k, v in p.items() if k.startswith("dbca.")}, z)
            z, cdrop = nn.dropout_forward(z, cfg.dropout, drop_rng)
            caches.append((cc, cb, cr, cp, cd, cdrop))
            h = z
        n = h.shape[0]
        flat = h.reshape(n, -1)
        f1, cf1 = nn.linear_forward(flat, p["fc1.w"], p["fc1.b"])
        feat, cr1 = nn.relu_forward(f1)
        logits, cf2 = nn.linear_forward(feat, p["fc2.w"], p["fc2.b"])
        return logits, feat, (caches, h.shape, cf1, cr1, cf2)

    def backward(self, dlogits, cache):
        caches, hshape, cf1, cr1, cf2 = cache
        g = {}
        dfeat, g["fc2.w"], g["fc2.b"] = nn.linear_backward(dlogits, cf2)
        dflat, g["fc1.w"], g["fc1.b"] = nn.linear_backward(nn.relu_backward(dfeat, cr1), cf1)
        dh = dflat.reshape(hshape)
        for i in range(len(caches), 0, -1):
            cc, cb, cr, cp, cd, cdrop = caches[i - 1]
            dh = nn.dropout_backward(dh, cdrop)
            if cd is not None:
                dh, gd = dbca_backward(dh, cd)
                for k, v in gd.items():
                    g[f"dbca.{k}"] = v
            dh = nn.maxpool2_backward(dh, cp)
            dh = nn.relu_backward(dh, cr)
            dh, g[f"b{i}.gamma"], g[f"b{i}.beta"] = nn.batchnorm_backward(dh, cb)
            dh, g[f"b{i}.w"], g[f"b{i}.b"] = nn.conv2d_backward(dh, cc, input_grad=i > 1)
        for k in self.params:
            g.setdefault(k, np.zeros_like(self.params[k]))
        return g

    def loss_and_grads(self, x, labels, train: bool = True, rng=None):
        logits, _, cache = self.forward(x, train, rng)
        loss, dlogits = nn.cross_entropy(logits, np.asarray(labels))
        return loss, self.backward(dlogits, cache)

    def predict_proba(self, x, batch: int = 128) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            x = x[None]
        out = [nn.softmax(self.forward(x[i:i + batch])[0]) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.cfg.n_classes))

    def predict(self, x) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)

    def features(self, x, batch: int = 128) -> np.ndarray:
        """Penultimate (post-ReLU) activations."""
        x = np.asarray(x, dtype=float)
        out = [self.forward(x[i:i + batch])[1] for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.cfg.hidden))

    def save(self, path):
        """Parameters, running statistics and ``self.meta`` (free-form strings)."""
        tensors = dict(self.params)
        tensors.update({f"buf.{k}": v for k, v in self.buffers.items()})
        meta = {f"user.{k}": str(v) for k, v in self.meta.items()}
        meta.update({"kind": "backbone", "input_size": str(self.cfg.input_size),
                     "attention": str(int(self.cfg.attention)),
                     "in_channels": str(self.cfg.in_channels)})
        modelio.save(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "BackboneNet":
        tensors, meta = modelio.load(path)
        if meta.get("kind") != "backbone":
            raise ValueError(f"{path} is not a backbone parameter file")
        cfg = BackboneConfig(in_channels=int(meta["in_channels"]),
                             input_size=int(meta["input_size"]),
                             attention=bool(int(meta["attention"])))
        params = {k: v for k, v in tensors.items() if not k.startswith("buf.")}
        buffers = {k[4:]: v for k, v in tensors.items() if k.startswith("buf.")}
        net = cls(cfg, params=params, buffers=buffers)
        net.meta = {k[5:]: v for k, v in meta.items() if k.startswith("user.")}
        return net


def backbone_forward(net: BackboneNet, stack, train_mode: bool = False, rng=None) -> np.ndarray:
    """Class probabilities for one ``(3, H, W)`` stack or a batch."""
    logits, _, _ = net.forward(stack, train_mode, rng)
    p = nn.softmax(logits)
    return p[0] if np.ndim(stack) == 3 else p


class LinearSoftmax:
    """Single affine layer with softmax; used as a gradient-check reference."""

    def __init__(self, n_in: int, n_classes: int = N_CLASSES, rng=None):
        rng = np.random.default_rng(rng)
        self.params = {"w": rng.normal(0, 0.1, (n_in, n_classes)), "b": np.zeros(n_classes)}

    def loss_and_grads(self, x, labels, train: bool = True, rng=None):
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        logits, c = nn.linear_forward(x, self.params["w"], self.params["b"])
        loss, d = nn.cross_entropy(logits, np.asarray(labels))
        _, gw, gb = nn.linear_backward(d, c)
        return loss, {"w": gw, "b": gb}


def gradient_check(net, x, labels, step: float = 1e-5) -> float:
    """Max per-tensor relative error between analytic and central-difference gradients.

    The loss is cross-entropy in train mode without dropout, so BN uses
    batch statistics and the objective is deterministic.
    """
    buffers = {k: v.copy() for k, v in getattr(net, "buffers", {}).items()}
    try:
        errs = nn.gradient_check(net.params, lambda: net.loss_and_grads(x, labels, True, None), step)
    finally:
        for k, v in buffers.items():
            net.buffers[k][...] = v
    return max(errs.values())


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    attention: bool = True
    dropout: float = 0.3
    max_loss: float = 1e3


def train_classifier(x: np.ndarray, labels: np.ndarray, cfg: TrainConfig | None = None,
                     net: BackboneNet | None = None) -> BackboneNet:
    """Adam + cross-entropy over shuffled mini-batches; deterministic per seed.

    Per-epoch loss and accuracy are appended to ``net.history``.
    """
    cfg = TrainConfig() if cfg is None else cfg
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if len(x) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    if net is None:
        bcfg = BackboneConfig(in_channels=x.shape[1], input_size=x.shape[2],
                              dropout=cfg.dropout, attention=cfg.attention)
        net = BackboneNet(bcfg, rng)
    opt = nn.Adam(net.params, cfg.learning_rate)
    hist = net.history
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        tot, correct = 0.0, 0
        for i in range(0, len(x), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            logits, _, cache = net.forward(x[idx], True, rng)
            loss, dlogits = nn.cross_entropy(logits, labels[idx])
            if not np.isfinite(loss) or loss > cfg.max_loss:
                raise FloatingPointError(f"classifier training diverged in epoch {epoch}: {loss}")
            opt.step(net.params, net.backward(dlogits, cache))
            tot += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
        hist["loss"].append(tot / len(x))
        hist["accuracy"].append(correct / len(x))
        log.debug("epoch %d loss %.4f acc %.3f", epoch, hist["loss"][-1], hist["accuracy"][-1])
    return net


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    per_position: dict
    seen_mean: float | None
    unseen_mean: float | None
    gap: float | None
    random_accuracy: float | None = None
    config: dict = field(default_factory=dict)

    @classmethod
    def from_accuracies(cls, per_position: Mapping[str, float], seen: Sequence[str],
                        random_accuracy=None, config=None) -> "EvalReport":
        seen = [p for p in per_position if p in set(seen)]
        unseen = [p for p in per_position if p not in set(seen)]
        s = float(np.mean([per_position[p] for p in seen])) if seen else None
        u = float(np.mean([per_position[p] for p in unseen])) if unseen else None
        gap = s - u if s is not None and u is not None else None
        return cls(dict(per_position), s, u, gap, random_accuracy, dict(config or {}))

    def to_text(self) -> str:
        """Line-delimited ``key=value`` form."""
        lines = [f"acc.{p}={a:.6f}" for p, a in self.per_position.items()]
        for k in ("seen_mean", "unseen_mean", "gap", "random_accuracy"):
            v = getattr(self, k)
            lines.append(f"{k}={'--' if v is None else f'{v:.6f}'}")
        lines += [f"config.{k}={v}" for k, v in self.config.items()]
        return "\n".join(lines) + "\n"

    def to_table(self, method: str = "model", seen: Sequence[str] | None = None) -> str:
        """Tab-separated table with Train/Test/Gap/Random columns, percent values."""
        def pct(v):
            return "--" if v is None else f"{100 * v:.2f}"
        cols = list(self.per_position)
        head = ["Method", *cols, "Train-Mean", "Test-Mean", "Gap", "Random-Mean"]
        row = [method, *(pct(self.per_position[c]) for c in cols), pct(self.seen_mean),
               pct(self.unseen_mean), pct(self.gap), pct(self.random_accuracy)]
        return "\t".join(head) + "\n" + "\t".join(row) + "\n"

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy(pred, labels) -> float:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty test set")
    return float(np.mean(pred == labels))


def evaluate_positions(model, x, labels, positions, seen: Sequence[str],
                       random_x=None, random_labels=None, config=None) -> EvalReport:
    """Per-position accuracy of any model exposing ``predict``."""
    positions = np.asarray(positions)
    if len(positions) == 0:
        raise ValueError("empty test set")
    pred = np.asarray(model.predict(x))
    labels = np.asarray(labels)
    per = {}
    for p in dict.fromkeys(positions.tolist()):
        m = positions == p
        per[p] = accuracy(pred[m], labels[m])
    rnd = None
    if random_x is not None and len(random_x):
        rnd = accuracy(model.predict(random_x), random_labels)
    return EvalReport.from_accuracies(per, seen, rnd, config)


# ---------------------------------------------------------------------------
# consistency metrics


@dataclass
class ConsistencyMetrics:
    igd_like: float
    centroid_spread: float
    csi_like: float


def l2_normalize(f: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return f / np.maximum(np.linalg.norm(f, axis=-1, keepdims=True), eps)


def consistency_metrics(groups: Mapping[tuple, np.ndarray]) -> ConsistencyMetrics:
    """Cross-position compactness of per-class feature clouds.

    ``groups`` maps ``(class, position)`` to an ``(n, d)`` feature array.

    * centroid_spread: per class, mean distance of each position centroid
      to the class centroid (mean of position centroids); averaged over classes.
    * igd_like: per class, mean distance between samples taken at different
      positions; averaged over classes.
    * csi_like: centroid_spread divided by the mean distance between class
      centroids (0 when the spread is 0; NaN with a single class otherwise).
    """
    by_class: dict = {}
    for (c, p), f in groups.items():
        f = np.asarray(f, dtype=float)
        if len(f):
            by_class.setdefault(c, {})[p] = f
    positions = {p for d in by_class.values() for p in d}
    if len(positions) < 2:
        raise ValueError("consistency metrics need at least two positions")

    spreads, igds, centers = [], [], {}
    for c, per_pos in by_class.items():
        # distances are translation invariant; measuring from one member makes
        # identical vectors cancel exactly instead of leaving averaging roundoff
        ref = next(iter(per_pos.values()))[0]
        per_pos = {p: f - ref for p, f in per_pos.items()}
        cents = np.stack([f.mean(axis=0) for f in per_pos.values()])
        center = cents.mean(axis=0)
        centers[c] = ref + center
        spreads.append(np.linalg.norm(cents - center, axis=1).mean())
        pair_means = []
        for (_, fa), (_, fb) in combinations(per_pos.items(), 2):
            diff = fa[:, None, :] - fb[None, :, :]
            pair_means.append(np.sqrt((diff ** 2).sum(-1)).mean())
        if pair_means:
            igds.append(np.mean(pair_means))
    spread = float(np.mean(spreads))
    igd = float(np.mean(igds)) if igds else 0.0
    if len(centers) >= 2:
        sep = np.mean([np.linalg.norm(centers[a] - centers[b]) for a, b in combinations(centers, 2)])
        csi = 0.0 if spread == 0 else float(spread / sep) if sep > 0 else float("inf")
    else:
        csi = 0.0 if spread == 0 else float("nan")
    return ConsistencyMetrics(igd, spread, csi)
