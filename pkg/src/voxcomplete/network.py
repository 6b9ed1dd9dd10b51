"""Conditional encoder-decoder generator and conditional critic.

Generator: strided 3D conv encoder (conv -> batch norm -> ReLU -> SE) down
to a small bottleneck, a label embedding projected to a feature block and
concatenated there, then a transposed-conv decoder whose stage outputs are
concatenated with the encoder maps of the same resolution. The last stage is
transposed conv -> tanh.

Critic: the same conv pyramid with leaky ReLU, no batch norm, SE after each
conv; flattened features joined with a label embedding, then two dense
layers, the last one linear with a single output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class ArchConfig:
    dim: int = 32
    num_classes: int = 11
    enc_channels: tuple[int, ...] = (32, 64, 128, 256)
    dec_channels: tuple[int, ...] = (128, 64, 32, 1)
    kernel: int = 4
    stride: int = 2
    label_embed_dim: int = 64
    label_channels: int = 8
    critic_hidden: int = 512
    se_ratio: int = 16
    leaky_slope: float = 0.2
    use_skip: bool = True
    use_se: bool = True
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "enc_channels", tuple(int(c) for c in self.enc_channels))
        object.__setattr__(self, "dec_channels", tuple(int(c) for c in self.dec_channels))
        stages = len(self.enc_channels)
        if stages < 1 or len(self.dec_channels) != stages:
            raise ValueError("enc_channels and dec_channels need the same, non-zero length")
        if self.dec_channels[-1] != 1:
            raise ValueError("the last decoder stage must output one channel")
        if (self.kernel - self.stride) % 2 or self.kernel < self.stride:
            raise ValueError("kernel - stride must be even and non-negative")
        if self.dim % self.stride ** stages:
            raise ValueError(f"dim {self.dim} not divisible by stride^{stages}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.use_se and self.se_ratio > min(self.se_channels()):
            raise ValueError(f"se_ratio {self.se_ratio} exceeds the smallest SE channel count")

    @property
    def pad(self) -> int:
        return (self.kernel - self.stride) // 2

    @property
    def bottleneck(self) -> int:
        return self.dim // self.stride ** len(self.enc_channels)

    def se_channels(self) -> list[int]:
        """Channel counts of every SE block (generator and critic)."""
        return list(self.enc_channels) + list(self.dec_channels[:-1]) + list(self.enc_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc_channels"] = list(self.enc_channels)
        d["dec_channels"] = list(self.dec_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown arch key: {sorted(unknown)[0]}")
        return cls(**d)


@dataclass
class ModelParams:
    """Named generator and critic tensors plus batch-norm running stats."""

    config: ArchConfig
    gen: dict[str, Tensor]
    crit: dict[str, Tensor]
    bn: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def count(self, which: str = "all") -> int:
        groups = {"gen": [self.gen], "crit": [self.crit], "all": [self.gen, self.crit]}[which]
        return int(sum(t.size for g in groups for t in g.values()))

    @property
    def dtype(self):
        return next(iter(self.gen.values())).dtype

    def copy(self) -> "ModelParams":
        def dup(group):
            return {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in group.items()}
        bn = {k: {s: a.copy() for s, a in v.items()} for k, v in self.bn.items()}
        return ModelParams(self.config, dup(self.gen), dup(self.crit), bn)


def se_hidden(channels: int, ratio: int) -> int:
    if ratio > channels:
        raise ValueError(f"SE ratio {ratio} larger than channel count {channels}")
    return channels // ratio


def se_param_count(channels: int, ratio: int) -> int:
    """Weights and biases of both excitation dense layers."""
    h = se_hidden(channels, ratio)
    return channels * h + h + h * channels + channels


def se_block(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Squeeze (global average pool), excite (dense, ReLU, dense, sigmoid),
    and rescale the channels of ``x``."""
    z = ad.global_avg_pool3d(x)
    s = ad.sigmoid(ad.linear(ad.relu(ad.linear(z, w1, b1)), w2, b2))
    return ad.mul(x, ad.reshape(s, s.shape + (1, 1, 1)))


def _se(x: Tensor, p: dict, prefix: str) -> Tensor:
    return se_block(x, p[prefix + ".se.w1"], p[prefix + ".se.b1"],
                    p[prefix + ".se.w2"], p[prefix + ".se.b2"])


# ------------------------------------------------------------------ init

def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(config: ArchConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases, unit batch-norm scale."""
    rng = np.random.default_rng(seed)
    k, s = config.kernel, config.stride
    gen: dict[str, np.ndarray] = {}
    crit: dict[str, np.ndarray] = {}
    bn: dict[str, dict[str, np.ndarray]] = {}

    def he(fan_in, slope=0.0):
        return np.sqrt(6.0 / ((1.0 + slope ** 2) * fan_in))

    def add_se(group, prefix, c):
        h = se_hidden(c, config.se_ratio)
        group[prefix + ".se.w1"] = _uniform(rng, (c, h), he(c), dtype)
        group[prefix + ".se.b1"] = np.zeros(h, dtype)
        group[prefix + ".se.w2"] = _uniform(rng, (h, c), np.sqrt(6.0 / (h + c)), dtype)
        group[prefix + ".se.b2"] = np.zeros(c, dtype)

    def add_bn(prefix, c):
        gen[prefix + ".bn.gamma"] = np.ones(c, dtype)
        gen[prefix + ".bn.beta"] = np.zeros(c, dtype)
        bn[prefix] = {"mean": np.zeros(c, dtype), "var": np.ones(c, dtype)}

    enc = config.enc_channels
    dec = config.dec_channels
    stages = len(enc)

    c_in = 1
    for i, c in enumerate(enc):
        gen[f"enc{i}.w"] = _uniform(rng, (c, c_in, k, k, k), he(c_in * k ** 3), dtype)
        add_bn(f"enc{i}", c)
        if config.use_se:
            add_se(gen, f"enc{i}", c)
        c_in = c

    e, lc, b3 = config.label_embed_dim, config.label_channels, config.bottleneck ** 3
    gen["label.embed"] = _uniform(rng, (config.num_classes, e), 0.05, dtype)
    gen["label.proj.w"] = _uniform(rng, (e, lc * b3), he(e), dtype)
    gen["label.proj.b"] = np.zeros(lc * b3, dtype)

    c_in = enc[-1] + lc
    for j, c in enumerate(dec):
        last = j == stages - 1
        # a transposed conv output cell sees c_in * (k / s)^3 inputs
        fan_in = c_in * max(1, (k // s)) ** 3
        bound = np.sqrt(6.0 / (fan_in + c)) if last else he(fan_in)
        gen[f"dec{j}.w"] = _uniform(rng, (c_in, c, k, k, k), bound, dtype)
        if last:
            gen[f"dec{j}.b"] = np.zeros(c, dtype)
        else:
            add_bn(f"dec{j}", c)
            if config.use_se:
                add_se(gen, f"dec{j}", c)
        c_in = c
        if not last and config.use_skip:
            c_in += enc[stages - 2 - j]

    slope = config.leaky_slope
    c_in = 1
    for i, c in enumerate(enc):
        crit[f"conv{i}.w"] = _uniform(rng, (c, c_in, k, k, k), he(c_in * k ** 3, slope), dtype)
        crit[f"conv{i}.b"] = np.zeros(c, dtype)
        if config.use_se:
            add_se(crit, f"conv{i}", c)
        c_in = c
    flat = enc[-1] * b3 + e
    crit["embed"] = _uniform(rng, (config.num_classes, e), 0.05, dtype)
    crit["fc1.w"] = _uniform(rng, (flat, config.critic_hidden), he(flat, slope), dtype)
    crit["fc1.b"] = np.zeros(config.critic_hidden, dtype)
    crit["fc2.w"] = _uniform(rng, (config.critic_hidden, 1),
                             np.sqrt(6.0 / (config.critic_hidden + 1)), dtype)
    crit["fc2.b"] = np.zeros(1, dtype)

    def wrap(group):
        return {name: Tensor(a, requires_grad=True, name=name) for name, a in group.items()}

    return ModelParams(config, wrap(gen), wrap(crit), bn)


# --------------------------------------------------------------- forward

def _check_inputs(config: ArchConfig, x: Tensor, labels: np.ndarray) -> None:
    d = config.dim
    if x.shape[1:] != (1, d, d, d):
        raise ValueError(f"expected input shape (B, 1, {d}, {d}, {d}), got {x.shape}")
    if len(labels) != x.shape[0]:
        raise ValueError("one label per batch item required")
    if len(labels) and (labels.min() < 0 or labels.max() >= config.num_classes):
        raise ValueError(f"label outside [0, {config.num_classes})")


def generator_forward(params: ModelParams, x, labels, training: bool = False,
                      update_stats: bool = True) -> Tensor:
    """G(x | y) for a signed batch x of shape (B, 1, dim, dim, dim)."""
    cfg = params.config
    p = params.gen
    x = ad.as_tensor(x)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    _check_inputs(cfg, x, labels)
    s, pad = cfg.stride, cfg.pad
    stages = len(cfg.enc_channels)

    def bn(h, prefix):
        stats = params.bn[prefix]
        return ad.batch_norm(h, p[prefix + ".bn.gamma"], p[prefix + ".bn.beta"],
                             stats["mean"], stats["var"], training, cfg.bn_momentum,
                             cfg.bn_eps, update_stats)

    skips = []
    h = x
    for i in range(stages):
        h = ad.relu(bn(ad.conv3d(h, p[f"enc{i}.w"], s, pad), f"enc{i}"))
        if cfg.use_se:
            h = _se(h, p, f"enc{i}")
        skips.append(h)

    b = cfg.bottleneck
    emb = ad.embed(p["label.embed"], labels)
    lab = ad.relu(ad.linear(emb, p["label.proj.w"], p["label.proj.b"]))
    lab = ad.reshape(lab, (len(labels), cfg.label_channels, b, b, b))
    h = ad.concat([h, lab], axis=1)

    for j in range(stages):
        side = b * s ** (j + 1)
        h = ad.conv_transpose3d(h, p[f"dec{j}.w"], s, pad, output_size=(side,) * 3)
        if j == stages - 1:
            h = ad.add(h, ad.reshape(p[f"dec{j}.b"], (1, -1, 1, 1, 1)))
            return ad.tanh(h)
        h = ad.relu(bn(h, f"dec{j}"))
        if cfg.use_se:
            h = _se(h, p, f"dec{j}")
        if cfg.use_skip:
            h = ad.concat([h, skips[stages - 2 - j]], axis=1)
    raise AssertionError("unreachable")


def critic_forward(params: ModelParams, x, labels) -> Tensor:
    """D(x | y): one unbounded score per batch item, shape (B,)."""
    cfg = params.config
    p = params.crit
    x = ad.as_tensor(x)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    _check_inputs(cfg, x, labels)
    h = x
    for i in range(len(cfg.enc_channels)):
        h = ad.conv3d(h, p[f"conv{i}.w"], cfg.stride, cfg.pad)
        h = ad.add(h, ad.reshape(p[f"conv{i}.b"], (1, -1, 1, 1, 1)))
        h = ad.leaky_relu(h, cfg.leaky_slope)
        if cfg.use_se:
            h = _se(h, p, f"conv{i}")
    h = ad.concat([ad.flatten(h), ad.embed(p["embed"], labels)], axis=1)
    h = ad.leaky_relu(ad.linear(h, p["fc1.w"], p["fc1.b"]), cfg.leaky_slope)
    out = ad.linear(h, p["fc2.w"], p["fc2.b"])
    return ad.reshape(out, (x.shape[0],))


def se_total_params(config: ArchConfig) -> int:
    """Closed-form parameter count of every SE block in G and D."""
    return sum(se_param_count(c, config.se_ratio) for c in config.se_channels())
