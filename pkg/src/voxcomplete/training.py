"""Losses, the gradient penalty, Adam, and the alternating training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fracture import FractureParams, SamplePair, fracture_objects
from .network import ArchConfig, ModelParams, critic_forward, generator_forward, init_params
from .voxels import to_signed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lambda_gp: float = 10.0
    k_comp: float = 100.0
    adam_alpha: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    epochs: int = 400
    gen_every: int = 5
    crit_every: int = 1
    gen_sign: int = -1
    seed: int = 0
    adversarial: bool = True
    refracture: bool = False
    max_gen_steps: int | None = None
    dtype: str = "float32"
    checked: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")
        if self.adam_alpha <= 0 or self.lambda_gp < 0 or self.k_comp < 0:
            raise ValueError("rates must be positive and loss weights non-negative")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < b < 1.0:
                raise ValueError(f"Adam betas must lie in (0, 1), got {b}")
        if self.gen_every < 1 or self.crit_every < 1:
            raise ValueError("gen_every and crit_every must be >= 1")
        if self.gen_sign not in (1, -1):
            raise ValueError("gen_sign must be +1 or -1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown train key: {sorted(unknown)[0]}")
        return cls(**d)


# ----------------------------------------------------------------- batches

@dataclass
class Batch:
    fractured: np.ndarray  # (B, 1, d, d, d) signed
    complete: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def make_batch(pairs: Sequence[SamplePair], dtype=np.float32) -> Batch:
    return Batch(
        np.stack([to_signed(p.fractured, dtype) for p in pairs])[:, None],
        np.stack([to_signed(p.complete, dtype) for p in pairs])[:, None],
        np.array([p.label for p in pairs], dtype=np.int64),
    )


# ------------------------------------------------------------------ losses

def completion_loss(pred, target) -> Tensor:
    """Mean absolute difference over batch and voxels."""
    pred, target = ad.as_tensor(pred), ad.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return ad.mean(ad.abs(ad.sub(pred, target)))


def interpolate(x_real: np.ndarray, x_fake: np.ndarray, rng: np.random.Generator | None = None,
                eps: np.ndarray | None = None) -> np.ndarray:
    """Per-sample random point on the segment between real and fake."""
    x_real, x_fake = np.asarray(x_real), np.asarray(x_fake)
    if x_real.shape != x_fake.shape:
        raise ValueError(f"shape mismatch: {x_real.shape} vs {x_fake.shape}")
    if eps is None:
        eps = rng.random(x_real.shape[0])
    eps = np.asarray(eps, dtype=x_real.dtype).reshape((-1,) + (1,) * (x_real.ndim - 1))
    return eps * x_real + (1 - eps) * x_fake


def gradient_penalty(criticfn: Callable[[Tensor, np.ndarray], Tensor], x_hat, labels,
                     lambda_gp: float = 10.0) -> Tensor:
    """lambda * mean_b (||d critic / d x_hat_b||_2 - 1)^2, differentiable in
    the critic parameters."""
    x_hat = Tensor(ad.as_tensor(x_hat).data, requires_grad=True)
    scores = criticfn(x_hat, labels)
    (gx,) = ad.grad(ad.sum(scores), [x_hat], create_graph=True)
    norms = ad.norm2(ad.reshape(gx, (x_hat.shape[0], -1)), axis=1)
    return ad.mul(ad.mean(ad.square(ad.sub(norms, 1.0))), lambda_gp)


def critic_loss(params: ModelParams, batch: Batch, cfg: TrainConfig, rng: np.random.Generator,
                eps: np.ndarray | None = None) -> tuple[Tensor, dict]:
    """mean D(G(x_i)) - mean D(x_t) + gradient penalty. The generator output
    is a constant here."""
    with ad.no_grad():
        fake = generator_forward(params, batch.fractured, batch.labels, training=True,
                                 update_stats=False).data
    n = len(batch)
    both = critic_forward(params, np.concatenate([fake, batch.complete]),
                          np.concatenate([batch.labels, batch.labels]))
    d_fake, d_real = ad.mean(both[:n]), ad.mean(both[n:])
    x_hat = interpolate(batch.complete, fake, rng, eps)
    gp = gradient_penalty(lambda x, y: critic_forward(params, x, y), x_hat, batch.labels,
                          cfg.lambda_gp)
    loss = ad.add(ad.sub(d_fake, d_real), gp)
    return loss, {"d_fake": float(d_fake.data), "d_real": float(d_real.data),
                  "gp": float(gp.data)}


def _frozen(group: dict[str, Tensor]) -> dict[str, Tensor]:
    """Constant views sharing the same buffers."""
    return {k: Tensor(v.data) for k, v in group.items()}


def generator_loss(params: ModelParams, batch: Batch, cfg: TrainConfig) -> tuple[Tensor, dict]:
    """gen_sign * mean D(G(x_i)) + k * completion loss. Critic weights are
    not updated from this loss."""
    fake = generator_forward(params, batch.fractured, batch.labels, training=True)
    comp = completion_loss(fake, batch.complete)
    loss = ad.mul(comp, cfg.k_comp)
    parts = {"completion": float(comp.data)}
    if cfg.adversarial:
        frozen = ModelParams(params.config, params.gen, _frozen(params.crit), params.bn)
        adv = ad.mean(critic_forward(frozen, fake, batch.labels))
        loss = ad.add(loss, ad.mul(adv, float(cfg.gen_sign)))
        parts["d_fake"] = float(adv.data)
    return loss, parts


# ------------------------------------------------------------------- Adam

class Adam:
    """Bias-corrected Adam over a dict of named parameter tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, beta1: float = 0.5,
                 beta2: float = 0.9, eps: float = 1e-8, checked: bool = False):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.checked = checked
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        if self.checked:
            for k, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError(f"non-finite gradient for {k}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k].astype(p.dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], opt: Adam) -> Adam:
    """Functional wrapper: one Adam update of ``params`` in place."""
    opt.step(grads)
    return opt


def param_grads(loss: Tensor, group: dict[str, Tensor]) -> dict[str, np.ndarray]:
    names = list(group)
    gs = ad.grad(loss, [group[n] for n in names])
    return {n: g.data for n, g in zip(names, gs)}


# ------------------------------------------------------------------ loop

@dataclass
class EpochLog:
    epoch: int
    critic_loss: float
    generator_loss: float
    completion_loss: float
    critic_steps: int
    generator_steps: int

    def line(self) -> str:
        return (f"epoch={self.epoch} critic_loss={self.critic_loss:.6f} "
                f"generator_loss={self.generator_loss:.6f} "
                f"completion_loss={self.completion_loss:.6f} "
                f"critic_steps={self.critic_steps} generator_steps={self.generator_steps}")


class Trainer:
    """Owns parameters, optimizer state and the RNG for one training run.

    Per batch b (1-indexed, counted across epochs) the critic is updated when
    b % crit_every == 0 and the generator when b % gen_every == 0. Without
    the adversarial term every batch is a generator step.
    """

    def __init__(self, pairs: Sequence[SamplePair], arch: ArchConfig, cfg: TrainConfig,
                 params: ModelParams | None = None, fracture_params: FractureParams | None = None):
        if not pairs:
            raise ValueError("training corpus is empty")
        self.cfg = cfg
        self.arch = arch
        self.dtype = np.dtype(cfg.dtype)
        self.pairs = list(pairs)
        self.fracture_params = fracture_params
        self.params = params if params is not None else init_params(arch, cfg.seed, self.dtype)
        self.rng = np.random.default_rng(cfg.seed)
        opt_kw = dict(lr=cfg.adam_alpha, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                      eps=cfg.adam_eps, checked=cfg.checked)
        self.opt_gen = Adam(self.params.gen, **opt_kw)
        self.opt_crit = Adam(self.params.crit, **opt_kw)
        self.epoch = 0
        self.batch_count = 0
        self.critic_steps = 0
        self.generator_steps = 0
        self.history: list[EpochLog] = []
        # (generator step, completion loss) for every generator update
        self.trace: list[tuple[int, float]] = []
        self._data = make_batch(self.pairs, self.dtype)
        self._completes = None

    @property
    def done(self) -> bool:
        if self.cfg.max_gen_steps is not None and self.generator_steps >= self.cfg.max_gen_steps:
            return True
        return self.epoch >= self.cfg.epochs

    def _epoch_data(self) -> Batch:
        if not self.cfg.refracture or self.fracture_params is None:
            return self._data
        if self._completes is None:
            # one complete object per distinct complete grid, in corpus order
            seen, grids, labels = set(), [], []
            for p in self.pairs:
                if id(p.complete) not in seen:
                    seen.add(id(p.complete))
                    grids.append(p.complete)
                    labels.append(p.label)
            self._completes = (grids, labels)
        grids, labels = self._completes
        per = max(1, len(self.pairs) // len(grids))
        pairs = fracture_objects(grids, labels, self.fracture_params, per, epoch=self.epoch)
        return make_batch(pairs, self.dtype)

    def critic_step(self, batch: Batch) -> float:
        loss, _ = critic_loss(self.params, batch, self.cfg, self.rng)
        self.opt_crit.step(param_grads(loss, self.params.crit))
        self.critic_steps += 1
        return float(loss.data)

    def generator_step(self, batch: Batch) -> tuple[float, float]:
        loss, parts = generator_loss(self.params, batch, self.cfg)
        self.opt_gen.step(param_grads(loss, self.params.gen))
        self.generator_steps += 1
        self.trace.append((self.generator_steps, parts["completion"]))
        return float(loss.data), parts["completion"]

    def run_epoch(self) -> EpochLog:
        cfg = self.cfg
        data = self._epoch_data()
        order = self.rng.permutation(len(data))
        c_losses, g_losses, comp = [], [], []
        prev = ad.is_checked()
        ad.set_checked(cfg.checked)
        try:
            for start in range(0, len(order), cfg.batch_size):
                if self.done:
                    break
                idx = order[start:start + cfg.batch_size]
                batch = Batch(data.fractured[idx], data.complete[idx], data.labels[idx])
                self.batch_count += 1
                b = self.batch_count
                if not cfg.adversarial:
                    g, c = self.generator_step(batch)
                    g_losses.append(g)
                    comp.append(c)
                    continue
                if b % cfg.crit_every == 0:
                    c_losses.append(self.critic_step(batch))
                if b % cfg.gen_every == 0:
                    g, c = self.generator_step(batch)
                    g_losses.append(g)
                    comp.append(c)
        finally:
            ad.set_checked(prev)
        self.epoch += 1
        entry = EpochLog(self.epoch, _mean(c_losses), _mean(g_losses), _mean(comp),
                         self.critic_steps, self.generator_steps)
        self.history.append(entry)
        log.info(entry.line())
        return entry

    def fit(self, on_epoch: Callable[["Trainer"], None] | None = None) -> ModelParams:
        while not self.done:
            self.run_epoch()
            if on_epoch is not None:
                on_epoch(self)
        return self.params


def _mean(xs) -> float:
    return float(np.mean(xs)) if xs else float("nan")


def train(corpus: Sequence[SamplePair], arch: ArchConfig, cfg: TrainConfig,
          checkpoint_sink: Callable[[Trainer], None] | None = None,
          fracture_params: FractureParams | None = None) -> ModelParams:
    """Train G and D on ``corpus``; ``checkpoint_sink`` is called after every
    epoch with the trainer."""
    if cfg.batch_size > len(corpus):
        raise ValueError(f"batch_size {cfg.batch_size} exceeds corpus size {len(corpus)}")
    trainer = Trainer(corpus, arch, cfg, fracture_params=fracture_params)
    return trainer.fit(checkpoint_sink)
