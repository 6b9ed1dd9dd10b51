"""Named configurations.

``full`` is the full-scale setup (32^3 grids, 11 classes, batch 64, 400
epochs). ``desk`` is sized for a single CPU core: 16^3 grids, narrower
channels and a larger learning rate so a few hundred generator steps make
visible progress.
"""

from __future__ import annotations

from .network import ArchConfig
from .training import TrainConfig


def full_arch(num_classes: int = 11) -> ArchConfig:
    return ArchConfig(num_classes=num_classes)


def full_train(seed: int = 0) -> TrainConfig:
    return TrainConfig(seed=seed)


def desk_arch(num_classes: int = 11, **overrides) -> ArchConfig:
    kw = dict(dim=16, num_classes=num_classes, enc_channels=(16, 32, 64),
              dec_channels=(32, 16, 1), se_ratio=4, label_embed_dim=16, label_channels=8,
              critic_hidden=128)
    kw.update(overrides)
    return ArchConfig(**kw)


def desk_train(seed: int = 0, **overrides) -> TrainConfig:
    kw = dict(batch_size=8, adam_alpha=1e-3, epochs=400, seed=seed)
    kw.update(overrides)
    return TrainConfig(**kw)


PRESETS = {"full": (full_arch, full_train), "desk": (desk_arch, desk_train)}
