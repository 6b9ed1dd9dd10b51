"""Self-describing checkpoint container.

Layout: 8-byte magic ``VXCKPT01``, a little-endian uint64 header length, a
UTF-8 JSON header, then raw little-endian tensor bytes. The header holds the
architecture, training config, counters, RNG state, history and a tensor table
(name, dtype, shape, offset). Output bytes depend only on the contents.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .network import ArchConfig, ModelParams

MAGIC = b"VXCKPT01"


class CheckpointError(ValueError):
    pass


def pack(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    table, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        le = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        table.append({"name": name, "dtype": le.dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"format": 1, "meta": meta, "tensors": table},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)


def unpack(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt checkpoint header") from exc
    base = start + hlen
    arrays = {}
    for t in header["tensors"]:
        lo = base + t["offset"]
        buf = data[lo:lo + t["nbytes"]]
        if len(buf) != t["nbytes"]:
            raise CheckpointError(f"truncated tensor {t['name']}")
        dt = np.dtype(t["dtype"])
        arrays[t["name"]] = np.frombuffer(buf, dtype=dt).reshape(t["shape"]).astype(
            dt.newbyteorder("="))
    return header["meta"], arrays


def params_arrays(params: ModelParams) -> dict[str, np.ndarray]:
    out = {f"gen/{k}": v.data for k, v in params.gen.items()}
    out.update({f"crit/{k}": v.data for k, v in params.crit.items()})
    for layer, stats in params.bn.items():
        for s, a in stats.items():
            out[f"bn/{layer}/{s}"] = a
    return out


def params_from_arrays(config: ArchConfig, arrays: dict[str, np.ndarray]) -> ModelParams:
    gen, crit, bn = {}, {}, {}
    for name, a in arrays.items():
        group, _, rest = name.partition("/")
        if group == "gen":
            gen[rest] = Tensor(a.copy(), requires_grad=True, name=rest)
        elif group == "crit":
            crit[rest] = Tensor(a.copy(), requires_grad=True, name=rest)
        elif group == "bn":
            layer, _, stat = rest.rpartition("/")
            bn.setdefault(layer, {})[stat] = a.copy()
    return ModelParams(config, gen, crit, bn)


def save_params(params: ModelParams, path: str | os.PathLike) -> None:
    Path(path).write_bytes(pack({"arch": params.config.to_dict()}, params_arrays(params)))


def load_params(path: str | os.PathLike) -> ModelParams:
    meta, arrays = unpack(Path(path).read_bytes())
    return params_from_arrays(ArchConfig.from_dict(meta["arch"]), arrays)


def trainer_state(trainer) -> bytes:
    arrays = params_arrays(trainer.params)
    for tag, opt in (("opt_gen", trainer.opt_gen), ("opt_crit", trainer.opt_crit)):
        for k in opt.m:
            arrays[f"{tag}/m/{k}"] = opt.m[k]
            arrays[f"{tag}/v/{k}"] = opt.v[k]
    meta = {
        "arch": trainer.arch.to_dict(),
        "train": trainer.cfg.to_dict(),
        "epoch": trainer.epoch,
        "batch_count": trainer.batch_count,
        "critic_steps": trainer.critic_steps,
        "generator_steps": trainer.generator_steps,
        "opt_gen_t": trainer.opt_gen.t,
        "opt_crit_t": trainer.opt_crit.t,
        "rng": trainer.rng.bit_generator.state,
        "history": [asdict(h) for h in trainer.history],
    }
    return pack(meta, arrays)


def save_checkpoint(trainer, path: str | os.PathLike) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(trainer_state(trainer))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict, ModelParams, dict[str, np.ndarray]]:
    """(meta, params, raw arrays) of a training checkpoint or params file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    meta, arrays = unpack(data)
    return meta, params_from_arrays(ArchConfig.from_dict(meta["arch"]), arrays), arrays


def restore_trainer(path: str | os.PathLike, pairs, fracture_params=None, epochs: int | None = None):
    """Rebuild a Trainer mid-run from a checkpoint so training continues
    exactly as if uninterrupted. ``epochs`` may extend the target."""
    from .training import EpochLog, TrainConfig, Trainer

    meta, params, arrays = load_checkpoint(path)
    if "train" not in meta:
        raise CheckpointError("file holds model parameters only, not training state")
    cfg_d = dict(meta["train"])
    if epochs is not None:
        cfg_d["epochs"] = epochs
    cfg = TrainConfig.from_dict(cfg_d)
    tr = Trainer(pairs, params.config, cfg, params=params, fracture_params=fracture_params)
    for tag, opt in (("opt_gen", tr.opt_gen), ("opt_crit", tr.opt_crit)):
        opt.load_state({"t": meta[f"{tag}_t"],
                        "m": {k: arrays[f"{tag}/m/{k}"] for k in opt.m},
                        "v": {k: arrays[f"{tag}/v/{k}"] for k in opt.v}})
    tr.epoch = meta["epoch"]
    tr.batch_count = meta["batch_count"]
    tr.critic_steps = meta["critic_steps"]
    tr.generator_steps = meta["generator_steps"]
    tr.rng.bit_generator.state = meta["rng"]
    tr.history = [EpochLog(**h) for h in meta["history"]]
    return tr


class CheckpointSink:
    """Writes ``epoch-NNNN.ckpt`` after each epoch, keeping the last ``keep``."""

    def __init__(self, directory: str | os.PathLike, keep: int = 3):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.keep = keep
        self.written: list[Path] = []

    def __call__(self, trainer) -> None:
        path = self.directory / f"epoch-{trainer.epoch:04d}.ckpt"
        save_checkpoint(trainer, path)
        self.written.append(path)
        existing = sorted(self.directory.glob("epoch-*.ckpt"))
        for old in existing[:-self.keep]:
            old.unlink()
