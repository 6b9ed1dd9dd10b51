"""Voxel shape completion with a conditional WGAN-GP, on a small numpy
autodiff engine."""

from .checkpoint import (CheckpointSink, load_checkpoint, load_params, restore_trainer,
                         save_checkpoint, save_params)
from .evaluation import (EvalReport, evaluate, fracture_sweep, identity_completer, reconstruct,
                         reconstruct_batch, run_ablation)
from .fracture import (FractureParams, SamplePair, build_corpus, carve, fracture_objects,
                       simulate_fracture)
from .manifest import read_manifest, write_manifest
from .meshes import Mesh, read_mesh, voxelize_mesh
from .network import ArchConfig, ModelParams, critic_forward, generator_forward, init_params
from .presets import desk_arch, desk_train, full_arch, full_train
from .training import TrainConfig, Trainer, critic_loss, generator_loss, gradient_penalty, train
from .voxels import (BinvoxError, VoxelGrid, binarize, l1_loss, parse_binvox, read_binvox,
                     save_binvox, to_signed, write_binvox)

__all__ = [
    "ArchConfig", "BinvoxError", "CheckpointSink", "EvalReport", "FractureParams", "Mesh",
    "ModelParams", "SamplePair", "TrainConfig", "Trainer", "VoxelGrid", "binarize",
    "build_corpus", "carve", "critic_forward", "critic_loss", "desk_arch", "desk_train",
    "evaluate", "fracture_objects", "fracture_sweep", "generator_forward", "generator_loss", "gradient_penalty",
    "identity_completer", "init_params", "l1_loss", "load_checkpoint", "load_params",
    "full_arch", "full_train", "parse_binvox", "read_binvox", "read_manifest", "read_mesh",
    "reconstruct", "reconstruct_batch", "restore_trainer", "run_ablation", "save_binvox",
    "save_checkpoint", "save_params", "simulate_fracture", "to_signed", "train",
    "voxelize_mesh", "write_binvox", "write_manifest",
]
