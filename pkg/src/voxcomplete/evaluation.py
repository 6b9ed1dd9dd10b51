"""Inference, per-class loss reports, the fracture-size sweep and ablations."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .fracture import FractureParams, SamplePair, object_rng, simulate_fracture
from .network import ArchConfig, ModelParams, generator_forward
from .voxels import VoxelGrid, binarize, l1_loss, to_signed

# maps (grids, labels) -> completed grids
Completer = Callable[[Sequence[VoxelGrid], Sequence[int]], list[VoxelGrid]]


def reconstruct_batch(params: ModelParams, grids: Sequence[VoxelGrid], labels: Sequence[int],
                      iterations: int = 1, chunk: int = 32) -> list[VoxelGrid]:
    """Run G ``iterations`` times, binarizing at 0 between passes. Batch norm
    uses running statistics."""
    if iterations < 1:
        raise ValueError("iterations must be positive")
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= params.config.num_classes):
        raise ValueError(f"label outside [0, {params.config.num_classes})")
    for g in grids:
        if g.dim != params.config.dim:
            raise ValueError(f"grid side {g.dim} does not match model dim {params.config.dim}")
        if g.occupied_count() == 0:
            warnings.warn("reconstructing an empty grid", RuntimeWarning, stacklevel=2)
    current = list(grids)
    dtype = params.dtype
    for _ in range(iterations):
        out = []
        for start in range(0, len(current), chunk):
            part = current[start:start + chunk]
            x = np.stack([to_signed(g, dtype) for g in part])[:, None]
            with ad.no_grad():
                y = generator_forward(params, x, labels[start:start + chunk], training=False).data
            out.extend(binarize(y[i, 0]) for i in range(len(part)))
        current = out
    return [VoxelGrid(c.occupancy, g.translate, g.scale) for c, g in zip(current, grids)]


def reconstruct(params: ModelParams, grid: VoxelGrid, label: int, iterations: int = 1) -> VoxelGrid:
    return reconstruct_batch(params, [grid], [label], iterations)[0]


def model_completer(params: ModelParams, iterations: int = 1) -> Completer:
    return lambda grids, labels: reconstruct_batch(params, grids, labels, iterations)


def identity_completer(grids, labels) -> list[VoxelGrid]:
    return list(grids)


# ------------------------------------------------------------------ report

@dataclass
class ClassRow:
    label: int
    name: str
    count: int
    input_loss: float
    output_loss: float


@dataclass
class AblationRow:
    skip: bool
    se: bool
    l1: float


@dataclass
class SweepPoint:
    size: int
    missing_fraction: float
    recovery: float
    misplaced_rate: float
    undefined_recovery: bool = False


@dataclass
class EvalReport:
    classes: list[ClassRow] = field(default_factory=list)
    input_loss: float = float("nan")
    output_loss: float = float("nan")
    ablation: list[AblationRow] = field(default_factory=list)
    sweep: list[SweepPoint] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = []
        if self.classes:
            width = max(len("Label"), max(len(r.name) for r in self.classes), len("Overall"))
            lines.append(f"{'Label':<{width}} | {'Input loss':>10} | {'Output loss':>11}")
            lines.append("-" * (width + 28))
            for r in self.classes:
                lines.append(f"{r.name:<{width}} | {r.input_loss:>10.4f} | {r.output_loss:>11.4f}")
            lines.append("-" * (width + 28))
            lines.append(f"{'Overall':<{width}} | {self.input_loss:>10.4f} | {self.output_loss:>11.4f}")
        if self.ablation:
            if lines:
                lines.append("")
            lines.append(f"{'Skip-connections':<16} | {'Squeeze-and-excite':<18} | {'L1 loss':>8}")
            lines.append("-" * 48)
            for r in self.ablation:
                lines.append(f"{'Yes' if r.skip else 'No':<16} | {'Yes' if r.se else 'No':<18} | "
                             f"{r.l1:>8.4f}")
        return "\n".join(lines) + "\n"


def sweep_csv(points: Sequence[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["size", "missing_fraction", "recovery", "misplaced_rate"])
    for p in points:
        w.writerow([p.size, f"{p.missing_fraction:.6f}", f"{p.recovery:.6f}",
                    f"{p.misplaced_rate:.6f}"])
    return buf.getvalue()


def _as_completer(model) -> Completer:
    if isinstance(model, ModelParams):
        return model_completer(model)
    return model


def evaluate(model, pairs: Sequence[SamplePair], names: Sequence[str] | None = None) -> EvalReport:
    """Per-class mean input loss L1(x_i, x_t) and output loss L1(G(x_i), x_t)
    on signed grids. ``model`` is a ModelParams or a completer callable."""
    complete = _as_completer(model)
    outputs = complete([p.fractured for p in pairs], [p.label for p in pairs])
    per_in: dict[int, list[float]] = {}
    per_out: dict[int, list[float]] = {}
    for p, out in zip(pairs, outputs):
        target = to_signed(p.complete)
        per_in.setdefault(p.label, []).append(l1_loss(to_signed(p.fractured), target))
        per_out.setdefault(p.label, []).append(l1_loss(to_signed(out), target))
    rows = []
    for label in sorted(per_in):
        name = names[label] if names is not None and label < len(names) else str(label)
        rows.append(ClassRow(label, name, len(per_in[label]), float(np.mean(per_in[label])),
                             float(np.mean(per_out[label]))))
    all_in = [v for vs in per_in.values() for v in vs]
    all_out = [v for vs in per_out.values() for v in vs]
    return EvalReport(rows, float(np.mean(all_in)) if all_in else float("nan"),
                      float(np.mean(all_out)) if all_out else float("nan"))


def fracture_sweep(model, grids: Sequence[VoxelGrid], labels: Sequence[int],
                   sizes: Sequence[int] = range(1, 16), seed: int = 0,
                   p_sphere: float = 0.75, repeats: int = 1) -> list[SweepPoint]:
    """For each size s fracture every object with s seeds of size s, complete
    it, and average: missing fraction (removed / occupied), recovery (removed
    voxels restored / removed) and misplaced rate (spurious voxels / dim^3)."""
    complete = _as_completer(model)
    points = []
    for s in sizes:
        if s == 0:
            points.append(SweepPoint(0, 0.0, 1.0, _misplaced(complete, grids, labels), True))
            continue
        params = FractureParams(n_range=(s, s), m_range=(s, s), p_sphere=p_sphere, seed=seed)
        pairs = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for i, (g, lab) in enumerate(zip(grids, labels)):
                rng = object_rng(seed, i, s)
                pairs.extend(simulate_fracture(g, params, rng, label=int(lab)) for _ in range(repeats))
            # large sizes can erase an object entirely; that is expected here
            outs = complete([p.fractured for p in pairs], [p.label for p in pairs])
        miss, rec, mis = [], [], []
        undefined = False
        for p, out in zip(pairs, outs):
            removed = p.complete.occupancy & ~p.fractured.occupancy
            n_removed = int(removed.sum())
            miss.append(n_removed / max(1, p.complete.occupied_count()))
            if n_removed:
                rec.append(float((removed & out.occupancy).sum()) / n_removed)
            else:
                undefined = True
            mis.append(float((out.occupancy & ~p.complete.occupancy).sum()) / out.occupancy.size)
        points.append(SweepPoint(int(s), float(np.mean(miss)),
                                 float(np.mean(rec)) if rec else 1.0, float(np.mean(mis)),
                                 undefined and not rec))
    return points


def _misplaced(complete: Completer, grids, labels) -> float:
    outs = complete(list(grids), list(labels))
    return float(np.mean([(o.occupancy & ~g.occupancy).sum() / o.occupancy.size
                          for o, g in zip(outs, grids)]))


def point_near(points: Sequence[SweepPoint], missing_fraction: float) -> SweepPoint:
    """The sweep point whose missing fraction is closest to the given one."""
    return min(points, key=lambda p: abs(p.missing_fraction - missing_fraction))


def count_inversions(points: Sequence[SweepPoint]) -> int:
    """Adjacent increases in recovery once points are ordered by missing
    fraction."""
    pts = sorted(points, key=lambda p: p.missing_fraction)
    return sum(1 for a, b in zip(pts, pts[1:]) if b.recovery > a.recovery)


ABLATION_VARIANTS = ((False, False), (True, False), (True, True))


def run_ablation(train_pairs: Sequence[SamplePair], test_pairs: Sequence[SamplePair],
                 arch: ArchConfig, cfg, variants=ABLATION_VARIANTS,
                 on_trained: Callable | None = None) -> list[AblationRow]:
    """Train one model per (skip, se) variant with the same budget and seed;
    report the output L1 on ``test_pairs``."""
    from .training import Trainer

    rows = []
    for skip, se in variants:
        variant = replace(arch, use_skip=skip, use_se=se)
        trainer = Trainer(train_pairs, variant, cfg)
        params = trainer.fit()
        if on_trained is not None:
            on_trained((skip, se), trainer)
        rows.append(AblationRow(skip, se, evaluate(params, test_pairs).output_loss))
    return rows
