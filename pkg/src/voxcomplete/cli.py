"""Command-line pipeline: voxelize, fracture, train, reconstruct, eval, sweep.

Exit codes: 0 success, 1 usage or config error, 2 partial data failure.
Every flag, config and input file is checked before anything is written.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from .checkpoint import CheckpointError, CheckpointSink, load_checkpoint, restore_trainer, save_params
from .evaluation import (EvalReport, evaluate, fracture_sweep, identity_completer, model_completer,
                         point_near, reconstruct, run_ablation, sweep_csv)
from .fracture import FractureParams, object_rng, simulate_fracture
from .manifest import ManifestError, check_label, load_grids, load_pairs, read_manifest, read_names, write_manifest
from .meshes import MeshError, read_mesh, voxelize_mesh
from .network import ArchConfig
from .presets import PRESETS
from .shapes import CLASSES, make_objects
from .training import TrainConfig, Trainer
from .voxels import BinvoxError, read_binvox, save_binvox

log = logging.getLogger("voxcomplete")

MESH_SUFFIXES = (".off", ".stl")
OK, USAGE, PARTIAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ----------------------------------------------------------------- helpers

def int_range(text: str) -> tuple[int, int]:
    """``a:b`` (inclusive) or a single integer."""
    try:
        parts = [int(p) for p in text.split(":")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b integer range, got {text!r}") from None
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2 or parts[0] > parts[1]:
        raise argparse.ArgumentTypeError(f"expected a:b with a <= b, got {text!r}")
    return parts[0], parts[1]


def load_config(path: str | None, preset: str | None, num_classes: int | None = None):
    """(ArchConfig, TrainConfig) from a preset plus optional JSON overrides
    ``{"preset": ..., "arch": {...}, "train": {...}}``."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(raw) - {"preset", "arch", "train"}
        if unknown:
            raise UsageError(f"unknown config key: {sorted(unknown)[0]}")
    name = preset or raw.get("preset", "desk")
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    arch_fn, train_fn = PRESETS[name]
    arch_d = arch_fn().to_dict()
    if num_classes is not None:
        arch_d["num_classes"] = num_classes
    train_d = train_fn().to_dict()
    for section, base, cls in (("arch", arch_d, ArchConfig), ("train", train_d, TrainConfig)):
        over = raw.get(section, {})
        if not isinstance(over, dict):
            raise UsageError(f"config key {section!r} must be an object")
        base.update(over)
        try:
            cfg = cls.from_dict(base)
        except KeyError as exc:
            raise UsageError(f"config: {exc.args[0]}") from None
        except (TypeError, ValueError) as exc:
            raise UsageError(f"config section {section!r}: {exc}") from None
        if section == "arch":
            arch = cfg
        else:
            train = cfg
    return arch, train


def _load_model(path: str):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        _, params, _ = load_checkpoint(path)
    except (CheckpointError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from None
    return params


def _filter_split(records, split):
    return records if split is None else [r for r in records if r.get("split", "train") == split]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_errors(out: Path, errors: list[str]) -> None:
    (out / "errors.log").write_text("".join(e + "\n" for e in errors), encoding="utf-8")
    for e in errors:
        print(f"warning: {e}", file=sys.stderr)


# ---------------------------------------------------------------- commands

def cmd_voxelize(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise UsageError(f"input not found: {src}")
    if args.dim < 1:
        raise UsageError("--dim must be positive")
    if src.is_dir():
        files = sorted(p for p in src.rglob("*") if p.is_file() and p.suffix.lower() in MESH_SUFFIXES)
        root = src
    else:
        files, root = [src], src.parent
    classes = None
    if args.labels_from_dirs:
        classes = sorted({p.relative_to(root).parts[0] for p in files if len(p.relative_to(root).parts) > 1})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, errors = [], []
    for p in files:
        rel = p.relative_to(root)
        label = args.label
        if classes is not None:
            if len(rel.parts) < 2:
                errors.append(f"{p}: not inside a class directory")
                continue
            label = classes.index(rel.parts[0])
        split = next((s for s in ("train", "test") if s in rel.parts[:-1]), args.split)
        try:
            grid = voxelize_mesh(read_mesh(p), args.dim, fill=args.fill)
        except (MeshError, OSError, ValueError) as exc:
            errors.append(f"{p}: {exc}")
            continue
        dest = out / rel.with_suffix(".binvox")
        dest.parent.mkdir(parents=True, exist_ok=True)
        save_binvox(grid, dest)
        records.append({"path": str(dest), "label": label, "split": split})
    write_manifest(records, out / "manifest.jsonl")
    if classes is not None:
        (out / "names.txt").write_text("".join(c + "\n" for c in classes), encoding="utf-8")
    if not files:
        print(f"warning: no meshes found under {src}", file=sys.stderr)
    print(f"voxelized {len(records)} of {len(files)} meshes -> {out / 'manifest.jsonl'}")
    if errors:
        _write_errors(out, errors)
        return PARTIAL
    return OK


def cmd_synth(args) -> int:
    if args.per_class < 0 or args.test_per_class < 0 or args.dim < 4:
        raise UsageError("counts must be non-negative and --dim >= 4")
    out = Path(args.out)
    (out / "objects").mkdir(parents=True, exist_ok=True)
    records = []
    for split, n, offset in (("train", args.per_class, 0), ("test", args.test_per_class, 1)):
        if n == 0:
            continue
        grids, labels = make_objects(n, args.dim, seed=args.seed * 2 + offset)
        for i, (g, lab) in enumerate(zip(grids, labels)):
            dest = out / "objects" / f"{split}-{CLASSES[lab]}-{i:04d}.binvox"
            save_binvox(g, dest)
            records.append({"path": str(dest), "label": lab, "split": split})
    write_manifest(records, out / "manifest.jsonl")
    (out / "names.txt").write_text("".join(c + "\n" for c in CLASSES), encoding="utf-8")
    print(f"wrote {len(records)} objects -> {out / 'manifest.jsonl'}")
    return OK


def cmd_fracture(args) -> int:
    try:
        params = FractureParams(n_range=args.n, m_range=args.m, p_sphere=args.p, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.pairs < 1:
        raise UsageError("--pairs must be positive")
    records = _filter_split(read_manifest(args.manifest), args.split)
    out = Path(args.out)
    (out / "fractured").mkdir(parents=True, exist_ok=True)
    pair_records, errors = [], []
    for i, rec in enumerate(records):
        try:
            grid = read_binvox(rec["path"])
        except (OSError, BinvoxError) as exc:
            errors.append(f"{rec['path']}: {exc}")
            continue
        rng = object_rng(args.seed, i)
        for j in range(args.pairs):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                try:
                    pair = simulate_fracture(grid, params, rng, label=rec["label"])
                except ValueError as exc:
                    errors.append(f"{rec['path']}: {exc}")
                    break
            for w in caught:
                errors.append(f"{rec['path']}: {w.message}")
            dest = out / "fractured" / f"obj{i:05d}-pair{j:03d}.binvox"
            save_binvox(pair.fractured, dest)
            pair_records.append({"fractured": str(dest), "complete": rec["path"], "label": rec["label"],
                                 "split": rec.get("split", "train"), "removed": pair.removed})
    write_manifest(pair_records, out / "pairs.jsonl")
    print(f"wrote {len(pair_records)} pairs -> {out / 'pairs.jsonl'}")
    if errors:
        _write_errors(out, errors)
        return PARTIAL
    return OK


def cmd_train(args) -> int:
    arch, cfg = load_config(args.config, args.preset, args.num_classes)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.epochs is not None:
        over["epochs"] = args.epochs
    if args.max_gen_steps is not None:
        over["max_gen_steps"] = args.max_gen_steps
    if over:
        try:
            cfg = TrainConfig.from_dict({**cfg.to_dict(), **over})
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if args.resume is not None and not Path(args.resume).is_file():
        raise UsageError(f"checkpoint not found: {args.resume}")
    records = _filter_split(read_manifest(args.pairs), args.split)
    if not records:
        raise UsageError("no training pairs selected")
    pairs = load_pairs(records, arch.num_classes)
    for p in pairs:
        if p.complete.dim != arch.dim:
            raise UsageError(f"grid side {p.complete.dim} does not match arch dim {arch.dim}")
    fparams = FractureParams(seed=cfg.seed) if cfg.refracture else None
    if args.resume is not None:
        try:
            trainer = restore_trainer(args.resume, pairs, fparams, epochs=args.epochs)
        except (CheckpointError, KeyError, ValueError) as exc:
            raise UsageError(f"cannot resume from {args.resume}: {exc}") from None
    else:
        trainer = Trainer(pairs, arch, cfg, fracture_params=fparams)

    out = Path(args.out)
    sink = CheckpointSink(out / "checkpoints", keep=args.keep)
    _write_json(out / "config.json", {"arch": trainer.arch.to_dict(), "train": trainer.cfg.to_dict()})
    progress = out / "progress.log"
    progress.write_text("".join(h.line() + "\n" for h in trainer.history), encoding="utf-8")

    def on_epoch(tr):
        line = tr.history[-1].line()
        with open(progress, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        print(line, flush=True)
        sink(tr)

    params = trainer.fit(on_epoch)
    save_params(params, out / "model.params")
    if trainer.history and not args.no_figures:
        from .plotting import plot_history

        plot_history(trainer.history, out / "progress.png")
    return OK


def cmd_reconstruct(args) -> int:
    if args.iterations < 1:
        raise UsageError("--iterations must be positive")
    params = _load_model(args.checkpoint)
    try:
        check_label(args.label, params.config.num_classes)
    except ManifestError as exc:
        raise UsageError(f"--label: {exc}") from None
    grid = read_binvox(args.input)
    if grid.dim != params.config.dim:
        raise UsageError(f"grid side {grid.dim} does not match model dim {params.config.dim}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = reconstruct(params, grid, args.label, args.iterations)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_binvox(out, args.out)
    if args.figure:
        from .plotting import plot_voxels

        plot_voxels([grid, out], args.figure, ["input", f"reconstructed ({args.iterations}x)"])
    print(f"{grid.occupied_count()} -> {out.occupied_count()} occupied voxels")
    return OK


def _completer(args):
    if args.identity:
        return identity_completer, None
    if args.checkpoint is None:
        raise UsageError("one of --checkpoint or --identity is required")
    params = _load_model(args.checkpoint)
    return model_completer(params, args.iterations), params.config


def cmd_eval(args) -> int:
    complete, arch = _completer(args)
    names = read_names(args.names)
    records = _filter_split(read_manifest(args.pairs), args.split)
    pairs = load_pairs(records, arch.num_classes if arch else None)
    if not pairs:
        raise UsageError("no evaluation pairs selected")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = evaluate(complete, pairs, names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    if not args.no_figures:
        from .plotting import plot_class_losses

        plot_class_losses(report, out / "report.png")
    print(report.to_text(), end="")
    return OK


def cmd_sweep(args) -> int:
    complete, arch = _completer(args)
    if not 0.0 <= args.p <= 1.0:
        raise UsageError("--p must lie in [0, 1]")
    lo, hi = args.sizes
    if lo < 0:
        raise UsageError("--sizes must be non-negative")
    records = _filter_split(read_manifest(args.manifest), args.split)
    grids, labels = load_grids(records, arch.num_classes if arch else None)
    if not grids:
        raise UsageError("no objects selected")
    points = fracture_sweep(complete, grids, labels, range(lo, hi + 1), seed=args.seed,
                            p_sphere=args.p, repeats=args.repeats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_csv(points), encoding="utf-8")
    _write_json(out / "sweep.json", EvalReport(sweep=points).to_dict()["sweep"])
    if not args.no_figures:
        from .plotting import plot_sweep

        plot_sweep(points, out / "sweep.png")
    near = point_near(points, 0.4)
    print(sweep_csv(points), end="")
    print(f"closest to 40% missing: size {near.size}, missing {near.missing_fraction:.3f}, "
          f"recovered {near.recovery:.3f}")
    return OK


def cmd_ablate(args) -> int:
    arch, cfg = load_config(args.config, args.preset, args.num_classes)
    if args.seed is not None:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    records = read_manifest(args.pairs)
    train_pairs = load_pairs(_filter_split(records, "train"), arch.num_classes)
    test_pairs = load_pairs(_filter_split(records, "test"), arch.num_classes)
    if not train_pairs or not test_pairs:
        raise UsageError("ablation needs both train and test pairs")
    rows = run_ablation(train_pairs, test_pairs, arch, cfg)
    report = EvalReport(ablation=rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "ablation.txt").write_text(report.to_text(), encoding="utf-8")
    print(report.to_text(), end="")
    return OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="voxcomplete", description="Voxel shape completion pipeline.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("voxelize", help="meshes (OFF/STL) to binvox plus a manifest")
    p.add_argument("--input", required=True, help="mesh file or directory")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--fill", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", type=int, default=0)
    p.add_argument("--labels-from-dirs", action="store_true",
                   help="label by top-level subdirectory; writes names.txt")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("synth", help="procedural object corpus for desk-scale runs")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--per-class", type=int, default=4)
    p.add_argument("--test-per-class", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fracture", help="simulate fractures; writes a pairs manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n", type=int_range, default=(1, 4))
    p.add_argument("--m", type=int_range, default=(3, 6))
    p.add_argument("--p", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=1)
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fracture)

    p = sub.add_parser("train", help="train generator and critic")
    p.add_argument("--pairs", required=True, help="pairs manifest")
    p.add_argument("--config", help='JSON {"preset": ..., "arch": {...}, "train": {...}}')
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--num-classes", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-gen-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--resume", help="training checkpoint to continue from")
    p.add_argument("--keep", type=int, default=3, help="checkpoints to keep")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="complete one binvox grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--figure", help="optional PNG of input and output")
    p.set_defaults(func=cmd_reconstruct)

    for name, func, helptext in (("eval", cmd_eval, "per-class input/output loss report"),
                                 ("sweep", cmd_sweep, "recovery versus fracture size")):
        p = sub.add_parser(name, help=helptext)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--checkpoint")
        src.add_argument("--identity", action="store_true", help="untrained stub returning its input")
        p.add_argument("--iterations", type=int, default=1)
        p.add_argument("--split", choices=("train", "test"))
        p.add_argument("--out", required=True)
        p.add_argument("--no-figures", action="store_true")
        if name == "eval":
            p.add_argument("--pairs", required=True)
            p.add_argument("--names", help="class names, one per line")
        else:
            p.add_argument("--manifest", required=True, help="object manifest")
            p.add_argument("--sizes", type=int_range, default=(1, 15))
            p.add_argument("--p", type=float, default=0.75)
            p.add_argument("--repeats", type=int, default=1)
            p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="train skip/SE variants and compare test L1")
    p.add_argument("--pairs", required=True)
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--num-classes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except (ManifestError, BinvoxError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
