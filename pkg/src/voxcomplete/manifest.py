"""JSON-lines manifests and the label-names sidecar.

Object manifest record: ``{"path": str, "label": int, "split": "train"|"test"}``.
Pairs manifest record: ``{"fractured": str, "complete": str, "label": int,
"split": str, "removed": int}``. Relative paths resolve against the manifest's
directory.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .voxels import VoxelGrid, missing_count, read_binvox

SPLITS = ("train", "test")
_PATH_KEYS = ("path", "fractured", "complete")


class ManifestError(ValueError):
    pass


def read_manifest(path: str | os.PathLike) -> list[dict]:
    path = Path(path)
    base = path.parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise ManifestError(f"{path}:{lineno}: record must be an object")
            if "label" not in rec or not isinstance(rec["label"], int) or rec["label"] < 0:
                raise ManifestError(f"{path}:{lineno}: 'label' must be a non-negative integer")
            if rec.setdefault("split", "train") not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split {rec['split']!r}")
            if not any(k in rec for k in _PATH_KEYS):
                raise ManifestError(f"{path}:{lineno}: record has no file path")
            for key in _PATH_KEYS:
                if key in rec:
                    rec[key] = str(base / rec[key])
            records.append(rec)
    return records


def write_manifest(records, path: str | os.PathLike) -> None:
    """Write records, storing file paths relative to the manifest directory."""
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            rec = dict(rec)
            for key in _PATH_KEYS:
                if key in rec:
                    rec[key] = os.path.relpath(Path(rec[key]).resolve(), base)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def check_label(label: int, num_classes: int | None) -> None:
    if num_classes is not None and not 0 <= label < num_classes:
        raise ManifestError(f"label {label} outside [0, {num_classes})")


def load_grids(records, num_classes: int | None = None, key: str = "path"):
    grids, labels = [], []
    for rec in records:
        check_label(rec["label"], num_classes)
        try:
            grids.append(read_binvox(rec[key]))
        except OSError as exc:
            raise ManifestError(f"cannot read {rec[key]}: {exc}") from exc
        labels.append(rec["label"])
    return grids, labels


def load_pairs(records, num_classes: int | None = None):
    """SamplePairs from a pairs manifest."""
    from .fracture import SamplePair

    pairs = []
    for rec in records:
        check_label(rec["label"], num_classes)
        try:
            fractured: VoxelGrid = read_binvox(rec["fractured"])
            complete: VoxelGrid = read_binvox(rec["complete"])
        except OSError as exc:
            raise ManifestError(f"cannot read pair files: {exc}") from exc
        pairs.append(SamplePair(fractured, complete, rec["label"], missing_count(fractured, complete)))
    return pairs


def read_names(path: str | os.PathLike | None) -> list[str] | None:
    """One class name per line; line i names label i."""
    if path is None:
        return None
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]
