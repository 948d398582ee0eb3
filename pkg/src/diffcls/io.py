"""File formats: world JSON, labelled dataset CSV, JSON artifacts with sidecars."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .diffusion import GaussianWorld


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(_dump(obj), encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def world_to_dict(world: GaussianWorld) -> dict:
    return {"dim": world.dim, "n_classes": world.n_classes, "std": world.std,
            "means": world.means.tolist(), "seed": world.seed}


def world_from_dict(d: dict) -> GaussianWorld:
    means = np.asarray(d["means"], dtype=np.float64)
    if means.ndim != 2 or means.shape[1] != int(d["dim"]):
        raise ValueError("world file: means do not match dim")
    return GaussianWorld(means, float(d["std"]), seed=d.get("seed"))


def save_world(path, world: GaussianWorld, meta: dict | None = None) -> None:
    d = world_to_dict(world)
    if meta:
        d["config"] = meta
    write_json(path, d)


def load_world(path) -> GaussianWorld:
    return world_from_dict(read_json(path))


def save_dataset(path, X, y) -> None:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("dataset needs an (N, d) matrix and N labels")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(X.shape[1])])
        for label, row in zip(y.tolist(), X.tolist()):
            w.writerow([label] + [repr(v) for v in row])


def load_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(X (N, d), y (N,))``; an empty file body gives N = 0."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if not header or header[0] != "label" or len(header) < 2:
            raise ValueError(f"{path}: expected header 'label,f0,...'")
        d = len(header) - 1
        ys, xs = [], []
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, found {len(row)}")
            ys.append(int(row[0]))
            xs.append([float(v) for v in row[1:]])
    X = np.array(xs, dtype=np.float64).reshape(len(xs), d)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{path}: non-finite feature values")
    return X, np.array(ys, dtype=np.int64)


def write_csv(path, header: Sequence[str], rows, meta: dict | None = None) -> None:
    """CSV with a ``<name>.meta.json`` sidecar carrying the run config."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    if meta is not None:
        write_json(str(path) + ".meta.json", meta)
