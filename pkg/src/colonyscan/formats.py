"""File formats that are not owned by a single module: feature maps, score
tables, TTA pass lists and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._accel import BACKEND
from .geometry import TTATransform

from . import __version__


# feature maps: raw little-endian float32, C-order C x H x W, plus a JSON header
# {"C": .., "H": .., "W": .., "dtype": "<f4", "data": "<file name>"}

def write_feature_map(header_path, f, data_name: str | None = None) -> Path:
    header_path = Path(header_path)
    f = np.asarray(f)
    if f.ndim != 3:
        raise ValueError("feature map must be C x H x W")
    data_name = data_name or header_path.with_suffix(".f32").name
    c, h, w = f.shape
    with open(header_path, "w") as fh:
        json.dump({"C": c, "H": h, "W": w, "dtype": "<f4", "data": data_name}, fh)
    f.astype("<f4").tofile(header_path.parent / data_name)
    return header_path


def read_feature_map(header_path) -> np.ndarray:
    header_path = Path(header_path)
    with open(header_path) as fh:
        hdr = json.load(fh)
    c, h, w = int(hdr["C"]), int(hdr["H"]), int(hdr["W"])
    if hdr.get("dtype", "<f4") != "<f4":
        raise ValueError("only little-endian float32 feature maps are supported")
    data = header_path.parent / hdr.get("data", header_path.with_suffix(".f32").name)
    arr = np.fromfile(data, dtype="<f4")
    if arr.size != c * h * w:
        raise ValueError(f"{data.name}: {arr.size} values, header says {c}x{h}x{w}")
    return arr.reshape(c, h, w).astype(np.float64)


# score tables

def write_scores(path, scores: Mapping[str, float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tile_id", "score"])
        for t in sorted(scores):
            w.writerow([t, repr(float(scores[t]))])


def read_scores(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"tile_id", "score"} <= set(reader.fieldnames):
            raise ValueError("score table needs tile_id and score columns")
        return {r["tile_id"]: float(r["score"]) for r in reader}


def write_rows(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


# TTA pass lists: {"tile_size": 512, "passes": [{"pass_id": 0, "kind": "hflip"}, ...]}

def write_passes(path, transforms: Sequence[TTATransform]) -> None:
    recs = []
    for i, t in enumerate(transforms):
        rec = {"pass_id": i, **t.to_record()}
        recs.append(rec)
    size = transforms[0].tile_size if transforms else 512
    with open(path, "w") as fh:
        json.dump({"tile_size": size, "passes": recs}, fh, indent=1)


def read_passes(path) -> dict[int, TTATransform]:
    with open(path) as fh:
        data = json.load(fh)
    size = int(data.get("tile_size", 512))
    out = {}
    for rec in data["passes"]:
        pid = int(rec["pass_id"])
        if pid in out:
            raise ValueError(f"duplicate pass_id {pid}")
        out[pid] = TTATransform.from_record({"tile_size": size, **rec})
    if sorted(out) != list(range(len(out))):
        raise ValueError("pass ids must be 0..T-1")
    return out


# run manifests

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import numpy
    import scipy
    out = {"colonyscan": __version__, "python": platform.python_version(),
           "numpy": numpy.__version__, "scipy": scipy.__version__, "backend": BACKEND}
    if BACKEND == "numba":
        import numba
        out["numba"] = numba.__version__
    return out


def write_manifest(path, command: str, argv: Sequence[str], config, seed,
                   inputs: Iterable = (), outputs: Iterable = ()) -> Path:
    """Record everything needed to rerun a subcommand: argv, resolved config and digests."""
    inputs = [p for p in inputs if p is not None]
    outputs = [p for p in outputs if p is not None]
    doc = {
        "command": command,
        "argv": list(argv),
        "config": config.to_dict(),
        "config_hash": config.digest(),
        "seed": seed,
        "inputs": {str(p): file_digest(p) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): file_digest(p) for p in outputs if Path(p).is_file()},
        "versions": versions(),
        "cwd_independent": all(Path(p).is_absolute() for p in [*inputs, *outputs]),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return Path(path)


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)

