"""Overlapping tile plans over an orthomosaic.

Pure coordinate arithmetic; no pixels are touched, so a plan for a
120K x 120K mosaic is as cheap as one for a thumbnail.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class TileRef:
    tile_id: str
    x0: int
    y0: int
    has_annotations: Optional[bool] = None


@dataclass(frozen=True)
class TilePlan:
    mosaic_w: int
    mosaic_h: int
    tile_size: int = 512
    overlap_frac: float = 0.30
    tiles: tuple[TileRef, ...] = field(default_factory=tuple)
    n_cols: int = 0
    n_rows: int = 0

    @property
    def stride(self) -> int:
        return tile_stride(self.tile_size, self.overlap_frac)

    def __len__(self):
        return len(self.tiles)

    def by_id(self) -> dict[str, TileRef]:
        return {t.tile_id: t for t in self.tiles}

    def rects(self) -> np.ndarray:
        """``(n, 4)`` array of tile extents ``x0, y0, x1, y1`` in plan order."""
        s = self.tile_size
        xy = np.array([(t.x0, t.y0) for t in self.tiles], dtype=np.float64).reshape(-1, 2)
        return np.hstack([xy, xy + s])

    def with_annotations(self, flags: dict[str, bool]) -> "TilePlan":
        tiles = tuple(replace(t, has_annotations=bool(flags.get(t.tile_id, False)))
                      for t in self.tiles)
        return replace(self, tiles=tiles)

    # serialization ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "mosaic_w": self.mosaic_w,
            "mosaic_h": self.mosaic_h,
            "tile_size": self.tile_size,
            "overlap_frac": self.overlap_frac,
            "tiles": [
                {"tile_id": t.tile_id, "x0": t.x0, "y0": t.y0,
                 **({} if t.has_annotations is None else {"has_annotations": t.has_annotations})}
                for t in self.tiles
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "TilePlan":
        plan = plan_tiles(data["mosaic_w"], data["mosaic_h"],
                          data.get("tile_size", 512), data.get("overlap_frac", 0.30))
        recorded = {(t["tile_id"], t["x0"], t["y0"]) for t in data["tiles"]}
        if recorded != {(t.tile_id, t.x0, t.y0) for t in plan.tiles}:
            raise ValueError("tile list does not match the plan parameters")
        flags = {t["tile_id"]: t["has_annotations"] for t in data["tiles"]
                 if "has_annotations" in t}
        return plan.with_annotations(flags) if flags else plan

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tile_id", "x0", "y0"])
            for t in self.tiles:
                w.writerow([t.tile_id, t.x0, t.y0])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def read_plan(path, tile_size: int = 512, overlap_frac: float = 0.30) -> TilePlan:
    """Load a plan from JSON, or from CSV given the tile parameters it was built with."""
    path = str(path)
    if path.endswith(".json"):
        with open(path) as fh:
            return TilePlan.from_json(json.load(fh))
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError("empty tile plan")
    w = max(int(r["x0"]) for r in rows) + tile_size
    h = max(int(r["y0"]) for r in rows) + tile_size
    plan = plan_tiles(w, h, tile_size, overlap_frac)
    if {(r["tile_id"], int(r["x0"]), int(r["y0"])) for r in rows} != {
            (t.tile_id, t.x0, t.y0) for t in plan.tiles}:
        raise ValueError("CSV tiles do not match tile_size/overlap_frac")
    return plan


def tile_stride(tile_size: int, overlap_frac: float) -> int:
    return max(1, math.floor(tile_size * (1.0 - overlap_frac)))


def axis_offsets(length: int, tile_size: int, stride: int) -> list[int]:
    last = length - tile_size
    offs = list(range(0, last + 1, stride))
    if offs[-1] != last:
        offs.append(last)
    return offs


def plan_tiles(mosaic_w: int, mosaic_h: int, tile_size: int = 512,
               overlap_frac: float = 0.30) -> TilePlan:
    """Row-major overlapping tiles; the last offset per axis is clamped to the edge."""
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    if mosaic_w < tile_size or mosaic_h < tile_size:
        raise ValueError(f"mosaic {mosaic_w}x{mosaic_h} smaller than tile {tile_size}")
    if not 0.0 <= overlap_frac < 1.0:
        raise ValueError("overlap_frac must be in [0, 1)")
    stride = tile_stride(tile_size, overlap_frac)
    xs = axis_offsets(mosaic_w, tile_size, stride)
    ys = axis_offsets(mosaic_h, tile_size, stride)
    tiles = tuple(TileRef(f"r{r}_c{c}", x0, y0)
                  for r, y0 in enumerate(ys) for c, x0 in enumerate(xs))
    return TilePlan(mosaic_w, mosaic_h, tile_size, overlap_frac, tiles,
                    n_cols=len(xs), n_rows=len(ys))


def tile_rc(tile_id: str) -> tuple[int, int]:
    r, c = tile_id.split("_")
    return int(r[1:]), int(c[1:])


def tiles_containing(point: Sequence[float], plan: TilePlan) -> list[TileRef]:
    x, y = float(point[0]), float(point[1])
    if not (0 <= x < plan.mosaic_w and 0 <= y < plan.mosaic_h):
        raise ValueError(f"point {point} outside the mosaic")
    s = plan.tile_size
    return [t for t in plan.tiles if t.x0 <= x < t.x0 + s and t.y0 <= y < t.y0 + s]


def tile_indices_containing(xy: np.ndarray, plan: TilePlan) -> list[np.ndarray]:
    """Vectorised :func:`tiles_containing` for many points; returns plan indices."""
    rects = plan.rects()
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    inside = ((xy[:, None, 0] >= rects[None, :, 0]) & (xy[:, None, 0] < rects[None, :, 2])
              & (xy[:, None, 1] >= rects[None, :, 1]) & (xy[:, None, 1] < rects[None, :, 3]))
    return [np.flatnonzero(row) for row in inside]


def neighborhood(plan: TilePlan, tile_id: str) -> list[TileRef]:
    """The tile and its (up to eight) row/column neighbours."""
    r, c = tile_rc(tile_id)
    by_id = plan.by_id()
    out = []
    for rr in (r - 1, r, r + 1):
        for cc in (c - 1, c, c + 1):
            t = by_id.get(f"r{rr}_c{cc}")
            if t is not None:
                out.append(t)
    return out


def mark_annotated(plan: TilePlan, centers: Iterable[Sequence[float]]) -> TilePlan:
    """Flag tiles that contain at least one annotation centre."""
    pts = np.array(list(centers), dtype=np.float64).reshape(-1, 2)
    flags = {t.tile_id: False for t in plan.tiles}
    if len(pts):
        for idx in tile_indices_containing(pts, plan):
            for i in idx:
                flags[plan.tiles[i].tile_id] = True
    return plan.with_annotations(flags)


def sample_background_tiles(plan: TilePlan, annotated_count: int,
                            seed=None) -> list[TileRef]:
    """Uniform sample, without replacement, of tiles carrying no annotations."""
    if annotated_count < 0:
        raise ValueError("annotated_count must be >= 0")
    if any(t.has_annotations is None for t in plan.tiles):
        raise ValueError("plan has no annotation flags; use mark_annotated first")
    background = [t for t in plan.tiles if not t.has_annotations]
    if annotated_count > len(background):
        raise ValueError(f"requested {annotated_count} background tiles, "
                         f"only {len(background)} available")
    if annotated_count == 0:
        return []
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(background), size=annotated_count, replace=False)
    return [background[i] for i in pick]
