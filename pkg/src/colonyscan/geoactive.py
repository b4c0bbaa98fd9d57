"""Burrow-proximity candidate pools and budgeted tile acquisition."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .geometry import ClassId, Detection, Frame, GeoTransform
from .tiling import TilePlan


class Strategy(str, Enum):
    RANDOM = "random"
    GEO_RANDOM = "geo_random"
    GEO_TTA = "geo_tta"
    GEO_USCORE = "geo_uscore"


SCORED = (Strategy.GEO_TTA, Strategy.GEO_USCORE)


class SpatialIndex:
    """Uniform grid over 2-D points with cell size equal to the query radius."""

    def __init__(self, points, radius_px: float, refs: Optional[Sequence] = None):
        if not radius_px > 0:
            raise ValueError("radius must be positive")
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
        self.radius_px = float(radius_px)
        self.refs = list(refs) if refs is not None else list(range(len(self.points)))
        cell = self.radius_px
        if len(self.points):
            self.x0, self.y0 = self.points.min(axis=0)
            span = self.points.max(axis=0) - (self.x0, self.y0)
        else:
            self.x0 = self.y0 = 0.0
            span = np.zeros(2)
        self.ncx = int(span[0] // cell) + 1
        self.ncy = int(span[1] // cell) + 1
        gx = np.floor((self.points[:, 0] - self.x0) / cell).astype(np.int64)
        gy = np.floor((self.points[:, 1] - self.y0) / cell).astype(np.int64)
        cell_id = gy * self.ncx + gx
        self.order = np.argsort(cell_id, kind="stable").astype(np.int64)
        counts = np.bincount(cell_id, minlength=self.ncx * self.ncy)
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def __len__(self):
        return len(self.points)

    @property
    def grid(self):
        return (self.points, self.order, self.offsets, float(self.x0), float(self.y0),
                self.radius_px, self.ncx, self.ncy)

    def query(self, point, radius: Optional[float] = None) -> np.ndarray:
        """Indices of the points within ``radius`` (default: the index radius), sorted."""
        r = self.radius_px if radius is None else float(radius)
        if len(self.points) == 0:
            return np.empty(0, dtype=np.int64)
        return kernels.radius_query(point[0], point[1], r, self.grid)

    def rects_within(self, rects, radius: Optional[float] = None) -> np.ndarray:
        """Per rectangle, whether any indexed point lies within ``radius`` of it."""
        rects = np.asarray(rects, dtype=np.float64).reshape(-1, 4)
        r = self.radius_px if radius is None else float(radius)
        if len(self.points) == 0:
            return np.zeros(len(rects), dtype=bool)
        return kernels.rects_near_points(rects, r, self.grid)


def build_spatial_index(burrows: Iterable[Detection], conf_threshold: float = 0.5,
                        geo: GeoTransform = GeoTransform(), radius_m: float = 15.2) -> SpatialIndex:
    """Index the centres of confident burrow detections (mosaic frame)."""
    kept = []
    for d in burrows:
        if d.class_id is not ClassId.BURROW or d.confidence < conf_threshold:
            continue
        if d.frame is not Frame.MOSAIC:
            raise ValueError("burrow detections must be in the mosaic frame")
        kept.append(d)
    pts = np.array([d.bbox.center for d in kept], dtype=np.float64).reshape(-1, 2)
    return SpatialIndex(pts, geo.meters_to_px(radius_m), refs=kept)


def geospatial_filter(plan: TilePlan, index: SpatialIndex,
                      radius_px: Optional[float] = None) -> set[str]:
    """Tiles whose extent comes within the radius of an indexed burrow."""
    hits = index.rects_within(plan.rects(), radius_px)
    return {t.tile_id for t, h in zip(plan.tiles, hits) if h}


@dataclass
class AcquisitionBatch:
    strategy: Strategy
    k: int
    tiles: list  # (tile_id, score or None), in selection order
    seed: Optional[int] = None
    pool_size: int = 0
    truncated: bool = False  # k exceeded the eligible pool
    metadata: dict = field(default_factory=dict)

    @property
    def tile_ids(self) -> list[str]:
        return [t for t, _ in self.tiles]

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "k": self.k,
            "seed": self.seed,
            "pool_size": self.pool_size,
            "truncated": self.truncated,
            "tiles": [{"tile_id": t, "score": s} for t, s in self.tiles],
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AcquisitionBatch":
        return cls(Strategy(data["strategy"]), int(data["k"]),
                   [(t["tile_id"], t["score"]) for t in data["tiles"]],
                   data.get("seed"), int(data.get("pool_size", 0)),
                   bool(data.get("truncated", False)), dict(data.get("metadata", {})))

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)


def rank_tiles(pool: Iterable[str], scores: Optional[Mapping[str, float]], strategy,
               k: int, seed=None, plan=None) -> AcquisitionBatch:
    """Select up to ``k`` tiles.

    ``random`` samples the whole plan (a :class:`TilePlan` or any iterable of
    tile ids), ``geo_random`` samples the pool, and the scored strategies take
    the pool in descending score with ties broken by ascending tile id.
    """
    strategy = Strategy(strategy)
    if k < 1:
        raise ValueError("k must be >= 1")
    if strategy is Strategy.RANDOM:
        if plan is None:
            raise ValueError("the random strategy samples the full plan; pass plan=")
        ids = (t.tile_id for t in plan.tiles) if isinstance(plan, TilePlan) else plan
        candidates = sorted(set(ids))
    else:
        candidates = sorted(set(pool))
    n = len(candidates)
    take = min(k, n)
    if strategy in SCORED:
        if scores is None:
            raise ValueError(f"strategy {strategy.value} needs scores")
        missing = [t for t in candidates if t not in scores]
        if missing:
            raise ValueError(f"{len(missing)} pool tiles have no score, e.g. {missing[0]}")
        ranked = sorted(candidates, key=lambda t: (-float(scores[t]), t))[:take]
        tiles = [(t, float(scores[t])) for t in ranked]
    else:
        rng = np.random.default_rng(seed)
        pick = rng.choice(n, size=take, replace=False) if take else []
        tiles = [(candidates[i], None) for i in pick]
    return AcquisitionBatch(strategy, k, tiles, seed, n, truncated=k > n)


def write_pool(path, pool: Iterable[str]) -> None:
    with open(path, "w") as fh:
        for t in sorted(pool):
            fh.write(t + "\n")


def read_pool(path) -> set[str]:
    with open(path) as fh:
        return {line.strip() for line in fh if line.strip()}
