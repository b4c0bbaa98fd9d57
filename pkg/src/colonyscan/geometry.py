"""Boxes, detections, transforms and the detection JSON-lines format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np


class ClassId(str, Enum):
    PRAIRIE_DOG = "prairie_dog"
    BURROW = "burrow"


CLASS_INDEX = {c: i for i, c in enumerate(ClassId)}


class Frame(str, Enum):
    TILE = "tile"
    MOSAIC = "mosaic"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates, origin top-left."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    def to_center(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        return cx, cy, self.width, self.height


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    class_id: ClassId
    confidence: float
    tile_id: str = ""
    pass_id: Optional[int] = None
    frame: Frame = Frame.TILE

    def __post_init__(self):
        if not isinstance(self.class_id, ClassId):
            object.__setattr__(self, "class_id", ClassId(self.class_id))
        if not isinstance(self.frame, Frame):
            object.__setattr__(self, "frame", Frame(self.frame))
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_record(self) -> dict:
        rec = {
            "tile_id": self.tile_id,
            "class": self.class_id.value,
            "x_min": self.bbox.x_min,
            "y_min": self.bbox.y_min,
            "x_max": self.bbox.x_max,
            "y_max": self.bbox.y_max,
            "confidence": self.confidence,
        }
        if self.pass_id is not None:
            rec["pass_id"] = self.pass_id
        if self.frame is Frame.MOSAIC:
            rec["frame"] = Frame.MOSAIC.value
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Detection":
        known = {"tile_id", "class", "x_min", "y_min", "x_max", "y_max",
                 "confidence", "pass_id", "frame"}
        extra = set(rec) - known
        if extra:
            raise ValueError(f"unknown detection fields {sorted(extra)}")
        pass_id = rec.get("pass_id")
        return cls(
            bbox=BBox(float(rec["x_min"]), float(rec["y_min"]),
                      float(rec["x_max"]), float(rec["y_max"])),
            class_id=ClassId(rec["class"]),
            confidence=float(rec["confidence"]),
            tile_id=str(rec.get("tile_id", "")),
            pass_id=None if pass_id is None else int(pass_id),
            frame=Frame(rec.get("frame", "tile")),
        )


def boxes_array(dets: Iterable[Detection]) -> np.ndarray:
    rows = [d.bbox.as_array() for d in dets]
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def write_jsonl(path, dets: Iterable[Detection]) -> None:
    with open(path, "w") as fh:
        for d in dets:
            fh.write(json.dumps(d.to_record(), sort_keys=True) + "\n")


def iter_jsonl(path) -> Iterator[Detection]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield Detection.from_record(json.loads(line))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{Path(path).name}:{lineno}: {exc}") from exc


def read_jsonl(path) -> list[Detection]:
    return list(iter_jsonl(path))


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeoTransform:
    gsd_m_per_px: float = 0.02
    origin_x_m: float = 0.0
    origin_y_m: float = 0.0

    def __post_init__(self):
        if not self.gsd_m_per_px > 0:
            raise ValueError("gsd_m_per_px must be positive")

    def to_world(self, x_px: float, y_px: float) -> tuple[float, float]:
        return (self.origin_x_m + x_px * self.gsd_m_per_px,
                self.origin_y_m + y_px * self.gsd_m_per_px)

    def meters_to_px(self, meters: float) -> float:
        return meters / self.gsd_m_per_px


def px_distance_m(p, q, g: GeoTransform) -> float:
    """Euclidean distance in meters between two mosaic pixel positions."""
    return math.hypot(p[0] - q[0], p[1] - q[1]) * g.gsd_m_per_px


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


# ---------------------------------------------------------------------------
# test-time augmentation transforms

class TTAKind(str, Enum):
    IDENTITY = "identity"
    HFLIP = "hflip"
    VFLIP = "vflip"
    ROT90 = "rot90"
    ROT180 = "rot180"
    ROT270 = "rot270"
    BRIGHTNESS = "brightness"


@dataclass(frozen=True)
class TTATransform:
    """One augmentation pass. Rotations are counter-clockwise, as ``np.rot90``."""

    kind: TTAKind
    tile_size: int = 512
    factor: float = 1.0

    def __post_init__(self):
        if not isinstance(self.kind, TTAKind):
            object.__setattr__(self, "kind", TTAKind(self.kind))
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if self.kind is TTAKind.BRIGHTNESS and not self.factor > 0:
            raise ValueError("brightness factor must be positive")

    def to_record(self) -> dict:
        rec = {"kind": self.kind.value, "tile_size": self.tile_size}
        if self.kind is TTAKind.BRIGHTNESS:
            rec["factor"] = self.factor
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "TTATransform":
        return cls(TTAKind(rec["kind"]), int(rec.get("tile_size", 512)),
                   float(rec.get("factor", 1.0)))


def _point_forward(kind: TTAKind, s: float, x: float, y: float):
    if kind is TTAKind.HFLIP:
        return s - x, y
    if kind is TTAKind.VFLIP:
        return x, s - y
    if kind is TTAKind.ROT90:
        return y, s - x
    if kind is TTAKind.ROT180:
        return s - x, s - y
    if kind is TTAKind.ROT270:
        return s - y, x
    return x, y


_INVERSE = {
    TTAKind.ROT90: TTAKind.ROT270,
    TTAKind.ROT270: TTAKind.ROT90,
}


def _map_box(box: BBox, kind: TTAKind, s: float) -> BBox:
    x0, y0 = _point_forward(kind, s, box.x_min, box.y_min)
    x1, y1 = _point_forward(kind, s, box.x_max, box.y_max)
    return BBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def _check_in_tile(box: BBox, s: int) -> None:
    if box.x_min < 0 or box.y_min < 0 or box.x_max > s or box.y_max > s:
        raise ValueError(f"box {box} outside tile of size {s}")


def apply_transform(d: Detection, t: TTATransform) -> Detection:
    """Where a canonical-frame detection lands in the augmented tile."""
    _check_in_tile(d.bbox, t.tile_size)
    return replace(d, bbox=_map_box(d.bbox, t.kind, t.tile_size))


def remap_detection(d: Detection, t: TTATransform) -> Detection:
    """Map a detection made on an augmented tile back to the canonical frame."""
    _check_in_tile(d.bbox, t.tile_size)
    inv = _INVERSE.get(t.kind, t.kind)
    return replace(d, bbox=_map_box(d.bbox, inv, t.tile_size))


DEFAULT_TTA_KINDS = (
    ("identity", 1.0), ("hflip", 1.0), ("vflip", 1.0), ("rot90", 1.0),
    ("rot180", 1.0), ("rot270", 1.0), ("brightness", 0.8), ("brightness", 1.2),
)


def default_tta_passes(n_passes: int = 8, tile_size: int = 512) -> list[TTATransform]:
    """The first ``n_passes`` of a fixed augmentation family (cycled if longer)."""
    kinds = [DEFAULT_TTA_KINDS[i % len(DEFAULT_TTA_KINDS)] for i in range(n_passes)]
    return [TTATransform(TTAKind(k), tile_size, f) for k, f in kinds]
