"""Tile uncertainty from instability across test-time augmentation passes."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .geometry import CLASS_INDEX, BBox, ClassId, Detection, TTATransform, remap_detection
from .tiling import TilePlan, neighborhood


@dataclass(frozen=True)
class InstanceCluster:
    class_id: ClassId
    representative_bbox: BBox
    member_confidences: tuple[tuple[int, float], ...]  # (pass_id, confidence)
    T: int

    @property
    def detected_count(self) -> int:
        return len(self.member_confidences)

    def __post_init__(self):
        passes = [p for p, _ in self.member_confidences]
        if len(set(passes)) != len(passes):
            raise ValueError("a cluster holds at most one detection per pass")
        if not 0 <= len(passes) <= self.T:
            raise ValueError("detected_count must lie in [0, T]")


@dataclass(frozen=True)
class UncertaintyWeights:
    w_c_pd: float = 1.0
    w_ex_pd: float = 1.0
    w_c_b: float = 0.25
    w_ex_b: float = 0.25

    def __post_init__(self):
        if min(self.w_c_pd, self.w_ex_pd, self.w_c_b, self.w_ex_b) < 0:
            raise ValueError("uncertainty weights must be non-negative")

    def for_class(self, c: ClassId) -> tuple[float, float]:
        if c is ClassId.PRAIRIE_DOG:
            return self.w_c_pd, self.w_ex_pd
        return self.w_c_b, self.w_ex_b


@dataclass
class TileUncertainty:
    tile_id: str
    score: float
    breakdown: list = field(default_factory=list)  # (class, U_c, U_ex) per cluster
    counts: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "tile_id": self.tile_id,
            "score": self.score,
            "counts": {k.value: v for k, v in self.counts.items()},
            "instances": [{"class": c.value, "u_c": uc, "u_ex": ue}
                          for c, uc, ue in self.breakdown],
        }


def _sort_key(d: Detection):
    b = d.bbox
    # the trailing keys only matter for exact ties and make the order total
    return (-d.confidence, b.x_min, b.y_min, d.pass_id, b.x_max, b.y_max,
            CLASS_INDEX[d.class_id])


def cluster_detections(dets: Sequence[Detection], T: int,
                       tau: float = 0.5) -> list[InstanceCluster]:
    """Greedy cross-pass grouping of canonical-frame detections.

    Detections are visited by descending confidence (then x_min, y_min,
    pass_id). Each joins the first cluster of its class whose founding box
    overlaps it with IoU >= tau and which has no member from its pass;
    otherwise it founds a new cluster.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    if T < 1:
        raise ValueError("T must be >= 1")
    if len({d.tile_id for d in dets}) > 1:
        raise ValueError("detections come from more than one tile")
    if any(d.pass_id is None or not 0 <= d.pass_id < T for d in dets):
        raise ValueError("every detection needs a pass_id in [0, T)")
    order = sorted(dets, key=_sort_key)
    if not order:
        return []
    boxes = np.array([d.bbox.as_array() for d in order])
    classes = np.array([CLASS_INDEX[d.class_id] for d in order])
    passes = np.array([d.pass_id for d in order])
    labels = kernels.greedy_cluster(boxes, classes, passes, T, tau)
    members = defaultdict(list)
    for d, lab in zip(order, labels):
        members[int(lab)].append(d)
    return [InstanceCluster(ms[0].class_id, ms[0].bbox,
                            tuple((m.pass_id, m.confidence) for m in ms), T)
            for _, ms in sorted(members.items())]


def remap_passes(dets: Iterable[Detection], transforms: dict[int, TTATransform]) -> list[Detection]:
    """Bring per-pass detections back to the canonical tile frame."""
    out = []
    for d in dets:
        if d.pass_id not in transforms:
            raise ValueError(f"no transform recorded for pass {d.pass_id}")
        out.append(remap_detection(d, transforms[d.pass_id]))
    return out


def confidence_uncertainty(cluster: InstanceCluster, missing: str = "zero") -> float:
    """Four times the population variance of per-pass confidences, in [0, 1].

    ``missing="zero"`` scores undetected passes as confidence 0 (over all T
    passes); ``missing="ignore"`` uses the detected passes only.
    """
    if cluster.T < 1:
        raise ValueError("T must be >= 1")
    confs = [c for _, c in cluster.member_confidences]
    if missing == "zero":
        confs = confs + [0.0] * (cluster.T - len(confs))
    elif missing != "ignore":
        raise ValueError(f"unknown missing-pass policy {missing!r}")
    if not confs:
        return 0.0
    return float(min(1.0, 4.0 * np.var(confs)))


def existence_uncertainty_counts(k: int, T: int) -> float:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 <= k <= T:
        raise ValueError(f"detected count {k} outside [0, {T}]")
    p = (k + 0.5) / (T + 1)
    return 4.0 * p * (1.0 - p)


def existence_uncertainty(cluster: InstanceCluster) -> float:
    """Jeffreys-smoothed detection rate turned into a normalised Bernoulli variance."""
    return existence_uncertainty_counts(cluster.detected_count, cluster.T)


def aggregate_tile_score(pd_terms: Sequence[tuple[float, float]],
                         b_terms: Sequence[tuple[float, float]],
                         w: UncertaintyWeights = UncertaintyWeights()) -> float:
    """Count-normalised weighted sum of per-instance ``(U_c, U_ex)`` pairs."""
    score = 0.0
    for terms, (wc, wex) in ((pd_terms, (w.w_c_pd, w.w_ex_pd)), (b_terms, (w.w_c_b, w.w_ex_b))):
        if terms:
            score += sum(wc * uc + wex * ue for uc, ue in terms) / max(1, len(terms))
    return score


def tile_uncertainty(clusters: Sequence[InstanceCluster], w: UncertaintyWeights = UncertaintyWeights(),
                     tile_id: str = "", missing: str = "zero") -> TileUncertainty:
    terms = {ClassId.PRAIRIE_DOG: [], ClassId.BURROW: []}
    breakdown = []
    for cl in clusters:
        uc = confidence_uncertainty(cl, missing)
        ue = existence_uncertainty(cl)
        terms[cl.class_id].append((uc, ue))
        breakdown.append((cl.class_id, uc, ue))
    score = aggregate_tile_score(terms[ClassId.PRAIRIE_DOG], terms[ClassId.BURROW], w)
    return TileUncertainty(tile_id, score, breakdown, {c: len(v) for c, v in terms.items()})


# ---------------------------------------------------------------------------
# 3x3 window scoring on mosaic-frame detections

def window_extent(plan: TilePlan, tile_id: str) -> tuple[float, float, float, float]:
    nb = neighborhood(plan, tile_id)
    s = plan.tile_size
    return (min(t.x0 for t in nb), min(t.y0 for t in nb),
            max(t.x0 for t in nb) + s, max(t.y0 for t in nb) + s)


def windowed_tile_scores(plan: TilePlan, dets: Sequence[Detection], T: int,
                         tile_ids: Optional[Iterable[str]] = None, tau: float = 0.5,
                         w: UncertaintyWeights = UncertaintyWeights(),
                         missing: str = "zero") -> dict[str, TileUncertainty]:
    """Score tiles from mosaic-frame multi-pass detections.

    Each tile's detections are clustered over its 3x3 neighbourhood window,
    but only clusters whose representative centre lies in the tile itself
    contribute to its score.
    """
    by_id = plan.by_id()
    tile_ids = list(by_id) if tile_ids is None else list(tile_ids)
    if not dets:
        return {t: TileUncertainty(t, 0.0, [], {ClassId.PRAIRIE_DOG: 0, ClassId.BURROW: 0})
                for t in tile_ids}
    boxes = np.array([d.bbox.as_array() for d in dets])
    cx = 0.5 * (boxes[:, 0] + boxes[:, 2])
    cy = 0.5 * (boxes[:, 1] + boxes[:, 3])
    s = plan.tile_size
    out = {}
    for tid in tile_ids:
        wx0, wy0, wx1, wy1 = window_extent(plan, tid)
        sel = np.flatnonzero((cx >= wx0) & (cx < wx1) & (cy >= wy0) & (cy < wy1))
        window = [Detection(dets[i].bbox, dets[i].class_id, dets[i].confidence,
                            tile_id=tid, pass_id=dets[i].pass_id, frame=dets[i].frame)
                  for i in sel]
        t = by_id[tid]
        keep = []
        for cl in cluster_detections(window, T, tau):
            ccx, ccy = cl.representative_bbox.center
            if t.x0 <= ccx < t.x0 + s and t.y0 <= ccy < t.y0 + s:
                keep.append(cl)
        out[tid] = tile_uncertainty(keep, w, tid, missing)
    return out
