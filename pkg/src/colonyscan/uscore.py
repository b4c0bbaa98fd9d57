"""Prediction-error score of a tile against its ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import kernels
from .geometry import Detection, boxes_array

_TIE_TOL = 1e-9


@dataclass
class MatchResult:
    matches: list = field(default_factory=list)   # (pred index, gt index, iou)
    unmatched_gts: list = field(default_factory=list)
    unmatched_preds: list = field(default_factory=list)

    @property
    def total_iou(self) -> float:
        return float(sum(m[2] for m in self.matches))


def eligible_iou(preds: Sequence[Detection], gts: Sequence[Detection],
                 iou_threshold: float = 0.5) -> np.ndarray:
    """IoU matrix with cross-class and below-threshold pairs zeroed."""
    w = kernels.iou_matrix(boxes_array(preds), boxes_array(gts))
    same = np.array([[p.class_id == g.class_id for g in gts] for p in preds], dtype=bool)
    w = np.where(same.reshape(w.shape) & (w >= iou_threshold), w, 0.0)
    return w


def _best_total(w: np.ndarray) -> float:
    if w.size == 0:
        return 0.0
    r, c = linear_sum_assignment(w, maximize=True)
    return float(w[r, c].sum())


def _lexmin_optimal(w: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-weight matching on a dense block, preferring the lexicographically
    smallest (row, col) pair list among optimal ones. Zero entries are non-edges."""
    n, m = w.shape
    target = _best_total(w)
    rows = list(range(n))
    free_cols = list(range(m))
    pairs = []
    for i in rows:
        rest_rows = [r for r in rows if r > i]
        found = False
        for j in free_cols:
            if w[i, j] <= 0:
                continue
            cols_left = [c for c in free_cols if c != j]
            rest = _best_total(w[np.ix_(rest_rows, cols_left)]) if rest_rows and cols_left else 0.0
            if w[i, j] + rest >= target - _TIE_TOL:
                pairs.append((i, j))
                free_cols = cols_left
                target -= w[i, j]
                found = True
                break
        if not found:
            continue  # leaving row i unmatched is optimal
    return pairs


def match_detections(preds: Sequence[Detection], gts: Sequence[Detection],
                     iou_threshold: float = 0.5) -> MatchResult:
    """Class-aware assignment maximising total IoU over pairs with IoU >= threshold.

    Equal-total assignments are resolved towards the lexicographically smallest
    list of (pred index, gt index) pairs.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    n, m = len(preds), len(gts)
    if n == 0 or m == 0:
        return MatchResult([], list(range(m)), list(range(n)))
    w = eligible_iou(preds, gts, iou_threshold)
    # independent blocks of the bipartite overlap graph are solved separately
    adj = csr_matrix(np.block([[np.zeros((n, n)), w], [w.T, np.zeros((m, m))]]) > 0)
    n_comp, comp = connected_components(adj, directed=False)
    pairs = []
    for k in range(n_comp):
        ri = np.flatnonzero(comp[:n] == k)
        ci = np.flatnonzero(comp[n:] == k)
        if ri.size == 0 or ci.size == 0:
            continue
        for a, b in _lexmin_optimal(w[np.ix_(ri, ci)]):
            pairs.append((int(ri[a]), int(ci[b])))
    pairs.sort()
    matched_p = {p for p, _ in pairs}
    matched_g = {g for _, g in pairs}
    return MatchResult(
        [(p, g, float(w[p, g])) for p, g in pairs],
        [j for j in range(m) if j not in matched_g],
        [i for i in range(n) if i not in matched_p],
    )


def u_score(preds: Sequence[Detection], gts: Sequence[Detection], m: MatchResult) -> float:
    """Localisation, miss and false-alarm penalties averaged over
    matched pairs + unmatched gts + unmatched preds. Empty tile -> 0."""
    denom = len(preds) + len(gts) - len(m.matches)
    if denom == 0:
        return 0.0
    total = sum(1.0 - preds[p].confidence * v for p, _, v in m.matches)
    total += len(m.unmatched_gts)
    total += sum(min(1.0, 0.5 + preds[p].confidence) for p in m.unmatched_preds)
    return float(total / denom)


def tile_u_score(preds: Sequence[Detection], gts: Sequence[Detection],
                 iou_threshold: float = 0.5) -> tuple[float, MatchResult]:
    m = match_detections(preds, gts, iou_threshold)
    return u_score(preds, gts, m), m
