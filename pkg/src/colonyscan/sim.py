"""Synthetic colony surveys with a noisy stand-in detector.

Gives every acquisition strategy a ground-truth oracle: we know where each
animal is, so we can count how many a selected batch of tiles would reveal.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import BBox, ClassId, Detection, Frame, GeoTransform
from .geoactive import Strategy, build_spatial_index, geospatial_filter, rank_tiles
from .tiling import TilePlan, plan_tiles, tile_indices_containing
from .tta import UncertaintyWeights, windowed_tile_scores
from .uscore import tile_u_score

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ColonyConfig:
    # 50 x 40 tiles of 512 px at 30 % overlap = 2,000 tiles
    mosaic_w: int = 18054
    mosaic_h: int = 14474
    gsd: float = 0.02
    tile_size: int = 512
    overlap_frac: float = 0.30
    n_burrow_clusters: int = 6
    burrows_per_cluster: float = 50.0
    cluster_spread_m: float = 10.0
    n_animals: int = 40
    frac_near_burrow: float = 0.95
    near_radius_m: float = 15.2
    animal_box_px: float = 20.0
    burrow_box_px: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if min(self.mosaic_w, self.mosaic_h, self.tile_size) <= 0 or self.gsd <= 0:
            raise ValueError("dimensions and gsd must be positive")
        if not 0.0 <= self.frac_near_burrow <= 1.0:
            raise ValueError("frac_near_burrow must lie in [0, 1]")
        if min(self.n_burrow_clusters, self.n_animals) < 0 or self.burrows_per_cluster < 0:
            raise ValueError("counts must be non-negative")
        if self.cluster_spread_m < 0 or self.near_radius_m <= 0:
            raise ValueError("cluster_spread_m must be >= 0 and near_radius_m > 0")


@dataclass(frozen=True)
class DetectorNoise:
    miss_prob_pd: float = 0.35
    miss_prob_b: float = 0.05
    fp_rate_pd: float = 0.02     # expected false positives per tile per pass
    fp_rate_b: float = 0.02
    tp_conf_mean_pd: float = 0.60
    tp_conf_std_pd: float = 0.15
    tp_conf_mean_b: float = 0.85
    tp_conf_std_b: float = 0.08
    fp_conf_mean: float = 0.35
    fp_conf_std: float = 0.10
    bbox_jitter_px: float = 2.0
    independent_passes: bool = False
    difficulty_concentration: float = 2.0  # Beta concentration of per-object miss rates
    conf_difficulty: float = 0.5           # confidence drop per unit of extra miss rate
    fp_persistence: float = 0.5            # per-pass visibility of a persistent confuser

    def __post_init__(self):
        for name in ("miss_prob_pd", "miss_prob_b", "fp_persistence"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.fp_persistence == 0.0:
            raise ValueError("fp_persistence must be positive")
        for name in ("fp_rate_pd", "fp_rate_b", "tp_conf_std_pd", "tp_conf_std_b",
                     "fp_conf_std", "bbox_jitter_px", "difficulty_concentration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def miss(self, c: ClassId) -> float:
        return self.miss_prob_pd if c is ClassId.PRAIRIE_DOG else self.miss_prob_b

    def fp_rate(self, c: ClassId) -> float:
        return self.fp_rate_pd if c is ClassId.PRAIRIE_DOG else self.fp_rate_b

    def tp_conf(self, c: ClassId) -> tuple[float, float]:
        if c is ClassId.PRAIRIE_DOG:
            return self.tp_conf_mean_pd, self.tp_conf_std_pd
        return self.tp_conf_mean_b, self.tp_conf_std_b


@dataclass
class ColonyTruth:
    config: ColonyConfig
    plan: TilePlan
    burrows: np.ndarray   # (n, 2) centres, mosaic px
    animals: np.ndarray   # (m, 2)
    _animal_tiles: Optional[list] = field(default=None, repr=False)

    @property
    def geo(self) -> GeoTransform:
        return GeoTransform(self.config.gsd)

    def objects(self) -> list[tuple[ClassId, np.ndarray, float]]:
        c = self.config
        return [(ClassId.PRAIRIE_DOG, self.animals, c.animal_box_px),
                (ClassId.BURROW, self.burrows, c.burrow_box_px)]

    def detections(self) -> list[Detection]:
        """Ground truth as mosaic-frame records with confidence 1."""
        out = []
        for cls, pts, size in self.objects():
            for x, y in pts:
                out.append(Detection(BBox.from_center(x, y, size, size), cls, 1.0,
                                     frame=Frame.MOSAIC))
        return out

    def animal_tiles(self) -> list[np.ndarray]:
        """Plan indices of the tiles containing each animal."""
        if self._animal_tiles is None:
            self._animal_tiles = tile_indices_containing(self.animals, self.plan)
        return self._animal_tiles

    def animal_bearing_tiles(self) -> set[str]:
        return {self.plan.tiles[i].tile_id for idx in self.animal_tiles() for i in idx}


def _inside(pts, w, h, margin):
    return ((pts[:, 0] >= margin) & (pts[:, 0] <= w - margin)
            & (pts[:, 1] >= margin) & (pts[:, 1] <= h - margin))


def _rejection(draw, accept, n, rng, max_rounds=1000):
    out = np.empty((0, 2))
    for _ in range(max_rounds):
        if len(out) >= n:
            break
        cand = draw(rng, max(2 * (n - len(out)), 16))
        out = np.vstack([out, cand[accept(cand)]])
    if len(out) < n:
        raise RuntimeError("rejection sampling failed to place all points")
    return out[:n]


def generate_colony(cfg: ColonyConfig = ColonyConfig()) -> ColonyTruth:
    """Neyman-Scott burrow clusters plus animals tied to burrows.

    Exactly ``round(frac_near_burrow * n_animals)`` animals sit uniformly in a
    disc of ``near_radius_m`` around a random burrow; the rest are uniform over
    the whole mosaic (and may land near a burrow by chance).
    """
    plan = plan_tiles(cfg.mosaic_w, cfg.mosaic_h, cfg.tile_size, cfg.overlap_frac)
    ss = np.random.SeedSequence(cfg.seed)
    rng_b, rng_a = (np.random.default_rng(s) for s in ss.spawn(2))
    W, H = cfg.mosaic_w, cfg.mosaic_h
    margin = max(cfg.animal_box_px, cfg.burrow_box_px) / 2 + 1
    spread = cfg.cluster_spread_m / cfg.gsd
    radius = cfg.near_radius_m / cfg.gsd

    centers = np.column_stack([rng_b.uniform(margin, W - margin, cfg.n_burrow_clusters),
                               rng_b.uniform(margin, H - margin, cfg.n_burrow_clusters)])
    counts = rng_b.poisson(cfg.burrows_per_cluster, cfg.n_burrow_clusters)
    groups = []
    for c, n in zip(centers, counts):
        if n == 0:
            continue
        groups.append(_rejection(
            lambda r, m, c=c: c + r.normal(0.0, spread, (m, 2)),
            lambda p: _inside(p, W, H, margin), int(n), rng_b))
    burrows = np.vstack(groups) if groups else np.empty((0, 2))

    n_near = int(round(cfg.frac_near_burrow * cfg.n_animals)) if len(burrows) else 0
    if len(burrows) == 0 and cfg.n_animals and cfg.frac_near_burrow > 0:
        log.warning("colony has no burrows; all animals placed uniformly")

    def near_draw(r, m):
        anchor = burrows[r.integers(len(burrows), size=m)]
        rad = radius * np.sqrt(r.random(m))
        ang = r.uniform(0.0, 2 * np.pi, m)
        return anchor + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])

    near = (_rejection(near_draw, lambda p: _inside(p, W, H, margin), n_near, rng_a)
            if n_near else np.empty((0, 2)))
    n_far = cfg.n_animals - n_near
    far = (_rejection(lambda r, m: np.column_stack([r.uniform(0, W, m), r.uniform(0, H, m)]),
                      lambda p: _inside(p, W, H, margin), n_far, rng_a)
           if n_far else np.empty((0, 2)))
    animals = np.vstack([near, far])
    return ColonyTruth(cfg, plan, burrows, animals)


def _clip_conf(x):
    return np.clip(x, 0.01, 1.0)


def simulate_detector(truth: ColonyTruth, noise: DetectorNoise = DetectorNoise(),
                      T: int = 8, seed=0) -> list[list[Detection]]:
    """Per-pass mosaic-frame detections from a noisy oracle detector.

    With ``independent_passes`` off, every object carries a latent miss rate
    drawn from a Beta around the class miss probability, so the same objects
    flicker across passes; false positives come from persistent confuser
    sites, each visible in a pass with probability ``fp_persistence``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(3)
    rng_obj, rng_pass, rng_fp = (np.random.default_rng(s) for s in streams)
    passes: list[list[Detection]] = [[] for _ in range(T)]
    jit = noise.bbox_jitter_px
    W, H = truth.config.mosaic_w, truth.config.mosaic_h

    for cls, pts, size in truth.objects():
        n = len(pts)
        if n == 0:
            continue
        miss = noise.miss(cls)
        kappa = noise.difficulty_concentration
        if noise.independent_passes or miss in (0.0, 1.0) or kappa == 0:
            m_obj = np.full(n, miss)
        else:
            m_obj = rng_obj.beta(miss * kappa, (1 - miss) * kappa, n)
        mean, std = noise.tp_conf(cls)
        shift = noise.conf_difficulty * (m_obj - miss)
        for t in range(T):
            hit = rng_pass.random(n) >= m_obj
            conf = _clip_conf(rng_pass.normal(mean - shift, std) if std > 0 else mean - shift)
            jitter = rng_pass.normal(0.0, jit, (n, 4)) if jit > 0 else np.zeros((n, 4))
            for i in np.flatnonzero(hit):
                x, y = pts[i]
                b = np.array([x - size / 2, y - size / 2, x + size / 2, y + size / 2]) + jitter[i]
                b[2] = max(b[2], b[0] + 1.0)
                b[3] = max(b[3], b[1] + 1.0)
                passes[t].append(Detection(BBox(*b), cls, float(conf[i]), pass_id=t,
                                           frame=Frame.MOSAIC))

    s = truth.plan.tile_size
    q = noise.fp_persistence
    for cls, size in ((ClassId.PRAIRIE_DOG, truth.config.animal_box_px),
                      (ClassId.BURROW, truth.config.burrow_box_px)):
        rate = noise.fp_rate(cls)
        if rate == 0:
            continue
        for tile in truth.plan.tiles:
            if noise.independent_passes:
                for t in range(T):
                    for _ in range(rng_fp.poisson(rate)):
                        passes[t].append(_fp(rng_fp, tile, s, size, cls, noise, t))
                continue
            # thinning keeps the per-pass count Poisson(rate)
            for _ in range(rng_fp.poisson(rate / q)):
                x = rng_fp.uniform(tile.x0, tile.x0 + s)
                y = rng_fp.uniform(tile.y0, tile.y0 + s)
                base = rng_fp.normal(noise.fp_conf_mean, noise.fp_conf_std)
                for t in range(T):
                    if rng_fp.random() < q:
                        conf = float(_clip_conf(base + rng_fp.normal(0.0, 0.05)))
                        passes[t].append(Detection(_clamped_box(x, y, size, W, H), cls, conf,
                                                   pass_id=t, frame=Frame.MOSAIC))
    return passes


def _clamped_box(x, y, size, W, H):
    x = min(max(x, size / 2), W - size / 2)
    y = min(max(y, size / 2), H - size / 2)
    return BBox.from_center(x, y, size, size)


def _fp(rng, tile, s, size, cls, noise, t):
    x = rng.uniform(tile.x0, tile.x0 + s)
    y = rng.uniform(tile.y0, tile.y0 + s)
    conf = float(_clip_conf(rng.normal(noise.fp_conf_mean, noise.fp_conf_std)))
    return Detection(BBox.from_center(x, y, size, size), cls, conf, pass_id=t, frame=Frame.MOSAIC)


# ---------------------------------------------------------------------------
# strategy evaluation

@dataclass(frozen=True)
class EvalConfig:
    radius_m: float = 15.2
    burrow_conf_threshold: float = 0.5
    tau: float = 0.5
    weights: UncertaintyWeights = UncertaintyWeights()
    uscore_iou: float = 0.5
    base_pass: int = 0


@dataclass
class PreparedSurvey:
    pool: set
    tta_scores: dict
    uscore_scores: dict
    T: int


def _in_tiles(boxes: np.ndarray, plan: TilePlan) -> list[np.ndarray]:
    centers = np.column_stack([(boxes[:, 0] + boxes[:, 2]) / 2, (boxes[:, 1] + boxes[:, 3]) / 2])
    return tile_indices_containing(centers, plan)


def prepare_survey(truth: ColonyTruth, passes: Sequence[Sequence[Detection]],
                   cfg: EvalConfig = EvalConfig(), pool_from_truth: bool = False) -> PreparedSurvey:
    """Candidate pool plus both uncertainty scores for every pool tile.

    The pool comes from the base pass's confident burrow detections, or from
    the true burrows when ``pool_from_truth`` is set.
    """
    plan = truth.plan
    base = list(passes[cfg.base_pass])
    if pool_from_truth:
        burrows = [d for d in truth.detections() if d.class_id is ClassId.BURROW]
    else:
        burrows = [d for d in base if d.class_id is ClassId.BURROW]
    index = build_spatial_index(burrows, cfg.burrow_conf_threshold, truth.geo, cfg.radius_m)
    pool = geospatial_filter(plan, index)
    T = len(passes)
    flat = [d for p in passes for d in p]
    tta_scores = {t: u.score for t, u in
                  windowed_tile_scores(plan, flat, T, sorted(pool), cfg.tau, cfg.weights).items()}

    # MUH-oracle: the error score the learned head is trained to predict
    pos = {t.tile_id: i for i, t in enumerate(plan.tiles)}
    gts = truth.detections()
    pred_tiles = _in_tiles(np.array([d.bbox.as_array() for d in base]).reshape(-1, 4), plan)
    gt_tiles = _in_tiles(np.array([d.bbox.as_array() for d in gts]).reshape(-1, 4), plan)
    preds_by_tile: dict[int, list] = {}
    gts_by_tile: dict[int, list] = {}
    for d, idx in zip(base, pred_tiles):
        for i in idx:
            preds_by_tile.setdefault(int(i), []).append(d)
    for d, idx in zip(gts, gt_tiles):
        for i in idx:
            gts_by_tile.setdefault(int(i), []).append(d)
    u_scores = {}
    for tid in pool:
        i = pos[tid]
        u_scores[tid] = tile_u_score(preds_by_tile.get(i, []), gts_by_tile.get(i, []),
                                     cfg.uscore_iou)[0]
    return PreparedSurvey(pool, tta_scores, u_scores, T)


def evaluate_strategy(strategy, k: int, truth: ColonyTruth,
                      passes: Sequence[Sequence[Detection]],
                      prepared: Optional[PreparedSurvey] = None, seed=0,
                      cfg: EvalConfig = EvalConfig()) -> dict:
    strategy = Strategy(strategy)
    if prepared is None:
        prepared = prepare_survey(truth, passes, cfg)
    scores = {Strategy.GEO_TTA: prepared.tta_scores,
              Strategy.GEO_USCORE: prepared.uscore_scores}.get(strategy)
    batch = rank_tiles(prepared.pool, scores, strategy, k, seed, plan=truth.plan)
    selected = set(batch.tile_ids)
    plan = truth.plan
    ids = [t.tile_id for t in plan.tiles]
    animal_tiles = truth.animal_bearing_tiles()
    captured = sum(1 for idx in truth.animal_tiles() if any(ids[i] in selected for i in idx))
    recall = len(selected & animal_tiles) / len(animal_tiles) if animal_tiles else 1.0
    pool_recall = (len(prepared.pool & animal_tiles) / len(animal_tiles)
                   if animal_tiles else 1.0)
    return {
        "strategy": strategy.value,
        "k": k,
        "n_selected": len(selected),
        "animal_tile_recall": recall,
        "animals_captured": captured,
        "n_animals": len(truth.animals),
        "pool_size": len(prepared.pool),
        "pool_size_frac": len(prepared.pool) / len(plan),
        "pool_animal_tile_recall": pool_recall,
    }


ALL_STRATEGIES = tuple(s.value for s in Strategy)


def run_survey(seed: int, ks: Sequence[int] = (100, 500, 1000),
               strategies: Sequence[str] = ALL_STRATEGIES,
               colony: ColonyConfig = ColonyConfig(), noise: DetectorNoise = DetectorNoise(),
               T: int = 8, cfg: EvalConfig = EvalConfig()) -> list[dict]:
    """One full synthetic survey: colony, detector passes, pool, scores, metrics."""
    s_colony, s_detect, s_rank = np.random.SeedSequence(seed).generate_state(3)
    col = ColonyConfig(**{**asdict(colony), "seed": int(s_colony)})
    truth = generate_colony(col)
    passes = simulate_detector(truth, noise, T, int(s_detect))
    prepared = prepare_survey(truth, passes, cfg)
    rows = []
    for strategy in strategies:
        for k in ks:
            m = evaluate_strategy(strategy, k, truth, passes, prepared, int(s_rank), cfg)
            m["seed"] = seed
            rows.append(m)
    return rows
