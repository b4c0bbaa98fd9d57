"""End-to-end acceptance checks, one test per criterion.

Each test reports a single PASS/FAIL line (also repeated in the terminal
summary) and then asserts it.
"""

import time

import numpy as np
from scipy.stats import binomtest

from colonyscan import augment as A
from colonyscan.cli import gradcheck_pyramid
from colonyscan.consistency import (
    TriLossWeights, consistency_loss, loss_cos, loss_kl, loss_mse, upsample_nearest,
)
from colonyscan.geoactive import SpatialIndex, geospatial_filter
from colonyscan.geometry import BBox, ClassId, Detection, GeoTransform
from colonyscan.sim import ALL_STRATEGIES, run_survey
from colonyscan.tiling import plan_tiles
from colonyscan.tta import (
    InstanceCluster, _sort_key, aggregate_tile_score, cluster_detections, confidence_uncertainty,
    existence_uncertainty_counts, tile_uncertainty,
)
from colonyscan.uscore import match_detections, tile_u_score, u_score
from oracles import (
    best_assignment_bruteforce, eligible_weights, greedy_cluster_reference, points_within,
    pool_bruteforce,
)

PD, BU = ClassId.PRAIRIE_DOG, ClassId.BURROW


def test_c01_gradients(report):
    t0 = time.perf_counter()
    runs = [gradcheck_pyramid(s, 4, 8, 1e-4) for s in range(20)]
    dt = time.perf_counter() - t0
    worst = {k: max(r[k] for r in runs) for k in ("mse", "kl", "cos", "combined")}
    ok = max(worst.values()) < 1e-4 and dt < 60
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    report("C1 gradient check (20 pyramids, C=4, 8x8)", ok, f"{detail}; {dt:.1f}s")


def test_c02_zero_cases(report):
    ok = TriLossWeights() == TriLossWeights(10.0, 1.0, 1.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.standard_normal((4, 8, 8))
        ok &= all(fn(m, m.copy(), m.copy()).value == 0.0 for fn in (loss_mse, loss_kl, loss_cos))
        p5 = rng.standard_normal((4, 2, 2))
        res = consistency_loss(upsample_nearest(p5, 4), upsample_nearest(p5, 2), p5)
        ok &= res.value == 0.0 and all(v == 0.0 for v in res.components.values())
        c = np.full((4, 8, 8), rng.normal())
        ok &= consistency_loss(c, c[:, ::2, ::2], c[:, ::4, ::4]).value == 0.0
    report("C2 tri-loss zero cases and (10,1,1) default", bool(ok),
           "identical, nested-upsampled and constant pyramids give exactly 0")


def test_c03_uncertainty_formulas(report):
    checks = [
        existence_uncertainty_counts(5, 10) == 1.0,
        abs(existence_uncertainty_counts(9, 9) - 0.19) <= 1e-12,
        abs(existence_uncertainty_counts(0, 9) - 0.19) <= 1e-12,
        tile_uncertainty([]).score == 0.0,
        aggregate_tile_score([(0.5, 0.5)], []) == 1.0,
        aggregate_tile_score([], [(1.0, 1.0), (1.0, 1.0)]) == 0.5,
    ]

    def uc(confs, T):
        return confidence_uncertainty(InstanceCluster(PD, BBox(0, 0, 1, 1),
                                                      tuple(enumerate(confs)), T))
    checks += [uc([0.6] * 4, 4) == 0.0, uc([1.0], 2) == 1.0,
               abs(uc([0.8, 0.8], 4) - 0.64) <= 1e-12]
    rng = np.random.default_rng(1)
    for _ in range(5000):
        T = int(rng.integers(1, 16))
        k = int(rng.integers(1, T + 1))
        v = uc(rng.uniform(0, 1, k).tolist(), T)
        e = existence_uncertainty_counts(k, T)
        checks.append(0.0 <= v <= 1.0 and 0.0 <= e <= 1.0)
    report("C3 uncertainty formulas", all(checks),
           f"{sum(checks)}/{len(checks)} checks (U_ex examples, U_c bounds, tile score examples)")


def _scene(rng):
    def box():
        x, y = rng.uniform(0, 40, 2)
        w, h = rng.uniform(6, 14, 2)
        return BBox(x, y, x + w, y + h)
    gts = [Detection(box(), PD if rng.uniform() < 0.7 else BU, 1.0)
           for _ in range(rng.integers(0, 6))]
    preds = []
    for _ in range(rng.integers(0, 6)):
        if gts and rng.uniform() < 0.7:
            g = gts[rng.integers(len(gts))]
            j = rng.normal(0, 2, 4)
            b = BBox(g.bbox.x_min + j[0], g.bbox.y_min + j[1],
                     g.bbox.x_max + j[0] + abs(j[2]), g.bbox.y_max + j[1] + abs(j[3]))
            preds.append(Detection(b, g.class_id, float(rng.uniform())))
        else:
            preds.append(Detection(box(), PD if rng.uniform() < 0.7 else BU, float(rng.uniform())))
    return preds, gts


def test_c04_uscore_oracle(report):
    rng = np.random.default_rng(2)
    optimal = bounded = 0
    for _ in range(500):
        preds, gts = _scene(rng)
        m = match_detections(preds, gts)
        w = eligible_weights([p.bbox.as_array() for p in preds], [p.class_id for p in preds],
                             [g.bbox.as_array() for g in gts], [g.class_id for g in gts], 0.5)
        optimal += abs(m.total_iou - best_assignment_bruteforce(w)) <= 1e-9
        bounded += 0.0 <= u_score(preds, gts, m) <= 1.0
    b = BBox(0, 0, 4, 4)
    examples = [
        tile_u_score([Detection(b, PD, 1.0)], [Detection(b, PD, 1.0)])[0] == 0.0,
        tile_u_score([], [Detection(b, PD, 1.0)])[0] == 1.0,
        tile_u_score([Detection(b, PD, 0.8)], [])[0] == 1.0,
    ]
    ok = optimal == 500 and bounded == 500 and all(examples)
    report("C4 U_score matching oracle", ok,
           f"optimal {optimal}/500, in [0,1] {bounded}/500, worked examples {sum(examples)}/3")


def test_c05_clustering(report):
    rng = np.random.default_rng(3)
    agree = invariant = 0
    for _ in range(1000):
        T = int(rng.integers(1, 8))
        dets = []
        for _ in range(rng.integers(0, 7)):
            x, y = rng.uniform(0, 50, 2)
            w, h = rng.uniform(8, 20, 2)
            dets.append(Detection(BBox(x, y, x + w, y + h), PD if rng.uniform() < 0.6 else BU,
                                  float(rng.integers(0, 5)) / 4, tile_id="t",
                                  pass_id=int(rng.integers(0, T))))
        got = cluster_detections(dets, T)
        perm = cluster_detections([dets[i] for i in rng.permutation(len(dets))], T)
        invariant += len(perm) == len(got) and perm == got
        order = sorted(dets, key=_sort_key)
        ref = greedy_cluster_reference(
            [(d.confidence, *d.bbox.as_array(), d.pass_id, d.class_id) for d in order], 0.5)
        agree += len(ref) == len(got)
    a = Detection(BBox(0, 0, 30, 10), PD, 0.9, tile_id="t", pass_id=0)
    b = Detection(BBox(0, 0, 50, 10), PD, 0.8, tile_id="t", pass_id=1)
    c = Detection(BBox(20, 0, 50, 10), PD, 0.7, tile_id="t", pass_id=2)
    n_abc = len(cluster_detections([a, b, c], 3, 0.5))
    ok = invariant == 1000 and agree == 1000 and n_abc == 2
    report("C5 clustering determinism and oracle", ok,
           f"permutation-invariant {invariant}/1000, reference {agree}/1000, A/B/C -> {n_abc}")


def _blob_mask(rng, h, w):
    yy, xx = np.mgrid[:h, :w]
    r = 0.4 * min(h, w) * (1 + 0.15 * np.sin(rng.uniform(2, 6) * np.arctan2(yy - h / 2, xx - w / 2)))
    m = np.hypot(yy - h / 2 + 0.5, xx - w / 2 + 0.5) < r
    m[[0, -1], :] = False
    m[:, [0, -1]] = False
    return m


def test_c06_poisson(report):
    rng = np.random.default_rng(4)
    worst_res, worst_t = 0.0, 0.0
    for _ in range(20):
        bg = rng.uniform(0, 1, (96, 96, 3))
        patch = A.Patch(rng.uniform(0, 1, (64, 64, 3)), _blob_mask(rng, 64, 64))
        t0 = time.perf_counter()
        res = A.poisson_solve(bg, patch, tuple(int(v) for v in rng.integers(1, 31, 2)))
        worst_t = max(worst_t, time.perf_counter() - t0)
        worst_res = max(worst_res, float(np.abs(A.pde_residual(res)).max()))
    bgc = np.full((80, 80, 3), 0.25)
    const = A.poisson_blend(bgc, A.Patch(np.full((64, 64, 3), 0.8), _blob_mask(rng, 64, 64)), (8, 8))
    err_const = float(np.abs(const - bgc).max())
    bgr = rng.uniform(0, 1, (96, 96, 3))
    back = A.poisson_blend(bgr, A.Patch(bgr[10:74, 20:84], _blob_mask(rng, 64, 64)), (20, 10))
    err_paste = float(np.abs(back - bgr).max())
    ok = worst_res <= 1e-5 and err_const <= 1e-6 and err_paste <= 1e-6 and worst_t < 60
    report("C6 Poisson blending", ok,
           f"max residual {worst_res:.1e} over 20 blends (slowest {worst_t:.2f}s), "
           f"constant {err_const:.1e}, paste-back {err_paste:.1e}")


def test_c07_geospatial(report):
    rng = np.random.default_rng(5)
    pts = rng.uniform(0, 20000, (1000, 2))
    idx = SpatialIndex(pts, 760.0)
    queries_ok = sum(idx.query(q).tolist() == points_within(pts, q, 760.0)
                     for q in rng.uniform(0, 20000, (1000, 2)))
    mono = brute = 0
    for _ in range(10):
        w, h = (int(v) for v in rng.integers(2000, 8000, 2))
        plan = plan_tiles(w, h, 512, 0.3)
        b = rng.uniform(0, (w, h), (int(rng.integers(1, 20)), 2))
        pools = [geospatial_filter(plan, SpatialIndex(b, r)) for r in (100.0, 400.0, 760.0, 2000.0)]
        mono += all(p <= q for p, q in zip(pools, pools[1:]))
        brute += pools[2] == pool_bruteforce(plan.rects(), [t.tile_id for t in plan.tiles], b, 760.0)
    px = GeoTransform(0.02).meters_to_px(15.2)
    ok = queries_ok == 1000 and mono == 10 and brute == 10 and abs(px - 760.0) < 1e-9
    report("C7 geospatial pool", ok,
           f"queries {queries_ok}/1000, monotone {mono}/10, brute-force {brute}/10, 15.2 m = {px:g} px")


def test_c08_simulation(report):
    t0 = time.perf_counter()
    seeds = range(20)
    rows = [r for s in seeds for r in run_survey(s)]
    dt = time.perf_counter() - t0
    cap = {(r["strategy"], r["k"], r["seed"]): r["animals_captured"] for r in rows}

    def mean(s, k):
        return float(np.mean([cap[s, k, i] for i in seeds]))
    order_ok = True
    parts = []
    for k in (100, 500, 1000):
        m = {s: mean(s, k) for s in ALL_STRATEGIES}
        order_ok &= m["random"] <= m["geo_random"] <= max(m["geo_tta"], m["geo_uscore"])
        parts.append(f"k={k} " + "/".join(f"{m[s]:.1f}" for s in ALL_STRATEGIES))
    diffs = [cap["geo_uscore", 500, i] - cap["random", 500, i] for i in seeds]
    wins, losses = sum(d > 0 for d in diffs), sum(d < 0 for d in diffs)
    p = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
    per_seed = {r["seed"]: (r["pool_animal_tile_recall"], r["pool_size_frac"]) for r in rows}
    recall = float(np.mean([v[0] for v in per_seed.values()]))
    frac = float(np.mean([v[1] for v in per_seed.values()]))
    ok = order_ok and p < 0.05 and recall >= 0.95 and frac <= 0.35 and dt < 300
    report("C8 strategy ordering on 20 synthetic colonies", ok,
           f"captured random/geo_random/geo_tta/geo_uscore {'; '.join(parts)}; "
           f"sign test p={p:.1e} ({wins}-{losses}); pool recall {recall:.3f} at "
           f"{frac:.3f} of tiles; {dt:.0f}s")


def test_c09_augmentation(report):
    rng = np.random.default_rng(6)
    ctx = np.full((64, 64), A.DIRT, dtype=np.uint8)
    ctx[:, :20] = A.GRASS
    labels = np.array([A.sample_placement(ctx, (7, 7), 0.9, rng).label for _ in range(10_000)])
    dirt = float(np.mean(labels == A.DIRT))
    cfg = A.AugmentConfig()
    ps = [A.sample_params(rng, cfg) for _ in range(10_000)]
    in_range = all(0.9 <= p.scale <= 1.1 and -90 <= p.rotation_deg <= 90
                   and 0.8 <= p.brightness <= 1.2 and 0.9 <= p.contrast <= 1.1 for p in ps)

    def patch(kind, cls=PD):
        img = rng.uniform(0.2, 0.8, (9, 11, 3))
        m = np.zeros((9, 11), bool)
        m[2:7, 2:9] = True
        return A.Patch(img, m, kind, cls)
    pools = {A.SourceKind.LABELED: [patch(A.SourceKind.LABELED) for _ in range(3)],
             A.SourceKind.FALSE_POSITIVE: [patch(A.SourceKind.FALSE_POSITIVE) for _ in range(3)],
             A.SourceKind.FALSE_NEGATIVE: [patch(A.SourceKind.FALSE_NEGATIVE, BU) for _ in range(3)]}
    counting = 0
    for _ in range(50):
        bg = np.clip(np.full((96, 96, 3), (0.55, 0.4, 0.25)) + rng.uniform(-0.03, 0.03, (96, 96, 3)), 0, 1)
        bg[:, :20] = (0.2, 0.6, 0.2)
        existing = [Detection(BBox(70, 70, 80, 80), BU, 1.0)]
        res = A.augment_image(bg, pools, rng, cfg, existing)
        placed_params = all(0.9 <= r.params.scale <= 1.1 for r in res.placements)
        n_lab = sum(r.source_kind is not A.SourceKind.FALSE_POSITIVE for r in res.placements)
        counting += len(res.annotations) == len(existing) + n_lab and placed_params
    ok = abs(dirt - 0.9) <= 0.01 and in_range and counting == 50
    report("C9 augmentation statistics", ok,
           f"dirt share {dirt:.4f} over 10,000 placements, parameter ranges "
           f"{'respected' if in_range else 'violated'}, counting invariant {counting}/50")


def test_c10_tiling(report):
    rng = np.random.default_rng(7)
    covered = 0
    for _ in range(100):
        w, h = (int(v) for v in rng.integers(512, 4000, 2))
        plan = plan_tiles(w, h, 512, 0.3)
        grid = np.zeros((h, w), dtype=bool)
        for t in plan.tiles:
            grid[t.y0:t.y0 + 512, t.x0:t.x0 + 512] = True
        covered += bool(grid.all())
    offsets = sorted({t.x0 for t in plan_tiles(1024, 512, 512, 0.3).tiles})
    ok = covered == 100 and offsets == [0, 358, 512]
    report("C10 tiling", ok, f"full coverage {covered}/100, 1024x512 offsets {offsets}")
