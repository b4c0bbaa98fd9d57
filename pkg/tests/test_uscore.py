import numpy as np
import pytest

from colonyscan.geometry import BBox, ClassId, Detection
from colonyscan.uscore import _lexmin_optimal, match_detections, tile_u_score, u_score
from oracles import best_assignment_bruteforce, eligible_weights

PD, BU = ClassId.PRAIRIE_DOG, ClassId.BURROW


def det(x0, y0, x1, y1, conf=1.0, cls=PD):
    return Detection(BBox(x0, y0, x1, y1), cls, conf)


def random_scene(rng, max_n=5):
    def one():
        x, y = rng.uniform(0, 40, 2)
        w, h = rng.uniform(6, 14, 2)
        return (x, y, x + w, y + h), PD if rng.uniform() < 0.7 else BU
    gts = [det(*b, 1.0, c) for b, c in (one() for _ in range(rng.integers(0, max_n + 1)))]
    preds = []
    for _ in range(rng.integers(0, max_n + 1)):
        if gts and rng.uniform() < 0.7:
            g = gts[rng.integers(len(gts))]
            jit = rng.normal(0, 2, 4)
            x0, y0 = g.bbox.x_min + jit[0], g.bbox.y_min + jit[1]
            preds.append(det(x0, y0, x0 + g.bbox.width + abs(jit[2]), y0 + g.bbox.height + abs(jit[3]),
                             float(rng.uniform()), g.class_id))
        else:
            b, c = one()
            preds.append(det(*b, float(rng.uniform()), c))
    return preds, gts


class TestMatching:
    def test_empty(self):
        m = match_detections([], [])
        assert m.matches == [] and m.unmatched_gts == [] and m.unmatched_preds == []

    def test_exact_single(self):
        m = match_detections([det(0, 0, 4, 4, 0.6)], [det(0, 0, 4, 4)])
        assert m.matches == [(0, 0, 1.0)]

    def test_cross_class_not_matched(self):
        m = match_detections([det(0, 0, 4, 4, 0.6, BU)], [det(0, 0, 4, 4)])
        assert m.matches == [] and m.unmatched_preds == [0] and m.unmatched_gts == [0]

    def test_optimal_beats_greedy(self):
        w = np.array([[0.9, 0.8], [0.7, 0.0]])
        assert _lexmin_optimal(w) == [(0, 1), (1, 0)]

    def test_lexicographic_ties(self):
        m = match_detections([det(0, 0, 4, 4, 0.3), det(0, 0, 4, 4, 0.9)], [det(0, 0, 4, 4)])
        assert m.matches == [(0, 0, 1.0)] and m.unmatched_preds == [1]
        m = match_detections([det(0, 0, 4, 4)], [det(0, 0, 4, 4), det(0, 0, 4, 4)])
        assert m.matches == [(0, 0, 1.0)] and m.unmatched_gts == [1]
        assert _lexmin_optimal(np.full((2, 2), 0.6)) == [(0, 0), (1, 1)]

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            match_detections([], [], 0.0)

    def test_oracle_500_tiles(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            preds, gts = random_scene(rng)
            m = match_detections(preds, gts)
            w = eligible_weights([p.bbox.as_array() for p in preds], [p.class_id for p in preds],
                                 [g.bbox.as_array() for g in gts], [g.class_id for g in gts], 0.5)
            assert m.total_iou == pytest.approx(best_assignment_bruteforce(w), abs=1e-9)
            ps = [p for p, _, _ in m.matches]
            gs = [g for _, g, _ in m.matches]
            assert len(set(ps)) == len(ps) and len(set(gs)) == len(gs)
            for p, g, v in m.matches:
                assert preds[p].class_id == gts[g].class_id and v >= 0.5
            assert sorted(ps + m.unmatched_preds) == list(range(len(preds)))
            assert sorted(gs + m.unmatched_gts) == list(range(len(gts)))
            assert 0.0 <= u_score(preds, gts, m) <= 1.0


class TestUScore:
    def test_perfect(self):
        gts = [det(0, 0, 4, 4), det(10, 10, 15, 15, cls=BU)]
        assert tile_u_score([det(0, 0, 4, 4), det(10, 10, 15, 15, cls=BU)], gts)[0] == 0.0

    def test_missed_gt(self):
        assert tile_u_score([], [det(0, 0, 4, 4)])[0] == 1.0

    def test_lone_fp(self):
        assert tile_u_score([det(0, 0, 4, 4, 0.8)], [])[0] == 1.0
        # even a zero-confidence false alarm costs a half
        assert tile_u_score([det(0, 0, 4, 4, 0.0)], [])[0] == 0.5

    def test_empty_tile(self):
        assert tile_u_score([], [])[0] == 0.0

    def test_mixed_by_hand(self):
        preds = [det(0, 0, 4, 4, 0.5), det(50, 50, 54, 54, 0.2)]
        gts = [det(0, 0, 4, 4), det(20, 20, 24, 24)]
        # matched 1 - 0.5, one miss, one FP at 0.7, over 2 + 2 - 1
        assert tile_u_score(preds, gts)[0] == pytest.approx((0.5 + 1 + 0.7) / 3, abs=1e-15)

    def test_zero_only_when_perfect(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            preds, gts = random_scene(rng)
            s, m = tile_u_score(preds, gts)
            perfect = (not m.unmatched_preds and not m.unmatched_gts
                       and all(preds[p].confidence * v == 1.0 for p, _, v in m.matches))
            assert (s == 0.0) == (perfect or not (preds or gts))

    def test_duplication_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            preds, gts = random_scene(rng)
            shift = lambda ds: [Detection(x.bbox.shifted(500, 0), x.class_id, x.confidence)
                                for x in ds]
            a = tile_u_score(preds, gts)[0]
            b = tile_u_score(preds + shift(preds), gts + shift(gts))[0]
            assert b == pytest.approx(a, abs=1e-12)
