import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colonyscan.tiling import (
    TilePlan, mark_annotated, neighborhood, plan_tiles, read_plan,
    sample_background_tiles, tile_indices_containing, tiles_containing,
)


def covered(plan):
    grid = np.zeros((plan.mosaic_h, plan.mosaic_w), dtype=np.int32)
    s = plan.tile_size
    for t in plan.tiles:
        grid[t.y0:t.y0 + s, t.x0:t.x0 + s] += 1
    return grid


def test_exact_fit():
    plan = plan_tiles(512, 512)
    assert [(t.x0, t.y0) for t in plan.tiles] == [(0, 0)]


def test_worked_example_offsets():
    plan = plan_tiles(1024, 512, 512, 0.30)
    assert plan.stride == 358
    assert sorted({t.x0 for t in plan.tiles}) == [0, 358, 512]
    assert len(plan) == 3


def test_no_overlap():
    plan = plan_tiles(1024, 512, 512, 0.0)
    assert sorted({t.x0 for t in plan.tiles}) == [0, 512]


def test_row_major_ids():
    plan = plan_tiles(1500, 1200, 512, 0.3)
    assert plan.tiles[0].tile_id == "r0_c0"
    assert plan.tiles[1].tile_id == "r0_c1"
    assert plan.tiles[plan.n_cols].tile_id == "r1_c0"
    assert len(plan) == plan.n_cols * plan.n_rows
    assert plan_tiles(1500, 1200, 512, 0.3) == plan


@pytest.mark.parametrize("w,h,ov", [(511, 600, 0.3), (600, 100, 0.3), (600, 600, 1.0),
                                    (600, 600, -0.1)])
def test_invalid(w, h, ov):
    with pytest.raises(ValueError):
        plan_tiles(w, h, 512, ov)


@settings(max_examples=60, deadline=None)
@given(st.integers(64, 900), st.integers(64, 900), st.integers(16, 64),
       st.floats(0.0, 0.9))
def test_coverage_and_bounds(w, h, s, ov):
    plan = plan_tiles(w, h, s, ov)
    assert covered(plan).min() >= 1
    for t in plan.tiles:
        assert 0 <= t.x0 <= w - s and 0 <= t.y0 <= h - s
    xs = [t.x0 for t in plan.tiles[:plan.n_cols]]
    assert xs == sorted(set(xs))


@settings(max_examples=60, deadline=None)
@given(st.integers(16, 512), st.floats(0.05, 0.9))
def test_interior_overlap_width(s, ov):
    plan = plan_tiles(6 * s, s, s, ov)
    xs = [t.x0 for t in plan.tiles]
    shared = s - (xs[1] - xs[0])
    assert shared == s - plan.stride
    assert abs(shared - math.ceil(s * ov)) <= 1


class TestContaining:
    plan = plan_tiles(1024, 512, 512, 0.30)

    def test_examples(self):
        assert [t.x0 for t in tiles_containing((0, 0), self.plan)] == [0]
        assert sorted(t.x0 for t in tiles_containing((400, 100), self.plan)) == [0, 358]
        assert [(t.x0, t.y0) for t in tiles_containing((1023, 511), self.plan)] == [(512, 0)]

    def test_outside(self):
        with pytest.raises(ValueError):
            tiles_containing((1024, 0), self.plan)

    def test_vectorised_agrees(self):
        rng = np.random.default_rng(0)
        plan = plan_tiles(2000, 1500, 256, 0.3)
        pts = rng.uniform((0, 0), (2000, 1500), (300, 2))
        got = tile_indices_containing(pts, plan)
        for p, idx in zip(pts, got):
            want = [plan.tiles.index(t) for t in tiles_containing(p, plan)]
            assert list(idx) == want
            assert len(want) >= 1


def test_neighborhood():
    plan = plan_tiles(2048, 2048, 512, 0.3)
    ids = {t.tile_id for t in neighborhood(plan, "r0_c0")}
    assert ids == {"r0_c0", "r0_c1", "r1_c0", "r1_c1"}
    assert len(neighborhood(plan, "r2_c2")) == 9


class TestBackground:
    def test_requires_flags(self):
        with pytest.raises(ValueError):
            sample_background_tiles(plan_tiles(1024, 1024), 1)

    def test_zero_and_determinism(self):
        plan = mark_annotated(plan_tiles(4000, 4000, 512, 0.3), [(10, 10), (3000, 3000)])
        assert sample_background_tiles(plan, 0, 1) == []
        a = sample_background_tiles(plan, 20, 5)
        assert a == sample_background_tiles(plan, 20, 5)
        assert len({t.tile_id for t in a}) == 20
        assert not any(t.has_annotations for t in a)

    def test_insufficient(self):
        plan = mark_annotated(plan_tiles(1024, 512, 512, 0.3), [(600, 100)])
        assert sum(not t.has_annotations for t in plan.tiles) == 1
        with pytest.raises(ValueError):
            sample_background_tiles(plan, 2)

    def test_hypergeometric_overlap(self):
        # 1000 background tiles, two samples of 100: expected overlap 100*100/1000
        plan = plan_tiles(512 + 999, 512, 512, 1 - 1 / 512)
        assert len(plan) == 1000
        plan = mark_annotated(plan, [])
        overlaps = []
        for s in range(400):
            a = {t.tile_id for t in sample_background_tiles(plan, 100, 2 * s)}
            b = {t.tile_id for t in sample_background_tiles(plan, 100, 2 * s + 1)}
            overlaps.append(len(a & b))
        # hypergeometric sd ~2.85, so the mean of 400 pairs has sd ~0.14
        assert abs(np.mean(overlaps) - 10.0) < 0.6


class TestSerialisation:
    def test_json_roundtrip(self, tmp_path):
        plan = mark_annotated(plan_tiles(1400, 900, 256, 0.25), [(5, 5)])
        p = tmp_path / "plan.json"
        plan.write_json(p)
        assert read_plan(p) == plan

    def test_csv_roundtrip(self, tmp_path):
        plan = plan_tiles(1400, 900, 256, 0.25)
        p = tmp_path / "plan.csv"
        plan.write_csv(p)
        assert p.read_text().splitlines()[0] == "tile_id,x0,y0"
        assert read_plan(p, 256, 0.25) == plan
        with pytest.raises(ValueError):
            read_plan(p, 256, 0.5)

    def test_tampered_json(self):
        data = plan_tiles(1024, 512).to_json()
        data["tiles"][1]["x0"] += 1
        with pytest.raises(ValueError):
            TilePlan.from_json(data)
