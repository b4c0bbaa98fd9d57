"""``colonyscan`` command line.

Every subcommand resolves a :class:`PipelineConfig` (JSON file, then flags on
top), does its work, and writes a manifest next to its main output. Failures
print one JSON object on stderr: exit 1 for invalid input, 2 for I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import augment as aug
from . import consistency as cons
from . import formats, geoactive, sim, tiling, tta, uscore
from .config import PipelineConfig, load_config
from .geometry import ClassId, Detection, Frame, GeoTransform, read_jsonl, write_jsonl

log = logging.getLogger("colonyscan")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; that code is reserved for I/O failures
    def error(self, message):
        raise UsageError(message)


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    """Ordered map; results come back in input order whatever ``jobs`` is."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _sidecar(path) -> Path:
    path = Path(path)
    if path.is_dir():
        return path / "manifest.json"
    return path.with_name(path.name + ".manifest.json")


def _to_mosaic(dets: Sequence[Detection], plan: tiling.TilePlan) -> list[Detection]:
    by_id = plan.by_id()
    out = []
    for d in dets:
        if d.frame is Frame.MOSAIC:
            out.append(d)
            continue
        if d.tile_id not in by_id:
            raise ValueError(f"detection references unknown tile {d.tile_id!r}")
        t = by_id[d.tile_id]
        out.append(replace(d, bbox=d.bbox.shifted(t.x0, t.y0), frame=Frame.MOSAIC))
    return out


def _group_by_tile(dets: Sequence[Detection]) -> dict[str, list[Detection]]:
    groups: dict[str, list[Detection]] = {}
    for d in dets:
        groups.setdefault(d.tile_id, []).append(d)
    return dict(sorted(groups.items()))


# ---------------------------------------------------------------------------
# subcommands; each returns (inputs, outputs, manifest path)

def cmd_tile(a, cfg: PipelineConfig):
    plan = tiling.plan_tiles(a.mosaic_w, a.mosaic_h, cfg.tile_size, cfg.overlap_frac)
    out = Path(a.out)
    if out.suffix == ".csv":
        plan.write_csv(out)
    else:
        plan.write_json(out)
    if a.csv:
        plan.write_csv(a.csv)
    print(json.dumps({"tiles": len(plan), "n_cols": plan.n_cols, "n_rows": plan.n_rows}))
    return [], [out, a.csv], out


def cmd_background_sample(a, cfg):
    plan = tiling.read_plan(a.plan, cfg.tile_size, cfg.overlap_frac)
    dets = _to_mosaic(read_jsonl(a.annotations), plan) if a.annotations else []
    plan = tiling.mark_annotated(plan, [d.bbox.center for d in dets])
    n_ann = sum(bool(t.has_annotations) for t in plan.tiles)
    count = n_ann if a.count is None else a.count
    picked = tiling.sample_background_tiles(plan, count, cfg.seed)
    formats.write_rows(a.out, [asdict(t) for t in picked], ["tile_id", "x0", "y0"])
    print(json.dumps({"annotated_tiles": n_ann, "sampled": len(picked)}))
    return [a.plan, a.annotations], [a.out], a.out


def cmd_consistency(a, cfg):
    maps = [formats.read_feature_map(p) for p in (a.p3, a.p4, a.p5)]
    res = cons.consistency_loss(*maps, cfg.tri_loss_weights)
    doc = {"value": res.value, "components": res.components,
           "weights": asdict(cfg.tri_loss_weights)}
    outputs = [a.out]
    if a.grad_dir:
        gd = Path(a.grad_dir)
        gd.mkdir(parents=True, exist_ok=True)
        doc["grads"] = {}
        for name, g in zip(("p3", "p4", "p5"), res.grads):
            hdr = formats.write_feature_map(gd / f"grad_{name}.json", g)
            doc["grads"][name] = hdr.name
            outputs.append(hdr)
    with open(a.out, "w") as fh:
        json.dump(doc, fh, indent=1)
    print(json.dumps({"value": res.value, **res.components}))
    return [a.p3, a.p4, a.p5], outputs, a.out


COMPONENT_WEIGHTS = {
    "mse": cons.TriLossWeights(1.0, 0.0, 0.0),
    "kl": cons.TriLossWeights(0.0, 1.0, 0.0),
    "cos": cons.TriLossWeights(0.0, 0.0, 1.0),
}


def gradcheck_pyramid(seed: int, channels: int = 4, size: int = 8, step: float = 1e-4,
                      w: cons.TriLossWeights = cons.TriLossWeights()) -> dict:
    """Worst relative gradient error of each loss term, and of the weighted sum,
    on one random pyramid."""
    p = cons.random_pyramid(np.random.default_rng(seed), channels, size)
    out = {"seed": seed}
    for name, wt in [*COMPONENT_WEIGHTS.items(), ("combined", w)]:
        out[name] = cons.grad_check(lambda *x, wt=wt: cons.consistency_loss(*x, wt), p, step)
    return out


def _gradcheck_one(args):
    return gradcheck_pyramid(*args)


def cmd_gradcheck(a, cfg):
    seeds = [cfg.seed + i for i in range(a.n_seeds)]
    rows = _pmap(_gradcheck_one, [(s, a.channels, a.size, a.step, cfg.tri_loss_weights)
                                  for s in seeds], a.jobs)
    worst = float(max(max(r[k] for k in ("combined", "mse", "kl", "cos")) for r in rows))
    ok = bool(worst < a.tol)
    with open(a.out, "w") as fh:
        json.dump({"max_rel_error": worst, "tol": a.tol, "passed": ok, "runs": rows}, fh, indent=1)
    print(f"max relative error {worst:.3e} over {len(rows)} pyramids: {'PASS' if ok else 'FAIL'}")
    if not ok:
        raise ValueError(f"gradient check failed: {worst:.3e} >= {a.tol:g}")
    return [], [a.out], a.out


def cmd_segment(a, cfg):
    img = aug.read_png(a.image)
    lo, hi = cfg.augment.grass_hue
    ctx = aug.segment_context(img, lo, hi, cfg.augment.grass_min_sat)
    aug.write_mask(a.out, ctx == aug.GRASS)
    print(json.dumps({"grass_fraction": float(np.mean(ctx == aug.GRASS))}))
    return [a.image], [a.out], a.out


def _augment_one(job):
    bg_path, out_path, seed, pools, cfg, anns, tile_id = job
    rng = np.random.default_rng(seed)
    res = aug.augment_image(aug.read_png(bg_path), pools, rng, cfg, anns, tile_id)
    aug.write_png(out_path, res.image)
    placements = [{"tile_id": tile_id, "source_kind": r.source_kind.value,
                   "x": r.x, "y": r.y, "context": aug.LABEL_NAMES[r.label],
                   "params": asdict(r.params)} for r in res.placements]
    return [d.to_record() for d in res.annotations], placements


def cmd_augment(a, cfg):
    pools = aug.load_pool(a.pool)
    out_dir = Path(a.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_ann = _group_by_tile(read_jsonl(a.annotations)) if a.annotations else {}
    bgs = [Path(p) for p in a.backgrounds]
    n = len(bgs) * a.copies
    seeds = np.random.SeedSequence(cfg.seed).spawn(n)
    jobs, outputs = [], []
    for i, bg in enumerate(bgs):
        anns = base_ann.get(bg.stem, [])
        for j in range(a.copies):
            tid = f"{bg.stem}_aug{j}"
            anns_j = [replace(d, tile_id=tid) for d in anns]
            out = out_dir / f"{tid}.png"
            jobs.append((bg, out, seeds[i * a.copies + j], pools, cfg.augment, anns_j, tid))
            outputs.append(out)
    results = _pmap(_augment_one, jobs, a.jobs)
    with open(out_dir / "annotations.jsonl", "w") as fa, open(out_dir / "placements.jsonl", "w") as fp:
        for recs, placements in results:
            for r in recs:
                fa.write(json.dumps(r) + "\n")
            for p in placements:
                fp.write(json.dumps(p) + "\n")
    print(json.dumps({"images": len(jobs),
                      "patches": sum(len(p) for _, p in results)}))
    pool_files = [Path(a.pool) / "manifest.json"]
    return [*bgs, *pool_files, a.annotations], [*outputs, out_dir / "annotations.jsonl"], out_dir


def _load_passes(a, cfg) -> tuple[dict, int]:
    if a.passes:
        tr = formats.read_passes(a.passes)
        return tr, len(tr)
    return {}, cfg.tta_passes


def _cluster_tile(job):
    dets, transforms, T, tau = job
    if transforms:
        dets = tta.remap_passes(dets, transforms)
    return tta.cluster_detections(dets, T, tau)


def cmd_cluster(a, cfg):
    transforms, T = _load_passes(a, cfg)
    groups = _group_by_tile(read_jsonl(a.detections))
    results = _pmap(_cluster_tile, [(d, transforms, T, cfg.tau) for d in groups.values()], a.jobs)
    n = 0
    with open(a.out, "w") as fh:
        for tid, clusters in zip(groups, results):
            for c in clusters:
                b = c.representative_bbox
                fh.write(json.dumps({
                    "tile_id": tid, "class": c.class_id.value,
                    "x_min": b.x_min, "y_min": b.y_min, "x_max": b.x_max, "y_max": b.y_max,
                    "T": c.T, "members": [list(m) for m in c.member_confidences],
                }) + "\n")
                n += 1
    print(json.dumps({"tiles": len(groups), "clusters": n}))
    return [a.detections, a.passes], [a.out], a.out


def _score_tile(job):
    tid, dets, transforms, T, cfg = job
    clusters = _cluster_tile((dets, transforms, T, cfg.tau))
    return tta.tile_uncertainty(clusters, cfg.uncertainty_weights, tid, cfg.missing_pass)


def cmd_uncertainty(a, cfg):
    transforms, T = _load_passes(a, cfg)
    dets = read_jsonl(a.detections)
    mosaic = [d for d in dets if d.frame is Frame.MOSAIC]
    if mosaic:
        if len(mosaic) != len(dets) or a.plan is None:
            raise ValueError("mosaic-frame detections need --plan and may not be mixed with tile-frame ones")
        plan = tiling.read_plan(a.plan, cfg.tile_size, cfg.overlap_frac)
        ids = sorted(geoactive.read_pool(a.pool)) if a.pool else None
        res = tta.windowed_tile_scores(plan, dets, T, ids, cfg.tau,
                                       cfg.uncertainty_weights, cfg.missing_pass)
        scores = [res[t] for t in sorted(res)]
    else:
        groups = _group_by_tile(dets)
        scores = _pmap(_score_tile, [(t, d, transforms, T, cfg) for t, d in groups.items()], a.jobs)
    rows = [{"tile_id": u.tile_id, "score": repr(u.score),
             "n_pd": u.counts.get(ClassId.PRAIRIE_DOG, 0),
             "n_burrow": u.counts.get(ClassId.BURROW, 0)} for u in scores]
    formats.write_rows(a.out, rows, ["tile_id", "score", "n_pd", "n_burrow"])
    outputs = [a.out]
    if a.breakdown:
        with open(a.breakdown, "w") as fh:
            json.dump([u.to_json() for u in scores], fh, indent=1)
        outputs.append(a.breakdown)
    print(json.dumps({"tiles": len(rows), "T": T}))
    return [a.detections, a.passes, a.plan, a.pool], outputs, a.out


def _uscore_tile(job):
    tid, preds, gts, thr = job
    s, m = uscore.tile_u_score(preds, gts, thr)
    return {"tile_id": tid, "u_score": repr(s), "n_matched": len(m.matches),
            "n_fn": len(m.unmatched_gts), "n_fp": len(m.unmatched_preds)}


def cmd_uscore(a, cfg):
    preds = _group_by_tile(read_jsonl(a.preds))
    gts = _group_by_tile(read_jsonl(a.gts))
    tiles = sorted(set(preds) | set(gts))
    rows = _pmap(_uscore_tile, [(t, preds.get(t, []), gts.get(t, []), cfg.uscore_iou)
                                for t in tiles], a.jobs)
    formats.write_rows(a.out, rows, ["tile_id", "u_score", "n_matched", "n_fn", "n_fp"])
    print(json.dumps({"tiles": len(rows)}))
    return [a.preds, a.gts], [a.out], a.out


def cmd_filter(a, cfg):
    plan = tiling.read_plan(a.plan, cfg.tile_size, cfg.overlap_frac)
    dets = _to_mosaic(read_jsonl(a.detections), plan)
    if a.pass_id is not None:
        dets = [d for d in dets if d.pass_id == a.pass_id]
    geo = GeoTransform(cfg.gsd)
    index = geoactive.build_spatial_index(dets, cfg.burrow_conf_threshold, geo, cfg.radius_m)
    pool = geoactive.geospatial_filter(plan, index)
    geoactive.write_pool(a.out, pool)
    print(json.dumps({"burrows": len(index), "pool": len(pool), "tiles": len(plan),
                      "radius_px": index.radius_px}))
    return [a.plan, a.detections], [a.out], a.out


def cmd_rank(a, cfg):
    pool = geoactive.read_pool(a.pool)
    scores = formats.read_scores(a.scores) if a.scores else None
    plan = tiling.read_plan(a.plan, cfg.tile_size, cfg.overlap_frac) if a.plan else None
    universe = plan if plan is not None else pool
    batch = geoactive.rank_tiles(pool, scores, a.strategy, a.k, cfg.seed, plan=universe)
    batch.metadata = {"pool_file": str(a.pool), "scores_file": a.scores and str(a.scores),
                      "random_universe": "plan" if plan is not None else "pool"}
    if batch.truncated:
        log.warning("k=%d exceeds the %d eligible tiles; returning all of them", a.k, batch.pool_size)
    batch.write(a.out)
    print(json.dumps({"selected": len(batch.tiles), "truncated": batch.truncated}))
    return [a.pool, a.scores, a.plan], [a.out], a.out


def _sim_configs(cfg: PipelineConfig, seed: int):
    s_colony, s_detect, s_rank = (int(s) for s in np.random.SeedSequence(seed).generate_state(3))
    return replace(cfg.colony, seed=s_colony), s_detect, s_rank


def _eval_config(cfg: PipelineConfig) -> sim.EvalConfig:
    return sim.EvalConfig(cfg.radius_m, cfg.burrow_conf_threshold, cfg.tau,
                          cfg.uncertainty_weights, cfg.uscore_iou)


def cmd_simulate(a, cfg):
    colony, s_detect, _ = _sim_configs(cfg, cfg.seed)
    truth = sim.generate_colony(colony)
    passes = sim.simulate_detector(truth, cfg.noise, cfg.tta_passes, s_detect)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth.plan.write_json(out / "plan.json")
    write_jsonl(out / "truth.jsonl", truth.detections())
    write_jsonl(out / "detections.jsonl", [d for p in passes for d in p])
    print(json.dumps({"tiles": len(truth.plan), "burrows": len(truth.burrows),
                      "animals": len(truth.animals),
                      "detections": sum(len(p) for p in passes)}))
    return [], [out / "plan.json", out / "truth.jsonl", out / "detections.jsonl"], out


def _parse_ints(text: str) -> list[int]:
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError(f"empty integer list {text!r}")
    return out


def _evaluate_seed(job):
    seed, ks, strategies, cfg = job
    return sim.run_survey(seed, ks, strategies, cfg.colony, cfg.noise, cfg.tta_passes,
                          _eval_config(cfg))


EVAL_COLUMNS = ["seed", "strategy", "k", "n_selected", "animal_tile_recall", "animals_captured",
                "n_animals", "pool_size", "pool_size_frac", "pool_animal_tile_recall"]


def cmd_evaluate(a, cfg):
    if a.all_strategies == bool(a.strategy):
        raise ValueError("give exactly one of --strategy or --all-strategies")
    strategies = list(sim.ALL_STRATEGIES) if a.all_strategies else [geoactive.Strategy(a.strategy).value]
    ks = _parse_ints(a.k)
    if min(ks) < 1:
        raise ValueError("budgets must be >= 1")
    # per-survey seeds descend from the root seed unless listed explicitly
    seeds = _parse_ints(a.seeds) if a.seeds else [cfg.seed + i for i in range(a.n_seeds)]
    results = _pmap(_evaluate_seed, [(s, ks, strategies, cfg) for s in seeds], a.jobs)
    rows = [r for rs in results for r in rs]
    formats.write_rows(a.out, rows, EVAL_COLUMNS)
    summary = {}
    for r in rows:
        summary.setdefault(f"{r['strategy']}@{r['k']}", []).append(r["animals_captured"])
    print(json.dumps({key: float(np.mean(v)) for key, v in summary.items()}))
    return [], [a.out], a.out


def cmd_heatmap(a, cfg):
    f = formats.read_feature_map(a.feature)
    h = cons.channel_mean_heatmap(f)
    if str(a.out).endswith(".npy"):
        np.save(a.out, h)
    else:
        aug.write_png(a.out, np.repeat(h[:, :, None], 3, axis=2))
    return [a.feature], [a.out], a.out


def cmd_replay(a, cfg):
    m = formats.read_manifest(a.manifest)
    argv = list(m["argv"])
    # drop any config reference and feed the recorded, fully resolved config instead
    cleaned = []
    skip = False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--config":
            skip = True
            continue
        if tok.startswith("--config="):
            continue
        cleaned.append(tok)
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(m["config"], fh)
    code = main([*cleaned, "--config", fh.name])
    Path(fh.name).unlink()
    if code:
        raise ValueError(f"replayed command exited with status {code}")
    return [], [], None


# ---------------------------------------------------------------------------
# argument parsing

def _cfg_flag(p, flag, key, type_, help_=None):
    p.add_argument(flag, dest=f"cfg:{key}", type=type_, default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config; flags override it")
    _cfg_flag(common, "--seed", "seed", int, "root seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--manifest", help="manifest path (default: beside the main output)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="colonyscan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("tile", cmd_tile, "plan overlapping tiles over a mosaic")
    sp.add_argument("--mosaic-w", type=int, required=True)
    sp.add_argument("--mosaic-h", type=int, required=True)
    _cfg_flag(sp, "--tile-size", "tile_size", int)
    _cfg_flag(sp, "--overlap", "overlap_frac", float)
    sp.add_argument("--out", required=True, help="plan .json (or .csv)")
    sp.add_argument("--csv", help="also write the CSV export here")

    sp = add("background-sample", cmd_background_sample, "sample tiles without annotations")
    sp.add_argument("--plan", required=True)
    sp.add_argument("--annotations", help="annotation JSONL (tile or mosaic frame)")
    sp.add_argument("--count", type=int, help="default: number of annotated tiles")
    _cfg_flag(sp, "--tile-size", "tile_size", int)
    _cfg_flag(sp, "--overlap", "overlap_frac", float)
    sp.add_argument("--out", required=True)

    sp = add("consistency", cmd_consistency, "cross-scale consistency loss and gradients")
    for lvl in ("p3", "p4", "p5"):
        sp.add_argument(f"--{lvl}", required=True, help="feature map header JSON")
    _cfg_flag(sp, "--alpha", "tri_loss_weights.alpha", float)
    _cfg_flag(sp, "--beta", "tri_loss_weights.beta", float)
    _cfg_flag(sp, "--gamma", "tri_loss_weights.gamma", float)
    sp.add_argument("--out", required=True)
    sp.add_argument("--grad-dir")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the loss gradients")
    sp.add_argument("--n-seeds", type=int, default=20)
    sp.add_argument("--channels", type=int, default=4)
    sp.add_argument("--size", type=int, default=8)
    sp.add_argument("--step", type=float, default=1e-4)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--out", default="gradcheck.json")

    sp = add("segment", cmd_segment, "grass/dirt habitat mask of an RGB tile")
    sp.add_argument("--image", required=True)
    _cfg_flag(sp, "--hue-lo", "augment.grass_hue_lo", float)
    _cfg_flag(sp, "--hue-hi", "augment.grass_hue_hi", float)
    _cfg_flag(sp, "--s-min", "augment.grass_min_sat", float)
    sp.add_argument("--out", required=True, help="mask PNG, white = grass")

    sp = add("augment", cmd_augment, "blend hard patches into background tiles")
    sp.add_argument("--backgrounds", nargs="+", required=True)
    sp.add_argument("--pool", required=True, help="patch pool directory")
    sp.add_argument("--annotations", help="existing annotations keyed by background file stem")
    sp.add_argument("--copies", type=int, default=1)
    _cfg_flag(sp, "--dirt-fraction", "augment.dirt_fraction", float)
    sp.add_argument("--out-dir", required=True)

    for name, fn, help_ in (("cluster", cmd_cluster, "group TTA detections into instances"),
                            ("uncertainty", cmd_uncertainty, "TTA uncertainty score per tile")):
        sp = add(name, fn, help_)
        sp.add_argument("--detections", required=True)
        sp.add_argument("--passes", help="TTA pass list JSON (tile-frame detections)")
        _cfg_flag(sp, "--tau", "tau", float)
        _cfg_flag(sp, "--T", "tta_passes", int, "number of passes when --passes is absent")
        sp.add_argument("--out", required=True)
        if name == "uncertainty":
            sp.add_argument("--plan", help="tile plan for mosaic-frame detections")
            sp.add_argument("--pool", help="only score these tiles")
            sp.add_argument("--breakdown", help="per-instance JSON breakdown")
            _cfg_flag(sp, "--missing", "missing_pass", str)

    sp = add("uscore", cmd_uscore, "prediction-error score per tile")
    sp.add_argument("--preds", required=True)
    sp.add_argument("--gts", required=True)
    _cfg_flag(sp, "--iou", "uscore_iou", float)
    sp.add_argument("--out", required=True)

    sp = add("filter", cmd_filter, "burrow-proximity candidate pool")
    sp.add_argument("--plan", required=True)
    sp.add_argument("--detections", required=True)
    _cfg_flag(sp, "--radius-m", "radius_m", float)
    _cfg_flag(sp, "--gsd", "gsd", float)
    _cfg_flag(sp, "--conf-threshold", "burrow_conf_threshold", float)
    _cfg_flag(sp, "--tile-size", "tile_size", int)
    _cfg_flag(sp, "--overlap", "overlap_frac", float)
    sp.add_argument("--pass-id", type=int, help="use only this pass's detections")
    sp.add_argument("--out", required=True)

    sp = add("rank", cmd_rank, "select a batch of tiles for annotation")
    sp.add_argument("--pool", required=True)
    sp.add_argument("--scores", help="CSV with tile_id,score")
    sp.add_argument("--plan", help="full plan (the random strategy samples all of it)")
    sp.add_argument("--strategy", required=True, choices=[s.value for s in geoactive.Strategy])
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = add("simulate", cmd_simulate, "synthetic colony and detector passes")
    _cfg_flag(sp, "--n-animals", "colony.n_animals", int)
    _cfg_flag(sp, "--T", "tta_passes", int)
    sp.add_argument("--out-dir", required=True)

    sp = add("evaluate", cmd_evaluate, "compare acquisition strategies on synthetic surveys")
    sp.add_argument("--strategy", choices=[s.value for s in geoactive.Strategy])
    sp.add_argument("--all-strategies", action="store_true")
    sp.add_argument("--k", default="100,500,1000", help="comma-separated budgets")
    sp.add_argument("--seeds", help="e.g. 0-19 or 1,4,9")
    sp.add_argument("--n-seeds", type=int, default=1)
    _cfg_flag(sp, "--T", "tta_passes", int)
    sp.add_argument("--out", required=True)

    sp = add("heatmap", cmd_heatmap, "channel-mean heatmap of a feature map")
    sp.add_argument("--feature", required=True)
    sp.add_argument("--out", required=True, help=".png or .npy")

    sp = add("replay", cmd_replay, "rerun a command from its manifest")
    sp.add_argument("manifest")
    return p


def resolve_config(a) -> PipelineConfig:
    overrides = {k[4:]: v for k, v in vars(a).items() if k.startswith("cfg:")}
    lo = overrides.pop("augment.grass_hue_lo", None)
    hi = overrides.pop("augment.grass_hue_hi", None)
    if lo is not None or hi is not None:
        base = load_config(a.config).augment.grass_hue
        overrides["augment.grass_hue"] = [base[0] if lo is None else lo,
                                          base[1] if hi is None else hi]
    return load_config(a.config, overrides)


def _fail(kind: str, exc: BaseException, code: int) -> int:
    doc = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, aug.ConvergenceError):
        doc["residual"] = exc.residual
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        a = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if a.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = resolve_config(a)
        inputs, outputs, anchor = a.func(a, cfg)
        if anchor is not None:
            formats.write_manifest(a.manifest or _sidecar(anchor), a.command, argv, cfg,
                                   cfg.seed, inputs, outputs)
    except OSError as exc:
        return _fail("io", exc, 2)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail("validation", exc, 1)
    except aug.ConvergenceError as exc:
        return _fail("convergence", exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
