"""Command-line entry point: generate | lut | search | eval | bench.

Dataset layout written by ``generate``::

    <out>/dataset.json          resolved experiment config (sorted keys)
    <out>/manifest.jsonl        one GroundTruth record per instance
    <out>/satellite/<id>.fmap   noisy satellite feature map
    <out>/street/<id>.fmap      street feature map

``search`` writes JSON lines, ``eval`` CSV + Markdown, ``bench`` CSV.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError, PetalSearchError
from .features import FeatureMap, PetalFeature, normalize, pool_satellite
from .geometry import DEFAULT_GROUND_RES, DEFAULT_ZONE_BOUNDS_M, PetalLUT, PetalSpec, build_lut
from .matchmaker import DEFAULT_CS_FACTOR, DEFAULT_DELTA_SCALE, DEFAULT_RHO, PriorConfig
from .metrics import (EvalRecord, level_contrastive, matched_crop, reconstruction_l2, report_markdown,
                      report_rows, summarize)
from .search import (DEFAULT_REFINE_FACTOR, DEFAULT_THETAS, count_regular_levels, flat_search,
                     luts_for_plan, plan_levels, run_search, street_features_for_plan)
from .synthworld import GroundTruth, SceneConfig, make_instance

log = logging.getLogger("petalsearch")

MANIFEST = "manifest.jsonl"
DATASET_META = "dataset.json"
TIMING_FIELDS = ("elapsed_s",)

_SCENE_FIELDS = {f.name for f in dataclasses.fields(SceneConfig)} - {"seed"}
_SCHEMA: dict[str, Any] = {
    "scene": _SCENE_FIELDS,
    "plan": {"n_s", "n_s_prime", "thetas"},
    "prior": {"noise_deg", "rho", "delta_scale"},
    "search": {"mode", "cs_factor", "refine_factor", "stride"},
    "seeds": None,
    "seed": None,
    "count": None,
    "output": None,
    "workers": None,
}


# -- configuration --------------------------------------------------------


def _line_map(node, path=(), out=None) -> dict:
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            _line_map(v, path + (k.value,), out)
    return out


def load_config_text(text: str, source: str = "<config>") -> dict:
    """Parse and validate an experiment config; errors name the field and line."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: malformed YAML: {exc}") from None
    if data is None:
        data = {}
    lines = _line_map(node) if node is not None else {}

    def fail(path, msg):
        line = lines.get(tuple(path), lines.get(tuple(path[:-1]), "?"))
        raise ConfigError(f"{source}:{line}: {'.'.join(map(str, path))}: {msg}")

    if not isinstance(data, dict):
        fail(("<root>",), "top level must be a mapping")
    for key, value in data.items():
        if key not in _SCHEMA:
            fail((key,), "unknown key")
        allowed = _SCHEMA[key]
        if allowed is not None:
            if not isinstance(value, dict):
                fail((key,), "must be a mapping")
            for sub in value:
                if sub not in allowed:
                    fail((key, sub), "unknown key")
    if "seeds" in data and ("seed" in data or "count" in data):
        fail(("seeds",), "give either 'seeds' or 'seed'/'count', not both")
    if "seeds" in data:
        seeds = data["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            fail(("seeds",), "must be a non-empty list of integers")
    for key in ("seed", "count", "workers"):
        if key in data and not isinstance(data[key], int):
            fail((key,), "must be an integer")
    if data.get("count", 1) < 1:
        fail(("count",), "must be >= 1")

    try:
        scene = _scene_kwargs(data.get("scene", {}))
        SceneConfig(seed=0, **scene)
    except (ConfigError, TypeError, ValueError) as exc:
        named = [k for k in data.get("scene", {}) if k in str(exc)]
        fail(("scene", named[0]) if named else ("scene",), str(exc))
    plan = data.get("plan", {})
    for key in ("n_s", "n_s_prime"):
        if key in plan and not isinstance(plan[key], int):
            fail(("plan", key), "must be an integer")
    if "thetas" in plan and not (isinstance(plan["thetas"], list) and plan["thetas"]):
        fail(("plan", "thetas"), "must be a non-empty list")
    search = data.get("search", {})
    if search.get("mode", "multiscale") not in ("multiscale", "flat"):
        fail(("search", "mode"), "must be 'multiscale' or 'flat'")
    for key in ("cs_factor", "refine_factor", "stride"):
        if key in search and not (isinstance(search[key], int) and search[key] >= 1):
            fail(("search", key), "must be a positive integer")
    prior = data.get("prior", {})
    for key in ("noise_deg", "rho", "delta_scale"):
        if key in prior and not isinstance(prior[key], (int, float)):
            fail(("prior", key), "must be a number")
    try:
        resolve_plan(data)
    except ConfigError as exc:
        fail(("plan",), str(exc))
    return data


def load_config(path) -> dict:
    with open(path) as fh:
        return load_config_text(fh.read(), str(path))


def _scene_kwargs(scene: dict) -> dict:
    kw = dict(scene)
    for key in ("blob_sigma", "zone_bounds_m"):
        if key in kw:
            kw[key] = tuple(kw[key])
    return kw


def seed_list(cfg: dict, base_override: Optional[int] = None) -> list[int]:
    if "seeds" in cfg and base_override is None:
        return list(cfg["seeds"])
    count = cfg.get("count", len(cfg["seeds"]) if "seeds" in cfg else 1)
    base = cfg.get("seed", 0) if base_override is None else base_override
    return list(range(base, base + count))


def scene_config(cfg: dict, seed: int) -> SceneConfig:
    return SceneConfig(seed=seed, **_scene_kwargs(cfg.get("scene", {})))


def resolve_plan(cfg: dict):
    scene = scene_config(cfg, 0)
    p = cfg.get("plan", {})
    n_s, n_sp = p.get("n_s", 4), p.get("n_s_prime", 3)
    thetas = p.get("thetas")
    if thetas is None:
        thetas = _default_thetas(scene, n_s, n_sp)
    return plan_levels(scene.map_side, n_s, n_sp, [float(t) for t in thetas])


def _default_thetas(scene: SceneConfig, n_s: int, n_sp: int) -> list[float]:
    n_levels = count_regular_levels(scene.map_side / 2, n_s) + 1
    base = list(DEFAULT_THETAS[:n_levels])
    base += [DEFAULT_THETAS[-1]] * (n_levels - len(base))
    return base


# -- generate -------------------------------------------------------------


def cmd_generate(args, cfg: dict) -> int:
    out = Path(args.out or cfg.get("output") or "dataset")
    (out / "satellite").mkdir(parents=True, exist_ok=True)
    (out / "street").mkdir(parents=True, exist_ok=True)
    seeds = seed_list(cfg, args.seed)
    meta = dict(cfg)
    meta.pop("output", None)
    meta.pop("workers", None)
    meta["seeds"] = seeds
    meta.pop("seed", None)
    meta.pop("count", None)
    jobs = [(str(out), cfg, idx, seed) for idx, seed in enumerate(seeds)]
    lines = _run_jobs(_generate_one, jobs, args.workers)
    (out / MANIFEST).write_text("\n".join(lines) + "\n")
    (out / DATASET_META).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    print(f"wrote {len(seeds)} instances to {out}")
    return 0


def _generate_one(job) -> str:
    out, cfg, idx, seed = job
    inst_id = f"{idx:05d}"
    sc = scene_config(cfg, seed)
    inst = make_instance(sc, instance_id=inst_id)
    inst.satellite.save(Path(out) / "satellite" / f"{inst_id}.fmap")
    inst.street.save(Path(out) / "street" / f"{inst_id}.fmap")
    rec = {"id": inst_id, "seed": seed, "satellite": f"satellite/{inst_id}.fmap",
           "street": f"street/{inst_id}.fmap", "fov": sc.fov, "ground_res": sc.ground_res,
           "prior_noise_deg": sc.prior_noise_deg, **inst.gt.as_dict()}
    return json.dumps(rec, sort_keys=True)


def read_manifest(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def gt_from_record(rec: dict) -> GroundTruth:
    return GroundTruth(
        gt_location=(rec["gt_y"], rec["gt_x"]),
        gt_theta=rec["gt_theta"],
        prior_location=(rec["prior_y"], rec["prior_x"]),
        prior_theta=rec["prior_theta"],
        shift=(rec["shift_x_m"], rec["shift_y_m"]),
    )


# -- search ---------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class SearchJob:
    dataset: str
    record: dict
    cfg: dict
    mode: str
    stride: int
    cs_factor: int
    refine_factor: int
    prior_theta: Optional[float]
    prior_noise: Optional[float]
    prior_rho: float
    prior_delta_scale: float


def _prior_for(job: SearchJob, finest_bin: float) -> Optional[PriorConfig]:
    noise = job.prior_noise
    if noise is None:
        noise = job.record.get("prior_noise_deg") or None
    if noise is None:
        return None
    theta = job.record["prior_theta"] if job.prior_theta is None else job.prior_theta
    # an exact prior still needs a finite width: one output bin
    return PriorConfig(theta % 360.0, max(float(noise), finest_bin), job.prior_rho, job.prior_delta_scale)


def search_one(job: SearchJob) -> dict:
    rec = job.record
    try:
        base = Path(job.dataset)
        sat = FeatureMap.load(base / rec["satellite"])
        street = FeatureMap.load(base / rec["street"])
        if sat.ground_res is None:
            raise ConfigError("satellite map carries no ground resolution")
        scene = scene_config(job.cfg, rec["seed"])
        plan = resolve_plan(job.cfg)
        if sat.height != plan.map_side:
            raise ConfigError(f"satellite side {sat.height} does not match plan map side {plan.map_side}")
        luts = luts_for_plan(plan, scene.zone_bounds_m, sat.ground_res)
        feats = street_features_for_plan(street, plan, rec["fov"], scene.finest_spec().n_z)
        prior = _prior_for(job, plan.levels[-1].theta_a / job.cs_factor)
        t0 = time.perf_counter()
        if job.mode == "flat":
            res = flat_search(sat, feats[-1], luts[-1], job.stride, prior, plan.search_side, job.cs_factor)
        else:
            res = run_search(sat, feats, plan, luts, prior, job.cs_factor, job.refine_factor)
        elapsed = time.perf_counter() - t0
        fine = normalize(_sat_feature(sat, res.pixel, luts[-1]))
        l2 = reconstruction_l2(feats[-1], matched_crop(fine, res.orientation, rec["fov"]))
        per_level = [tr.as_dict() for tr in res.trace] if job.mode == "multiscale" else []
        return {
            "id": rec["id"],
            "pred_y": res.location[0],
            "pred_x": res.location[1],
            "pred_theta": res.orientation,
            "pixel": list(res.pixel),
            "score": res.score,
            "queries_used": res.queries_used,
            "l2": l2,
            "per_level": per_level,
            "elapsed_s": round(elapsed, 6),
        }
    except (PetalSearchError, OSError, KeyError, ValueError) as exc:
        return {"id": rec.get("id"), "error": f"{type(exc).__name__}: {exc}"}


def _sat_feature(sat: FeatureMap, pixel, lut: PetalLUT):
    return PetalFeature(pool_satellite(sat, [pixel], lut)[0], lut.spec.theta_a)


def _run_jobs(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _load_dataset(path) -> tuple[dict, list[dict]]:
    base = Path(path)
    meta = json.loads((base / DATASET_META).read_text())
    return meta, read_manifest(base / MANIFEST)


def cmd_search(args, cfg: dict) -> int:
    meta, records = _load_dataset(args.dataset)
    s = meta.get("search", {})
    mode = args.mode or s.get("mode", "multiscale")
    p = meta.get("prior", {})
    jobs = [SearchJob(
        str(args.dataset), rec, meta, mode,
        args.stride or s.get("stride", 1),
        args.cs_factor or s.get("cs_factor", DEFAULT_CS_FACTOR),
        s.get("refine_factor", DEFAULT_REFINE_FACTOR),
        args.prior_theta,
        args.prior_noise if args.prior_noise is not None else p.get("noise_deg"),
        args.prior_rho if args.prior_rho is not None else p.get("rho", DEFAULT_RHO),
        args.prior_delta_scale if args.prior_delta_scale is not None else p.get("delta_scale", DEFAULT_DELTA_SCALE),
    ) for rec in records]
    results = sorted(_run_jobs(search_one, jobs, args.workers), key=lambda r: str(r["id"]))
    out = Path(args.out or Path(args.dataset) / f"predictions_{mode}.jsonl")
    out.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in results))
    failed = [r for r in results if "error" in r]
    for r in failed:
        log.error("instance %s failed: %s", r["id"], r["error"])
    print(f"wrote {len(results)} predictions to {out} ({len(failed)} failed)")
    return 1 if failed else 0


# -- eval -----------------------------------------------------------------


def build_records(predictions: list[dict], manifest: list[dict], plan=None) -> tuple[list[EvalRecord], list[str]]:
    by_id = {m["id"]: m for m in manifest}
    records, problems = [], []
    for p in predictions:
        m = by_id.get(p.get("id"))
        if m is None:
            problems.append(f"{p.get('id')}: not in manifest")
            continue
        if "error" in p:
            problems.append(f"{p['id']}: {p['error']}")
            continue
        gt = gt_from_record(m)
        con = None
        levels = p.get("per_level") or []
        if levels and plan is not None:
            con = level_contrastive(
                [np.asarray(lv["anchors"]) for lv in levels],
                [np.asarray(lv["scores"]) for lv in levels],
                [lv.anchor_spacing for lv in plan.levels],
                gt.gt_location,
            )
        records.append(EvalRecord.build(p["id"], gt, p["pred_y"], p["pred_x"], p["pred_theta"],
                                        m["ground_res"], con, p.get("l2")))
    missing = sorted(set(by_id) - {p.get("id") for p in predictions})
    problems += [f"{i}: no prediction" for i in missing]
    return records, problems


def cmd_eval(args, cfg: dict) -> int:
    manifest_path = Path(args.manifest) if args.manifest else Path(args.predictions).parent / MANIFEST
    manifest = read_manifest(manifest_path)
    meta_path = manifest_path.parent / DATASET_META
    plan = resolve_plan(json.loads(meta_path.read_text())) if meta_path.exists() else None
    with open(args.predictions) as fh:
        preds = [json.loads(line) for line in fh if line.strip()]
    records, problems = build_records(preds, manifest, plan)
    for msg in problems:
        log.error("%s", msg)
    report = summarize(records, args.thresholds_m, args.thresholds_deg)
    out = Path(args.out) if args.out else Path(args.predictions).with_suffix("")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    w.writerows(report_rows(report))
    Path(f"{out}_metrics.csv").write_text(buf.getvalue())
    md = report_markdown(report)
    Path(f"{out}_metrics.md").write_text(md)
    print(md, end="")
    return 1 if problems else 0


# -- bench ----------------------------------------------------------------


def cmd_bench(args, cfg: dict) -> int:
    meta, records = _load_dataset(args.dataset)
    if args.limit:
        records = records[: args.limit]
    common = dict(stride=1, cs_factor=DEFAULT_CS_FACTOR, refine_factor=DEFAULT_REFINE_FACTOR,
                  prior_theta=None, prior_noise=None, prior_rho=DEFAULT_RHO,
                  prior_delta_scale=DEFAULT_DELTA_SCALE)
    rows = []
    for rec in records:
        ms = search_one(SearchJob(str(args.dataset), rec, meta, "multiscale", **common))
        fl = search_one(SearchJob(str(args.dataset), rec, meta, "flat", **common))
        if "error" in ms or "error" in fl:
            log.error("instance %s failed: %s", rec["id"], ms.get("error") or fl.get("error"))
            return 1
        same = ms["pixel"] == fl["pixel"]
        rows.append([rec["id"], ms["queries_used"], fl["queries_used"],
                     f"{fl['queries_used'] / ms['queries_used']:.2f}",
                     f"{ms['elapsed_s']:.6f}", f"{fl['elapsed_s']:.6f}", int(same)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "multiscale_queries", "flat_queries", "query_ratio", "multiscale_s", "flat_s",
                "same_pixel"])
    w.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    print(buf.getvalue(), end="")
    return 0


# -- lut ------------------------------------------------------------------


def cmd_lut(args, cfg: dict) -> int:
    spec = PetalSpec(args.theta, tuple(args.zones), args.ground_res, args.level)
    lut = build_lut(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"lut_theta{args.theta:g}"
    lut.save(out / f"{stem}.plut")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["petal", "azimuth_start_deg"] + [f"zone{j}" for j in range(lut.n_z)] + ["total"])
    for i in range(lut.n_a):
        counts = [int(c) for c in lut.counts[i]]
        w.writerow([i, f"{spec.petal_range(i)[0]:g}"] + counts + [sum(counts)])
    (out / f"{stem}_counts.csv").write_text(buf.getvalue())
    occ = lut.occupancy()
    r = lut.radius_px
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dy\\dx"] + list(range(-r, r + 1)))
    for row, dy in zip(occ, range(-r, r + 1)):
        w.writerow([dy] + [int(v) for v in row])
    (out / f"{stem}_occupancy.csv").write_text(buf.getvalue())
    totals = lut.counts.sum(axis=1)
    print(f"{lut.n_a} petals x {lut.n_z} zones, s_max {lut.s_max.tolist()}, "
          f"samples per petal min {totals.min()} max {totals.max()}")
    return 0


# -- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="petalsearch", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="YAML experiment config")
    ap.add_argument("--workers", type=int, default=None, help="parallel instances (default 1)")
    ap.add_argument("--seed", type=int, default=None, help="override the base seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    lt = sub.add_parser("lut", help="build a petal LUT, dump counts and occupancy CSV")
    lt.add_argument("--theta", type=float, default=10.0)
    lt.add_argument("--zones", type=float, nargs="+", default=list(DEFAULT_ZONE_BOUNDS_M))
    lt.add_argument("--ground-res", type=float, default=DEFAULT_GROUND_RES)
    lt.add_argument("--level", type=int, default=0)
    lt.add_argument("--out", default="lut")
    lt.set_defaults(func=cmd_lut)

    s = sub.add_parser("search", help="run multiscale or flat search over a dataset")
    s.add_argument("dataset")
    s.add_argument("--mode", choices=("multiscale", "flat"))
    s.add_argument("--stride", type=int)
    s.add_argument("--out")
    s.add_argument("--prior-theta", type=float)
    s.add_argument("--prior-noise", type=float)
    s.add_argument("--prior-rho", type=float)
    s.add_argument("--prior-delta-scale", type=float)
    s.add_argument("--cs-factor", type=int)
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("eval", help="score predictions against the manifest")
    e.add_argument("predictions")
    e.add_argument("--manifest")
    e.add_argument("--out", help="output prefix for _metrics.csv/_metrics.md")
    e.add_argument("--thresholds-m", type=float, nargs="+", default=[1.0, 5.0])
    e.add_argument("--thresholds-deg", type=float, nargs="+", default=[1.0, 5.0])
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="compare flat and multiscale query counts and time")
    b.add_argument("dataset")
    b.add_argument("--limit", type=int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else load_config_text("")
        if args.workers is None:
            args.workers = cfg.get("workers", 1)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        return args.func(args, cfg)
    except (PetalSearchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
