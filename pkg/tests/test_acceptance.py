"""Acceptance suite: one test per criterion, summarized at the end of the run."""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from petalsearch.cli import TIMING_FIELDS, main
from petalsearch.features import FeatureMap, PetalFeature
from petalsearch.geometry import DEFAULT_GROUND_RES, PetalSpec, build_lut, pixel_geometry
from petalsearch.matchmaker import PriorConfig, SimilarityCurve, best_orientation, correlate_many
from petalsearch.metrics import angle_loss, contrastive_metric, reconstruction_l2
from petalsearch.search import (DEFAULT_THETAS, flat_search, luts_for_plan, map_center, plan_levels, query_count,
                                refine_location, run_search, search_area_pixels, street_features_for_plan)
from petalsearch.synthworld import SceneConfig, angle_error, make_instance

N_INSTANCES = 200


@pytest.mark.criterion(1, "57 multiscale queries vs 16,384 flat at map 256, under 1 s")
def test_query_count(criterion):
    t0 = time.perf_counter()
    plan = plan_levels(256, 4, 3, DEFAULT_THETAS)
    total = query_count(plan)
    sat = FeatureMap(np.zeros((1, 256, 256)), DEFAULT_GROUND_RES)
    flat = len(search_area_pixels(map_center(sat), plan.search_side))
    elapsed = time.perf_counter() - t0
    assert total == 57
    assert flat == 16384
    assert elapsed < 1.0
    criterion(f"{total} vs {flat} in {elapsed * 1e3:.1f} ms")


@pytest.mark.criterion(2, "anchor counts [16,16,16,9], spacings [32,8,2,1] px and [25.07,6.27,1.57,0.78] m")
def test_plan_geometry(criterion):
    t0 = time.perf_counter()
    plan = plan_levels(256, 4, 3, DEFAULT_THETAS)
    counts = [lv.anchor_count for lv in plan.levels]
    spacings = [lv.anchor_spacing for lv in plan.levels]
    meters = plan.spacings_m()
    elapsed = time.perf_counter() - t0
    assert counts == [16, 16, 16, 9]
    assert spacings == [32, 8, 2, 1]
    np.testing.assert_allclose(meters, [25.07, 6.27, 1.57, 0.78], rtol=0, atol=0.01)
    assert elapsed < 1.0
    criterion("spacings " + ", ".join(f"{m:.3f}" for m in meters) + " m")


@pytest.mark.criterion(3, "resolving power [4,1,0.25,0.125] px; final level about 0.10 m")
def test_resolving_power(criterion):
    plan = plan_levels(256, 4, 3, DEFAULT_THETAS)
    power = plan.resolving_power(8)
    assert power == [4, 1, 0.25, 0.125]
    final_m = power[-1] * DEFAULT_GROUND_RES
    assert abs(final_m - 0.10) <= 0.005
    # refined offsets actually land on the stated sub-pixel grid
    rng = np.random.default_rng(0)
    for lv, res in zip(plan.levels, power):
        k = math.isqrt(lv.anchor_count)
        r = refine_location(rng.random((k, k)), lv.anchor_spacing, 8)
        for off in (r.dy, r.dx):
            assert abs(off / res - round(off / res)) < 1e-9
    criterion(f"final level {power[-1]} px = {final_m:.4f} m")


@pytest.fixture(scope="module")
def instance_runs():
    """Multiscale and stride-1 flat search on seeds 0..199, map 128, noise free."""
    plan = plan_levels(128, 4, 3, DEFAULT_THETAS)
    luts = luts_for_plan(plan)
    runs = []
    t_total = 0.0
    for seed in range(N_INSTANCES):
        inst = make_instance(SceneConfig(seed=seed, map_side=128))
        feats = street_features_for_plan(inst.street, plan, 360.0, 4)
        t0 = time.perf_counter()
        ms = run_search(inst.satellite, feats, plan, luts)
        flat = flat_search(inst.satellite, feats[-1], luts[-1], search_side=plan.search_side)
        t_total += time.perf_counter() - t0
        runs.append((inst.gt, ms, flat))
    return runs, t_total


@pytest.mark.slow
@pytest.mark.criterion(4, "multiscale matches stride-1 flat search on >= 99% of 200 instances, under 10 min")
def test_oracle_equivalence(criterion, instance_runs):
    runs, elapsed = instance_runs
    same = sum(ms.pixel == flat.pixel for _, ms, flat in runs)
    excess = max(ms.score - flat.score for _, ms, flat in runs)
    assert same >= 0.99 * len(runs)
    assert excess <= 1e-9
    assert elapsed < 600
    criterion(f"{same}/{len(runs)} same pixel, max score excess {excess:.2e}, {elapsed:.0f} s")


@pytest.mark.slow
@pytest.mark.criterion(5, "orientation <= 0.5 deg on 100% and location <= 0.25 px on >= 95% of 200 instances")
def test_pose_recovery(criterion, instance_runs):
    runs, _ = instance_runs
    th_ok = loc_ok = 0
    for gt, ms, _ in runs:
        assert gt.gt_theta == round(gt.gt_theta * 2) / 2
        th_ok += angle_error(ms.orientation, gt.gt_theta) <= 0.5
        loc_ok += math.dist(ms.location, gt.gt_location) <= 0.25
    assert th_ok == len(runs)
    assert loc_ok >= 0.95 * len(runs)
    criterion(f"orientation {th_ok}/{len(runs)}, location {loc_ok}/{len(runs)}")


@pytest.mark.criterion(6, "FFT and direct correlation agree to 1e-9 on 1,000 random cases")
def test_fft_direct_agreement(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n_s = int(rng.integers(4, 145))
        c = int(rng.integers(1, 9))
        z = int(rng.integers(1, 5))
        n_g = n_s if rng.random() < 0.5 else int(rng.integers(1, n_s + 1))
        street = rng.normal(size=(n_g, c, z))
        sats = rng.normal(size=(int(rng.integers(1, 4)), n_s, c, z))
        diff = np.abs(correlate_many(street, sats, "fft") - correlate_many(street, sats, "direct")).max()
        worst = max(worst, float(diff))
    assert worst <= 1e-9
    criterion(f"max deviation {worst:.2e}")


@pytest.mark.criterion(7, "angle_loss, contrastive and L2 metric values within 1e-9")
def test_metric_values(criterion):
    assert abs(angle_loss(350, 10) - 20 / 180) <= 1e-9
    for n in (1, 2, 16, 57, 1000):
        assert abs(contrastive_metric(np.full(n, 0.37), 0) - math.log(n)) <= 1e-9
    f = PetalFeature(np.random.default_rng(1).random((36, 4, 4)), 10.0)
    assert reconstruction_l2(f, f) <= 1e-9
    criterion("all exact")


@pytest.mark.criterion(8, "prior mixer: constant curve picks the bin nearest the prior; zero amplitude is a no-op")
def test_prior_mixer(criterion):
    const = SimilarityCurve(np.full(720, 0.42), 0.5)
    for p in (0.0, 37.2, 123.74, 200.26, 359.6, 359.8):
        theta, _ = best_orientation(const, PriorConfig(p, 4.0))
        nearest = (round(p / 0.5) * 0.5) % 360.0
        assert theta == nearest
    rng = np.random.default_rng(3)
    for _ in range(100):
        curve = SimilarityCurve(rng.random(720), 0.5)
        prior = PriorConfig(float(rng.uniform(0, 360)), float(rng.uniform(0.5, 30)), 0.0)
        assert best_orientation(curve, prior)[0] == best_orientation(curve)[0]
    criterion("exact on 6 prior angles and 100 random curves")


def _strictly_inside(lo, hi, a_lo, a_hi):
    return lo < a_lo and a_hi < hi


@pytest.mark.criterion(9, "LUT full containment and whole-disc coverage for 36 x 4, under 30 s")
def test_lut_properties(criterion):
    spec = PetalSpec(10.0)
    t0 = time.perf_counter()
    build_lut.cache_clear()
    lut = build_lut(spec)
    owners = {}
    for i in range(spec.n_a):
        for j in range(spec.n_z):
            for dy, dx in lut.members(i, j):
                owners.setdefault((int(dy), int(dx)), set()).add((i, j))
    r = lut.radius_px
    outer = spec.outer_radius_px
    contained = covered = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if (dy, dx) == (0, 0):
                continue
            got = owners.get((dy, dx), set())
            if math.hypot(dy, dx) <= outer:
                assert got, f"offset {(dy, dx)} is not covered"
                covered += 1
            g = pixel_geometry(dy, dx)
            a0, a1 = g.angle_range
            d0, d1 = g.dist_range
            cells = [(i, j) for i in range(spec.n_a) for j in range(spec.n_z)
                     if _petal_contains(spec.petal_range(i), a0, a1)
                     and _strictly_inside(*spec.zone_range(j), d0, d1)]
            if cells:
                assert got == set(cells), f"offset {(dy, dx)}: {got} != {cells}"
                contained += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 30
    criterion(f"{covered} disc offsets covered, {contained} contained pixels exact, {elapsed:.1f} s")


def _petal_contains(petal, a0, a1):
    p0, p1 = petal
    for k in (-360.0, 0.0, 360.0):
        if p0 + k < a0 and a1 < p1 + k:
            return True
    return False


def _outputs(root: Path) -> dict:
    out = {}
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = str(path.relative_to(root))
        if rel.startswith("predictions_") and rel.endswith(".jsonl"):
            rows = [json.loads(line) for line in path.read_text().splitlines() if line]
            for row in rows:
                for f in TIMING_FIELDS:
                    row.pop(f, None)
            out[rel] = json.dumps(rows, sort_keys=True).encode()
        else:
            out[rel] = path.read_bytes()
    return out


@pytest.mark.criterion(10, "generate + search + eval is byte-identical across runs")
def test_determinism(criterion, tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("scene:\n  map_side: 64\n  shift_max_m: 8.0\n  noise_sigma: 0.05\n"
                   "  prior_noise_deg: 5.0\nseed: 7\ncount: 3\n")

    def run(name):
        out = tmp_path / name
        assert main(["--config", str(cfg), "generate", "--out", str(out)]) == 0
        for mode in ("multiscale", "flat"):
            assert main(["search", str(out), "--mode", mode]) == 0
            assert main(["eval", str(out / f"predictions_{mode}.jsonl")]) == 0
        return _outputs(out)

    a, b = run("a"), run("b")
    capsys.readouterr()
    assert a.keys() == b.keys()
    differing = [k for k in a if a[k] != b[k]]
    assert not differing, differing
    criterion(f"{len(a)} files identical")
