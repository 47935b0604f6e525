import math

import numpy as np
import pytest

from petalsearch.errors import BoundsError, ConfigError
from petalsearch.features import normalize, street_feature
from petalsearch.geometry import DEFAULT_GROUND_RES, PetalSpec, build_lut
from petalsearch.features import PetalFeature, pool_satellite
from petalsearch.matchmaker import circular_correlate
from petalsearch.synthworld import (GroundTruth, SceneConfig, angle_error, generate_scene, make_instance,
                                    quantize_angle, render_street, sample_pose)


def _gt(y, x, theta):
    return GroundTruth((y, x), theta, (y, x), theta, (0.0, 0.0))


def test_scene_deterministic():
    cfg = SceneConfig(seed=11, map_side=64, shift_max_m=5.0)
    a, b = generate_scene(cfg), generate_scene(cfg)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, generate_scene(SceneConfig(seed=12, map_side=64, shift_max_m=5.0)).data)
    assert a.data.min() >= 0 and a.data.max() <= 1


def test_empty_scene():
    cfg = SceneConfig(map_side=32, blob_count=0, line_count=0, shift_max_m=5.0)
    assert not generate_scene(cfg).data.any()
    # the site marker is the only content when requested
    marked = generate_scene(cfg, landmark=(10, 20))
    assert np.unravel_index(np.argmax(marked.data[0]), (32, 32)) == (10, 20)


def test_single_blob_peak():
    cfg = SceneConfig(seed=3, map_side=64, channels=1, blob_count=1, line_count=0, shift_max_m=5.0)
    data = generate_scene(cfg).data[0]
    peak = np.unravel_index(np.argmax(data), data.shape)
    # the blob centre is continuous; the maximum sits at the nearest pixel
    rng = np.random.default_rng([3, 0])
    cy, cx = rng.uniform(0, 64, size=2)
    assert abs(peak[0] - cy) <= 0.5 + 1e-9 and abs(peak[1] - cx) <= 0.5 + 1e-9


@pytest.mark.parametrize("kwargs", [
    dict(map_side=63), dict(channels=0), dict(fov=83.0), dict(fov=720.0), dict(noise_sigma=-1.0),
    dict(map_side=64, shift_max_m=20.0), dict(blob_sigma=(5.0, 2.0)), dict(prior_noise_deg=-1.0),
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SceneConfig(**kwargs)


def test_pose_bounds_and_prior():
    cfg = SceneConfig(map_side=256, shift_max_m=20.0, prior_noise_deg=3.0)
    rng = np.random.default_rng(0)
    limit = 20.0 / DEFAULT_GROUND_RES
    assert limit == pytest.approx(25.5, abs=0.05)
    for _ in range(200):
        gt = sample_pose(cfg, rng, snap_location=False, angle_step=0)
        assert abs(gt.gt_location[0] - 128) <= limit and abs(gt.gt_location[1] - 128) <= limit
        assert angle_error(gt.prior_theta, gt.gt_theta) <= 3.0 + 1e-9
        assert gt.prior_location == (128.0, 128.0)
        assert 0 <= gt.gt_theta < 360
        assert gt.shift[0] == pytest.approx((gt.gt_location[1] - 128) * DEFAULT_GROUND_RES)


def test_pose_degenerate():
    gt = sample_pose(SceneConfig(shift_max_m=0.0), np.random.default_rng(1))
    assert gt.gt_location == (128.0, 128.0)
    assert gt.prior_theta == gt.gt_theta
    assert gt.gt_theta == quantize_angle(gt.gt_theta, 0.5)


def test_quantize():
    assert quantize_angle(359.8, 0.5) == 0.0
    assert quantize_angle(10.26, 0.5) == 10.5


def test_street_roundtrip_identity():
    cfg = SceneConfig(seed=5, map_side=128)
    scene = generate_scene(cfg)
    spec = cfg.finest_spec()
    st = render_street(scene, _gt(64, 60, 0.0), spec, 360.0)
    sat = pool_satellite(scene, [(64, 60)], build_lut(spec))[0]
    np.testing.assert_allclose(street_feature(st, 2.5, 360.0, 4).data, sat, atol=1e-12)


@pytest.mark.parametrize("k", [0, 7, 100])
def test_street_argmax_at_orientation_bin(k):
    cfg = SceneConfig(seed=9, map_side=128)
    scene = generate_scene(cfg)
    spec = cfg.finest_spec()
    st = render_street(scene, _gt(60, 70, k * 2.5), spec, 360.0)
    street = normalize(street_feature(st, 2.5, 360.0, 4))
    sat = normalize(PetalFeature(pool_satellite(scene, [(60, 70)], build_lut(spec))[0], 2.5))
    curve = circular_correlate(street, sat)
    assert int(np.argmax(curve.values)) == k
    assert curve.values[k] == pytest.approx(1.0)


def test_street_fov_and_blocks():
    cfg = SceneConfig(seed=1, map_side=128, fov=80.0, rows_per_zone=3, cols_per_bin=2)
    inst = make_instance(cfg)
    assert inst.street.data.shape == (4, 12, 64)
    # far zone is the top band
    sat = pool_satellite(generate_scene(cfg, inst.gt.gt_location),
                         [tuple(int(v) for v in inst.gt.gt_location)], build_lut(cfg.finest_spec()))[0]
    f = street_feature(inst.street, 2.5, 80.0, 4)
    k = round(inst.gt.gt_theta / 0.5)
    if k % 5 == 0:
        np.testing.assert_allclose(f.data, np.roll(sat, -(k // 5), axis=0)[:32], atol=1e-12)
    assert f.n_a == 32


def test_street_outside():
    scene = generate_scene(SceneConfig(map_side=32, shift_max_m=5.0))
    with pytest.raises(BoundsError):
        render_street(scene, _gt(40, 0, 0.0), PetalSpec(2.5), 360.0)


def test_instance_pure_and_noise_only_on_copies():
    cfg = SceneConfig(seed=4, map_side=64, shift_max_m=10.0, noise_sigma=0.1)
    a, b = make_instance(cfg), make_instance(cfg)
    np.testing.assert_array_equal(a.satellite.data, b.satellite.data)
    np.testing.assert_array_equal(a.street.data, b.street.data)
    assert a.gt == b.gt
    clean = generate_scene(cfg, a.gt.gt_location)
    resid = a.satellite.data - clean.data
    assert 0.05 < resid.std() < 0.15


def test_angle_error():
    assert angle_error(350, 10) == pytest.approx(20)
    assert angle_error(0, 180) == 180
    assert math.isclose(angle_error(10.5, 10.0), 0.5)
