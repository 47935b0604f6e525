"""Seeded synthetic scenes with mutually consistent overhead and street views.

A scene is a stack of channels built from Gaussian blobs and soft line
segments. The street view at a ground-truth pose is rendered through the
same petal LUT the search uses, so a noise-free street feature equals the
satellite petal feature at the ground truth up to a petal rotation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import BoundsError, ConfigError
from .features import FeatureMap, petal_count, pool_satellite
from .geometry import DEFAULT_GROUND_RES, DEFAULT_ZONE_BOUNDS_M, PetalSpec, build_lut
from .matchmaker import DEFAULT_CS_FACTOR, wrap_deg


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    channels: int = 4
    map_side: int = 256
    blob_count: int = 4
    blob_sigma: tuple[float, float] = (6.0, 14.0)
    line_count: int = 2
    line_width: float = 1.5
    noise_sigma: float = 0.0
    fov: float = 360.0
    shift_max_m: float = 20.0
    ground_res: float = DEFAULT_GROUND_RES
    zone_bounds_m: tuple[float, ...] = DEFAULT_ZONE_BOUNDS_M
    finest_theta: float = 2.5
    prior_noise_deg: float = 0.0
    rows_per_zone: int = 2
    cols_per_bin: int = 1
    min_blob_sep_px: Optional[float] = None
    landmark_sigma: float = 15.0
    landmark_channels: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "blob_sigma", tuple(float(v) for v in self.blob_sigma))
        object.__setattr__(self, "zone_bounds_m", tuple(float(v) for v in self.zone_bounds_m))
        if self.map_side < 4 or self.map_side % 2:
            raise ConfigError(f"map_side must be even and >= 4, got {self.map_side}")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if self.blob_count < 0 or self.line_count < 0:
            raise ConfigError("blob_count and line_count must be non-negative")
        lo, hi = self.blob_sigma
        if not (0 < lo <= hi):
            raise ConfigError(f"blob_sigma range {self.blob_sigma} is invalid")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        petal_count(self.fov, self.finest_theta)
        if self.fov > 360:
            raise ConfigError("fov cannot exceed 360 deg")
        if self.shift_max_m < 0:
            raise ConfigError("shift_max_m must be non-negative")
        if self.shift_max_m / self.ground_res > self.map_side / 4:
            raise ConfigError("shift_max_m exceeds half of the search side")
        if self.rows_per_zone < 1 or self.cols_per_bin < 1:
            raise ConfigError("rows_per_zone and cols_per_bin must be >= 1")
        if self.prior_noise_deg < 0:
            raise ConfigError("prior_noise_deg must be non-negative")
        self.finest_spec()

    def finest_spec(self) -> PetalSpec:
        return PetalSpec(self.finest_theta, self.zone_bounds_m, self.ground_res)

    @property
    def blob_separation_px(self) -> float:
        if self.min_blob_sep_px is not None:
            return self.min_blob_sep_px
        return 2.0 * self.zone_bounds_m[-1] / self.ground_res


@dataclass
class GroundTruth:
    gt_location: tuple[float, float]
    gt_theta: float
    prior_location: tuple[float, float]
    prior_theta: float
    shift: tuple[float, float]  # (S_x, S_y) in meters

    def as_dict(self) -> dict:
        return {
            "gt_y": self.gt_location[0],
            "gt_x": self.gt_location[1],
            "gt_theta": self.gt_theta,
            "prior_y": self.prior_location[0],
            "prior_x": self.prior_location[1],
            "prior_theta": self.prior_theta,
            "shift_x_m": self.shift[0],
            "shift_y_m": self.shift[1],
        }


def _segment_distance(yy, xx, p0, p1):
    d = p1 - p0
    length2 = float(d @ d)
    if length2 == 0.0:
        return np.hypot(yy - p0[0], xx - p0[1])
    t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / length2
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))


def _place_blobs(rng, n, side, min_sep, max_tries=200):
    centers = []
    for _ in range(n):
        for _ in range(max_tries):
            c = rng.uniform(0, side, size=2)
            if all(math.dist(c, o) >= min_sep for o in centers):
                centers.append(c)
                break
    return centers


def generate_scene(cfg: SceneConfig, landmark=None) -> FeatureMap:
    """Noise-free scene; identical for identical configs.

    Blobs within a channel keep ``cfg.blob_separation_px`` apart; placement
    stops early for a channel when no free spot is found.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    side = cfg.map_side
    yy, xx = np.mgrid[0:side, 0:side].astype(float)
    data = np.zeros((cfg.channels, side, side))
    for c in range(cfg.channels):
        for cy, cx in _place_blobs(rng, cfg.blob_count, side, cfg.blob_separation_px):
            sigma = rng.uniform(*cfg.blob_sigma)
            amp = rng.uniform(0.5, 1.0)
            data[c] += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        for _ in range(cfg.line_count):
            p0 = rng.uniform(0, side, size=2)
            p1 = rng.uniform(0, side, size=2)
            amp = rng.uniform(0.3, 0.8)
            d = _segment_distance(yy, xx, p0, p1)
            data[c] += amp * np.exp(-(d ** 2) / (2 * cfg.line_width ** 2))
    if landmark is not None and cfg.landmark_sigma > 0:
        bump = np.exp(-((yy - landmark[0]) ** 2 + (xx - landmark[1]) ** 2) / (2 * cfg.landmark_sigma ** 2))
        n = cfg.channels if cfg.landmark_channels is None else cfg.landmark_channels
        data[:n] += bump
    np.clip(data, 0.0, 1.0, out=data)
    return FeatureMap(data, cfg.ground_res)


def add_noise(fmap: FeatureMap, sigma: float, rng: np.random.Generator) -> FeatureMap:
    if sigma == 0:
        return FeatureMap(fmap.data.copy(), fmap.ground_res)
    return FeatureMap(fmap.data + rng.normal(0.0, sigma, fmap.data.shape), fmap.ground_res)


def sample_pose(cfg: SceneConfig, rng: np.random.Generator, snap_location: bool = True,
                angle_step: Optional[float] = None) -> GroundTruth:
    """Ground-truth pose around the map centre plus a noisy orientation prior.

    ``snap_location`` rounds the location to the pixel grid the renderer
    samples at; ``angle_step`` (default: finest theta / CS factor) quantizes
    the orientation.
    """
    center = (cfg.map_side // 2, cfg.map_side // 2)
    max_px = cfg.shift_max_m / cfg.ground_res
    sy, sx = rng.uniform(-max_px, max_px, size=2)
    if snap_location:
        sy, sx = float(np.round(sy)), float(np.round(sx))
    theta = float(rng.uniform(0.0, 360.0))
    step = cfg.finest_theta / DEFAULT_CS_FACTOR if angle_step is None else angle_step
    if step:
        theta = quantize_angle(theta, step)
    noise = float(rng.uniform(-cfg.prior_noise_deg, cfg.prior_noise_deg)) if cfg.prior_noise_deg else 0.0
    prior = float((theta + noise) % 360.0)
    return GroundTruth(
        gt_location=(center[0] + sy, center[1] + sx),
        gt_theta=theta,
        prior_location=(float(center[0]), float(center[1])),
        prior_theta=prior,
        shift=(sx * cfg.ground_res, sy * cfg.ground_res),
    )


def quantize_angle(theta: float, step: float) -> float:
    q = round(theta / step) * step % 360.0
    return float(round(q, 9) % 360.0)


def render_street(scene: FeatureMap, gt: GroundTruth, finest_spec: PetalSpec, fov: float,
                  rows_per_zone: int = 2, cols_per_bin: int = 1, noise_sigma: float = 0.0,
                  rng: Optional[np.random.Generator] = None,
                  cs_factor: int = DEFAULT_CS_FACTOR) -> FeatureMap:
    """Street view whose left edge looks along ``gt.gt_theta``.

    The orientation is snapped to ``theta_a / cs_factor``. A LUT rotated by
    the sub-petal remainder pools the noise-free scene at the ground truth;
    its petals starting at the camera azimuth fill the FOV left to right,
    each expanded to a ``rows_per_zone x cols_per_bin`` block per zone with
    the farthest zone on top.
    """
    gy, gx = (int(round(v)) for v in gt.gt_location)
    if not (0 <= gy < scene.height and 0 <= gx < scene.width):
        raise BoundsError(f"ground truth ({gy}, {gx}) is outside the scene")
    theta_a = finest_spec.theta_a
    step = theta_a / cs_factor
    n_steps = round(gt.gt_theta / step) % round(360.0 / step)
    k, sub = divmod(n_steps, cs_factor)
    spec = replace(finest_spec, angle_offset=sub * step)
    feat = pool_satellite(scene, [(gy, gx)], build_lut(spec))[0]  # (n_a, C, n_z)
    n_g = petal_count(fov, theta_a)
    petals = np.roll(feat, -k, axis=0)[:n_g]  # (n_g, C, n_z)

    n_z = finest_spec.n_z
    # rows: far zone on top
    rows = petals[:, :, ::-1]  # (n_g, C, n_z) far..near
    img = np.repeat(rows, rows_per_zone, axis=2)  # (n_g, C, H)
    img = np.repeat(img[..., None], cols_per_bin, axis=3)  # (n_g, C, H, w)
    img = img.transpose(1, 2, 0, 3).reshape(scene.channels, n_z * rows_per_zone, n_g * cols_per_bin)
    if noise_sigma:
        rng = np.random.default_rng() if rng is None else rng
        img = img + rng.normal(0.0, noise_sigma, img.shape)
    return FeatureMap(img, None)


@dataclass
class Instance:
    id: str
    seed: int
    satellite: FeatureMap
    street: FeatureMap
    gt: GroundTruth
    config: SceneConfig = field(repr=False, default=None)


def make_instance(cfg: SceneConfig, snap_location: bool = True, angle_step: Optional[float] = None,
                  instance_id: Optional[str] = None) -> Instance:
    """Scene, pose and both views for ``cfg.seed``; a pure function of the config."""
    rng = np.random.default_rng([cfg.seed, 1])
    gt = sample_pose(cfg, rng, snap_location=snap_location, angle_step=angle_step)
    scene = generate_scene(cfg, gt.gt_location)
    street = render_street(scene, gt, cfg.finest_spec(), cfg.fov, cfg.rows_per_zone, cfg.cols_per_bin,
                           cfg.noise_sigma, rng)
    sat = add_noise(scene, cfg.noise_sigma, rng)
    return Instance(instance_id or f"{cfg.seed:06d}", cfg.seed, sat, street, gt, cfg)


def angle_error(a: float, b: float) -> float:
    return float(abs(wrap_deg(a - b)))
