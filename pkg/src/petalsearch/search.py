"""Coarse-to-fine anchor search and the exhaustive flat-grid comparator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import BoundsError, ConfigError, ShapeError
from .features import FeatureMap, PetalFeature, normalize, normalize_batch, pool_satellite
from .geometry import DEFAULT_GROUND_RES, PetalLUT
from .matchmaker import DEFAULT_CS_FACTOR, PriorConfig, match_anchors

DEFAULT_THETAS = (10.0, 5.0, 2.5, 2.5)
DEFAULT_REFINE_FACTOR = 8
FINAL_SPACING_PX = 1.0


@dataclass(frozen=True)
class Level:
    index: int
    patch_size: float
    anchor_side: int
    anchor_spacing: float
    theta_a: float
    is_last: bool

    @property
    def anchor_count(self) -> int:
        return self.anchor_side ** 2

    @property
    def sampling_side(self) -> float:
        """Side of the square the anchors subdivide."""
        return self.anchor_side * self.anchor_spacing


@dataclass(frozen=True)
class LevelPlan:
    map_side: int
    n_s: int
    n_s_prime: int
    search_side: float
    levels: tuple[Level, ...]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def spacings_m(self, ground_res: float = DEFAULT_GROUND_RES) -> list[float]:
        return [lv.anchor_spacing * ground_res for lv in self.levels]

    def resolving_power(self, factor: int = DEFAULT_REFINE_FACTOR) -> list[float]:
        return [lv.anchor_spacing / factor for lv in self.levels]


def count_regular_levels(search_side: float, n_s: int) -> int:
    """Levels whose anchor spacing ``search_side / n_s**(l+1)`` is still at least one pixel."""
    n = 0
    while search_side >= n_s ** (n + 1):
        n += 1
    return n


def plan_levels(map_side: int, n_s: int, n_s_prime: int,
                theta_per_level: Optional[Sequence[float]] = None) -> LevelPlan:
    """Level geometry of the dynamic multi-scale search.

    The search area is the centre half of the map. Regular levels subdivide
    the current patch into ``n_s x n_s`` cells until the next spacing would
    drop below one pixel; a final ``n_s_prime x n_s_prime`` level then probes
    the one-pixel neighbourhood of the last selection.
    """
    if n_s < 2:
        raise ConfigError(f"n_s must be >= 2, got {n_s}")
    if n_s_prime < 1:
        raise ConfigError(f"n_s_prime must be >= 1, got {n_s_prime}")
    search_side = map_side / 2
    n_regular = count_regular_levels(search_side, n_s)
    if n_regular == 0:
        raise ConfigError(f"search side {search_side} px is smaller than the grid side {n_s}")
    n_levels = n_regular + 1
    if theta_per_level is None:
        raise ConfigError(f"theta_per_level is required ({n_levels} levels)")
    if len(theta_per_level) != n_levels:
        raise ConfigError(f"plan has {n_levels} levels but {len(theta_per_level)} angle widths were given")
    levels = []
    for l in range(n_regular):
        patch = search_side / n_s ** l
        levels.append(Level(l, patch, n_s, patch / n_s, float(theta_per_level[l]), False))
    last = n_regular
    levels.append(Level(last, search_side / n_s ** (last - 1), n_s_prime, FINAL_SPACING_PX,
                        float(theta_per_level[last]), True))
    return LevelPlan(map_side, n_s, n_s_prime, search_side, tuple(levels))


def query_count(plan: LevelPlan) -> int:
    total = sum(lv.anchor_count for lv in plan.levels)
    n_regular = plan.n_levels - 1
    bound = plan.n_s ** 2 * n_regular + plan.n_s_prime ** 2
    # regular levels never exceed floor(log_{n_s}(L_s))
    assert n_regular <= math.floor(math.log(plan.search_side, plan.n_s) + 1e-9)
    assert total <= bound
    return total


def _round_half_down(x):
    # ties go toward -inf so children tile the parent's half-open cell
    return np.ceil(np.asarray(x) - 0.5).astype(np.int64)


def create_patch_centers(center, patch_size: float, anchor_count: int,
                         map_shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Centres of the k x k sub-patches of a square patch, row-major, as integer pixels.

    Offsets ``((i + 0.5) / k - 0.5) * patch_size`` are rounded half-down and the
    result is clamped to ``map_shape`` when given.
    """
    k = math.isqrt(anchor_count)
    if k * k != anchor_count or k < 1:
        raise ConfigError(f"anchor count {anchor_count} is not a perfect square")
    if patch_size < k:
        raise ConfigError(f"patch of {patch_size} px cannot hold {k} anchors per side")
    offs = ((np.arange(k) + 0.5) / k - 0.5) * patch_size
    ys = _round_half_down(center[0] + offs)
    xs = _round_half_down(center[1] + offs)
    if map_shape is not None:
        ys = np.clip(ys, 0, map_shape[0] - 1)
        xs = np.clip(xs, 0, map_shape[1] - 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


# -- sub-anchor refinement ------------------------------------------------


def _cubic_kernel(t, a=-0.5):
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    return np.where(
        t <= 1, (a + 2) * t3 - (a + 3) * t2 + 1,
        np.where(t < 2, a * t3 - 5 * a * t2 + 8 * a * t - 4 * a, 0.0),
    )


def _ghost_rows(n: int) -> dict[int, np.ndarray]:
    """Samples at -1 and n as combinations of the grid (Keys' boundary rule)."""
    e = np.eye(n)
    if n >= 3:
        return {-1: 3 * e[0] - 3 * e[1] + e[2], n: 3 * e[n - 1] - 3 * e[n - 2] + e[n - 3]}
    return {-1: 2 * e[0] - e[1], n: 2 * e[n - 1] - e[n - 2]}


def _bicubic_weights(n: int, factor: int) -> np.ndarray:
    """Cubic-convolution weights mapping n samples to (n-1)*factor+1 points.

    Samples beyond the edges are extrapolated so quadratics are reproduced
    exactly up to the boundary.
    """
    m = (n - 1) * factor + 1
    u = np.arange(m) / factor
    base = np.floor(u).astype(int)
    ghosts = _ghost_rows(n)
    w = np.zeros((m, n))
    for row in range(m):
        for tap in (-1, 0, 1, 2):
            idx = base[row] + tap
            wt = float(_cubic_kernel(u[row] - idx))
            if wt == 0.0:
                continue
            w[row] += wt * (ghosts[idx] if idx in ghosts else np.eye(n)[idx])
    return w


class Refinement(NamedTuple):
    dy: float
    dx: float
    score: float
    grid_pos: tuple[float, float]


def refine_location(score_grid, anchor_spacing: float, factor: int = DEFAULT_REFINE_FACTOR) -> Refinement:
    """Bicubic upsampling of a k x k anchor score grid.

    Returns the argmax as a continuous offset from the grid centre in
    pixels, so its resolution is ``anchor_spacing / factor``.
    """
    g = np.asarray(score_grid, dtype=float)
    k = g.shape[0]
    if g.shape != (k, k) or k < 2:
        raise ShapeError(f"score grid must be k x k with k >= 2, got {g.shape}")
    wmat = _bicubic_weights(k, factor)
    up = wmat @ g @ wmat.T
    r, c = np.unravel_index(int(np.argmax(up)), up.shape)
    gy, gx = r / factor, c / factor
    mid = (k - 1) / 2
    return Refinement((gy - mid) * anchor_spacing, (gx - mid) * anchor_spacing, float(up[r, c]), (gy, gx))


def _grid_to_pixel(anchors: np.ndarray, k: int, grid_pos) -> tuple[float, float]:
    ys = anchors[::k, 0].astype(float)
    xs = anchors[:k, 1].astype(float)
    idx = np.arange(k)
    return float(np.interp(grid_pos[0], idx, ys)), float(np.interp(grid_pos[1], idx, xs))


# -- searches -------------------------------------------------------------


@dataclass
class LevelTrace:
    level: int
    anchors: np.ndarray
    thetas: np.ndarray
    scores: np.ndarray
    chosen: int
    refined: tuple[float, float]
    refined_score: float

    def as_dict(self) -> dict:
        return {
            "level": self.level,
            "anchors": self.anchors.tolist(),
            "thetas": [round(float(t), 6) for t in self.thetas],
            "scores": [float(s) for s in self.scores],
            "chosen": int(self.chosen),
            "chosen_anchor": [int(v) for v in self.anchors[self.chosen]],
            "refined": [float(v) for v in self.refined],
            "refined_score": float(self.refined_score),
        }


@dataclass
class SearchResult:
    location: tuple[float, float]
    pixel: tuple[int, int]
    orientation: float
    score: float
    queries_used: int
    ground_res: Optional[float] = None
    trace: list[LevelTrace] = field(default_factory=list)

    @property
    def location_m(self) -> Optional[tuple[float, float]]:
        if self.ground_res is None:
            return None
        return self.location[0] * self.ground_res, self.location[1] * self.ground_res


def map_center(fmap: FeatureMap) -> tuple[int, int]:
    return fmap.height // 2, fmap.width // 2


def _prepare_street(street: PetalFeature) -> np.ndarray:
    return street.data if street.normalized else normalize(street).data


def evaluate_anchors(sat_map: FeatureMap, anchors: np.ndarray, street: PetalFeature, lut: PetalLUT,
                     prior: Optional[PriorConfig] = None, cs_factor: int = DEFAULT_CS_FACTOR):
    """Orientation and mixed score of the street feature at each anchor."""
    if abs(street.theta_a - lut.spec.theta_a) > 1e-12:
        raise ShapeError(f"street theta_a {street.theta_a} does not match LUT theta_a {lut.spec.theta_a}")
    h, w = sat_map.height, sat_map.width
    if np.any((anchors[:, 0] < 0) | (anchors[:, 0] >= h) | (anchors[:, 1] < 0) | (anchors[:, 1] >= w)):
        raise BoundsError("anchor outside the satellite map")
    sats = normalize_batch(pool_satellite(sat_map, anchors, lut))
    thetas, scores, _ = match_anchors(_prepare_street(street), sats, lut.spec.theta_a, prior, cs_factor)
    return thetas, scores


def run_search(sat_map: FeatureMap, street_feats: Sequence[PetalFeature], plan: LevelPlan,
               luts: Sequence[PetalLUT], prior: Optional[PriorConfig] = None,
               cs_factor: int = DEFAULT_CS_FACTOR, refine_factor: int = DEFAULT_REFINE_FACTOR,
               center=None) -> SearchResult:
    """Greedy coarse-to-fine search.

    Each level evaluates its anchor grid around the previous choice, keeps
    the best-scoring anchor (smallest index on ties) as the next centre and
    records a bicubic sub-anchor refinement. The output location is the last
    level's refined position and the orientation that of its best anchor.
    """
    if not (len(street_feats) == len(luts) == plan.n_levels):
        raise ShapeError("need one street feature and one LUT per level")
    shape = (sat_map.height, sat_map.width)
    cur = map_center(sat_map) if center is None else (int(center[0]), int(center[1]))
    trace = []
    queries = 0
    for lv, street, lut in zip(plan.levels, street_feats, luts):
        anchors = create_patch_centers(cur, lv.sampling_side, lv.anchor_count, shape)
        thetas, scores = evaluate_anchors(sat_map, anchors, street, lut, prior, cs_factor)
        queries += len(anchors)
        best = int(np.argmax(scores))
        k = lv.anchor_side
        if k >= 2:
            ref = refine_location(scores.reshape(k, k), lv.anchor_spacing, refine_factor)
            refined = _grid_to_pixel(anchors, k, ref.grid_pos)
            ref_score = ref.score
        else:
            refined = (float(anchors[best, 0]), float(anchors[best, 1]))
            ref_score = float(scores[best])
        trace.append(LevelTrace(lv.index, anchors, thetas, scores, best, refined, ref_score))
        cur = (int(anchors[best, 0]), int(anchors[best, 1]))
    last = trace[-1]
    return SearchResult(
        location=last.refined,
        pixel=cur,
        orientation=float(last.thetas[last.chosen]),
        score=float(last.scores[last.chosen]),
        queries_used=queries,
        ground_res=sat_map.ground_res,
        trace=trace,
    )


def search_area_pixels(center, search_side: float, stride: int = 1) -> np.ndarray:
    """Stride-spaced pixels of the search square ``[c - L_s/2, c + L_s/2)``."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    half = search_side / 2
    ys = np.arange(math.ceil(center[0] - half), math.ceil(center[0] + half), stride)
    xs = np.arange(math.ceil(center[1] - half), math.ceil(center[1] + half), stride)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.int64)


def flat_search(sat_map: FeatureMap, street_feat: PetalFeature, lut: PetalLUT, stride: int = 1,
                prior: Optional[PriorConfig] = None, search_side: Optional[float] = None,
                cs_factor: int = DEFAULT_CS_FACTOR, chunk: int = 1024) -> SearchResult:
    """Exhaustive evaluation of every stride-spaced pixel of the search area."""
    if search_side is None:
        search_side = sat_map.height / 2
    center = map_center(sat_map)
    pixels = search_area_pixels(center, search_side, stride)
    thetas = np.empty(len(pixels))
    scores = np.empty(len(pixels))
    for s in range(0, len(pixels), chunk):
        t, sc = evaluate_anchors(sat_map, pixels[s:s + chunk], street_feat, lut, prior, cs_factor)
        thetas[s:s + chunk] = t
        scores[s:s + chunk] = sc
    best = int(np.argmax(scores))
    py, px = (int(v) for v in pixels[best])
    tr = LevelTrace(0, pixels, thetas, scores, best, (float(py), float(px)), float(scores[best]))
    return SearchResult(
        location=(float(py), float(px)),
        pixel=(py, px),
        orientation=float(thetas[best]),
        score=float(scores[best]),
        queries_used=len(pixels),
        ground_res=sat_map.ground_res,
        trace=[tr],
    )


def correct_anchor(anchors, gt_location, cell_side: float) -> Optional[int]:
    """Index of the first anchor whose half-open cell contains the ground truth."""
    a = np.asarray(anchors, dtype=float)
    half = cell_side / 2
    gy, gx = gt_location
    inside = (a[:, 0] - half <= gy) & (gy < a[:, 0] + half) & (a[:, 1] - half <= gx) & (gx < a[:, 1] + half)
    hits = np.flatnonzero(inside)
    return int(hits[0]) if hits.size else None


def luts_for_plan(plan: LevelPlan, zone_bounds_m=None, ground_res: float = DEFAULT_GROUND_RES) -> list[PetalLUT]:
    from .geometry import DEFAULT_ZONE_BOUNDS_M, PetalSpec, build_lut

    bounds = DEFAULT_ZONE_BOUNDS_M if zone_bounds_m is None else tuple(zone_bounds_m)
    return [build_lut(PetalSpec(lv.theta_a, bounds, ground_res, lv.index)) for lv in plan.levels]


def street_features_for_plan(street: FeatureMap, plan: LevelPlan, fov: float, n_z: int) -> list[PetalFeature]:
    """Normalized street features regrouped at every level's angle width."""
    from .features import street_feature

    return [normalize(street_feature(street, lv.theta_a, fov, n_z)) for lv in plan.levels]
