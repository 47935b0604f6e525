"""Pixel-to-petal belongingness and padded petal lookup tables.

Azimuths follow a south-aligned convention on a north-up raster: 0 deg points
toward increasing row (south), 90 deg toward increasing column (east), and
values live in [0, 360).
"""
from __future__ import annotations

import functools
import io
import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BoundsError, ConfigError, FormatError

T1 = 0.5
T2 = 0.8

PAD_SENTINEL = np.iinfo(np.int32).min
_TIE_EPS = 1e-9
# 32 feature px (level-0 anchor spacing of the 256-px plan) = 25.07 m
DEFAULT_GROUND_RES = 25.07 / 32
DEFAULT_ZONE_BOUNDS_M = (8.0, 20.0, 34.0, 48.0)

_LUT_MAGIC = b"PLUT"
_LUT_VERSION = 1

# corner order follows (bl, br, tl, tr); "bottom" is the larger row index
_CORNERS = np.array([[0.5, -0.5], [0.5, 0.5], [-0.5, -0.5], [-0.5, 0.5]])


@dataclass(frozen=True)
class PetalSpec:
    """Angular and radial layout of one search level.

    ``angle_offset`` rotates every petal boundary; it is zero for search
    levels and only used to render street views at sub-petal orientations.
    """

    theta_a: float
    zone_bounds_m: tuple[float, ...] = DEFAULT_ZONE_BOUNDS_M
    ground_res: float = DEFAULT_GROUND_RES
    level_index: int = 0
    angle_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "zone_bounds_m", tuple(float(b) for b in self.zone_bounds_m))
        object.__setattr__(self, "theta_a", float(self.theta_a))
        if not self.theta_a > 0:
            raise ConfigError(f"theta_a must be positive, got {self.theta_a}")
        n = round(360.0 / self.theta_a)
        if n < 1 or abs(n * self.theta_a - 360.0) > 1e-9:
            raise ConfigError(f"360 is not an integer multiple of theta_a={self.theta_a}")
        if not self.zone_bounds_m:
            raise ConfigError("zone_bounds_m must not be empty")
        if any(b <= 0 for b in self.zone_bounds_m):
            raise ConfigError("zone bounds must be positive")
        if any(b1 <= b0 for b0, b1 in zip(self.zone_bounds_m, self.zone_bounds_m[1:])):
            raise ConfigError("zone bounds must be strictly increasing")
        if not self.ground_res > 0:
            raise ConfigError(f"ground_res must be positive, got {self.ground_res}")

    @property
    def n_a(self) -> int:
        return round(360.0 / self.theta_a)

    @property
    def n_z(self) -> int:
        return len(self.zone_bounds_m)

    @property
    def zone_bounds_px(self) -> np.ndarray:
        return np.asarray(self.zone_bounds_m) / self.ground_res

    @property
    def outer_radius_px(self) -> float:
        return self.zone_bounds_m[-1] / self.ground_res

    def petal_range(self, i: int) -> tuple[float, float]:
        start = (self.angle_offset + i * self.theta_a) % 360.0
        return start, start + self.theta_a

    def zone_range(self, j: int) -> tuple[float, float]:
        b = self.zone_bounds_px
        return (0.0 if j == 0 else float(b[j - 1])), float(b[j])


class PixelGeom(NamedTuple):
    corner_angles: tuple[float, float, float, float]
    corner_dists: tuple[float, float, float, float]
    angle_range: tuple[float, float]
    dist_range: tuple[float, float]

    @property
    def arc_width(self) -> float:
        return self.angle_range[1] - self.angle_range[0]


def azimuth(dy, dx):
    """South-aligned azimuth in degrees, in [0, 360)."""
    a = np.degrees(np.arctan2(dx, dy)) % 360.0
    return np.where(a >= 360.0, 0.0, a)


def _covering_arcs(angles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimal arcs covering each row of corner angles, as (start, width)."""
    s = np.sort(angles, axis=-1)
    gaps = np.empty_like(s)
    gaps[..., :-1] = np.diff(s, axis=-1)
    gaps[..., -1] = s[..., 0] + 360.0 - s[..., -1]
    m = np.argmax(gaps, axis=-1)
    start = np.take_along_axis(s, ((m + 1) % s.shape[-1])[..., None], axis=-1)[..., 0]
    width = 360.0 - np.take_along_axis(gaps, m[..., None], axis=-1)[..., 0]
    return start, width


def _pixel_arrays(dy: np.ndarray, dx: np.ndarray):
    cy = dy[..., None] + _CORNERS[:, 0]
    cx = dx[..., None] + _CORNERS[:, 1]
    ang = azimuth(cy, cx)
    dist = np.hypot(cy, cx)
    start, width = _covering_arcs(ang)
    at_anchor = (np.abs(dy) < 0.5) & (np.abs(dx) < 0.5)
    start = np.where(at_anchor, 0.0, start)
    width = np.where(at_anchor, 360.0, width)
    return ang, dist, start, width


def pixel_geometry(dy: int, dx: int) -> PixelGeom:
    """Corner azimuths and distances of the pixel at offset (dy, dx).

    The anchor-containing pixel (0, 0) gets the full circle as its arc.
    """
    ang, dist, start, width = _pixel_arrays(np.array(float(dy)), np.array(float(dx)))
    return PixelGeom(
        corner_angles=tuple(float(a) for a in ang),
        corner_dists=tuple(float(d) for d in dist),
        angle_range=(float(start), float(start + width)),
        dist_range=(float(dist.min()), float(dist.max())),
    )


def _arc_overlap(start, width, p_start, p_width):
    """Length of the intersection of two circular arcs (degrees)."""
    total = 0.0
    for k in (-360.0, 0.0, 360.0):
        lo = np.maximum(start, p_start + k)
        hi = np.minimum(start + width, p_start + p_width + k)
        total = total + np.maximum(hi - lo, 0.0)
    return total


def petal_overlap(geom: PixelGeom, petal_angle_range: Sequence[float],
                  zone_dist_range: Sequence[float]) -> tuple[float, float, float]:
    """Return ``(contr, value, dist_overlap)`` of a pixel against one petal/zone cell."""
    p0, p1 = petal_angle_range
    z0, z1 = zone_dist_range
    p_width = p1 - p0
    a0, a1 = geom.angle_range
    overlap = float(_arc_overlap(a0 % 360.0, a1 - a0, p0 % 360.0, p_width))
    contr = overlap / p_width
    value = overlap / (a1 - a0)
    d0, d1 = geom.dist_range
    dist_overlap = max(0.0, min(d1, z1) - max(d0, z0))
    return contr, value, dist_overlap


def accept_pixel(contr, value, dist_overlap):
    """Petal/zone acceptance rule.

    The third angular clause is implied by the second (T2 > T1); it is kept
    so all three clauses stay visible. Threshold
    comparisons allow ``_TIE_EPS`` so that pixels split exactly in half by a
    petal boundary join both petals regardless of arctan rounding. Works
    elementwise on arrays as well as on scalars.
    """
    t1, t2 = T1 - _TIE_EPS, T2 - _TIE_EPS
    angular = (contr >= t1) | (value >= t1) | ((contr < t1) & (value >= t2))
    return angular & (dist_overlap > 0)


@dataclass(frozen=True, eq=False)
class PetalLUT:
    """Padded per-(petal, zone) pixel offsets around an anchor.

    ``offsets[j]`` has shape ``(n_a, s_max[j], 2)`` holding ``(dy, dx)``
    pairs; slots past ``counts[i, j]`` hold ``pad_sentinel``.
    """

    spec: PetalSpec
    offsets: tuple[np.ndarray, ...]
    counts: np.ndarray
    s_max: np.ndarray
    pad_sentinel: int = PAD_SENTINEL
    _flat: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_a(self) -> int:
        return self.spec.n_a

    @property
    def n_z(self) -> int:
        return self.spec.n_z

    def members(self, i: int, j: int) -> np.ndarray:
        return self.offsets[j][i, : self.counts[i, j]]

    def flat(self):
        """Concatenated non-pad offsets ordered by (petal, zone) plus segment bounds.

        Returns ``(dy, dx, seg_start, seg_len)``; segment ``i * n_z + j``
        holds the samples of petal ``i``, zone ``j``.
        """
        if not self._flat:
            dys, dxs = [], []
            for i in range(self.n_a):
                for j in range(self.n_z):
                    m = self.members(i, j)
                    dys.append(m[:, 0])
                    dxs.append(m[:, 1])
            seg_len = self.counts.reshape(-1).astype(np.int64)
            seg_start = np.concatenate([[0], np.cumsum(seg_len)[:-1]]).astype(np.int64)
            for name, arr in (
                ("dy", np.concatenate(dys).astype(np.int32)),
                ("dx", np.concatenate(dxs).astype(np.int32)),
                ("seg_start", seg_start),
                ("seg_len", seg_len),
            ):
                arr.setflags(write=False)
                self._flat[name] = arr
        f = self._flat
        return f["dy"], f["dx"], f["seg_start"], f["seg_len"]

    def occupancy(self) -> np.ndarray:
        """Raster of how many (petal, zone) cells claim each offset."""
        r = self.radius_px
        grid = np.zeros((2 * r + 1, 2 * r + 1), dtype=np.int32)
        dy, dx, _, _ = self.flat()
        np.add.at(grid, (dy + r, dx + r), 1)
        return grid

    @property
    def radius_px(self) -> int:
        return int(math.ceil(self.spec.outer_radius_px))

    def identical(self, other: "PetalLUT") -> bool:
        return self.to_bytes() == other.to_bytes()

    # -- binary container -------------------------------------------------

    def to_bytes(self) -> bytes:
        s = self.spec
        buf = io.BytesIO()
        buf.write(_LUT_MAGIC)
        buf.write(struct.pack("<H", _LUT_VERSION))
        buf.write(struct.pack("<iddd", s.level_index, s.theta_a, s.ground_res, s.angle_offset))
        buf.write(struct.pack("<II", s.n_a, s.n_z))
        buf.write(np.asarray(s.zone_bounds_m, dtype="<f8").tobytes())
        buf.write(self.s_max.astype("<u4").tobytes())
        buf.write(self.counts.astype("<u4").tobytes())
        for i in range(s.n_a):
            for j in range(s.n_z):
                buf.write(self.offsets[j][i].astype("<i4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "PetalLUT":
        try:
            return cls._parse(data)
        except (struct.error, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed PLUT container: {exc}") from None

    @classmethod
    def _parse(cls, data: bytes) -> "PetalLUT":
        view = memoryview(data)
        if bytes(view[:4]) != _LUT_MAGIC:
            raise FormatError("not a PLUT container")
        (version,) = struct.unpack_from("<H", view, 4)
        if version != _LUT_VERSION:
            raise FormatError(f"unsupported PLUT version {version}")
        pos = 6
        level, theta, res, offset = struct.unpack_from("<iddd", view, pos)
        pos += struct.calcsize("<iddd")
        n_a, n_z = struct.unpack_from("<II", view, pos)
        pos += 8
        bounds = np.frombuffer(view, "<f8", n_z, pos)
        pos += 8 * n_z
        spec = PetalSpec(theta, tuple(bounds), res, level, offset)
        if spec.n_a != n_a:
            raise FormatError("petal count does not match theta_a")
        s_max = np.frombuffer(view, "<u4", n_z, pos).astype(np.int32)
        pos += 4 * n_z
        counts = np.frombuffer(view, "<u4", n_a * n_z, pos).astype(np.int32).reshape(n_a, n_z)
        pos += 4 * n_a * n_z
        offsets = [np.empty((n_a, s_max[j], 2), dtype=np.int32) for j in range(n_z)]
        for i in range(n_a):
            for j in range(n_z):
                k = int(s_max[j]) * 2
                offsets[j][i] = np.frombuffer(view, "<i4", k, pos).reshape(-1, 2)
                pos += 4 * k
        if pos != len(data):
            raise FormatError("trailing bytes in PLUT container")
        return _freeze(spec, offsets, counts, s_max)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PetalLUT":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _freeze(spec, offsets, counts, s_max) -> PetalLUT:
    for arr in (*offsets, counts, s_max):
        arr.setflags(write=False)
    return PetalLUT(spec, tuple(offsets), counts, s_max)


def acceptance_matrix(spec: PetalSpec, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Boolean ``(n_pixels, n_a, n_z)`` acceptance of each offset by each cell."""
    dy = np.asarray(dy, dtype=float)
    dx = np.asarray(dx, dtype=float)
    _, dist, start, width = _pixel_arrays(dy, dx)
    d0, d1 = dist.min(axis=-1), dist.max(axis=-1)

    p_start = np.array([spec.petal_range(i)[0] for i in range(spec.n_a)])
    overlap = _arc_overlap(start[:, None], width[:, None], p_start[None, :], spec.theta_a)
    contr = overlap / spec.theta_a
    value = overlap / width[:, None]

    z = np.array([spec.zone_range(j) for j in range(spec.n_z)])
    dist_overlap = np.maximum(np.minimum(d1[:, None], z[:, 1]) - np.maximum(d0[:, None], z[:, 0]), 0.0)

    acc = accept_pixel(contr[:, :, None], value[:, :, None], dist_overlap[:, None, :])
    at_anchor = (np.abs(dy) < 0.5) & (np.abs(dx) < 0.5)
    acc[at_anchor] = False
    return acc


@functools.lru_cache(maxsize=64)
def build_lut(spec: PetalSpec) -> PetalLUT:
    """Scan the outer zone's bounding square row-major and bin every accepted offset."""
    radius = spec.outer_radius_px
    if radius < 1.0:
        raise ConfigError(f"outermost zone radius {radius:.3f} px is below one pixel")
    r = int(math.ceil(radius))
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    dy, dx = dy.ravel(), dx.ravel()
    acc = acceptance_matrix(spec, dy, dx)

    counts = acc.sum(axis=0).astype(np.int32)  # (n_a, n_z)
    s_max = counts.max(axis=0).astype(np.int32)
    offsets = []
    for j in range(spec.n_z):
        block = np.full((spec.n_a, s_max[j], 2), PAD_SENTINEL, dtype=np.int32)
        for i in range(spec.n_a):
            idx = np.flatnonzero(acc[:, i, j])
            block[i, : idx.size, 0] = dy[idx]
            block[i, : idx.size, 1] = dx[idx]
        offsets.append(block)
    return _freeze(spec, offsets, counts, s_max)


@dataclass
class SampledPetals:
    """Gathered petal samples: ``values`` is (n_z, n_a, C, S), ``mask`` is (n_z, n_a, S)."""

    values: np.ndarray
    mask: np.ndarray

    @property
    def valid_counts(self) -> np.ndarray:
        return self.mask.sum(axis=-1)


def sample_petals(fmap, anchor, lut: PetalLUT) -> SampledPetals:
    """Gather feature vectors around an integer anchor into petal/zone slots.

    Pad slots and offsets that fall off the map produce zero vectors with a
    false mask entry.
    """
    data = fmap.data
    c, h, w = data.shape
    ay, ax = int(anchor[0]), int(anchor[1])
    if not (0 <= ay < h and 0 <= ax < w):
        raise BoundsError(f"anchor ({ay}, {ax}) outside map of size {h}x{w}")
    s = int(lut.s_max.max()) if lut.s_max.size else 0
    values = np.zeros((lut.n_z, lut.n_a, c, s), dtype=data.dtype)
    mask = np.zeros((lut.n_z, lut.n_a, s), dtype=bool)
    for j in range(lut.n_z):
        off = lut.offsets[j]
        sj = off.shape[1]
        if sj == 0:
            continue
        pad = off[..., 0] == lut.pad_sentinel
        yy = np.where(pad, -1, ay + off[..., 0])
        xx = np.where(pad, -1, ax + off[..., 1])
        ok = ~pad & (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        g = data[:, np.where(ok, yy, 0), np.where(ok, xx, 0)]  # (C, n_a, sj)
        g = np.where(ok[None], g, 0.0)
        values[j, :, :, :sj] = np.moveaxis(g, 0, 1)
        mask[j, :, :sj] = ok
    return SampledPetals(values, mask)
