"""Feature maps and petal aggregation for both views.

Both views are reduced by zone mean-pooling: satellite samples are averaged
per (petal, zone) cell of a LUT, street columns per (angle group, row band).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigError, FormatError, ShapeError
from .geometry import PetalLUT, SampledPetals

_FMAP_MAGIC = b"FMAP"
_FMAP_VERSION = 1
_FMAP_HEADER = struct.Struct("<4sHIIIf")


@dataclass(eq=False)
class FeatureMap:
    """A C x H x W feature grid; ``ground_res`` is None for street views."""

    data: np.ndarray
    ground_res: Optional[float] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ShapeError(f"feature map must be C x H x W with positive sizes, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ConfigError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def to_bytes(self) -> bytes:
        c, h, w = self.data.shape
        res = 0.0 if self.ground_res is None else float(self.ground_res)
        header = _FMAP_HEADER.pack(_FMAP_MAGIC, _FMAP_VERSION, c, h, w, res)
        return header + self.data.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FeatureMap":
        if len(data) < _FMAP_HEADER.size:
            raise FormatError("truncated FMAP header")
        magic, version, c, h, w, res = _FMAP_HEADER.unpack_from(data)
        if magic != _FMAP_MAGIC:
            raise FormatError("not an FMAP file")
        if version != _FMAP_VERSION:
            raise FormatError(f"unsupported FMAP version {version}")
        n = c * h * w
        if len(data) != _FMAP_HEADER.size + 4 * n:
            raise FormatError("FMAP payload size does not match header")
        arr = np.frombuffer(data, "<f4", n, _FMAP_HEADER.size).reshape(c, h, w)
        return cls(arr.astype(np.float64), None if res == 0.0 else float(res))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FeatureMap":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass(eq=False)
class PetalFeature:
    """An N_a x C x N_z polar descriptor of one observation point."""

    data: np.ndarray
    theta_a: float
    view_tag: str = "satellite"
    fov_deg: float = 360.0
    normalized: bool = False
    degenerate: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ShapeError(f"petal feature must be N_a x C x N_z, got {self.data.shape}")
        expected = self.fov_deg / self.theta_a
        if abs(expected - self.n_a) > 1e-9:
            raise ShapeError(f"{self.n_a} petals do not span fov {self.fov_deg} at theta_a {self.theta_a}")

    @property
    def n_a(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_z(self) -> int:
        return self.data.shape[2]

    def rotate(self, k: int) -> "PetalFeature":
        """Shift petal indexing so that petal ``k`` becomes petal 0."""
        return replace(self, data=np.roll(self.data, -k, axis=0))


# -- satellite view -------------------------------------------------------


def aggregate_satellite(samples: SampledPetals, theta_a: float) -> PetalFeature:
    """Mean over valid slots per (petal, channel, zone); empty cells are zero."""
    vals, mask = samples.values, samples.mask
    sums = (vals * mask[:, :, None, :]).sum(axis=-1)  # (n_z, n_a, C)
    cnt = mask.sum(axis=-1)[:, :, None]
    mean = np.where(cnt > 0, sums / np.maximum(cnt, 1), 0.0)
    return PetalFeature(np.transpose(mean, (1, 2, 0)), theta_a, "satellite", 360.0)


def pool_satellite(fmap: FeatureMap, anchors, lut: PetalLUT, backend=None) -> np.ndarray:
    """Petal features for many integer anchors at once.

    Returns an array of shape (K, n_a, C, n_z). Equivalent to
    ``aggregate_satellite(sample_petals(...))`` per anchor but runs in the
    compiled kernel when available.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.int64))
    dy, dx, seg_start, seg_len = lut.flat()
    hwc = _hwc(fmap)
    pooled = kernels.pool_anchors(hwc, anchors, dy, dx, seg_start, seg_len, backend=backend)
    k = anchors.shape[0]
    return pooled.reshape(k, lut.n_a, lut.n_z, fmap.channels).transpose(0, 1, 3, 2)


def _hwc(fmap: FeatureMap) -> np.ndarray:
    cached = getattr(fmap, "_hwc_cache", None)
    if cached is None or cached[0] is not fmap.data:
        arr = np.ascontiguousarray(np.moveaxis(fmap.data, 0, -1))
        fmap._hwc_cache = (fmap.data, arr)
        return arr
    return cached[1]


# -- street view ----------------------------------------------------------


def petal_count(fov: float, theta_a: float) -> int:
    n = round(fov / theta_a)
    if n < 1 or abs(n * theta_a - fov) > 1e-9:
        raise ConfigError(f"fov {fov} is not divisible by theta_a {theta_a}")
    return n


def split_street_columns(street: FeatureMap, theta_a: float, fov: float) -> np.ndarray:
    """Group street columns into ``fov / theta_a`` viewing-angle spans.

    Returns (N_g, C, H, w_a); group 0 starts at the left image edge.
    """
    n_g = petal_count(fov, theta_a)
    c, h, w = street.data.shape
    if w % n_g:
        raise ConfigError(f"street width {w} is not divisible into {n_g} groups")
    w_a = w // n_g
    return street.data.reshape(c, h, n_g, w_a).transpose(2, 0, 1, 3)


def default_zone_row_map(height: int, n_z: int) -> np.ndarray:
    """Equal row bands; the top band is the farthest zone."""
    if height < n_z:
        raise ConfigError(f"{height} rows cannot cover {n_z} zones")
    bands = np.array_split(np.arange(height), n_z)
    zone_of_row = np.empty(height, dtype=np.int64)
    for b, rows in enumerate(bands):
        zone_of_row[rows] = n_z - 1 - b
    return zone_of_row


def aggregate_street(grouped: np.ndarray, zone_row_map, theta_a: float, fov: float,
                     n_z: Optional[int] = None) -> PetalFeature:
    """Row-band mean pooling of grouped street columns into (N_g, C, N_z)."""
    zone_row_map = np.asarray(zone_row_map)
    n_g, c, h, _ = grouped.shape
    if zone_row_map.shape != (h,):
        raise ConfigError("zone_row_map must assign every street row")
    n_z = int(zone_row_map.max()) + 1 if n_z is None else n_z
    out = np.empty((n_g, c, n_z))
    for z in range(n_z):
        rows = zone_row_map == z
        if not rows.any():
            raise ConfigError(f"zone {z} receives no street rows")
        out[:, :, z] = grouped[:, :, rows, :].mean(axis=(2, 3))
    return PetalFeature(out, theta_a, "street", fov)


def street_feature(street: FeatureMap, theta_a: float, fov: float, n_z: int,
                   zone_row_map=None) -> PetalFeature:
    if zone_row_map is None:
        zone_row_map = default_zone_row_map(street.height, n_z)
    grouped = split_street_columns(street, theta_a, fov)
    return aggregate_street(grouped, zone_row_map, theta_a, fov, n_z)


# -- normalization --------------------------------------------------------


def normalize(f: PetalFeature) -> PetalFeature:
    """Scale to unit flattened L2 norm; an all-zero feature is returned flagged."""
    norm = float(np.linalg.norm(f.data))
    if norm == 0.0:
        return replace(f, data=f.data.copy(), normalized=False, degenerate=True)
    return replace(f, data=f.data * (1.0 / norm), normalized=True, degenerate=False)


def normalize_batch(data: np.ndarray) -> np.ndarray:
    """Unit-normalize a stack of features along all but the first axis; zeros stay zero."""
    flat = data.reshape(data.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1)
    scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
    return data * scale.reshape((-1,) + (1,) * (data.ndim - 1))
