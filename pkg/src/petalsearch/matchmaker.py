"""Orientation similarity between a street feature and satellite anchors.

The correlation score at shift ``w`` pairs street petal ``a`` with satellite
petal ``(a + w) mod N_s``, so ``w * theta_a`` is the azimuth of the street
image's left edge.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from . import kernels
from .errors import ConfigError, ShapeError
from .features import PetalFeature

DEFAULT_CS_FACTOR = 5
DEFAULT_RHO = 0.05
DEFAULT_DELTA_SCALE = 1.0


@dataclass
class SimilarityCurve:
    values: np.ndarray
    bin_width: float
    circular: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if abs(len(self.values) * self.bin_width - 360.0) > 1e-6:
            raise ShapeError(f"{len(self.values)} bins of {self.bin_width} deg do not cover 360 deg")

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class PriorConfig:
    """Gaussian orientation prior centred on ``p_theta``.

    ``delta_p`` is the stated noise level of the prior in degrees,
    ``rho_p`` the amplitude and ``delta_scale`` a multiplier on the width.
    """

    p_theta: float
    delta_p: float
    rho_p: float = DEFAULT_RHO
    delta_scale: float = DEFAULT_DELTA_SCALE

    def __post_init__(self):
        if not self.delta_p > 0:
            raise ConfigError(f"prior noise must be positive, got {self.delta_p}")
        if self.rho_p < 0:
            raise ConfigError(f"prior amplitude must be non-negative, got {self.rho_p}")
        if not self.delta_scale > 0:
            raise ConfigError(f"prior width scale must be positive, got {self.delta_scale}")

    @property
    def sigma(self) -> float:
        return 0.5 * self.delta_scale * self.delta_p

    @property
    def peak(self) -> float:
        return self.rho_p / (self.sigma * math.sqrt(2 * math.pi))


def wrap_deg(a):
    """Map angles to (-180, 180]."""
    r = np.mod(np.asarray(a, dtype=float) + 180.0, 360.0) - 180.0
    return np.where(r == -180.0, 180.0, r)


def _check_pair(street: np.ndarray, sat: np.ndarray):
    if street.shape[1:] != sat.shape[-2:]:
        raise ShapeError(f"channel/zone mismatch: street {street.shape} vs satellite {sat.shape}")
    if street.shape[0] > sat.shape[-3]:
        raise ShapeError("street feature has more petals than the satellite feature")


def correlate_fft(street: np.ndarray, sats: np.ndarray) -> np.ndarray:
    """Circular correlation of (N_g, C, N_z) against (K, N_s, C, N_z) stacks via rFFT.

    The street feature is zero-padded to N_s petals. Returns (K, N_s).
    """
    n_s = sats.shape[1]
    m = street.shape[1] * street.shape[2]
    st = np.zeros((n_s, m))
    st[: street.shape[0]] = street.reshape(street.shape[0], m)
    fs = np.fft.rfft(st, axis=0)  # (F, M)
    fk = np.fft.rfft(sats.reshape(sats.shape[0], n_s, m), axis=1)  # (K, F, M)
    spec = np.einsum("fm,kfm->kf", np.conj(fs), fk)
    return np.fft.irfft(spec, n=n_s, axis=1)


def correlate_many(street: np.ndarray, sats: np.ndarray, method: str = "fft") -> np.ndarray:
    street = np.asarray(street, dtype=np.float64)
    sats = np.asarray(sats, dtype=np.float64)
    _check_pair(street, sats)
    if method == "fft":
        return correlate_fft(street, sats)
    if method == "direct":
        n_g = street.shape[0]
        return kernels.correlate_direct(street.reshape(n_g, -1), sats.reshape(sats.shape[0], sats.shape[1], -1))
    raise ValueError(f"unknown correlation method {method!r}")


def circular_correlate(street: PetalFeature, sat: PetalFeature, method: str = "fft") -> SimilarityCurve:
    if abs(street.theta_a - sat.theta_a) > 1e-12:
        raise ShapeError(f"theta_a mismatch: {street.theta_a} vs {sat.theta_a}")
    values = correlate_many(street.data, sat.data[None], method=method)[0]
    return SimilarityCurve(values, sat.theta_a)


@functools.lru_cache(maxsize=32)
def smoothing_matrix(n: int, factor: int) -> np.ndarray:
    """Linear operator (n * factor, n) of periodic cubic-spline upsampling."""
    if factor < 1:
        raise ConfigError(f"smoothing factor must be >= 1, got {factor}")
    if factor == 1:
        mat = np.eye(n)
    elif n < 3:
        # too few knots for a periodic cubic; fall back to periodic linear
        x = np.arange(n * factor) / factor
        lo = np.floor(x).astype(int)
        t = x - lo
        mat = np.zeros((n * factor, n))
        mat[np.arange(n * factor), lo % n] += 1 - t
        mat[np.arange(n * factor), (lo + 1) % n] += t
    else:
        knots = np.arange(n + 1)
        basis = np.vstack([np.eye(n), np.eye(n)[:1]])
        spline = CubicSpline(knots, basis, bc_type="periodic")
        mat = spline(np.arange(n * factor) / factor)
        # samples at the knots are exact
        mat[::factor] = np.eye(n)
    mat.setflags(write=False)
    return mat


def smooth_values(values: np.ndarray, factor: int = DEFAULT_CS_FACTOR) -> np.ndarray:
    """Upsample curves along the last axis by ``factor``."""
    n = values.shape[-1]
    return values @ smoothing_matrix(n, factor).T


def smooth_curve(curve: SimilarityCurve, factor: int = DEFAULT_CS_FACTOR) -> SimilarityCurve:
    return SimilarityCurve(smooth_values(curve.values, factor), curve.bin_width / factor)


def prior_values(cfg: PriorConfig, n: int, bin_width: float) -> np.ndarray:
    sigma = cfg.sigma
    if sigma < 1e-6:
        raise ConfigError(f"prior width {sigma} deg underflows")
    d = wrap_deg(np.arange(n) * bin_width - cfg.p_theta)
    return cfg.rho_p / (sigma * math.sqrt(2 * math.pi)) * np.exp(-(d ** 2) / (2 * sigma ** 2))


def prior_curve(cfg: PriorConfig, n: int, bin_width: float) -> SimilarityCurve:
    if abs(n * bin_width - 360.0) > 1e-6:
        raise ConfigError(f"{n} bins of {bin_width} deg do not cover 360 deg")
    return SimilarityCurve(prior_values(cfg, n, bin_width), bin_width)


def best_orientation(curve: SimilarityCurve, prior: Optional[PriorConfig] = None) -> tuple[float, float]:
    """Argmax of the (prior-mixed) smoothed curve as ``(theta_deg, score)``.

    Ties resolve to the smallest shift.
    """
    mixed = curve.values
    if prior is not None:
        mixed = mixed + prior_values(prior, len(curve), curve.bin_width)
    w = int(np.argmax(mixed))
    return w * curve.bin_width, float(mixed[w])


def window_norms(sats: np.ndarray, n_g: int) -> np.ndarray:
    """L2 norm of the ``n_g`` consecutive petals starting at each shift, (K, N_s).

    Empty windows get norm 1 so their zero correlation stays zero.
    """
    k, n_s = sats.shape[:2]
    energy = np.square(sats.reshape(k, n_s, -1)).sum(axis=2)
    csum = np.concatenate([np.zeros((k, 1)), np.cumsum(np.concatenate([energy, energy], axis=1), axis=1)], axis=1)
    win = csum[:, n_g:n_g + n_s] - csum[:, :n_s]
    win = np.sqrt(np.maximum(win, 0.0))
    return np.where(win > 1e-12, win, 1.0)


def match_anchors(street: np.ndarray, sats: np.ndarray, theta_a: float,
                  prior: Optional[PriorConfig] = None, cs_factor: int = DEFAULT_CS_FACTOR):
    """Orientation and score per anchor for a normalized feature stack.

    With a partial field of view each shift is divided by the norm of the
    satellite petals it covers, so scores stay cosines between equally sized
    windows. Returns ``(thetas, scores, curves)`` where ``curves`` are the smoothed,
    prior-mixed similarity values of shape (K, N_s * cs_factor).
    """
    raw = correlate_many(street, sats)
    n_g, n_s = street.shape[0], sats.shape[1]
    if n_g < n_s:
        raw = raw / window_norms(sats, n_g)
    curves = smooth_values(raw, cs_factor)
    bin_width = theta_a / cs_factor
    if prior is not None:
        curves = curves + prior_values(prior, curves.shape[1], bin_width)[None, :]
    w = np.argmax(curves, axis=1)
    scores = curves[np.arange(len(w)), w]
    return w * bin_width, scores, curves
