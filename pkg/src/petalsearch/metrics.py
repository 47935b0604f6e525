"""Pose errors, loss terms used as metrics, recall summaries and level masking."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInputError, ShapeError
from .features import PetalFeature
from .search import SearchResult, correct_anchor
from .synthworld import GroundTruth

DEFAULT_T = 0.05
LOSS_WEIGHTS = {"loc": 1.0, "theta": 1.0, "con": 5.0, "l2": 0.2}
DEFAULT_THRESHOLDS_M = (1.0, 5.0)
DEFAULT_THRESHOLDS_DEG = (1.0, 5.0)


def angle_loss(gt_theta: float, pred_theta: float) -> float:
    """Normalized angular distance in [0, 1]; 1 means antipodal."""
    d = math.fmod(gt_theta - pred_theta, 360.0)
    return abs(180.0 - abs(abs(d) - 180.0)) / 180.0


def contrastive_metric(scores, positive_index: int, T: float = DEFAULT_T) -> float:
    """Softmax cross-entropy of the positive anchor over all anchor scores."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if not -len(s) <= positive_index < len(s):
        raise IndexError(f"positive index {positive_index} out of range for {len(s)} scores")
    z = s / T
    m = z.max()
    lse = m + math.log(float(np.exp(z - m).sum()))
    return float(lse - z[positive_index])


def reconstruction_l2(street_feat: PetalFeature, matched_sat_crop: PetalFeature) -> float:
    a, b = np.asarray(street_feat.data), np.asarray(matched_sat_crop.data)
    if a.shape != b.shape:
        raise ShapeError(f"feature shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()))


def matched_crop(sat_feat: PetalFeature, theta_deg: float, fov: float) -> PetalFeature:
    """Satellite petals rotated so petal 0 faces ``theta_deg``, cut to ``fov``."""
    n_g = round(fov / sat_feat.theta_a)
    k = round(theta_deg / sat_feat.theta_a) % sat_feat.n_a
    data = np.roll(sat_feat.data, -k, axis=0)[:n_g]
    return PetalFeature(data, sat_feat.theta_a, "satellite", fov, sat_feat.normalized)


# -- level bookkeeping ----------------------------------------------------


def level_hits(anchors_per_level: Sequence, chosen: Sequence[int], spacings: Sequence[float],
               gt_location) -> list[bool]:
    """Whether each level's chosen anchor cell contains the ground truth."""
    hits = []
    for anchors, c, sp in zip(anchors_per_level, chosen, spacings):
        hits.append(correct_anchor(anchors, gt_location, sp) == c)
    return hits


def sample_mask(hits: Sequence[bool]) -> list[bool]:
    """Levels whose loss still counts: level 0, then each level after a hit."""
    mask, alive = [], True
    for h in hits:
        mask.append(alive)
        alive = alive and bool(h)
    return mask


def early_stop(batch_hits: Sequence[Sequence[bool]], level: int) -> bool:
    """True once no sample of the batch has found the correct anchor at ``level``."""
    return not any(sample_mask(h)[level] and h[level] for h in batch_hits)


def level_contrastive(anchors_per_level: Sequence, scores_per_level: Sequence, spacings: Sequence[float],
                      gt_location, T: float = DEFAULT_T) -> Optional[float]:
    """Mean contrastive metric over unmasked levels that contain a positive anchor."""
    chosen = [int(np.argmax(s)) for s in scores_per_level]
    mask = sample_mask(level_hits(anchors_per_level, chosen, spacings, gt_location))
    vals = []
    for anchors, scores, sp, active in zip(anchors_per_level, scores_per_level, spacings, mask):
        if not active:
            break
        pos = correct_anchor(anchors, gt_location, sp)
        if pos is not None:
            vals.append(contrastive_metric(scores, pos, T))
    return float(np.mean(vals)) if vals else None


# -- records and summaries ------------------------------------------------


@dataclass
class EvalRecord:
    id: str
    gt: GroundTruth
    pred_y: float
    pred_x: float
    pred_theta: float
    err_lat_m: float
    err_lon_m: float
    err_loc_m: float
    err_theta_deg: float
    con: Optional[float] = None
    l2: Optional[float] = None
    pred: Optional[SearchResult] = field(default=None, repr=False)

    @classmethod
    def build(cls, id: str, gt: GroundTruth, pred_y: float, pred_x: float, pred_theta: float,
              ground_res: float, con=None, l2=None, pred=None) -> "EvalRecord":
        ey = abs(pred_y - gt.gt_location[0]) * ground_res
        ex = abs(pred_x - gt.gt_location[1]) * ground_res
        et = angle_loss(gt.gt_theta, pred_theta) * 180.0
        return cls(id, gt, pred_y, pred_x, pred_theta, ey, ex, math.hypot(ey, ex), et, con, l2, pred)

    @classmethod
    def from_result(cls, id: str, gt: GroundTruth, pred: SearchResult, con=None, l2=None) -> "EvalRecord":
        return cls.build(id, gt, pred.location[0], pred.location[1], pred.orientation,
                         pred.ground_res, con, l2, pred)


def _recall(errors: np.ndarray, thr: float) -> float:
    return float(100.0 * np.mean(errors <= thr))


def summarize(records: Sequence[EvalRecord], thresholds_m=DEFAULT_THRESHOLDS_M,
              thresholds_deg=DEFAULT_THRESHOLDS_DEG) -> dict:
    """Recalls in percent, mean/median errors and the weighted loss aggregate.

    Loss terms missing from every record (contrastive, reconstruction) are
    reported as None and left out of the weighted total.
    """
    if not records:
        raise EmptyInputError("no records to summarize")
    err = {
        "lat": np.array([r.err_lat_m for r in records]),
        "lon": np.array([r.err_lon_m for r in records]),
        "loc": np.array([r.err_loc_m for r in records]),
        "theta": np.array([r.err_theta_deg for r in records]),
    }
    recall = {}
    for axis in ("lat", "lon", "loc"):
        for t in thresholds_m:
            recall[f"{axis}@{t:g}m"] = _recall(err[axis], t)
    for t in thresholds_deg:
        recall[f"theta@{t:g}deg"] = _recall(err["theta"], t)
    stats = {f"{k}_{fn.__name__}": float(fn(v)) for k, v in err.items() for fn in (np.mean, np.median)}

    losses = {
        "loc": float(np.mean(err["loc"])),
        "theta": float(np.mean(err["theta"]) / 180.0),
    }
    for key in ("con", "l2"):
        vals = [getattr(r, key) for r in records if getattr(r, key) is not None]
        losses[key] = float(np.mean(vals)) if vals else None
    losses["total"] = sum(LOSS_WEIGHTS[k] * v for k, v in losses.items() if v is not None)
    return {"count": len(records), "recall": recall, "errors": stats, "losses": losses}


def report_rows(report: dict) -> list[tuple[str, str]]:
    """Flat (metric, value) rows with fixed formatting."""
    rows = [("count", str(report["count"]))]
    rows += [(f"r_{k}", f"{v:.2f}") for k, v in report["recall"].items()]
    rows += [(k, f"{v:.4f}") for k, v in report["errors"].items()]
    rows += [(f"loss_{k}", "" if v is None else f"{v:.6f}") for k, v in report["losses"].items()]
    return rows


def report_markdown(report: dict) -> str:
    rec, err = report["recall"], report["errors"]
    head = [k.replace("@", " r@") for k in rec] + ["loc mean m", "loc median m", "theta mean deg", "theta median deg"]
    vals = [f"{v:.2f}" for v in rec.values()] + [
        f"{err['loc_mean']:.2f}", f"{err['loc_median']:.2f}",
        f"{err['theta_mean']:.2f}", f"{err['theta_median']:.2f}",
    ]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head), "| " + " | ".join(vals) + " |"]
    return "\n".join(lines) + "\n"
