"""Depth evaluation metrics.

Per evaluated pixel p with ground truth y_p and prediction q_p:

    ratio_p = max(q_p / y_p, y_p / q_p)
    delta_i = fraction of pixels with ratio_p < 1.25**i
    rel     = mean(|y_p - q_p| / y_p)
    rms     = sqrt(mean((y_p - q_p)**2))
    log10   = mean(|log10(y_p) - log10(q_p)|)

Pixels are excluded when outside the crop rectangle, marked invalid, below
the minimum valid depth, or above the depth cap. Reports carry raw pixel
sums (hit counts as integers, error sums in float64) so pooling a set of
reports is exact and identical to evaluating the concatenated pixels.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import (BoundsError, ConfigError, DimensionError,
                     EvaluationError, InputError)

CSV_COLUMNS = ("delta1", "delta2", "delta3", "rel", "rms", "log10")

# Center-crop convention for 480-row x 640-col evaluation maps, stated as
# (row0, row1, col0, col1), half-open. Other resolutions scale these bounds
# proportionally (floor).
BASE_CROP = (45, 471, 41, 601)
BASE_SHAPE = (480, 640)


def default_crop(h, w):
    """BASE_CROP scaled from 480x640 to an h x w map."""
    r0, r1, c0, c1 = BASE_CROP
    bh, bw = BASE_SHAPE
    return (r0 * h // bh, r1 * h // bh, c0 * w // bw, c1 * w // bw)


@dataclass(frozen=True)
class EvalProtocol:
    """crop: None (off), "auto" (scaled default), or an explicit
    (row0, row1, col0, col1) half-open rectangle. max_depth: cap in meters
    or None. min_depth: smallest depth treated as valid."""

    crop: object = None
    max_depth: Optional[float] = None
    min_depth: float = 1e-3

    def __post_init__(self):
        if self.min_depth <= 0:
            raise ConfigError(f"min depth must be > 0, got {self.min_depth}")
        if self.max_depth is not None and self.max_depth <= self.min_depth:
            raise ConfigError(
                f"depth cap {self.max_depth} must exceed min depth "
                f"{self.min_depth}"
            )
        if self.crop is not None and self.crop != "auto":
            rect = tuple(int(v) for v in self.crop)
            if len(rect) != 4:
                raise ConfigError(f"crop must have 4 entries, got {self.crop}")
            object.__setattr__(self, "crop", rect)

    def rect_for(self, shape):
        if self.crop is None:
            return None
        if self.crop == "auto":
            return default_crop(*shape)
        return self.crop


class PixelSums(NamedTuple):
    count: int
    hits1: int
    hits2: int
    hits3: int
    abs_rel: float
    sq_err: float
    log10: float


@dataclass(frozen=True)
class MetricReport:
    delta1: float
    delta2: float
    delta3: float
    rel: float
    rms: float
    log10: float
    count: int
    sums: Optional[PixelSums] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_sums(cls, s):
        n = s.count
        return cls(
            delta1=s.hits1 / n,
            delta2=s.hits2 / n,
            delta3=s.hits3 / n,
            rel=s.abs_rel / n,
            rms=float(np.sqrt(s.sq_err / n)),
            log10=s.log10 / n,
            count=n,
            sums=s,
        )

    def row(self):
        return {c: getattr(self, c) for c in CSV_COLUMNS}

    def lines(self):
        out = [f"{c:7s} {getattr(self, c):.6f}" for c in CSV_COLUMNS]
        out.append(f"pixels  {self.count}")
        return out


def center_crop(arr, rect):
    """Half-open (row0, row1, col0, col1) sub-rectangle of a 2-D map."""
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D map, got shape {arr.shape}")
    r0, r1, c0, c1 = rect
    h, w = arr.shape
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise BoundsError(
            f"crop {rect} outside or empty for a {h}x{w} map"
        )
    return arr[r0:r1, c0:c1]


def evaluate_pair(pred, gt, protocol=EvalProtocol(), valid=None):
    """Metrics for one prediction/ground-truth pair of 2-D maps.

    valid optionally marks trustworthy ground-truth pixels. Predictions are
    clamped up to protocol.min_depth before the ratio and log computations;
    exclusion decisions are made on the ground truth only.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(
            f"prediction shape {pred.shape} != ground truth {gt.shape}"
        )
    if valid is None:
        valid = np.ones(gt.shape, dtype=bool)
    else:
        valid = np.asarray(valid)
        if valid.shape != gt.shape:
            raise DimensionError(
                f"validity mask shape {valid.shape} != ground truth "
                f"{gt.shape}"
            )
        valid = valid > 0
    rect = protocol.rect_for(gt.shape)
    if rect is not None:
        pred = center_crop(pred, rect)
        gt = center_crop(gt, rect)
        valid = center_crop(valid, rect)
    sel = valid & (gt >= protocol.min_depth)
    if protocol.max_depth is not None:
        sel &= gt <= protocol.max_depth
    n = int(sel.sum())
    if n == 0:
        raise EvaluationError("no pixels left to evaluate after masking")
    y = gt[sel]
    q = np.maximum(pred[sel], protocol.min_depth)
    ratio = np.maximum(q / y, y / q)
    sums = PixelSums(
        count=n,
        hits1=int(np.count_nonzero(ratio < 1.25)),
        hits2=int(np.count_nonzero(ratio < 1.25 ** 2)),
        hits3=int(np.count_nonzero(ratio < 1.25 ** 3)),
        abs_rel=float(np.sum(np.abs(y - q) / y)),
        sq_err=float(np.sum((y - q) ** 2)),
        log10=float(np.sum(np.abs(np.log10(y) - np.log10(q)))),
    )
    return MetricReport.from_sums(sums)


def aggregate(reports, per_image=False):
    """Combine per-sample reports.

    Default pools raw pixel sums, exactly equivalent to evaluating all
    pixels together. per_image=True instead averages each metric over the
    reports with equal weight per image.
    """
    reports = list(reports)
    if not reports:
        raise InputError("nothing to aggregate")
    if per_image:
        k = len(reports)
        return MetricReport(
            delta1=sum(r.delta1 for r in reports) / k,
            delta2=sum(r.delta2 for r in reports) / k,
            delta3=sum(r.delta3 for r in reports) / k,
            rel=sum(r.rel for r in reports) / k,
            rms=sum(r.rms for r in reports) / k,
            log10=sum(r.log10 for r in reports) / k,
            count=sum(r.count for r in reports),
        )
    for r in reports:
        if r.sums is None:
            raise InputError(
                "pixel-pooled aggregation needs reports carrying pixel sums"
            )
    total = PixelSums(
        count=sum(r.sums.count for r in reports),
        hits1=sum(r.sums.hits1 for r in reports),
        hits2=sum(r.sums.hits2 for r in reports),
        hits3=sum(r.sums.hits3 for r in reports),
        abs_rel=sum(r.sums.abs_rel for r in reports),
        sq_err=sum(r.sums.sq_err for r in reports),
        log10=sum(r.sums.log10 for r in reports),
    )
    return MetricReport.from_sums(total)
