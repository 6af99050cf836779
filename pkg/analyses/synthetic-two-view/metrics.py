"""Depth-error metrics with median alignment."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from errors import InsufficientDataError, InvalidInputError
from geometry import check_depth
from scale import median_depth


@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rms: float
    rms_log: float  # log10
    count: int
    scale: float = 1.0  # median-alignment factor applied to the prediction

    FIELDS = ("abs_rel", "sq_rel", "rms", "rms_log", "count", "scale")

    def as_table(self) -> str:
        rows = [
            ("Abs Rel", f"{self.abs_rel:.6f}"),
            ("Sq Rel", f"{self.sq_rel:.6f}"),
            ("RMS", f"{self.rms:.6f}"),
            ("RMS(log10)", f"{self.rms_log:.6f}"),
            ("pixels", f"{self.count}"),
            ("scale", f"{self.scale:.6g}"),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value:>12}" for name, value in rows)

    def as_csv_row(self) -> list:
        return [getattr(self, name) for name in self.FIELDS]


def _as_grid(depth) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    # flat depth lists are treated as a single row
    return depth[None, :] if depth.ndim == 1 else depth


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Accepts matching 1-D depth lists or HxW grids."""
    if np.shape(pred) != np.shape(gt):
        raise InvalidInputError(f"Prediction shape {np.shape(pred)} does not match ground truth shape {np.shape(gt)}")
    return check_depth(_as_grid(pred), "prediction"), check_depth(_as_grid(gt), "ground truth")


def median_scale(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_pair(pred, gt)
    return median_depth(gt).value / median_depth(pred).value


def median_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Scale pred so its lower median matches the ground truth's."""
    return np.asarray(pred, dtype=np.float64) * median_scale(pred, gt)


def compute_metrics(
    pred: np.ndarray,
    gt: np.ndarray,
    min_depth: Optional[float] = None,
    max_depth: Optional[float] = None,
    scale: float = 1.0,
) -> MetricReport:
    """Abs Rel, Sq Rel, RMS and RMS(log10) over the pixels whose GT lies in [min_depth, max_depth]."""
    pred, gt = _check_pair(pred, gt)
    keep = np.ones(gt.shape, dtype=bool)
    if min_depth is not None:
        keep &= gt >= min_depth
    if max_depth is not None:
        keep &= gt <= max_depth
    if not np.any(keep):
        raise InsufficientDataError(f"No ground-truth depth inside [{min_depth}, {max_depth}]")
    p, g = pred[keep], gt[keep]
    diff = p - g
    return MetricReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff * diff / g)),
        rms=float(np.sqrt(np.mean(diff * diff))),
        rms_log=float(np.sqrt(np.mean((np.log10(p) - np.log10(g)) ** 2))),
        count=int(p.size),
        scale=scale,
    )


def evaluate_depth(
    pred: np.ndarray,
    gt: np.ndarray,
    align: bool = True,
    min_depth: Optional[float] = None,
    max_depth: Optional[float] = None,
) -> MetricReport:
    scale = median_scale(pred, gt) if align else 1.0
    return compute_metrics(np.asarray(pred, dtype=np.float64) * scale, gt, min_depth, max_depth, scale)
