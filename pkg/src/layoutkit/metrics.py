"""Quantitative layout metrics: 3D IoU, corner error, pixel error.

Both layouts of a comparison must live in the same world frame and scale
(the pipeline emits camera-centered layouts, so synthetic ground truth
compares directly).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import project
from .solver import ManhattanLayout, point_in_polygon

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayoutMetrics:
    iou3d: float
    corner_error: float
    pixel_error: float

    def __post_init__(self):
        if not 0.0 <= self.iou3d <= 1.0:
            raise ValueError("iou3d must lie in [0, 1]")
        if self.corner_error < 0 or self.pixel_error < 0:
            raise ValueError("errors must be nonnegative")

    def to_json_dict(self, image_id=None) -> dict:
        d = {
            "iou3d": float(self.iou3d),
            "corner_error": float(self.corner_error),
            "pixel_error": float(self.pixel_error),
        }
        if image_id is not None:
            d["id"] = str(image_id)
        return d


def _raster_masks(va, vb, grid):
    """Inside masks of two polygons on a shared grid over their union bbox."""
    allv = np.vstack([va, vb])
    lo = allv.min(axis=0)
    hi = allv.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    xs = lo[0] + (np.arange(grid) + 0.5) / grid * span[0]
    zs = lo[1] + (np.arange(grid) + 0.5) / grid * span[1]
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gz.ravel()])
    cell = (span[0] / grid) * (span[1] / grid)

    return (
        np.asarray(point_in_polygon(pts, va)),
        np.asarray(point_in_polygon(pts, vb)),
        cell,
    )


def iou3d(pred: ManhattanLayout, gt: ManhattanLayout, grid=1024) -> float:
    """Volume IoU of two extruded layouts via top-down rasterization.

    All areas (both footprints and their intersection) are estimated on
    the same grid, so identical layouts score exactly 1 and the result is
    symmetric in its arguments.
    """
    ha = pred.ceiling_y - pred.floor_y
    hb = gt.ceiling_y - gt.floor_y
    if ha <= 0 or hb <= 0:
        raise ValueError("degenerate layout: ceiling must lie above floor")
    ma, mb, cell = _raster_masks(pred.vertices, gt.vertices, grid)
    area_a = float(np.count_nonzero(ma)) * cell
    area_b = float(np.count_nonzero(mb)) * cell
    inter_area = float(np.count_nonzero(ma & mb)) * cell
    overlap = max(0.0, min(pred.ceiling_y, gt.ceiling_y) - max(pred.floor_y, gt.floor_y))
    inter = inter_area * overlap
    union = area_a * ha + area_b * hb - inter
    return inter / union if union > 0 else 0.0


def _corner_points(corners):
    """(2n, 2) array of (u, v) points: tops then bottoms, column-major pairs."""
    u = np.asarray(corners.columns, dtype=np.float64)
    return u, np.asarray(corners.v_top, dtype=np.float64), np.asarray(corners.v_bot, dtype=np.float64)


def corner_error(pred, gt, width) -> float:
    """Mean corner distance as a percentage of the image diagonal.

    Corners are matched column-to-column by the circular order-preserving
    assignment minimizing total wraparound-aware L2 distance.  When counts
    differ, the shorter set is padded at the image center (flagged via a
    warning) so the metric stays total.
    """
    height = width / 2.0
    gu, gt_top, gt_bot = _corner_points(gt)
    if len(gu) == 0:
        raise ValueError("ground truth has no corners")
    pu, p_top, p_bot = _corner_points(pred)
    n = max(len(gu), len(pu))

    def pad(u, top, bot, n):
        k = n - len(u)
        if k > 0:
            log.warning("padding %d missing corners at image center", k)
            u = np.concatenate([u, np.full(k, width / 2.0)])
            top = np.concatenate([top, np.full(k, height / 2.0)])
            bot = np.concatenate([bot, np.full(k, height / 2.0)])
        return u, top, bot

    gu, gt_top, gt_bot = pad(gu, gt_top, gt_bot, n)
    pu, p_top, p_bot = pad(pu, p_top, p_bot, n)

    diag = float(np.hypot(width, height))
    best = np.inf
    for offset in range(n):
        idx = (np.arange(n) + offset) % n
        du = np.abs(pu - gu[idx])
        du = np.minimum(du, width - du)
        d_top = np.hypot(du, p_top - gt_top[idx])
        d_bot = np.hypot(du, p_bot - gt_bot[idx])
        total = float(np.sum(d_top) + np.sum(d_bot))
        if total < best:
            best = total
    return best / (2 * n) / diag * 100.0


def pixel_error(pred: ManhattanLayout, gt: ManhattanLayout, width) -> float:
    """Percentage of pixels whose surface class (ceiling/wall/floor) differs."""
    la = project.render_labels(pred, width)
    lb = project.render_labels(gt, width)
    return float(np.mean(la != lb)) * 100.0


def evaluate_layout(pred: ManhattanLayout, gt: ManhattanLayout, width, grid=1024) -> LayoutMetrics:
    """All three metrics for a layout pair, with corners from projection."""

    class _Projected:
        def __init__(self, layout):
            u, v_top, v_bot = project.corner_pixels(layout, width)
            u = np.mod(u, width)
            order = np.argsort(u, kind="stable")
            self.columns = u[order]
            self.v_top = v_top[order]
            self.v_bot = v_bot[order]

    return LayoutMetrics(
        iou3d=iou3d(pred, gt, grid=grid),
        corner_error=corner_error(_Projected(pred), _Projected(gt), width),
        pixel_error=pixel_error(pred, gt, width),
    )
