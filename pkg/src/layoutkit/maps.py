"""Probability maps: ground-truth rendering, augmentation, loss, extraction.

Boundary maps are 3-channel (wall-wall, ceiling-wall, wall-floor); corner
maps are 1-channel.  Ground truth is rendered as thin curves, dilated with
a radius-4 disk, smoothed with a 20x20 Gaussian (sigma = 20/6) and
renormalized so every connected blob peaks at 1.0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import project
from .errors import InsufficientCorners
from .geom import EquirectImage, read_eqmp, write_eqmp
from .solver import ManhattanLayout, point_in_polygon

DILATION_RADIUS = 4
GAUSSIAN_KERNEL = 20
GAUSSIAN_SIGMA = GAUSSIAN_KERNEL / 6.0
MIN_PEAK_SEPARATION = 20
PEAK_RESPONSE_FLOOR = 0.05
SIXTH_COLUMN_THRESHOLD = 0.05


@dataclass(frozen=True)
class ProbMaps:
    """Boundary (3-channel) and corner (1-channel) probability maps."""

    boundary: EquirectImage
    corner: EquirectImage

    def __post_init__(self):
        if self.boundary.channels != 3:
            raise ValueError("boundary map must have 3 channels")
        if self.corner.channels != 1:
            raise ValueError("corner map must have 1 channel")
        if self.boundary.data.shape[:2] != self.corner.data.shape[:2]:
            raise ValueError("boundary and corner maps must share dimensions")
        for name, img in (("boundary", self.boundary), ("corner", self.corner)):
            if img.data.min() < 0.0 or img.data.max() > 1.0:
                raise ValueError(f"{name} map values must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.boundary.width

    @property
    def height(self) -> int:
        return self.boundary.height

    @classmethod
    def from_arrays(cls, boundary, corner) -> "ProbMaps":
        return cls(EquirectImage(boundary), EquirectImage(corner))

    def corner_2d(self) -> np.ndarray:
        return self.corner.data[:, :, 0]

    def save_eqmp(self, path) -> None:
        """Single EQMP with channels [wall-wall, ceiling-wall, wall-floor, corner]."""
        stacked = np.concatenate([self.boundary.data, self.corner.data], axis=2)
        write_eqmp(path, stacked)

    @classmethod
    def load_eqmp(cls, path) -> "ProbMaps":
        data = read_eqmp(path)
        if data.shape[2] != 4:
            raise ValueError(f"{path}: expected 4 channels, got {data.shape[2]}")
        return cls.from_arrays(np.clip(data[:, :, :3], 0.0, 1.0), np.clip(data[:, :, 3:], 0.0, 1.0))


@dataclass(frozen=True)
class CornerSet:
    """Extracted corner columns with their top/bottom rows.

    Columns are strictly increasing with wraparound-aware gaps of at least
    MIN_PEAK_SEPARATION pixels; per column the top row lies above the
    bottom row.  Confidence is the mean map value at the two peaks.
    """

    columns: np.ndarray
    v_top: np.ndarray
    v_bot: np.ndarray
    conf: np.ndarray
    width: int

    def __post_init__(self):
        object.__setattr__(self, "columns", np.asarray(self.columns, dtype=np.float64))
        object.__setattr__(self, "v_top", np.asarray(self.v_top, dtype=np.float64))
        object.__setattr__(self, "v_bot", np.asarray(self.v_bot, dtype=np.float64))
        object.__setattr__(self, "conf", np.asarray(self.conf, dtype=np.float64))
        u = self.columns
        if len(u) >= 2:
            if np.any(np.diff(u) <= 0):
                raise ValueError("columns must be strictly increasing")
            gaps = np.mod(np.roll(u, -1) - u, self.width)
            if np.any(gaps < MIN_PEAK_SEPARATION):
                raise ValueError(f"column gaps must be >= {MIN_PEAK_SEPARATION} px")
        if np.any(self.v_top >= self.v_bot):
            raise ValueError("top rows must lie above bottom rows")

    def __len__(self) -> int:
        return len(self.columns)

    def select(self, indices) -> "CornerSet":
        idx = np.asarray(indices, dtype=np.int64)
        return CornerSet(self.columns[idx], self.v_top[idx], self.v_bot[idx], self.conf[idx], self.width)

    def roll(self, k) -> "CornerSet":
        """Shift all columns by k pixels (wraparound), preserving sort order."""
        u = np.mod(self.columns + k, self.width)
        order = np.argsort(u, kind="stable")
        return CornerSet(u[order], self.v_top[order], self.v_bot[order], self.conf[order], self.width)

    def to_json_dict(self) -> dict:
        return {
            "corners": [
                {"u": float(u), "v_top": float(t), "v_bot": float(b), "conf": float(c)}
                for u, t, b, c in zip(self.columns, self.v_top, self.v_bot, self.conf)
            ]
        }

    @classmethod
    def from_json_dict(cls, d, width) -> "CornerSet":
        rec = d["corners"]
        return cls(
            np.array([r["u"] for r in rec]),
            np.array([r["v_top"] for r in rec]),
            np.array([r["v_bot"] for r in rec]),
            np.array([r["conf"] for r in rec]),
            width,
        )

    def save_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


@dataclass(frozen=True)
class LossWeights:
    """Weights for the map-comparison loss; all must be nonnegative."""

    alpha: float = 1.0
    beta: float = 1.0
    tau: float = 0.01
    background_reweight: float = 0.2

    def __post_init__(self):
        if min(self.alpha, self.beta, self.tau, self.background_reweight) < 0:
            raise ValueError("loss weights must be nonnegative")


# ---------------------------------------------------------------------------
# Ground-truth rendering


def _wrap_dilate(mask, radius=DILATION_RADIUS):
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    disk = (yy * yy + xx * xx) <= radius * radius
    pad = radius + 1
    padded = np.pad(mask > 0, ((0, 0), (pad, pad)), mode="wrap")
    dilated = ndimage.binary_dilation(padded, structure=disk)
    return dilated[:, pad:-pad].astype(np.float64)


def _wrap_smooth(img, sigma=GAUSSIAN_SIGMA):
    return ndimage.gaussian_filter(img, sigma=sigma, truncate=3.0, mode=("nearest", "wrap"))


def wrap_labels(mask):
    """Connected components with column wraparound merged."""
    labels, n = ndimage.label(mask)
    if n == 0:
        return labels, 0
    # union labels that touch across the seam
    parent = list(range(n + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    left = labels[:, 0]
    right = labels[:, -1]
    for a, b in zip(left, right):
        if a and b and find(a) != find(b):
            parent[find(a)] = find(b)
    remap = np.array([find(i) for i in range(n + 1)])
    return remap[labels], n


def _normalize_blobs(img, support_eps=1e-9):
    """Scale each connected blob so its peak value is exactly 1."""
    out = img.copy()
    labels, n = wrap_labels(img > support_eps)
    if n == 0:
        return out
    for lab in np.unique(labels):
        if lab == 0:
            continue
        sel = labels == lab
        peak = out[sel].max()
        if peak > 0:
            out[sel] /= peak
    return np.clip(out, 0.0, 1.0)


def _finalize_channel(binary):
    return _normalize_blobs(_wrap_smooth(_wrap_dilate(binary)))


def render_ground_truth(layout: ManhattanLayout, width) -> ProbMaps:
    """Render corner and boundary probability maps for a layout.

    Corners become dilated, smoothed blobs with peak 1; the three boundary
    channels hold the wall-wall verticals, the ceiling-wall ring and the
    wall-floor ring.  The camera must be strictly inside the layout with
    the ceiling above it and the floor below.
    """
    if not point_in_polygon(layout.camera_xz, layout.vertices):
        raise ValueError("camera must be strictly inside the layout")
    if not layout.ceiling_y > layout.camera_y > layout.floor_y:
        raise ValueError("require ceiling above camera above floor")
    height = width // 2
    u, v_top, v_bot = project.corner_pixels(layout, width)

    corner = np.zeros((height, width))
    cols = np.mod(np.rint(u).astype(np.int64), width)
    rows_top = np.clip(np.rint(v_top).astype(np.int64), 0, height - 1)
    rows_bot = np.clip(np.rint(v_bot).astype(np.int64), 0, height - 1)
    corner[rows_top, cols] = 1.0
    corner[rows_bot, cols] = 1.0

    wall_wall = np.zeros((height, width))
    for c, rt, rb in zip(cols, rows_top, rows_bot):
        wall_wall[rt : rb + 1, c] = 1.0

    ceil_wall = np.zeros((height, width))
    wall_floor = np.zeros((height, width))
    n = layout.wall_count
    for i in range(n):
        for level, target in (("ceiling", ceil_wall), ("floor", wall_floor)):
            ns = project.adaptive_edge_samples(layout, i, level, width)
            eu, ev = project.edge_polyline_pixels(layout, i, level, ns, width)
            project.stamp_polyline(target, eu, ev, width)

    boundary = np.stack(
        [_finalize_channel(wall_wall), _finalize_channel(ceil_wall), _finalize_channel(wall_floor)],
        axis=2,
    )
    return ProbMaps.from_arrays(boundary, _finalize_channel(corner)[:, :, None])


# ---------------------------------------------------------------------------
# Augmentation


def augment(obj, mode, amount=None):
    """Apply roll(k) / flip / gamma(g) to an image or probability maps.

    Gamma applies only to image-valued inputs with intensities in [0, 1]
    and gamma in [0.5, 2]; probability-map targets only support roll/flip.
    """
    if isinstance(obj, ProbMaps):
        if mode == "gamma":
            raise ValueError("gamma augmentation does not apply to probability maps")
        return ProbMaps(augment(obj.boundary, mode, amount), augment(obj.corner, mode, amount))
    if not isinstance(obj, EquirectImage):
        raise TypeError("augment expects an EquirectImage or ProbMaps")

    if mode == "roll":
        if amount is None or int(amount) != amount:
            raise ValueError("roll requires an integer column shift")
        return EquirectImage(np.roll(obj.data, int(amount), axis=1))
    if mode == "flip":
        return EquirectImage(obj.data[:, ::-1])
    if mode == "gamma":
        if amount is None or not 0.5 <= amount <= 2.0:
            raise ValueError("gamma must lie in [0.5, 2]")
        if obj.data.min() < 0.0 or obj.data.max() > 1.0:
            raise ValueError("gamma requires normalized intensities in [0, 1]")
        return EquirectImage(np.power(obj.data, amount))
    raise ValueError(f"unknown augmentation mode {mode!r}")


# ---------------------------------------------------------------------------
# Loss


def _bce(pred, gt, background_reweight):
    p = np.clip(pred, 1e-7, 1.0 - 1e-7)
    terms = -(gt * np.log(p) + (1.0 - gt) * np.log(1.0 - p))
    weights = np.where(gt < 0.01, background_reweight, 1.0)
    n = pred.shape[0] * pred.shape[1]  # image resolution, not channel count
    return float(np.sum(terms * weights) / n)


def eval_loss(pred: ProbMaps, gt: ProbMaps, d_pred=None, d_gt=None, weights=None) -> float:
    """Weighted cross entropy of both maps plus the 3D parameter distance.

    ``d_pred``/``d_gt`` may be CuboidParams or 6-vectors; omit both to score
    maps alone.  Background pixels (gt < 0.01) are down-weighted by
    ``weights.background_reweight``.
    """
    w = weights or LossWeights()
    if pred.boundary.data.shape != gt.boundary.data.shape or pred.corner.data.shape != gt.corner.data.shape:
        raise ValueError("prediction and ground truth dimensions differ")
    loss = w.alpha * _bce(pred.boundary.data, gt.boundary.data, w.background_reweight)
    loss += w.beta * _bce(pred.corner.data, gt.corner.data, w.background_reweight)
    if (d_pred is None) != (d_gt is None):
        raise ValueError("provide both cuboid parameter vectors or neither")
    if d_pred is not None:
        dp = d_pred.as_vector() if hasattr(d_pred, "as_vector") else np.asarray(d_pred, dtype=np.float64)
        dg = d_gt.as_vector() if hasattr(d_gt, "as_vector") else np.asarray(d_gt, dtype=np.float64)
        loss += w.tau * float(np.linalg.norm(dp - dg))
    return loss


# ---------------------------------------------------------------------------
# Corner extraction


def _circular_local_maxima(signal):
    left = np.roll(signal, 1)
    right = np.roll(signal, -1)
    return np.where((signal > left) & (signal >= right) & (signal > 0))[0]


def _nms_peaks(signal, candidates, min_separation, circular_length=None):
    """Greedy strongest-first suppression with minimum index separation."""
    order = candidates[np.argsort(signal[candidates], kind="stable")[::-1]]
    kept = []
    for idx in order:
        ok = True
        for k in kept:
            d = abs(idx - k)
            if circular_length is not None:
                d = min(d, circular_length - d)
            if d < min_separation:
                ok = False
                break
        if ok:
            kept.append(int(idx))
    return kept


def _column_response(data):
    return data.sum(axis=0)


def _as_corner_array(m_c):
    if isinstance(m_c, ProbMaps):
        return m_c.corner_2d()
    if isinstance(m_c, EquirectImage):
        if m_c.channels != 1:
            raise ValueError("corner map must have a single channel")
        return m_c.data[:, :, 0]
    arr = np.asarray(m_c, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    return arr


def extract_corners(m_c, min_separation=MIN_PEAK_SEPARATION, response_floor=PEAK_RESPONSE_FLOOR) -> CornerSet:
    """Find corner columns and their two row peaks.

    Column responses are row sums; peaks are kept strongest-first with a
    wraparound-aware separation of ``min_separation`` pixels and must
    exceed ``response_floor`` of the maximum response.  Per column the two
    largest row maxima (also separation-suppressed) become the top and
    bottom corner.
    """
    data = _as_corner_array(m_c)
    height, width = data.shape
    resp = _column_response(data)
    if resp.max() <= 0:
        raise InsufficientCorners("corner map is empty")
    candidates = _circular_local_maxima(resp)
    kept = _nms_peaks(resp, candidates, min_separation, circular_length=width)
    kept = [c for c in kept if resp[c] >= response_floor * resp.max()]

    cols, tops, bots, confs = [], [], [], []
    for c in sorted(kept):
        profile = data[:, c]
        rows = np.where((profile > np.roll(profile, 1)) & (profile >= np.roll(profile, -1)) & (profile > 0))[0]
        rows = [r for r in rows if 0 < r < height - 1]
        if len(rows) < 2:
            continue
        peaks = _nms_peaks(profile, np.asarray(rows), min_separation)
        if len(peaks) < 2:
            continue
        two = sorted(peaks[:2])
        cols.append(float(c))
        tops.append(float(two[0]))
        bots.append(float(two[1]))
        confs.append(float(0.5 * (profile[two[0]] + profile[two[1]])))

    if len(cols) < 4:
        raise InsufficientCorners(
            f"found only {len(cols)} corner columns", found_columns=cols
        )
    return CornerSet(np.array(cols), np.array(tops), np.array(bots), np.array(confs), width)


def decide_wall_count(m_c, threshold=SIXTH_COLUMN_THRESHOLD, min_separation=MIN_PEAK_SEPARATION) -> int:
    """Choose 4 or 6 walls from the corner map's column responses.

    Responses are circularly smoothed and baseline-subtracted, then peak
    candidates are separation-suppressed and ranked.  Six walls are
    generated when the sixth-strongest column's response reaches at least
    ``threshold`` of the strongest (inclusive); missing columns count as 0.
    """
    data = _as_corner_array(m_c)
    width = data.shape[1]
    resp = _column_response(data)
    if resp.max() <= 0:
        return 4
    smoothed = ndimage.gaussian_filter1d(resp, sigma=3.0, mode="wrap")
    adjusted = np.maximum(smoothed - np.median(smoothed), 0.0)
    candidates = _circular_local_maxima(adjusted)
    if candidates.size == 0:
        return 4
    kept = _nms_peaks(adjusted, candidates, min_separation, circular_length=width)
    if len(kept) < 6 or adjusted[kept[0]] <= 0:
        return 4
    ratio = adjusted[kept[5]] / adjusted[kept[0]]
    return 6 if ratio >= threshold else 4
