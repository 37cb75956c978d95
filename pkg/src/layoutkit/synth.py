"""Synthetic Manhattan rooms: the oracle test bed for the whole pipeline.

Rooms are generated camera-centered (camera at the x-z origin, floor at
y = 0) with constraints that keep every projected corner comfortably
inside the extraction limits: azimuth gaps and top/bottom row gaps above
the 20 px suppression radius, and corners away from the poles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import project
from .geom import EquirectImage
from .maps import ProbMaps, wrap_labels
from .solver import ManhattanLayout, distance_to_boundary, point_in_polygon

MIN_COLUMN_GAP = 22.0
MIN_ROW_GAP = 26.0
POLE_MARGIN = 18.0


@dataclass(frozen=True)
class RoomSpec:
    """Generator inputs that produced a synthetic room."""

    seed: int
    wall_count: int
    dims: tuple
    camera_height_fraction: float
    yaw: float


def _notched_rectangle(rng, w, l):
    """Rectangle with one corner notched off; exactly one reflex vertex."""
    nw = rng.uniform(0.25, 0.6) * w
    nl = rng.uniform(0.25, 0.6) * l
    corner = rng.integers(0, 4)
    if corner == 0:  # notch the (w, l) corner
        v = [[0, 0], [0, l], [w - nw, l], [w - nw, l - nl], [w, l - nl], [w, 0]]
    elif corner == 1:  # (0, l)
        v = [[0, 0], [0, l - nl], [nw, l - nl], [nw, l], [w, l], [w, 0]]
    elif corner == 2:  # (0, 0)
        v = [[nw, 0], [nw, nl], [0, nl], [0, l], [w, l], [w, 0]]
    else:  # (w, 0)
        v = [[0, 0], [0, l], [w, l], [w, nl], [w - nw, nl], [w - nw, 0]]
    return np.asarray(v, dtype=np.float64)


def _azimuth_order_matches_boundary(verts, cam):
    rel = verts - cam
    az = np.arctan2(rel[:, 0], rel[:, 1])
    order = np.argsort(az)
    pos = np.empty(len(verts), dtype=np.int64)
    pos[order] = np.arange(len(verts))
    steps = np.mod(np.diff(np.concatenate([pos, pos[:1]])), len(verts))
    return np.all(steps == 1) or np.all(steps == len(verts) - 1)


def _projection_ok(layout: ManhattanLayout, width):
    u, v_top, v_bot = project.corner_pixels(layout, width)
    height = width / 2
    gaps = np.mod(np.roll(np.sort(np.mod(u, width)), -1) - np.sort(np.mod(u, width)), width)
    if np.any(gaps < MIN_COLUMN_GAP):
        return False
    if np.any(v_bot - v_top < MIN_ROW_GAP):
        return False
    if np.any(v_top < POLE_MARGIN) or np.any(v_bot > height - POLE_MARGIN):
        return False
    return True


def gen_room(seed, wall_count=4, width=1024, max_attempts=500):
    """Deterministically generate a room layout satisfying all invariants.

    Returns (RoomSpec, ManhattanLayout) with the layout camera-centered and
    vertices in increasing-azimuth order.  Raises RuntimeError if the
    constraints cannot be met within ``max_attempts`` resamples.
    """
    if wall_count not in (4, 6):
        raise ValueError("wall_count must be 4 or 6")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        w, l = rng.uniform(2.0, 8.0, size=2)
        room_h = rng.uniform(2.0, 8.0)
        frac = rng.uniform(0.3, 0.7)
        yaw = rng.uniform(-np.pi / 4, np.pi / 4)
        if wall_count == 4:
            verts = np.array([[0, 0], [0, l], [w, l], [w, 0]], dtype=np.float64)
        else:
            verts = _notched_rectangle(rng, w, l)
        cam = np.array([rng.uniform(0.5, w - 0.5), rng.uniform(0.5, l - 0.5)])
        if not point_in_polygon(cam, verts):
            continue
        if distance_to_boundary(cam, verts) < 0.5:
            continue
        if not _azimuth_order_matches_boundary(verts, cam):
            continue
        rel = verts - cam
        az = np.arctan2(rel[:, 0], rel[:, 1])
        layout = ManhattanLayout(
            vertices=rel[np.argsort(az)],
            camera_xz=np.zeros(2),
            camera_height=frac * room_h,
            floor_y=0.0,
            ceiling_y=room_h,
        )
        if not _projection_ok(layout, width):
            continue
        layout.validate()
        spec = RoomSpec(
            seed=int(seed),
            wall_count=wall_count,
            dims=(float(w), float(l), float(room_h)),
            camera_height_fraction=float(frac),
            yaw=float(yaw),
        )
        return spec, layout
    raise RuntimeError(f"could not generate a valid room for seed {seed}")


def corrupt_maps(maps_in: ProbMaps, blur_sigma=0.0, noise_sigma=0.0, dropout=0.0, seed=0) -> ProbMaps:
    """Emulate imperfect predictions: blur, additive noise, corner dropout.

    Corner blobs are identified on the clean map, then a round(dropout *
    n_blobs) subset is zeroed after blur and noise.  Deterministic in
    ``seed``; outputs are clamped to [0, 1].
    """
    if min(blur_sigma, noise_sigma, dropout) < 0 or dropout >= 1:
        raise ValueError("corruption parameters out of range")
    rng = np.random.default_rng(seed)
    boundary = maps_in.boundary.data.copy()
    corner = maps_in.corner.data[:, :, 0].copy()

    labels, _ = wrap_labels(corner > 1e-9)
    blob_ids = [int(lab) for lab in np.unique(labels) if lab != 0]

    if blur_sigma > 0:
        for ch in range(3):
            boundary[:, :, ch] = ndimage.gaussian_filter(
                boundary[:, :, ch], sigma=blur_sigma, mode=("nearest", "wrap")
            )
        corner = ndimage.gaussian_filter(corner, sigma=blur_sigma, mode=("nearest", "wrap"))
    if noise_sigma > 0:
        boundary = boundary + rng.normal(0.0, noise_sigma, boundary.shape)
        corner = corner + rng.normal(0.0, noise_sigma, corner.shape)
    if dropout > 0 and blob_ids:
        n_drop = int(round(dropout * len(blob_ids)))
        chosen = rng.choice(len(blob_ids), size=n_drop, replace=False)
        pad = int(np.ceil(3.0 * blur_sigma)) + 1 if blur_sigma > 0 else 0
        for ci in sorted(chosen):
            mask = labels == blob_ids[int(ci)]
            if pad:
                mask = ndimage.binary_dilation(mask, iterations=pad)
            corner[mask] = 0.0

    boundary = np.clip(boundary, 0.0, 1.0)
    corner = np.clip(corner, 0.0, 1.0)
    return ProbMaps.from_arrays(boundary, corner[:, :, None])


def render_wireframe_pano(
    layout: ManhattanLayout,
    width,
    rotation=None,
    line_value=0.0,
    background=1.0,
    thickness=2,
    blur_sigma=0.0,
    wall_grid=3,
) -> EquirectImage:
    """Render the room's edges as dark lines on a light panorama.

    ``rotation`` (scene rotation, camera-centered) is applied to the 3D
    edge points before projection, so rotated renders stay crisp.
    ``wall_grid`` adds that many interior vertical and horizontal seam
    lines per wall (door frames, panels), giving detectors realistic
    Manhattan line evidence beyond the 12 room edges.  A small
    ``blur_sigma`` produces smooth gradients for resampling tests.
    """
    height = width // 2
    cam = np.array([layout.camera_xz[0], layout.camera_y, layout.camera_xz[1]])
    ss = 2  # supersampling factor; stamped lines are antialiased on the way down
    sw, sh = width * ss, height * ss
    mask = np.zeros((sh, sw))
    top, bot = project.corner_points_3d(layout)

    segments = []
    n = layout.wall_count
    for i in range(n):
        segments.append((top[i], bot[i]))  # vertical wall-wall edge
        segments.append((top[i], top[(i + 1) % n]))
        segments.append((bot[i], bot[(i + 1) % n]))
        for k in range(1, wall_grid + 1):
            f = k / (wall_grid + 1.0)
            a_top = top[i] + f * (top[(i + 1) % n] - top[i])
            a_bot = bot[i] + f * (bot[(i + 1) % n] - bot[i])
            segments.append((a_top, a_bot))  # vertical seam on the wall
            lev_top = top[i] + f * (bot[i] - top[i])
            lev_end = top[(i + 1) % n] + f * (bot[(i + 1) % n] - top[(i + 1) % n])
            segments.append((lev_top, lev_end))  # horizontal seam

    for a, b in segments:
        length = np.linalg.norm(b - a)
        ns = int(np.clip(np.ceil(length * sw), 256, 32768))
        t = np.linspace(0.0, 1.0, ns)
        pts = a[None, :] + t[:, None] * (b - a)[None, :]
        rel = pts - cam
        if rotation is not None:
            rel = rel @ np.asarray(rotation, dtype=np.float64).T
        theta = np.arctan2(rel[:, 0], rel[:, 2])
        phi = np.arctan2(rel[:, 1], np.hypot(rel[:, 0], rel[:, 2]))
        u = (theta + np.pi) / (2.0 * np.pi) * sw - 0.5
        v = (np.pi / 2.0 - phi) / np.pi * sh - 0.5
        project.stamp_polyline(mask, u, v, sw)

    strokes = max(1, thickness * ss - 1)
    pad = strokes + 1
    padded = np.pad(mask > 0, ((0, 0), (pad, pad)), mode="wrap")
    padded = ndimage.binary_dilation(padded, iterations=strokes)
    mask = padded[:, pad:-pad].astype(np.float64)
    # box-average back to the target size: smooth antialiased line edges
    mask = mask.reshape(height, ss, width, ss).mean(axis=(1, 3))
    img = background + (line_value - background) * mask
    if blur_sigma > 0:
        img = ndimage.gaussian_filter(img, sigma=blur_sigma, mode=("nearest", "wrap"))
    return EquirectImage(img)
