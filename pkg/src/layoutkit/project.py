"""Projection of 3D layouts onto the equirectangular image.

All functions assume the layout's Manhattan frame coincides with the
(aligned) camera frame: the camera sits at layout.camera_xz horizontally
and floor + camera_height vertically, and walls are axis-parallel.
"""

from __future__ import annotations

import numpy as np

from .solver import ManhattanLayout


def project_points(points, layout: ManhattanLayout, width):
    """Project 3D world points to continuous pixel coordinates.

    ``points`` is (..., 3) in world (x, y, z); returns (u, v) arrays.
    """
    p = np.asarray(points, dtype=np.float64)
    cam = np.array([layout.camera_xz[0], layout.camera_y, layout.camera_xz[1]])
    rel = p - cam
    theta = np.arctan2(rel[..., 0], rel[..., 2])
    horiz = np.hypot(rel[..., 0], rel[..., 2])
    phi = np.arctan2(rel[..., 1], horiz)
    u = (theta + np.pi) / (2.0 * np.pi) * width - 0.5
    v = (np.pi / 2.0 - phi) / np.pi * (width / 2.0) - 0.5
    return u, v


def corner_points_3d(layout: ManhattanLayout):
    """Top and bottom 3D corner positions, each (N, 3)."""
    v = layout.vertices
    top = np.column_stack([v[:, 0], np.full(len(v), layout.ceiling_y), v[:, 1]])
    bot = np.column_stack([v[:, 0], np.full(len(v), layout.floor_y), v[:, 1]])
    return top, bot


def corner_pixels(layout: ManhattanLayout, width):
    """Projected corner columns and rows: (u, v_top, v_bot), each (N,).

    Top and bottom corners share a column because they share (x, z).
    """
    top, bot = corner_points_3d(layout)
    u, v_top = project_points(top, layout, width)
    _, v_bot = project_points(bot, layout, width)
    return u, v_top, v_bot


def edge_polyline_pixels(layout: ManhattanLayout, edge_index, level, n_samples, width):
    """Sample one wall's horizontal boundary at ``level`` ('ceiling'|'floor').

    The 3D segment between vertex edge_index and its successor is sampled
    uniformly and projected; returns (u, v) arrays of length n_samples.
    """
    v = layout.vertices
    a = v[edge_index]
    b = v[(edge_index + 1) % len(v)]
    y = layout.ceiling_y if level == "ceiling" else layout.floor_y
    t = np.linspace(0.0, 1.0, n_samples)
    pts = np.column_stack(
        [a[0] + t * (b[0] - a[0]), np.full(n_samples, y), a[1] + t * (b[1] - a[1])]
    )
    return project_points(pts, layout, width)


def ray_wall_distances(layout: ManhattanLayout, thetas):
    """Horizontal distance from the camera to the first wall hit per azimuth.

    The camera must be inside the (simple) polygon, so every ray exits
    through exactly one nearest boundary point.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    d = np.stack([np.sin(thetas), np.cos(thetas)], axis=-1)
    c = layout.camera_xz
    v = layout.vertices
    a = v
    b = np.roll(v, -1, axis=0)
    ab = b - a  # (n, 2)
    # solve c + t*d = a + s*ab per (ray, edge)
    denom = d[..., None, 0] * (-ab[None, :, 1]) - d[..., None, 1] * (-ab[None, :, 0])
    rhs = a[None, :, :] - c[None, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rhs[..., 0] * (-ab[None, :, 1]) - rhs[..., 1] * (-ab[None, :, 0])) / denom
        s = (d[..., None, 0] * rhs[..., 1] - d[..., None, 1] * rhs[..., 0]) / denom
    valid = (t > 1e-12) & (s >= -1e-12) & (s <= 1.0 + 1e-12)
    t = np.where(valid, t, np.inf)
    return np.min(t, axis=-1)


def render_labels(layout: ManhattanLayout, width):
    """Per-pixel surface classes: 0 ceiling, 1 wall, 2 floor; shape (H, W)."""
    height = width // 2
    u = np.arange(width)
    theta = (u + 0.5) / width * 2.0 * np.pi - np.pi
    dist = ray_wall_distances(layout, theta)
    cam_y = layout.camera_y
    phi_ceil = np.arctan2(layout.ceiling_y - cam_y, dist)
    phi_floor = np.arctan2(layout.floor_y - cam_y, dist)
    rows = np.arange(height)
    phi_row = np.pi / 2.0 - (rows + 0.5) / height * np.pi
    labels = np.ones((height, width), dtype=np.uint8)
    labels[phi_row[:, None] > phi_ceil[None, :]] = 0
    labels[phi_row[:, None] < phi_floor[None, :]] = 2
    return labels


def polyline_pixel_length(u, v, width):
    """Approximate on-image length of a projected polyline, wrap-aware."""
    du = np.abs(np.diff(u))
    du = np.minimum(du, width - du)
    dv = np.abs(np.diff(v))
    return float(np.sum(np.hypot(du, dv)))


def stamp_polyline(mask, u, v, width):
    """Set mask pixels nearest to polyline samples to 1 (columns wrap)."""
    h = mask.shape[0]
    cols = np.mod(np.rint(u).astype(np.int64), width)
    rows = np.clip(np.rint(v).astype(np.int64), 0, h - 1)
    mask[rows, cols] = 1.0
    return mask


def adaptive_edge_samples(layout, edge_index, level, width, per_pixel=2.0, coarse=48):
    """Sample count so the projected edge gets >= per_pixel samples per pixel."""
    u, v = edge_polyline_pixels(layout, edge_index, level, coarse, width)
    n = int(np.ceil(polyline_pixel_length(u, v, width) * per_pixel)) + 2
    return int(np.clip(n, 32, 8192))
