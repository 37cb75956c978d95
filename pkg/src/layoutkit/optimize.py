"""Candidate layout scoring and greedy wall-wise refinement.

The score sums log corner probabilities at the projected junctions plus,
per wall, the maximum log boundary probability along the projected
ceiling and floor edges (wall-wall boundaries are deliberately excluded:
the corner pairs already carry that evidence).  Refinement perturbs one
wall at a time, least confident first, accepting a candidate only when it
strictly improves the best score, so the result never scores below the
input and reruns are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import project
from .geom import bilinear_sample
from .maps import ProbMaps
from .solver import ManhattanLayout, is_simple_polygon, point_in_polygon, shift_wall, wall_camera_distance


@dataclass(frozen=True)
class ScoreWeights:
    """Junction / ceiling-boundary / floor-boundary term weights."""

    w_junc: float = 1.0
    w_ceil: float = 0.5
    w_floor: float = 1.0

    def __post_init__(self):
        if min(self.w_junc, self.w_ceil, self.w_floor) < 0:
            raise ValueError("score weights must be nonnegative")


@dataclass(frozen=True)
class SamplerConfig:
    """Sampling grid for the greedy refinement.

    Defaults give wall_samples * ceiling_samples * floor_samples * 4 walls
    = 1000 candidates on a cuboid.
    """

    wall_shift_fraction: float = 0.10
    wall_samples: int = 10
    ceiling_samples: int = 5
    floor_samples: int = 5
    edge_sample_points: int = 100
    prob_floor: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.wall_shift_fraction < 1.0:
            raise ValueError("wall_shift_fraction must lie in (0, 1)")
        if min(self.wall_samples, self.ceiling_samples, self.floor_samples, self.edge_sample_points) < 1:
            raise ValueError("sample counts must be >= 1")
        if self.prob_floor <= 0:
            raise ValueError("prob_floor must be positive")


def _clamped_log(values, prob_floor):
    return np.log(np.clip(values, prob_floor, 1.0))


def score_layout(layout: ManhattanLayout, maps: ProbMaps, weights=None, edge_sample_points=100, prob_floor=1e-4) -> float:
    """Log-likelihood style score of a layout against predicted maps."""
    w = weights or ScoreWeights()
    if not point_in_polygon(layout.camera_xz, layout.vertices):
        raise ValueError("camera must be inside the layout")
    width = maps.width
    corner_map = maps.corner_2d()
    u, v_top, v_bot = project.corner_pixels(layout, width)
    p_top = bilinear_sample(corner_map, u, v_top)
    p_bot = bilinear_sample(corner_map, u, v_bot)
    score = w.w_junc * float(np.sum(_clamped_log(p_top, prob_floor)) + np.sum(_clamped_log(p_bot, prob_floor)))

    ceil_map = maps.boundary.data[:, :, 1]
    floor_map = maps.boundary.data[:, :, 2]
    n = layout.wall_count
    for i in range(n):
        eu, ev = project.edge_polyline_pixels(layout, i, "ceiling", edge_sample_points, width)
        best = np.max(np.clip(bilinear_sample(ceil_map, eu, ev), prob_floor, 1.0))
        score += w.w_ceil * float(np.log(best))
        eu, ev = project.edge_polyline_pixels(layout, i, "floor", edge_sample_points, width)
        best = np.max(np.clip(bilinear_sample(floor_map, eu, ev), prob_floor, 1.0))
        score += w.w_floor * float(np.log(best))
    return score


def wall_confidences(layout: ManhattanLayout, maps: ProbMaps, edge_sample_points=100):
    """Mean ceiling-boundary probability along each wall's projected edge."""
    ceil_map = maps.boundary.data[:, :, 1]
    out = np.empty(layout.wall_count)
    for i in range(layout.wall_count):
        eu, ev = project.edge_polyline_pixels(layout, i, "ceiling", edge_sample_points, maps.width)
        out[i] = float(np.mean(bilinear_sample(ceil_map, eu, ev)))
    return out


def _grid(count, half_range):
    if count == 1:
        return np.array([0.0])
    return np.linspace(-half_range, half_range, count)


def _candidate_valid(layout: ManhattanLayout) -> bool:
    return is_simple_polygon(layout.vertices) and bool(
        point_in_polygon(layout.camera_xz, layout.vertices)
    )


def optimize_layout(l0: ManhattanLayout, maps: ProbMaps, cfg=None, weights=None) -> ManhattanLayout:
    """Greedy per-wall refinement of a layout against predicted maps.

    Walls are visited least-confident first.  For each wall shift (within
    +/- wall_shift_fraction of its camera distance) the ceiling and floor
    levels are sampled the same way relative to their camera distances;
    the camera's world height stays fixed while levels move.  Candidates
    that break layout invariants are skipped, ties keep the incumbent.
    """
    cfg = cfg or SamplerConfig()
    w = weights or ScoreWeights()

    def score(candidate):
        return score_layout(candidate, maps, w, cfg.edge_sample_points, cfg.prob_floor)

    best = l0
    e_best = score(l0)
    order = np.argsort(wall_confidences(l0, maps, cfg.edge_sample_points), kind="stable")

    for wall in order:
        base = best
        cam_y = base.camera_y
        d_wall = wall_camera_distance(base, int(wall))
        d_ceil = base.ceiling_y - cam_y
        d_floor = cam_y - base.floor_y
        ceil_grid = _grid(cfg.ceiling_samples, cfg.wall_shift_fraction * d_ceil)
        floor_grid = _grid(cfg.floor_samples, cfg.wall_shift_fraction * d_floor)

        for shift in _grid(cfg.wall_samples, cfg.wall_shift_fraction * d_wall):
            shifted = shift_wall(base, int(wall), float(shift))
            if not _candidate_valid(shifted):
                continue
            best_level = None
            for cs in ceil_grid:
                for fs in floor_grid:
                    floor_y = base.floor_y + float(fs)
                    ceiling_y = base.ceiling_y + float(cs)
                    if not ceiling_y > cam_y > floor_y:
                        continue
                    cand = replace(
                        shifted,
                        floor_y=floor_y,
                        ceiling_y=ceiling_y,
                        camera_height=cam_y - floor_y,
                    )
                    s = score(cand)
                    if best_level is None or s > best_level[0]:
                        best_level = (s, cand)
            if best_level is not None and best_level[0] > e_best:
                e_best, best = best_level[0], best_level[1]
    return best
