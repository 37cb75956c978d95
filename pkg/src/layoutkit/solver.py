"""Manhattan layout recovery from extracted corner columns.

The top-down solve treats each corner column as an azimuth ray from the
camera and finds the rectilinear polygon plus camera position whose
vertex-to-vertex view angles match the column gaps.  Vertices are ordered
by increasing corner azimuth, which winds clockwise in the (x, z) plane
(negative shoelace area).  The solve is normalized so that v1 = (0, 0) and
|v1 - v2| = 1; lifting restores metric scale from the camera height.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import lbfgs
from .errors import HorizonViolation


# ---------------------------------------------------------------------------
# Polygon helpers (top-down, (x, z) coordinates)


def signed_area(vertices) -> float:
    v = np.asarray(vertices, dtype=np.float64)
    x, z = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z))


def point_in_polygon(points, vertices):
    """Crossing-number test; points on an edge count as outside-ish (don't care)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    v = np.asarray(vertices, dtype=np.float64)
    x1, z1 = v[:, 0], v[:, 1]
    x2, z2 = np.roll(x1, -1), np.roll(z1, -1)
    px = pts[:, 0][:, None]
    pz = pts[:, 1][:, None]
    crosses = (z1 > pz) != (z2 > pz)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1 + (pz - z1) * (x2 - x1) / np.where(z2 == z1, np.inf, z2 - z1)
    inside = np.sum(crosses & (px < xint), axis=1) % 2 == 1
    return inside if inside.size > 1 else bool(inside[0])


def distance_to_boundary(point, vertices) -> float:
    """Minimum distance from a point to the polygon boundary."""
    p = np.asarray(point, dtype=np.float64)
    v = np.asarray(vertices, dtype=np.float64)
    a = v
    b = np.roll(v, -1, axis=0)
    ab = b - a
    t = np.clip(np.sum((p - a) * ab, axis=1) / np.maximum(np.sum(ab * ab, axis=1), 1e-300), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(proj - p, axis=1)))


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def is_simple_polygon(vertices) -> bool:
    v = np.asarray(vertices, dtype=np.float64)
    n = len(v)
    for i in range(n):
        a1, a2 = v[i], v[(i + 1) % n]
        if np.allclose(a1, a2):
            return False
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_intersect(a1, a2, v[j], v[(j + 1) % n]):
                return False
    return True


def quarter_turn(points, k):
    """Rotate top-down points by k * 90 degrees of azimuth, exactly.

    One turn maps (x, z) -> (z, -x), which adds pi/2 to atan2(x, z).
    """
    p = np.asarray(points, dtype=np.float64)
    out = p.copy()
    for _ in range(int(k) % 4):
        out = np.stack([out[..., 1], -out[..., 0]], axis=-1)
    return out


# ---------------------------------------------------------------------------
# Layout types


@dataclass
class ManhattanLayout:
    """Full 3D Manhattan room layout.

    ``vertices`` are the top-down wall footprint in (x, z), axis-parallel
    edges, ordered by increasing azimuth as seen from the camera.  The
    camera sits at ``camera_xz`` horizontally and ``floor_y +
    camera_height`` vertically.  ``yaw`` records the rotation from this
    layout's Manhattan frame to a reference camera frame (nonzero only for
    cuboid-parameter round trips; pipeline layouts are axis-aligned).
    """

    vertices: np.ndarray
    camera_xz: np.ndarray
    camera_height: float
    floor_y: float
    ceiling_y: float
    yaw: float = 0.0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        self.camera_xz = np.asarray(self.camera_xz, dtype=np.float64).reshape(2)

    @property
    def wall_count(self) -> int:
        return len(self.vertices)

    @property
    def camera_y(self) -> float:
        return self.floor_y + self.camera_height

    def validate(self, axis_aligned=True, full3d=True, eps=1e-9):
        n = self.wall_count
        if n < 4 or n % 2 != 0:
            raise ValueError(f"wall count must be even and >= 4, got {n}")
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        dx = np.abs(nxt[:, 0] - v[:, 0])
        dz = np.abs(nxt[:, 1] - v[:, 1])
        if axis_aligned:
            shared = np.minimum(dx, dz)
            moved = np.maximum(dx, dz)
            if np.any(shared > eps) or np.any(moved <= eps):
                raise ValueError("edges must alternate axis-parallel")
        else:
            e = nxt - v
            e = e / np.linalg.norm(e, axis=1, keepdims=True)
            dots = np.abs(np.sum(e * np.roll(e, -1, axis=0), axis=1))
            if np.any(dots > 1e-6):
                raise ValueError("consecutive edges must be perpendicular")
        if not is_simple_polygon(v):
            raise ValueError("layout polygon is self-intersecting")
        if not point_in_polygon(self.camera_xz, v):
            raise ValueError("camera is not strictly inside the layout")
        if full3d:
            if not self.ceiling_y > self.camera_y > self.floor_y:
                raise ValueError("require ceiling above camera above floor")
            if self.camera_height <= 0:
                raise ValueError("camera height must be positive")
        return self

    def to_json_dict(self) -> dict:
        return {
            "vertices": [[float(x), float(z)] for x, z in self.vertices],
            "camera": [float(self.camera_xz[0]), float(self.camera_xz[1])],
            "camera_height": float(self.camera_height),
            "floor": float(self.floor_y),
            "ceiling": float(self.ceiling_y),
        }

    @classmethod
    def from_json_dict(cls, d) -> "ManhattanLayout":
        return cls(
            vertices=np.asarray(d["vertices"], dtype=np.float64),
            camera_xz=np.asarray(d["camera"], dtype=np.float64),
            camera_height=float(d["camera_height"]),
            floor_y=float(d["floor"]),
            ceiling_y=float(d["ceiling"]),
        )

    def save_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load_json(cls, path) -> "ManhattanLayout":
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


@dataclass(frozen=True)
class CuboidParams:
    """Six-parameter cuboid: side lengths, height, translation, rotation.

    ``t`` is the room-center position in the reference camera frame and
    ``r_theta`` the room yaw in that frame, canonical in [-pi/4, pi/4).
    """

    s_w: float
    s_l: float
    s_h: float
    t_x: float
    t_z: float
    r_theta: float

    def __post_init__(self):
        if min(self.s_w, self.s_l, self.s_h) <= 0:
            raise ValueError("cuboid dimensions must be positive")
        if not -np.pi / 4 <= self.r_theta < np.pi / 4:
            raise ValueError("r_theta must lie in [-pi/4, pi/4)")

    def as_vector(self) -> np.ndarray:
        return np.array([self.s_w, self.s_l, self.s_h, self.t_x, self.t_z, self.r_theta])


def _rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def layout_from_params(params: CuboidParams, camera_height=1.0) -> ManhattanLayout:
    """Realize cuboid parameters as a layout in the room's Manhattan frame.

    The camera frame sees the room center at t rotated by r_theta; in the
    room frame the camera therefore sits at -R(-r_theta) @ t.  The room
    yaw is preserved on the layout's ``yaw`` field.
    """
    w2, l2 = params.s_w / 2.0, params.s_l / 2.0
    vertices = np.array([[-w2, -l2], [-w2, l2], [w2, l2], [w2, -l2]])
    t = np.array([params.t_x, params.t_z])
    camera = -_rot2(-params.r_theta) @ t
    return ManhattanLayout(
        vertices=vertices,
        camera_xz=camera,
        camera_height=camera_height,
        floor_y=0.0,
        ceiling_y=params.s_h,
        yaw=float(params.r_theta),
    )


def params_from_layout(layout: ManhattanLayout) -> CuboidParams:
    """Invert :func:`layout_from_params`; canonicalizes the yaw.

    A yaw outside [-pi/4, pi/4) is folded back by quarter turns, swapping
    width and length when the fold is odd.
    """
    if layout.wall_count != 4:
        raise ValueError("cuboid parameters require exactly 4 walls")
    v = layout.vertices
    nxt = np.roll(v, -1, axis=0)
    if np.max(np.minimum(np.abs(nxt[:, 0] - v[:, 0]), np.abs(nxt[:, 1] - v[:, 1]))) > 1e-9:
        raise ValueError("layout is not an axis-aligned rectangle in its own frame")
    s_w = float(v[:, 0].max() - v[:, 0].min())
    s_l = float(v[:, 1].max() - v[:, 1].min())
    s_h = float(layout.ceiling_y - layout.floor_y)
    center = np.array([(v[:, 0].max() + v[:, 0].min()) / 2.0, (v[:, 1].max() + v[:, 1].min()) / 2.0])

    k = int(np.floor((layout.yaw + np.pi / 4) / (np.pi / 2)))
    r_theta = layout.yaw - k * np.pi / 2
    # fold the room frame by k quarter turns; odd folds swap the axes
    center = quarter_turn(center, -k % 4)
    camera = quarter_turn(layout.camera_xz, -k % 4)
    if k % 2 != 0:
        s_w, s_l = s_l, s_w
    t = _rot2(r_theta) @ (center - camera)
    return CuboidParams(s_w=s_w, s_l=s_l, s_h=s_h, t_x=float(t[0]), t_z=float(t[1]), r_theta=float(r_theta))


# ---------------------------------------------------------------------------
# Shape variants and the top-down energy


def enumerate_shape_variants(wall_count):
    """Concavity assignments to try for a wall count: one per reflex choice."""
    if wall_count == 4:
        return [0]
    if wall_count == 6:
        return list(range(6))
    raise ValueError(f"unsupported wall count {wall_count}")


def _edge_directions(wall_count, variant):
    """Unit edge directions of the rectilinear chain, from the turn signs.

    Vertices in azimuth order wind clockwise in (x, z), so convex corners
    turn right; the variant's vertex turns left instead (the reflex corner).
    Edge 0 leaves v0 along +z; a right turn maps (x, z) -> (z, -x).
    """
    if wall_count == 4:
        if variant != 0:
            raise ValueError("cuboid layouts have a single shape variant")
        reflex = -1
    else:
        if not 0 <= variant < wall_count:
            raise ValueError(f"variant {variant} out of range for {wall_count} walls")
        reflex = variant
    dirs = np.zeros((wall_count, 2))
    dirs[0] = (0.0, 1.0)
    for i in range(1, wall_count):
        x, z = dirs[i - 1]
        if i == reflex:  # left turn at vertex i
            dirs[i] = (-z, x)
        else:  # right turn
            dirs[i] = (z, -x)
    return dirs


def _length_affine(dirs):
    """Affine map from free edge lengths to all edge lengths.

    Length 0 is pinned to 1 (the scale anchor) and the last x- and
    z-parallel edges are eliminated by the closure constraint
    sum(length_i * dir_i) = 0.  Returns (T, t0) with lengths = T @ free + t0.
    """
    n = len(dirs)
    x_edges = [i for i in range(n) if dirs[i][0] != 0]
    z_edges = [i for i in range(n) if dirs[i][1] != 0]
    ex, ez = x_edges[-1], z_edges[-1]
    free = [i for i in range(1, n) if i not in (ex, ez)]
    t = np.zeros((n, len(free)))
    t0 = np.zeros(n)
    t0[0] = 1.0
    for col, i in enumerate(free):
        t[i, col] = 1.0
    for e, group, axis in ((ex, x_edges, 0), (ez, z_edges, 1)):
        for i in group:
            if i == e:
                continue
            coeff = -dirs[i][axis] / dirs[e][axis]
            if i == 0:
                t0[e] += coeff
            else:
                t[e] += coeff * t[i]
                t0[e] += coeff * t0[i]
    return t, t0


def _vertex_affine(dirs):
    """Affine map from free lengths to stacked vertex coordinates (2n,)."""
    n = len(dirs)
    c = np.zeros((2 * n, n))
    for i in range(1, n):
        for j in range(i):
            c[2 * i, j] = dirs[j][0]
            c[2 * i + 1, j] = dirs[j][1]
    t, t0 = _length_affine(dirs)
    return c @ t, c @ t0


def gap_angles(columns, width):
    """Wraparound-aware azimuth gaps (radians) between consecutive columns."""
    u = np.asarray(columns, dtype=np.float64)
    gaps = np.mod(np.roll(u, -1) - u, width)
    return gaps / width * 2.0 * np.pi


class TopDownEnergy:
    """Squared-residual objective between view angles and column gaps.

    Parameters are the free rectilinear edge lengths followed by the camera
    (x, z).  ``value_and_grad`` returns the energy and its analytic
    gradient.
    """

    def __init__(self, delta_theta, wall_count, variant):
        self.delta_theta = np.asarray(delta_theta, dtype=np.float64)
        self.n = int(wall_count)
        if len(self.delta_theta) != self.n:
            raise ValueError("need one azimuth gap per wall")
        self.dirs = _edge_directions(self.n, variant)
        self.m, self.v0 = _vertex_affine(self.dirs)

    @property
    def n_params(self) -> int:
        return self.m.shape[1] + 2

    def vertices(self, params):
        free = params[: self.m.shape[1]]
        return (self.m @ free + self.v0).reshape(self.n, 2)

    def value_and_grad(self, params):
        n = self.n
        free_dim = self.m.shape[1]
        v = self.vertices(params)
        c = params[free_dim:]
        a = v - c
        b = np.roll(v, -1, axis=0) - c
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        dot = np.sum(a * b, axis=1)
        g = np.clip(dot / (na * nb), -1.0 + 1e-12, 1.0 - 1e-12)
        beta = np.arccos(g)
        r = beta - self.delta_theta
        energy = float(np.sum(r * r))

        dbeta = -2.0 * r / np.sqrt(1.0 - g * g)  # d(energy)/d(g_i)
        dg_da = b / (na * nb)[:, None] - (g / (na * na))[:, None] * a
        dg_db = a / (na * nb)[:, None] - (g / (nb * nb))[:, None] * b
        contrib_a = dbeta[:, None] * dg_da
        contrib_b = dbeta[:, None] * dg_db
        grad_v = contrib_a + np.roll(contrib_b, 1, axis=0)
        grad_c = -np.sum(contrib_a + contrib_b, axis=0)

        grad = np.empty(self.n_params)
        grad[:free_dim] = self.m.T @ grad_v.reshape(-1)
        grad[free_dim:] = grad_c
        return energy, grad

    def initial_params(self, columns, width):
        """Initialize from the vertex ranges implied by the corner rays.

        With the camera at the origin, vertex i sits at range r_i along its
        azimuth ray.  Each rectilinear edge forces its two endpoints to
        share one coordinate, giving n homogeneous linear constraints whose
        least-squares null vector recovers the ranges up to scale (exactly,
        for noise-free columns).  Both axis-parity assignments are tried and
        the better-conditioned one kept.
        """
        n = self.n
        theta = (np.asarray(columns, dtype=np.float64) + 0.5) / width * 2.0 * np.pi - np.pi
        rays = np.stack([np.sin(theta), np.cos(theta)], axis=1)

        # Both parities admit a null vector (the wrong one crosses through
        # the camera with negative ranges), so select by sign consistency
        # rather than by singular value.
        best = None
        for parity in (0, 1):
            a = np.zeros((n, n))
            for i in range(n):
                axis = (i + parity) % 2
                a[i, i] = rays[i, axis]
                a[i, (i + 1) % n] -= rays[(i + 1) % n, axis]
            vec = np.linalg.svd(a)[2][-1]
            if np.sum(vec) < 0:
                vec = -vec
            score = np.min(vec)
            if best is None or score > best[0]:
                best = (score, vec)
        ranges = np.maximum(best[1], 0.05 * np.median(np.abs(best[1])))
        verts_cam = ranges[:, None] * rays

        edge0 = verts_cam[1] - verts_cam[0]
        az0 = np.arctan2(edge0[0], edge0[1])
        turns = int(-np.rint(az0 / (np.pi / 2))) % 4
        lengths = np.linalg.norm(np.roll(verts_cam, -1, axis=0) - verts_cam, axis=1)
        lengths = np.maximum(lengths, 1e-3)

        x_edges = [i for i in range(n) if self.dirs[i][0] != 0]
        z_edges = [i for i in range(n) if self.dirs[i][1] != 0]
        free_idx = [i for i in range(1, n) if i not in (x_edges[-1], z_edges[-1])]
        params = np.empty(self.n_params)
        params[: len(free_idx)] = lengths[free_idx] / lengths[0]
        params[len(free_idx) :] = quarter_turn(-verts_cam[0], turns) / lengths[0]
        return params


@dataclass
class TopDownLayout:
    """Solver-frame result: v0 at the origin, first edge length 1.

    ``quarter_turns`` maps the solver frame onto the camera frame (apply
    that many exact 90-degree azimuth turns); lifting applies it.
    """

    vertices: np.ndarray
    camera_xz: np.ndarray
    energy: float
    converged: bool
    variant: int
    quarter_turns: int
    valid: bool = True

    @property
    def wall_count(self) -> int:
        return len(self.vertices)


def solve_topdown(corners, wall_count, shape_variant=0, max_iter=500, grad_tol=1e-9) -> TopDownLayout:
    """Recover the top-down layout for one concavity assignment.

    ``corners`` needs ``columns`` (sorted ascending) and ``width``.  The
    result is flagged ``converged=False`` after ``max_iter`` iterations and
    ``valid=False`` when the minimizer's polygon breaks a layout invariant
    (self-intersection or exterior camera).
    """
    columns = np.asarray(corners.columns, dtype=np.float64)
    if len(columns) != wall_count:
        raise ValueError(f"corner count {len(columns)} != wall count {wall_count}")
    width = corners.width
    delta = gap_angles(columns, width)
    energy = TopDownEnergy(delta, wall_count, shape_variant)
    result = lbfgs.minimize(
        energy.value_and_grad,
        energy.initial_params(columns, width),
        history=10,
        grad_tol=grad_tol,
        max_iter=max_iter,
    )
    v = energy.vertices(result.x)
    cam = result.x[energy.m.shape[1] :]

    valid = is_simple_polygon(v) and bool(point_in_polygon(cam, v))
    theta0 = (columns[0] + 0.5) / width * 2.0 * np.pi - np.pi
    rel = v[0] - cam
    solved_az = np.arctan2(rel[0], rel[1])
    turns = int(np.rint((theta0 - solved_az) / (np.pi / 2))) % 4
    return TopDownLayout(
        vertices=v,
        camera_xz=cam,
        energy=result.fun,
        converged=result.converged,
        variant=shape_variant,
        quarter_turns=turns,
        valid=valid,
    )


def row_to_elevation(v, width):
    """Elevation angle of a continuous row coordinate."""
    return np.pi / 2.0 - (np.asarray(v, dtype=np.float64) + 0.5) / (width / 2.0) * np.pi


def lift_to_3d(topdown: TopDownLayout, corners, width, camera_height=1.0) -> ManhattanLayout:
    """Lift a solved top-down layout to 3D using the corner rows.

    Bottom corners share the ground plane: each bottom-row elevation gives
    a floor depth camera_height / tan(-phi); the mean depth-to-range ratio
    sets the metric scale, and the ceiling level is the mean upper-corner
    height.  The output is camera-centered: camera at the (x, z) origin,
    floor at y = 0.
    """
    phi_bot = row_to_elevation(np.asarray(corners.v_bot, dtype=np.float64), width)
    phi_top = row_to_elevation(np.asarray(corners.v_top, dtype=np.float64), width)
    if np.any(phi_bot >= 0):
        raise HorizonViolation("bottom corner at or above the horizon")
    dist = camera_height / np.tan(-phi_bot)
    ranges = np.linalg.norm(topdown.vertices - topdown.camera_xz, axis=1)
    scale = float(np.mean(dist / ranges))
    ceiling = float(np.mean(camera_height + dist * np.tan(phi_top)))
    vertices = quarter_turn((topdown.vertices - topdown.camera_xz) * scale, topdown.quarter_turns)
    layout = ManhattanLayout(
        vertices=vertices,
        camera_xz=np.zeros(2),
        camera_height=camera_height,
        floor_y=0.0,
        ceiling_y=ceiling,
    )
    return layout


def shift_wall(layout: ManhattanLayout, wall_index, delta) -> ManhattanLayout:
    """Move one wall along its normal by ``delta``, keeping neighbors attached."""
    v = layout.vertices.copy()
    n = len(v)
    i, j = wall_index, (wall_index + 1) % n
    if abs(v[i, 0] - v[j, 0]) <= abs(v[i, 1] - v[j, 1]):
        axis = 0  # z-parallel wall: shared x coordinate
    else:
        axis = 1
    v[i, axis] += delta
    v[j, axis] += delta
    return replace(layout, vertices=v)


def wall_camera_distance(layout: ManhattanLayout, wall_index) -> float:
    """Perpendicular distance from the camera to a wall's supporting line."""
    v = layout.vertices
    n = len(v)
    i, j = wall_index, (wall_index + 1) % n
    if abs(v[i, 0] - v[j, 0]) <= abs(v[i, 1] - v[j, 1]):
        return abs(v[i, 0] - layout.camera_xz[0])
    return abs(v[i, 1] - layout.camera_xz[1])
