"""Vanishing-direction estimation and panorama leveling.

Line segments are detected per perspective view by gradient region
growing (level-line orientation tolerance 22.5 degrees, rectangle fit
with density >= 0.7), lifted to great circles on the unit sphere, and
voted onto a ~1 degree hemisphere grid.  The best mutually orthogonal
bin triplet, refined on the supporting segment normals and re-orthogonalized
by SVD, gives the rotation that maps the scene's Manhattan axes onto the
world axes (vertical to +y).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NoConsensus
from .geom import EquirectImage, PerspectiveView, extract_perspective_view, rotate_equirect

ORIENTATION_TOLERANCE = np.deg2rad(22.5)
MIN_REGION_DENSITY = 0.7
ORTHO_TOLERANCE = np.cos(np.deg2rad(87.5))  # max |dot| for an orthogonal pair
INLIER_ANGLE = np.deg2rad(3.0)
TOP_BINS = 64  # candidate pool after peak suppression


@dataclass(frozen=True)
class LineSegment:
    """Detected segment lifted to the unit sphere.

    ``normal`` is the unit normal of the great circle through both
    endpoints; ``length`` is the endpoint arc in radians and ``strength``
    the summed gradient magnitude of the supporting region.
    """

    p0: np.ndarray
    p1: np.ndarray
    normal: np.ndarray
    length: float
    strength: float

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("segment length must be positive")
        if max(abs(float(self.normal @ self.p0)), abs(float(self.normal @ self.p1))) > 1e-6:
            raise ValueError("normal must be perpendicular to both endpoints")

    def rotated(self, rotation) -> "LineSegment":
        r = np.asarray(rotation, dtype=np.float64)
        return LineSegment(r @ self.p0, r @ self.p1, r @ self.normal, self.length, self.strength)


@dataclass(frozen=True)
class VanishingBasis:
    """Three orthogonal vanishing directions and the leveling rotation.

    ``axes`` columns are the (x, y, z)-assigned scene directions; the
    rotation maps them onto the world axes, vertical to +y.
    """

    axes: np.ndarray
    rotation: np.ndarray
    vote_scores: np.ndarray

    def __post_init__(self):
        a = self.axes
        dots = [abs(float(a[:, i] @ a[:, j])) for i in range(3) for j in range(i + 1, 3)]
        if max(dots) > 1e-6:
            raise ValueError("axes must be mutually orthogonal")
        if float(a[:, 1] @ np.array([0.0, 1.0, 0.0])) <= 0:
            raise ValueError("vertical axis must point toward world +y")

    @property
    def vertical(self) -> np.ndarray:
        return self.axes[:, 1]


def _angle_diff_mod_pi(a, b):
    d = np.mod(a - b, np.pi)
    return np.minimum(d, np.pi - d)


def detect_segments(view: PerspectiveView, min_length=16):
    """Gradient region-growing segment detector on one perspective view.

    Returns segments at least ``min_length`` pixels long, lifted through
    the view's camera model.  A constant view yields an empty list.
    """
    if min_length < 8:
        raise ValueError("min_length must be >= 8")
    img = np.asarray(view.image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("segment detection expects a grayscale view")
    # pre-smoothing keeps gradient orientations continuous on hard edges
    img = ndimage.gaussian_filter(img, sigma=1.0, mode="nearest")
    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    if mag.max() <= 0:
        return []
    # level-line angle (direction along the edge), defined mod pi
    angle = np.mod(np.arctan2(gy, gx) + np.pi / 2.0, np.pi)
    threshold = max(1e-9, 0.05 * mag.max())
    usable = mag > threshold

    h, w = img.shape
    order = np.argsort(mag.ravel(), kind="stable")[::-1]
    order = order[usable.ravel()[order]]
    visited = np.zeros((h, w), dtype=bool)
    segments = []

    for flat in order:
        sy, sx = divmod(int(flat), w)
        if visited[sy, sx]:
            continue
        # grow a region of consistent level-line orientation; the seed's
        # angle anchors the tolerance so growth cannot drift around corners
        seed_angle = angle[sy, sx]
        region = [(sy, sx)]
        visited[sy, sx] = True
        queue = deque(region)
        while queue:
            cy, cx = queue.popleft()
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    ny, nx = cy + dy, cx + dx
                    if ny < 0 or ny >= h or nx < 0 or nx >= w:
                        continue
                    if visited[ny, nx] or not usable[ny, nx]:
                        continue
                    if _angle_diff_mod_pi(angle[ny, nx], seed_angle) > ORIENTATION_TOLERANCE:
                        continue
                    visited[ny, nx] = True
                    region.append((ny, nx))
                    queue.append((ny, nx))
        if len(region) < min_length:
            continue
        pts = np.asarray(region, dtype=np.float64)  # (k, 2) rows (y, x)
        weights = mag[pts[:, 0].astype(int), pts[:, 1].astype(int)]

        # weighted PCA, then trim pixels off the fitted axis and refit:
        # junction hooks otherwise bias the direction by degrees
        principal = None
        for _ in range(3):
            centroid = np.average(pts, axis=0, weights=weights)
            centered = pts - centroid
            cov = (centered * weights[:, None]).T @ centered / weights.sum()
            evals, evecs = np.linalg.eigh(cov)
            principal = evecs[:, np.argmax(evals)]  # (dy, dx)
            across = centered @ evecs[:, np.argmin(evals)]
            core_width = max(1.5, 2.0 * np.sqrt(max(np.min(evals), 0.0)))
            keep = np.abs(across) <= core_width
            if keep.all() or keep.sum() < min_length:
                break
            pts = pts[keep]
            weights = weights[keep]
        centroid = np.average(pts, axis=0, weights=weights)
        centered = pts - centroid
        along = centered @ principal
        across = centered @ evecs[:, np.argmin(evals)]
        length = along.max() - along.min() + 1.0
        width_px = across.max() - across.min() + 1.0
        if length < min_length:
            continue
        if len(pts) / (length * width_px) < MIN_REGION_DENSITY:
            continue
        end0 = centroid + principal * along.min()
        end1 = centroid + principal * along.max()
        p0 = view.pix_to_ray(end0[1], end0[0])
        p1 = view.pix_to_ray(end1[1], end1[0])
        # Fit the great circle through per-cross-section ridge midpoints:
        # the medial axis is insensitive to the band's varying width,
        # which otherwise tilts a whole-region fit toward the wide end.
        minor = evecs[:, np.argmin(evals)]
        bins = np.rint(along).astype(np.int64)
        uniq, inv = np.unique(bins, return_inverse=True)
        wsum = np.bincount(inv, weights)
        mid_along = np.bincount(inv, weights * along) / wsum
        mid_across = np.bincount(inv, weights * across) / wsum
        mids = centroid[None, :] + mid_along[:, None] * principal + mid_across[:, None] * minor
        rays = view.pix_to_ray(mids[:, 1], mids[:, 0])
        scatter = (rays * wsum[:, None]).T @ rays
        evals3, evecs3 = np.linalg.eigh(scatter)
        normal = evecs3[:, 0]
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        # re-project endpoints onto the fitted circle's plane
        p0 = p0 - (p0 @ normal) * normal
        p1 = p1 - (p1 @ normal) * normal
        n0, n1 = np.linalg.norm(p0), np.linalg.norm(p1)
        if min(n0, n1) < 1e-9:
            continue
        p0, p1 = p0 / n0, p1 / n1
        arc = float(np.arccos(np.clip(p0 @ p1, -1.0, 1.0)))
        if arc <= 0:
            continue
        segments.append(
            LineSegment(p0=p0, p1=p1, normal=normal, length=arc, strength=float(weights.sum()))
        )
    return segments


# ---------------------------------------------------------------------------
# Hemisphere voting


class _HemisphereGrid:
    """~1 degree bins on the y >= 0 hemisphere, azimuth count shrinking
    toward the pole so bins stay roughly equal-width everywhere."""

    def __init__(self, step_deg=1.0):
        self.el_edges = np.arange(0.0, 90.0 + step_deg, step_deg)
        self.n_el = len(self.el_edges) - 1
        self.n_az = np.maximum(
            1, np.rint(360.0 * np.cos(np.deg2rad(self.el_edges[:-1] + step_deg / 2.0))).astype(int)
        )
        self.offsets = np.concatenate([[0], np.cumsum(self.n_az)])
        self.size = int(self.offsets[-1])
        self.step = step_deg

    def bin_of(self, dirs):
        """Bin indices for unit directions (flipped into y >= 0)."""
        d = np.asarray(dirs, dtype=np.float64)
        flip = d[..., 1] < 0
        d = np.where(flip[..., None], -d, d)
        el = np.rad2deg(np.arcsin(np.clip(d[..., 1], -1.0, 1.0)))
        az = np.mod(np.rad2deg(np.arctan2(d[..., 0], d[..., 2])), 360.0)
        ei = np.clip((el / self.step).astype(int), 0, self.n_el - 1)
        ai = np.mod((az / 360.0 * self.n_az[ei]).astype(int), self.n_az[ei])
        return self.offsets[ei] + ai

    def center_of(self, bins):
        bins = np.atleast_1d(np.asarray(bins, dtype=int))
        ei = np.searchsorted(self.offsets, bins, side="right") - 1
        ai = bins - self.offsets[ei]
        el = np.deg2rad(self.el_edges[ei] + self.step / 2.0)
        el = np.minimum(el, np.pi / 2.0)
        az = (ai + 0.5) / self.n_az[ei] * 2.0 * np.pi
        cos_el = np.cos(el)
        out = np.stack([cos_el * np.sin(az), np.sin(el), cos_el * np.cos(az)], axis=-1)
        return out[0] if out.shape[0] == 1 else out


def _refine_axis(axis, normals, weights, inlier_angle=INLIER_ANGLE):
    """Smallest eigenvector of the weighted normal scatter near the axis.

    When the supporting normals are nearly parallel (coplanar segments,
    e.g. a single boundary line family), the smallest eigenvector is
    undetermined within a whole plane; the axis is then left unchanged.
    """
    sel = np.abs(normals @ axis) < np.sin(inlier_angle)
    if np.count_nonzero(sel) < 2:
        return axis
    n = normals[sel]
    w = weights[sel]
    m = (n * w[:, None]).T @ n
    evals, evecs = np.linalg.eigh(m)
    if evals[1] < 0.05 * evals[2]:
        return axis
    refined = evecs[:, 0]
    if refined @ axis < 0:
        refined = -refined
    return refined


def estimate_vanishing_basis(segments) -> VanishingBasis:
    """Vote for three mutually orthogonal vanishing directions.

    Each segment votes with weight length * strength for every hemisphere
    bin within the inlier band of its great circle.  Axes are extracted
    sequentially: the strongest bin first, the second constrained to the
    directions perpendicular to it and voted by the remaining segments,
    and the third as their cross product (it needs no evidence of its
    own, which keeps rooms with one barely-visible direction solvable).
    A final alternation of SVD orthogonalization and inlier refits
    polishes the triplet, which must pass the pairwise orthogonality
    gate.  Raises NoConsensus (carrying partial axes) on degenerate
    input, e.g. all segments parallel.
    """
    if len(segments) < 6:
        raise ValueError(f"need at least 6 segments, got {len(segments)}")
    grid = _HemisphereGrid()
    normals = np.stack([s.normal for s in segments])
    weights = np.array([s.length * s.strength for s in segments])

    centers = np.atleast_2d(grid.center_of(np.arange(grid.size)))
    on_circle = np.abs(normals @ centers.T) < np.sin(INLIER_ANGLE)  # (S, bins)
    votes = weights @ on_circle
    if votes.max() <= 0:
        raise NoConsensus("voting produced no supported bins", partial_axes=[])
    total_weight = float(weights.sum())
    sin_inlier = np.sin(INLIER_ANGLE)

    def _guarded_refine(axis):
        """Refit only on solid support; a weak family keeps the frame-
        constrained axis instead of jumping onto stray segments."""
        sel = np.abs(normals @ axis) < sin_inlier
        if np.count_nonzero(sel) < 3 or float(weights[sel].sum()) < 0.01 * total_weight:
            return axis
        return _refine_axis(axis, normals, weights, np.deg2rad(2.0))

    # First-axis seeds by greedy coverage: the globally strongest bin can
    # be a mixture of two families' circles, so several distinct starts
    # are tried and the best-covering consistent triplet wins.
    uncovered = np.ones(len(segments), dtype=bool)
    seeds = []
    while len(seeds) < 8:
        gains = (weights * uncovered) @ on_circle
        b = int(np.argmax(gains))
        if gains[b] < 0.01 * total_weight:
            break
        seeds.append(b)
        uncovered &= ~on_circle[:, b]

    best = None
    partial: list[np.ndarray] = []
    for seed in seeds:
        a1 = centers[seed]
        for inlier in np.deg2rad([4.0, 2.5, 1.5]):
            a1 = _refine_axis(a1, normals, weights, inlier)

        # second axis: voted by the segments the first does not explain,
        # over bins perpendicular to the first
        remaining = np.abs(normals @ a1) >= sin_inlier
        votes2 = (weights * remaining) @ on_circle
        votes2[np.abs(centers @ a1) >= np.sin(np.deg2rad(2.5))] = -1.0
        second = int(np.argmax(votes2))
        if votes2[second] <= 0:
            partial = partial or [a1]
            continue
        a2 = centers[second]
        for inlier in np.deg2rad([4.0, 2.5, 1.5]):
            a2 = _refine_axis(a2, normals, weights, inlier)
            a2 = a2 - (a2 @ a1) * a1
            a2 = a2 / np.linalg.norm(a2)
        a3 = np.cross(a1, a2)
        a3 /= np.linalg.norm(a3)

        # alternate exact orthogonalization with guarded inlier refits
        axes = [a1, a2, a3]
        for _ in range(3):
            axes = list(_orthogonalize(axes).T)
            axes = [_guarded_refine(a) for a in axes]
        dots = [abs(float(axes[i] @ axes[j])) for i in range(3) for j in range(i + 1, 3)]
        if max(dots) > ORTHO_TOLERANCE:
            partial = partial or axes[:2]
            continue
        # residual-weighted coverage: a family sitting dead on an axis
        # counts fully, stragglers at the band edge barely count, so a
        # diagonal slicing through two families cannot outscore them
        resid = np.arcsin(np.min(np.abs(normals @ np.stack(axes, axis=1)), axis=1))
        quality = np.clip(1.0 - (resid / INLIER_ANGLE) ** 2, 0.0, 1.0)
        coverage = float(weights @ quality)
        if best is None or coverage > best[0]:
            best = (coverage, axes)

    if best is None:
        raise NoConsensus("no orthogonal vanishing triplet found", partial_axes=partial)

    def _quality(axes):
        resid = np.arcsin(np.min(np.abs(normals @ np.stack(axes, axis=1)), axis=1))
        return float(weights @ np.clip(1.0 - (resid / INLIER_ANGLE) ** 2, 0.0, 1.0))

    axes = best[1]
    for candidate in (_yaw_polish(axes, normals, weights), _joint_polish(axes, normals, weights)):
        if _quality(candidate) > _quality(axes):
            axes = candidate
    scores = np.array(
        [float(weights @ (np.abs(normals @ a) < sin_inlier)) for a in axes]
    )
    return _basis_from_axes(axes, scores)


def _joint_polish(axes, normals, weights, iterations=5):
    """Small-angle Gauss-Newton refinement of the whole frame.

    Each segment is assigned to its nearest axis; the common rotation
    minimizing the robustly reweighted normal-axis dot products is solved
    in closed form per iteration.
    """
    frame = np.stack(axes, axis=1)
    for _ in range(iterations):
        dots = normals @ frame  # (S, 3)
        k = np.argmin(np.abs(dots), axis=1)
        r = dots[np.arange(len(normals)), k]
        resid = np.arcsin(np.clip(np.abs(r), 0.0, 1.0))
        w = weights * np.clip(1.0 - (resid / INLIER_ANGLE) ** 2, 0.0, 1.0)
        if np.count_nonzero(w) < 6:
            break
        j = np.cross(frame.T[k], normals)  # d(n . R a)/d(omega)
        a_mat = (j * w[:, None]).T @ j
        b_vec = -(j * (w * r)[:, None]).sum(axis=0)
        try:
            omega = np.linalg.solve(a_mat + 1e-12 * np.eye(3), b_vec)
        except np.linalg.LinAlgError:
            break
        angle = np.linalg.norm(omega)
        if angle < 1e-10:
            break
        axis = omega / angle
        kx = np.array(
            [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
        )
        rot = np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)
        frame = rot @ frame
    return list(frame.T)


def _yaw_polish(axes, normals, weights):
    """Refit the rotation of the weaker axis pair about the anchor axis.

    All segments outside the anchor's family run along one of the other
    two axes, so their normals projected into the anchor plane cluster at
    the pair's yaw modulo 90 degrees; a weighted circular mean of the
    quadrupled azimuths estimates that yaw jointly from both families,
    which stays stable even when each family alone is degenerate.
    """
    fam_w = [float(weights @ (np.abs(normals @ a) < np.sin(INLIER_ANGLE))) for a in axes]
    ai = int(np.argmax(fam_w))
    anchor = axes[ai]
    e1 = axes[(ai + 1) % 3]
    e1 = e1 - (e1 @ anchor) * anchor
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(anchor, e1)

    rest = np.abs(normals @ anchor) >= np.sin(INLIER_ANGLE)
    if np.count_nonzero(rest) < 4:
        return axes
    p1 = normals[rest] @ e1
    p2 = normals[rest] @ e2
    mag2 = p1 * p1 + p2 * p2
    phi = np.arctan2(p2, p1)
    t = weights[rest] * mag2
    psi = 0.25 * np.arctan2(float(t @ np.sin(4.0 * phi)), float(t @ np.cos(4.0 * phi)))
    # choose the quarter-turn branch closest to the current pair
    old = axes[(ai + 1) % 3]
    cand = None
    for k in range(4):
        a = np.cos(psi + k * np.pi / 2) * e1 + np.sin(psi + k * np.pi / 2) * e2
        d = abs(float(a @ old))
        if cand is None or d > cand[0]:
            cand = (d, a)
    # the normals of a family are perpendicular to its direction, so the
    # fitted cluster azimuth is the pair yaw rotated by 90 degrees; both
    # branches appear among the quarter turns, closest-match handles it
    new2 = cand[1]
    new3 = np.cross(anchor, new2)
    if abs(float(new3 @ axes[(ai + 2) % 3])) < abs(float(new2 @ axes[(ai + 2) % 3])):
        new2, new3 = new3, new2
        new2 = np.cross(new3, anchor)
    out = [None, None, None]
    out[ai] = anchor
    out[(ai + 1) % 3] = new2 / np.linalg.norm(new2)
    out[(ai + 2) % 3] = new3 / np.linalg.norm(new3)
    return out


def _orthogonalize(axes):
    """Nearest orthonormal frame (SVD polar factor) to three axes.

    Axes are sign-free at this stage, so a left-handed result is fine;
    handedness is resolved when the world assignment picks signs.
    """
    a = np.stack(axes, axis=1)
    u, _, vt = np.linalg.svd(a)
    return u @ vt


def _partial_axes(dirs):
    """Greedy mutually-orthogonal subset of candidate directions."""
    kept = []
    for d in dirs:
        if all(abs(d @ k) <= ORTHO_TOLERANCE for k in kept):
            kept.append(d)
        if len(kept) == 2:
            break
    return kept


def _basis_from_axes(axes, scores) -> VanishingBasis:
    """Assign axes to world (x, y, z), fix signs, SVD-orthogonalize."""
    axes = [np.asarray(a, dtype=np.float64) for a in axes]
    y_dots = [abs(a[1]) for a in axes]
    iy = int(np.argmax(y_dots))
    vertical = axes[iy] if axes[iy][1] > 0 else -axes[iy]
    rest = [axes[i] for i in range(3) if i != iy]
    rest_scores = [scores[i] for i in range(3) if i != iy]
    z_dots = [abs(a[2]) for a in rest]
    iz = int(np.argmax(z_dots))
    zaxis = rest[iz] if rest[iz][2] > 0 else -rest[iz]
    xaxis = rest[1 - iz]
    if np.linalg.det(np.stack([xaxis, vertical, zaxis], axis=1)) < 0:
        xaxis = -xaxis

    a = np.stack([xaxis, vertical, zaxis], axis=1)
    u, _, vt = np.linalg.svd(a)
    ortho = u @ vt
    if np.linalg.det(ortho) < 0:
        u[:, -1] = -u[:, -1]
        ortho = u @ vt
    rotation = ortho.T  # maps axis columns onto world x, y, z
    ordered_scores = np.array([rest_scores[1 - iz], scores[iy], rest_scores[iz]], dtype=np.float64)
    return VanishingBasis(axes=ortho, rotation=rotation, vote_scores=ordered_scores)


# ---------------------------------------------------------------------------
# Panorama alignment


def _slerp(p0, p1, n):
    omega = np.arccos(np.clip(p0 @ p1, -1.0, 1.0))
    if omega < 1e-9:
        return np.tile(p0, (n, 1))
    t = np.linspace(0.0, 1.0, n)
    return (
        np.sin((1.0 - t)[:, None] * omega) * p0[None, :] + np.sin(t[:, None] * omega) * p1[None, :]
    ) / np.sin(omega)


def rasterize_line_map(segments, basis: VanishingBasis, width) -> EquirectImage:
    """3-channel {0,1} map of segments by nearest vanishing direction.

    Segments are rotated into the aligned frame first, so the channels
    correspond to the world x, y, z axes.
    """
    height = width // 2
    data = np.zeros((height, width, 3))
    for seg in segments:
        rotated = seg.rotated(basis.rotation)
        channel = int(np.argmin(np.abs(rotated.normal @ np.eye(3))))
        n = max(8, int(np.ceil(rotated.length / (2.0 * np.pi) * width * 2)))
        pts = _slerp(rotated.p0, rotated.p1, n)
        theta = np.arctan2(pts[:, 0], pts[:, 2])
        phi = np.arcsin(np.clip(pts[:, 1], -1.0, 1.0))
        u = (theta + np.pi) / (2.0 * np.pi) * width - 0.5
        v = (np.pi / 2.0 - phi) / np.pi * height - 0.5
        cols = np.mod(np.rint(u).astype(np.int64), width)
        rows = np.clip(np.rint(v).astype(np.int64), 0, height - 1)
        data[rows, cols, channel] = 1.0
    return EquirectImage(data)


def align_panorama(pano: EquirectImage, n_views=6, fov=np.pi / 2, view_size=None, min_length=None):
    """Level a panorama on its vanishing directions.

    Extracts ``n_views`` overlapping perspective views around the horizon,
    detects segments, votes for the basis and rotates the panorama so the
    vertical vanishing direction becomes world y (the horizontal pair maps
    to the nearest of x/z, keeping an already-aligned input fixed).
    Returns (aligned panorama, basis, Manhattan line map).  NoConsensus
    propagates; callers may proceed unaligned with the identity basis.
    """
    if pano.channels == 1:
        gray = pano
    else:
        gray = EquirectImage(pano.data.mean(axis=2))
    view_size = view_size or max(128, pano.width // 2)
    min_length = min_length or max(8, view_size // 8)
    segments = []
    for k in range(n_views):
        yaw = 2.0 * np.pi * k / n_views
        center = np.array([np.sin(yaw), 0.0, np.cos(yaw)])
        view = extract_perspective_view(gray, center, fov, view_size)
        segments.extend(detect_segments(view, min_length=min_length))
    if len(segments) < 6:
        raise NoConsensus(f"only {len(segments)} segments detected", partial_axes=[])
    basis = estimate_vanishing_basis(segments)
    aligned = rotate_equirect(pano, basis.rotation)
    line_map = rasterize_line_map(segments, basis, pano.width)
    return aligned, basis, line_map
