"""Equirectangular panorama geometry and raster I/O.

Conventions, fixed for the whole package:

  - World frame is right-handed with y up; the floor plane is y = 0 and
    top-down layouts live in the x-z plane.
  - A panorama of width W has height H = W/2.  Continuous image
    coordinates (u, v) map to angles through pixel centers at
    half-integer offsets:

        azimuth    theta = (u + 0.5) / W * 2*pi - pi     (increases with u)
        elevation  phi   = pi/2 - (v + 0.5) / H * pi     (v = 0 is up)

  - A (theta, phi) pair maps to the unit direction
    (cos(phi)*sin(theta), sin(phi), cos(phi)*cos(theta)), so theta = 0
    looks along +z and theta = pi/2 along +x.
  - Horizontal resampling wraps (column 0 and column W-1 are angular
    neighbors); vertical resampling clamps at the poles.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import cv2
import numpy as np

EQMP_MAGIC = b"EQMP"


@dataclass(frozen=True)
class EquirectImage:
    """Multi-channel raster in equirectangular projection.

    ``data`` has shape (H, W, C) with H = W/2.  Values are unconstrained
    floats (probability maps add their own [0, 1] constraint).
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3:
            raise ValueError(f"expected (H, W) or (H, W, C) data, got shape {self.data.shape}")
        h, w, _ = d.shape
        if w < 64 or w % 2 != 0:
            raise ValueError(f"width must be even and >= 64, got {w}")
        if h * 2 != w:
            raise ValueError(f"panorama height must be width/2, got {w}x{h}")
        if not np.isfinite(d).all():
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", d)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def pix_to_dir(u, v, width):
    """Map continuous pixel coordinates to unit directions.

    Accepts scalars or arrays (broadcast together); returns shape (..., 3).
    Coordinates must satisfy 0 <= u < width, 0 <= v < width/2.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    height = width / 2.0
    if np.any(u < 0) or np.any(u >= width) or np.any(v < 0) or np.any(v >= height):
        raise ValueError("pixel coordinates out of range")
    theta = (u + 0.5) / width * (2.0 * np.pi) - np.pi
    phi = np.pi / 2.0 - (v + 0.5) / height * np.pi
    cos_phi = np.cos(phi)
    return np.stack([cos_phi * np.sin(theta), np.sin(phi), cos_phi * np.cos(theta)], axis=-1)


def dir_to_pix(d, width):
    """Inverse of :func:`pix_to_dir`; exact up to pixel-center rounding.

    Accepts (..., 3) arrays; returns (u, v) with u in [-0.5, width-0.5)
    and v in [-0.5, width/2-0.5].  Directions need not be unit length.
    """
    d = np.asarray(d, dtype=np.float64)
    theta = np.arctan2(d[..., 0], d[..., 2])
    norm = np.linalg.norm(d, axis=-1)
    phi = np.arcsin(np.clip(d[..., 1] / np.where(norm == 0, 1.0, norm), -1.0, 1.0))
    u = (theta + np.pi) / (2.0 * np.pi) * width - 0.5
    v = (np.pi / 2.0 - phi) / np.pi * (width / 2.0) - 0.5
    return u, v


def angles_to_pix(theta, phi, width):
    """Map azimuth/elevation directly to continuous pixel coordinates."""
    theta = np.mod(np.asarray(theta, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    u = (theta + np.pi) / (2.0 * np.pi) * width - 0.5
    v = (np.pi / 2.0 - np.asarray(phi, dtype=np.float64)) / np.pi * (width / 2.0) - 0.5
    return u, v


def bilinear_sample(data, u, v, wrap_horizontal=True):
    """Sample (H, W) or (H, W, C) data at continuous (u, v) positions.

    Horizontal indexing wraps when ``wrap_horizontal``; vertical indexing
    clamps.  Bilinear weights make every output a convex combination of
    inputs, so the value range is preserved.
    """
    data = np.asarray(data, dtype=np.float64)
    squeeze = data.ndim == 2
    if squeeze:
        data = data[:, :, None]
    h, w, _ = data.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)

    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = (u - u0)[..., None]
    fv = (v - v0)[..., None]

    if wrap_horizontal:
        c0 = np.mod(u0, w)
        c1 = np.mod(u0 + 1, w)
    else:
        c0 = np.clip(u0, 0, w - 1)
        c1 = np.clip(u0 + 1, 0, w - 1)
    r0 = np.clip(v0, 0, h - 1)
    r1 = np.clip(v0 + 1, 0, h - 1)

    out = (
        data[r0, c0] * (1 - fu) * (1 - fv)
        + data[r0, c1] * fu * (1 - fv)
        + data[r1, c0] * (1 - fu) * fv
        + data[r1, c1] * fu * fv
    )
    return out[..., 0] if squeeze else out


def nearest_sample(data, u, v, wrap_horizontal=True):
    """Nearest-neighbor counterpart of :func:`bilinear_sample` for bit-exact tests."""
    data = np.asarray(data, dtype=np.float64)
    squeeze = data.ndim == 2
    if squeeze:
        data = data[:, :, None]
    h, w, _ = data.shape
    ui = np.rint(np.asarray(u, dtype=np.float64)).astype(np.int64)
    vi = np.rint(np.asarray(v, dtype=np.float64)).astype(np.int64)
    ui = np.mod(ui, w) if wrap_horizontal else np.clip(ui, 0, w - 1)
    vi = np.clip(vi, 0, h - 1)
    out = data[vi, ui]
    return out[..., 0] if squeeze else out


def check_rotation(r):
    """Validate a 3x3 rotation matrix (orthonormal, det +1, tol 1e-9)."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > 1e-9:
        raise ValueError("rotation determinant is not +1")
    return r


def rot_x(angle):
    """Rotation about world x by ``angle`` (pitch)."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle):
    """Rotation about world y by ``angle`` (yaw)."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle):
    """Rotation about world z by ``angle`` (roll)."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(r):
    """Total rotation angle of a rotation matrix, in radians."""
    r = np.asarray(r, dtype=np.float64)
    return float(np.arccos(np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)))


def rotate_equirect(img: EquirectImage, rotation, interpolation="bilinear") -> EquirectImage:
    """Rotate the scene by ``rotation`` and reproject to equirectangular.

    Output pixel (u, v) samples the input at the direction R^-1 * d(u, v),
    so a feature seen along direction e in the input appears along R*e in
    the output.
    """
    r = check_rotation(rotation)
    h, w = img.height, img.width
    vv, uu = np.mgrid[0:h, 0:w]
    dirs = pix_to_dir(uu, vv, w)
    src = dirs @ r  # row-vector convention: R^-1 applied to each direction
    su, sv = dir_to_pix(src, w)
    if interpolation == "bilinear":
        out = bilinear_sample(img.data, su, sv)
    elif interpolation == "nearest":
        out = nearest_sample(img.data, su, sv)
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return EquirectImage(out)


@dataclass(frozen=True)
class PerspectiveView:
    """Pinhole view extracted from a panorama.

    ``basis`` columns are the camera's (right, up, forward) axes in world
    coordinates; ``image`` is (size, size) or (size, size, C).
    """

    image: np.ndarray
    basis: np.ndarray
    fov: float

    @property
    def size(self) -> int:
        return self.image.shape[0]

    @property
    def focal(self) -> float:
        return (self.size / 2.0) / np.tan(self.fov / 2.0)

    def pix_to_ray(self, x, y):
        """Lift view pixel coordinates to world-frame unit directions."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        half = self.size / 2.0
        xc = (x + 0.5 - half) / self.focal
        yc = (half - (y + 0.5)) / self.focal
        rays = np.stack([xc, yc, np.ones_like(xc)], axis=-1)
        rays = rays @ self.basis.T
        return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def view_basis(center, fov):
    """Camera basis for a view centered on ``center``.

    Up is world-y projected off the view axis; at the poles, where that
    projection vanishes, world-z breaks the tie.
    """
    forward = np.asarray(center, dtype=np.float64)
    forward = forward / np.linalg.norm(forward)
    up_hint = np.array([0.0, 1.0, 0.0])
    if abs(float(forward @ up_hint)) > 1.0 - 1e-9:
        up_hint = np.array([0.0, 0.0, 1.0])
    up = up_hint - (up_hint @ forward) * forward
    up = up / np.linalg.norm(up)
    right = np.cross(up, forward)
    if not 0.0 < fov < np.pi:
        raise ValueError("fov must lie in (0, pi)")
    return np.stack([right, up, forward], axis=1)


def extract_perspective_view(img: EquirectImage, center, fov, size) -> PerspectiveView:
    """Extract a square pinhole view looking along ``center``."""
    basis = view_basis(center, fov)
    focal = (size / 2.0) / np.tan(fov / 2.0)
    yy, xx = np.mgrid[0:size, 0:size]
    half = size / 2.0
    xc = (xx + 0.5 - half) / focal
    yc = (half - (yy + 0.5)) / focal
    rays = np.stack([xc, yc, np.ones_like(xc, dtype=np.float64)], axis=-1) @ basis.T
    su, sv = dir_to_pix(rays, img.width)
    out = bilinear_sample(img.data, su, sv)
    if out.ndim == 3 and out.shape[2] == 1:
        out = out[:, :, 0]
    return PerspectiveView(image=out, basis=basis, fov=float(fov))


# ---------------------------------------------------------------------------
# Raster I/O


def write_eqmp(path, data) -> None:
    """Write a float map as EQMP: 16-byte header + little-endian float32.

    Header: magic "EQMP", u32 width, u32 height, u32 channels.  Data is
    row-major with interleaved channels.
    """
    d = np.asarray(data, dtype=np.float32)
    if d.ndim == 2:
        d = d[:, :, None]
    h, w, c = d.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIII", EQMP_MAGIC, w, h, c))
        f.write(d.astype("<f4").tobytes(order="C"))


def read_eqmp(path) -> np.ndarray:
    """Read an EQMP file; returns float64 data of shape (H, W, C)."""
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16:
            raise ValueError(f"{path}: truncated EQMP header")
        magic, w, h, c = struct.unpack("<4sIII", header)
        if magic != EQMP_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        raw = np.frombuffer(f.read(), dtype="<f4")
    if raw.size != w * h * c:
        raise ValueError(f"{path}: expected {w * h * c} values, found {raw.size}")
    return raw.reshape(h, w, c).astype(np.float64)


def write_png(path, data, bit_depth=8) -> None:
    """Write grayscale or RGB PNG at 8 or 16 bits from data in [0, 1]."""
    d = np.asarray(data, dtype=np.float64)
    if d.ndim == 3 and d.shape[2] == 1:
        d = d[:, :, 0]
    if bit_depth == 8:
        q = np.clip(np.rint(d * 255.0), 0, 255).astype(np.uint8)
    elif bit_depth == 16:
        q = np.clip(np.rint(d * 65535.0), 0, 65535).astype(np.uint16)
    else:
        raise ValueError("bit_depth must be 8 or 16")
    if q.ndim == 3:
        if q.shape[2] != 3:
            raise ValueError("PNG output supports 1 or 3 channels")
        q = cv2.cvtColor(q, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), q):
        raise IOError(f"failed to write {path}")


def read_png(path) -> np.ndarray:
    """Read a PNG as float64 in [0, 1]; shape (H, W) or (H, W, 3)."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"failed to read {path}")
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            raw = raw[:, :, :3]
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    return raw.astype(np.float64) / scale
