"""Pinhole camera models, rigid transforms, and grid interpolation.

All functions are pure and accept either scalars or numpy arrays for the
coordinate arguments (they are written as elementwise expressions), so the
same arithmetic drives both single-pixel probes and full-image pipelines.

Conventions:
    - Pixel origin is the center of the top-left pixel; a continuous
      coordinate (u, v) = (0, 0) is exactly the first pixel center.
    - Poses are camera-to-world.
    - Depth maps are tagged with a convention: "z" (distance along the
      optical axis) or "ray" (Euclidean distance from the camera center).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Z_DEPTH = "z"
RAY_DEPTH = "ray"
_CONVENTIONS = (Z_DEPTH, RAY_DEPTH)


def _check_convention(convention):
    if convention not in _CONVENTIONS:
        raise ValueError(f"unknown depth convention {convention!r}, expected one of {_CONVENTIONS}")


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform (rotation 3x3, translation meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity():
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quaternion(qx, qy, qz, qw, translation):
        """Build a pose from a unit quaternion (x, y, z, w) and translation."""
        n = np.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
        if n == 0:
            raise ValueError("zero quaternion")
        qx, qy, qz, qw = qx / n, qy / n, qz / n, qw / n
        r = np.array(
            [
                [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
                [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
                [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
            ]
        )
        return Pose(r, np.asarray(translation, dtype=np.float64))

    def inverse(self):
        rt = self.rotation.T.copy()
        return Pose(rt, -(rt @ self.translation))

    def forward_axis(self):
        """Camera +z axis expressed in the world frame."""
        return self.rotation[:, 2].copy()

    @property
    def center(self):
        """Camera center in the world frame."""
        return self.translation


@dataclass
class DepthMap:
    """Per-pixel depth in meters with an explicit validity mask."""

    values: np.ndarray
    validity: np.ndarray
    convention: str = Z_DEPTH

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.validity = np.asarray(self.validity, dtype=bool)
        if self.values.shape != self.validity.shape or self.values.ndim != 2:
            raise ValueError(
                f"values {self.values.shape} and validity {self.validity.shape} must be equal 2-D shapes"
            )
        _check_convention(self.convention)
        if not np.all(np.isfinite(self.values[self.validity])):
            raise ValueError("depth values must be finite where valid")

    @property
    def shape(self):
        return self.values.shape

    @staticmethod
    def full_valid(values, convention=Z_DEPTH):
        values = np.asarray(values, dtype=np.float64)
        return DepthMap(values, np.ones(values.shape, dtype=bool), convention)


# ---------------------------------------------------------------------------
# Projection and transforms.
#
# Expression order is deliberate and load-bearing: the brute-force per-pixel
# references in the test suite reproduce these formulas term by term and the
# covisibility pipeline is required to match them bit-for-bit on float64.
# ---------------------------------------------------------------------------


def unproject_xyz(intr, u, v, depth, convention=Z_DEPTH):
    """Backproject pixel (u, v) at the given depth into the camera frame.

    Returns the (x, y, z) components. Elementwise over array inputs.
    """
    _check_convention(convention)
    dx = (u - intr.cx) / intr.fx
    dy = (v - intr.cy) / intr.fy
    if convention == Z_DEPTH:
        return dx * depth, dy * depth, depth
    norm = np.sqrt(dx * dx + dy * dy + 1.0)
    t = depth / norm
    return dx * t, dy * t, t


def unproject(intr, pix, depth, convention=Z_DEPTH):
    """Backproject a single pixel; depth must be positive."""
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    x, y, z = unproject_xyz(intr, float(pix[0]), float(pix[1]), float(depth), convention)
    return np.array([x, y, z], dtype=np.float64)


def project_components(intr, x, y, z):
    """Pinhole projection of camera-frame components; no z checks."""
    u = intr.fx * (x / z) + intr.cx
    v = intr.fy * (y / z) + intr.cy
    return u, v


def project(intr, p):
    """Project a camera-frame point; returns ((u, v), in_front).

    The pixel may fall outside the image bounds; callers do their own
    field-of-view tests. Raises on z == 0 (degenerate projection).
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if z == 0.0:
        raise ValueError("degenerate projection: point on the principal plane (z = 0)")
    u, v = project_components(intr, x, y, z)
    return (u, v), z > 0


def transform_xyz(pose, x, y, z):
    """Apply a pose (camera-to-world) to point components."""
    r = pose.rotation
    t = pose.translation
    xo = r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + t[0]
    yo = r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + t[1]
    zo = r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + t[2]
    return xo, yo, zo


def inverse_transform_xyz(pose, x, y, z):
    """Apply the inverse of a pose (world-to-camera) to point components."""
    r = pose.rotation
    t = pose.translation
    qx = x - t[0]
    qy = y - t[1]
    qz = z - t[2]
    xo = r[0, 0] * qx + r[1, 0] * qy + r[2, 0] * qz
    yo = r[0, 1] * qx + r[1, 1] * qy + r[2, 1] * qz
    zo = r[0, 2] * qx + r[1, 2] * qy + r[2, 2] * qz
    return xo, yo, zo


def transform(pose, p):
    """Apply a rigid pose to a 3-vector point."""
    x, y, z = transform_xyz(pose, float(p[0]), float(p[1]), float(p[2]))
    return np.array([x, y, z], dtype=np.float64)


def ray_norm(intr, u, v):
    """Length of the unit-z ray through pixel (u, v): ||((u-cx)/fx, (v-cy)/fy, 1)||."""
    dx = (u - intr.cx) / intr.fx
    dy = (v - intr.cy) / intr.fy
    return np.sqrt(dx * dx + dy * dy + 1.0)


def ray_distance(intr, pix, depth_value, convention=Z_DEPTH):
    """Convert a stored depth at pixel `pix` into Euclidean ray distance."""
    _check_convention(convention)
    if not depth_value > 0:
        raise ValueError(f"depth must be positive, got {depth_value}")
    if convention == RAY_DEPTH:
        return float(depth_value)
    return float(depth_value * ray_norm(intr, float(pix[0]), float(pix[1])))


def bilinear_sample(values, validity, u, v):
    """Bilinearly sample a scalar grid at continuous pixel coordinates.

    A neighbor contributes only if its interpolation weight is nonzero, so
    sampling at exact integer coordinates returns the stored value and needs
    only that one cell to be valid. The sample is flagged valid iff every
    contributing neighbor is in bounds and valid (conservative: one bad
    neighbor poisons the sample).

    Returns (value, valid); elementwise over array inputs.
    """
    values = np.asarray(values, dtype=np.float64)
    validity = np.asarray(validity, dtype=bool)
    h, w = values.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    scalar = u.ndim == 0 and v.ndim == 0
    finite = np.isfinite(u) & np.isfinite(v)
    u = np.where(finite, u, 0.0)
    v = np.where(finite, v, 0.0)

    x0 = np.floor(u)
    y0 = np.floor(v)
    wx = u - x0
    wy = v - y0
    x0i = x0.astype(np.int64)
    y0i = y0.astype(np.int64)
    x1i = x0i + 1
    y1i = y0i + 1
    use_x1 = wx > 0
    use_y1 = wy > 0

    def cell(ix, iy, used):
        inb = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        ixc = np.clip(ix, 0, w - 1)
        iyc = np.clip(iy, 0, h - 1)
        # Unused neighbors are zeroed, not just zero-weighted: a NaN entry
        # under a zero weight would still poison the blend.
        val = np.where(inb & used, values[iyc, ixc], 0.0)
        ok = ~used | (inb & validity[iyc, ixc])
        return val, ok

    used00 = np.broadcast_to(True, u.shape)
    v00, ok00 = cell(x0i, y0i, used00)
    v01, ok01 = cell(x1i, y0i, use_x1)
    v10, ok10 = cell(x0i, y1i, use_y1)
    v11, ok11 = cell(x1i, y1i, use_x1 & use_y1)

    top = v00 * (1.0 - wx) + v01 * wx
    bot = v10 * (1.0 - wx) + v11 * wx
    value = top * (1.0 - wy) + bot * wy
    valid = ok00 & ok01 & ok10 & ok11 & finite
    if scalar:
        return float(value), bool(valid)
    return value, valid


def optical_axis_angle(pose_a, pose_b):
    """Angle in [0, pi] between the two cameras' forward axes in the world frame."""
    fa = pose_a.forward_axis()
    fb = pose_b.forward_axis()
    d = float(fa[0] * fb[0] + fa[1] * fb[1] + fa[2] * fb[2])
    return float(np.arccos(np.clip(d, -1.0, 1.0)))
