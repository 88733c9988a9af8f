"""Synthetic scene builders shared by the covisibility and acceptance tests."""

import math

import numpy as np

from covisflow.covis import FlowField, RigidObjectsInput, SceneFlowInput
from covisflow.geometry import DepthMap, Intrinsics, Pose


def small_rotation(rng, max_angle=0.25):
    """Random rotation of bounded angle (radians) via axis-angle."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    cc = 1 - c
    r = np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )
    return r


def smooth_depth(rng, h, w, base=2.5, amplitude=0.6):
    """Low-frequency positive depth field."""
    vs, us = np.mgrid[0:h, 0:w].astype(np.float64)
    fu = rng.uniform(0.5, 2.0)
    fv = rng.uniform(0.5, 2.0)
    pu = rng.uniform(0, 2 * math.pi)
    pv = rng.uniform(0, 2 * math.pi)
    d = base + amplitude * np.sin(fu * us / w * 2 * math.pi + pu) * np.cos(fv * vs / h * 2 * math.pi + pv)
    return d


def splat_target_depth(d1, intr1, t1, t2, intr2):
    """Nearest-pixel z-buffer render of d1's points into the target camera."""
    h, w = d1.values.shape
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    x = (us - intr1.cx) / intr1.fx * d1.values
    y = (vs - intr1.cy) / intr1.fy * d1.values
    z = d1.values
    pts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    valid = d1.validity.reshape(-1)
    pts = pts[valid]
    world = pts @ t1.rotation.T + t1.translation
    cam2 = (world - t2.translation) @ t2.rotation
    zt = cam2[:, 2]
    front = zt > 1e-6
    cam2 = cam2[front]
    zt = zt[front]
    ut = intr2.fx * cam2[:, 0] / zt + intr2.cx
    vt = intr2.fy * cam2[:, 1] / zt + intr2.cy
    iu = np.round(ut).astype(int)
    iv = np.round(vt).astype(int)
    inb = (iu >= 0) & (iu < intr2.width) & (iv >= 0) & (iv < intr2.height)
    iu, iv, zt = iu[inb], iv[inb], zt[inb]
    depth = np.full((intr2.height, intr2.width), np.inf)
    np.minimum.at(depth, (iv, iu), zt)
    validity = np.isfinite(depth)
    depth[~validity] = 0.0
    return DepthMap(depth, validity, "z")


def random_static_scene(seed, h=32, w=32, invalid_frac=0.05):
    """Two-camera scene: random smooth source depth, z-buffered target depth."""
    rng = np.random.default_rng(seed)
    intr1 = Intrinsics(w * 1.2, w * 1.2, w / 2 - 0.5, h / 2 - 0.5, w, h)
    intr2 = Intrinsics(w * 1.1, w * 1.3, w / 2 - 0.5, h / 2 - 0.5, w, h)
    t1 = Pose(small_rotation(rng, 0.1), rng.uniform(-0.2, 0.2, size=3))
    t2 = Pose(small_rotation(rng, 0.2), rng.uniform(-0.3, 0.3, size=3))
    values = smooth_depth(rng, h, w)
    validity = rng.random((h, w)) > invalid_frac
    d1 = DepthMap(values, validity, "z")
    d2 = splat_target_depth(d1, intr1, t1, t2, intr2)
    drop = rng.random((h, w)) > 0.97
    d2.validity[drop] = False
    return d1, d2, t1, t2, intr1, intr2


def plane_scene(h=48, w=64, plane_z=4.0, baseline=(0.6, -0.3, 0.0), rot=None):
    """Fronto-parallel plane at world z = plane_z seen by two cameras.

    Camera 1 is the world origin looking down +z. Camera 2 is translated by
    `baseline` and optionally rotated. Returns exact z-depth maps for both.
    """
    intr = Intrinsics(w * 1.0, w * 1.0, (w - 1) / 2, (h - 1) / 2, w, h)
    t1 = Pose.identity()
    r2 = np.eye(3) if rot is None else rot
    c2 = np.asarray(baseline, dtype=np.float64)
    t2 = Pose(r2, c2)

    d1 = DepthMap.full_valid(np.full((h, w), plane_z), "z")
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs = np.stack([(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)], axis=-1)
    dirs_world = dirs @ r2.T
    s = (plane_z - c2[2]) / dirs_world[..., 2]
    d2 = DepthMap.full_valid(s, "z")
    return d1, d2, t1, t2, intr, intr


def plane_homography(intr1, intr2, t2, plane_z):
    """3x3 homography mapping camera-1 pixels to camera-2 pixels for the plane."""
    k1 = np.array([[intr1.fx, 0, intr1.cx], [0, intr1.fy, intr1.cy], [0, 0, 1.0]])
    k2 = np.array([[intr2.fx, 0, intr2.cx], [0, intr2.fy, intr2.cy], [0, 0, 1.0]])
    r21 = t2.rotation.T
    t21 = -t2.rotation.T @ t2.translation
    n = np.array([0.0, 0.0, 1.0])
    return k2 @ (r21 + np.outer(t21, n) / plane_z) @ np.linalg.inv(k1)


def apply_homography(hmat, us, vs):
    ones = np.ones_like(us)
    p = np.stack([us, vs, ones], axis=-1) @ hmat.T
    return p[..., 0] / p[..., 2], p[..., 1] / p[..., 2]


def random_flow_field(rng, h, w, magnitude=3.0, invalid_frac=0.0):
    du = rng.uniform(-magnitude, magnitude, size=(h, w))
    dv = rng.uniform(-magnitude, magnitude, size=(h, w))
    validity = rng.random((h, w)) >= invalid_frac
    return FlowField(du, dv, validity)


def random_sceneflow_scene(seed, h=24, w=24):
    """Consistent dynamic pair: points drift in 3-D, flow/depth-change derived."""
    rng = np.random.default_rng(seed)
    intr = Intrinsics(w * 1.2, w * 1.2, w / 2 - 0.5, h / 2 - 0.5, w, h)
    t1 = Pose.identity()
    t2 = Pose(small_rotation(rng, 0.05), rng.uniform(-0.1, 0.1, size=3))

    d1 = DepthMap(smooth_depth(rng, h, w), rng.random((h, w)) > 0.04, "z")
    # Smooth 3-D drift: the flow and depth change follow from reprojecting
    # each drifted point into the target camera.
    drift = np.stack(
        [
            0.05 * np.sin(np.linspace(0, 3, w))[None, :] * np.ones((h, 1)),
            0.04 * np.cos(np.linspace(0, 2, h))[:, None] * np.ones((1, w)),
            0.06 * smooth_depth(rng, h, w, base=0.0, amplitude=1.0),
        ],
        axis=-1,
    )
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    x = (us - intr.cx) / intr.fx * d1.values
    y = (vs - intr.cy) / intr.fy * d1.values
    z = d1.values
    world = np.stack([x, y, z], axis=-1) @ t1.rotation.T + t1.translation
    moved = world + drift
    cam2 = (moved - t2.translation) @ t2.rotation
    zt = cam2[..., 2]
    ut = intr.fx * cam2[..., 0] / zt + intr.cx
    vt = intr.fy * cam2[..., 1] / zt + intr.cy
    flow = FlowField(ut - us, vt - vs, np.isfinite(ut) & (zt > 0))
    # Depth change so that unprojecting (ut, vt) at d1 + change lands on the
    # moved point (exactly: updated z-depth in the uniform camera).
    depth_change = zt - d1.values
    sf = SceneFlowInput(flow, depth_change)

    d2vals = zt.copy()
    d2valid = (zt > 0) & (rng.random((h, w)) > 0.05)
    d2vals[~d2valid] = 0.0
    d2 = DepthMap(d2vals, d2valid, "z")
    return d1, d2, t1, t2, intr, sf


def random_rigid_scene(seed, h=16, w=16, n_objects=2):
    """Rigid-object scene: blocks of pixels ride object poses between frames."""
    rng = np.random.default_rng(seed)
    intr = Intrinsics(w * 1.2, w * 1.2, w / 2 - 0.5, h / 2 - 0.5, w, h)
    t1 = Pose(small_rotation(rng, 0.05), rng.uniform(-0.1, 0.1, size=3))
    t2 = Pose(small_rotation(rng, 0.1), rng.uniform(-0.2, 0.2, size=3))
    d1 = DepthMap(smooth_depth(rng, h, w), rng.random((h, w)) > 0.04, "z")

    seg = np.ones((h, w), dtype=np.int32)
    for k in range(2, n_objects + 1):
        cu = rng.integers(0, w)
        cv = rng.integers(0, h)
        radius = rng.integers(3, max(4, min(h, w) // 3))
        vs, us = np.mgrid[0:h, 0:w]
        seg[(us - cu) ** 2 + (vs - cv) ** 2 < radius**2] = k

    poses_t1 = {}
    poses_t2 = {}
    for k in range(1, n_objects + 1):
        poses_t1[k] = Pose(small_rotation(rng, 0.05), rng.uniform(-0.1, 0.1, size=3))
        poses_t2[k] = Pose(small_rotation(rng, 0.05), rng.uniform(-0.1, 0.1, size=3))

    d2 = DepthMap(smooth_depth(rng, h, w), rng.random((h, w)) > 0.04, "z")
    ro = RigidObjectsInput(seg, poses_t1, poses_t2)
    return d1, d2, t1, t2, intr, intr, ro
