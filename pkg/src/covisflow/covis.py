"""Ground-truth flow, covisibility, FoV, and supervision masks.

Three scene categories share one thresholding rule: a source pixel is
covisible when the distance between its expected position and the depth
perceived by the target camera stays below tau_d + tau_r * (distance from
the expected point to the target camera center). They differ only in how
the expected point is constructed:

    - static scenes: unproject source depth, reproject into the target;
    - optical/scene flow: follow the ground-truth flow, update the depth
      with the provided depth-change map;
    - rigid posed objects: move the unprojected point with its object's
      pose change before reprojecting.

All outputs are computed with the exact elementwise formulas of
`covisflow.geometry`, so a per-pixel loop using those formulas reproduces
these grids bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Z_DEPTH,
    bilinear_sample,
    inverse_transform_xyz,
    project_components,
    ray_norm,
    transform_xyz,
    unproject_xyz,
)


@dataclass(frozen=True)
class ThresholdParams:
    """Covisibility tolerance: absolute meters plus a per-meter relative term."""

    tau_d: float
    tau_r: float

    def __post_init__(self):
        if self.tau_d < 0 or self.tau_r < 0:
            raise ValueError(f"thresholds must be non-negative, got ({self.tau_d}, {self.tau_r})")

    def bound(self, target_ray_distance):
        return self.tau_d + self.tau_r * target_ray_distance


# Published reprojection-error thresholds (tau_d meters, tau_r per meter)
# for the datasets whose covisibility is derived from depth reprojection.
THRESHOLD_PRESETS = {
    "BlendedMVS": ThresholdParams(0.1, 0.005),
    "MegaDepth": ThresholdParams(0.1, 0.005),
    "TartanAirV2": ThresholdParams(0.1, 0.01),
    "ScanNetppV2": ThresholdParams(0.1, 0.005),
    "HabitatCAD": ThresholdParams(0.1, 0.005),
    "FlyingThings": ThresholdParams(0.01, 0.001),
    "Monkaa": ThresholdParams(0.01, 0.001),
    "Kubric4D": ThresholdParams(0.1, 0.005),
}


def _normalize_dataset_name(name):
    return "".join("p" if ch == "+" else ch for ch in name.lower() if ch.isalnum() or ch == "+")


_PRESET_LOOKUP = {_normalize_dataset_name(k): v for k, v in THRESHOLD_PRESETS.items()}


def threshold_preset(dataset_name):
    """Look up the published (tau_d, tau_r) pair for a dataset.

    Accepts loose spellings ("ScanNet++ V2", "tartanair v2", ...). Raises
    for datasets without a reprojection threshold.
    """
    key = _normalize_dataset_name(dataset_name)
    if key not in _PRESET_LOOKUP:
        known = ", ".join(sorted(THRESHOLD_PRESETS))
        raise KeyError(f"no covisibility threshold preset for {dataset_name!r}; known: {known}")
    return _PRESET_LOOKUP[key]


@dataclass
class FlowField:
    """Per-pixel continuous displacement (du, dv) with validity."""

    du: np.ndarray
    dv: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        self.du = np.asarray(self.du, dtype=np.float64)
        self.dv = np.asarray(self.dv, dtype=np.float64)
        self.validity = np.asarray(self.validity, dtype=bool)
        if not (self.du.shape == self.dv.shape == self.validity.shape) or self.du.ndim != 2:
            raise ValueError("du, dv, validity must share one 2-D shape")
        bad = self.validity & ~(np.isfinite(self.du) & np.isfinite(self.dv))
        if np.any(bad):
            raise ValueError("flow must be finite where valid")

    @property
    def shape(self):
        return self.du.shape

    @staticmethod
    def zeros(height, width):
        shape = (height, width)
        return FlowField(np.zeros(shape), np.zeros(shape), np.ones(shape, dtype=bool))


@dataclass
class CovisResult:
    """Flow plus the mask stack for one ordered image pair.

    reproj_error holds the depth-reprojection error in meters where it was
    computable (error_defined), NaN elsewhere.
    """

    flow: FlowField
    covis: np.ndarray
    fov: np.ndarray
    supervision: np.ndarray
    reproj_error: np.ndarray
    error_defined: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def covis_fraction(self):
        """Fraction of all source pixels that are covisible."""
        return float(np.mean(self.covis))


@dataclass
class SceneFlowInput:
    """Ground-truth flow and per-pixel depth change for dynamic pairs."""

    flow_gt: FlowField
    depth_change: np.ndarray

    def __post_init__(self):
        if self.depth_change is None:
            raise ValueError("scene-flow covisibility requires a depth-change map")
        self.depth_change = np.asarray(self.depth_change, dtype=np.float64)
        if self.depth_change.shape != self.flow_gt.shape:
            raise ValueError(
                f"depth_change {self.depth_change.shape} does not match flow {self.flow_gt.shape}"
            )


@dataclass
class RigidObjectsInput:
    """Object segmentation and per-object poses at both timesteps."""

    segmentation: np.ndarray
    poses_t1: dict
    poses_t2: dict

    def __post_init__(self):
        self.segmentation = np.asarray(self.segmentation)
        if self.segmentation.ndim != 2 or not np.issubdtype(self.segmentation.dtype, np.integer):
            raise ValueError("segmentation must be a 2-D integer map")


def supervision_mask(v1, f1, v_other):
    """Pixels where covisibility is decidable: (V1 and not F1) or (F1 and V_other)."""
    v1 = np.asarray(v1, dtype=bool)
    f1 = np.asarray(f1, dtype=bool)
    v_other = np.asarray(v_other, dtype=bool)
    if not (v1.shape == f1.shape == v_other.shape):
        raise ValueError("supervision_mask inputs must share one shape")
    return (v1 & ~f1) | (f1 & v_other)


def _pixel_grid(width, height):
    us = np.arange(width, dtype=np.float64)
    vs = np.arange(height, dtype=np.float64)
    return np.meshgrid(us, vs)


def _check_depth_vs_intrinsics(depth, intr, label):
    h, w = depth.shape
    if (h, w) != (intr.height, intr.width):
        raise ValueError(f"{label} depth {h}x{w} does not match intrinsics {intr.height}x{intr.width}")


def _in_bounds(u, v, intr):
    # Sampleable region: [0, W-1] x [0, H-1] in pixel-center coordinates.
    return (u >= 0.0) & (u <= intr.width - 1.0) & (v >= 0.0) & (v <= intr.height - 1.0)


def _sample_target_ray_depth(d2, intr2, ut, vt, where):
    """Bilinear target depth at (ut, vt), converted to ray distance."""
    uq = np.where(where, ut, 0.0)
    vq = np.where(where, vt, 0.0)
    val, ok = bilinear_sample(d2.values, d2.validity & (d2.values > 0), uq, vq)
    if d2.convention == Z_DEPTH:
        val = val * ray_norm(intr2, uq, vq)
    ok = ok & where
    return val, ok


def _result(flow_valid, ut, vt, ugrid, vgrid, fov, covis, supervision, err, defined, diagnostics=None):
    du = np.where(flow_valid, ut - ugrid, np.nan)
    dv = np.where(flow_valid, vt - vgrid, np.nan)
    flow = FlowField(du, dv, flow_valid)
    reproj = np.where(defined, err, np.nan)
    return CovisResult(flow, covis, fov, supervision, reproj, defined, diagnostics or {})


def covis_static(d1, d2, t1, t2, intr1, intr2, thr):
    """Covisibility for a static scene observed by two posed depth cameras.

    Unprojects every valid source pixel, reprojects it into the target view,
    and compares the expected ray distance against the bilinearly sampled
    target depth.
    """
    _check_depth_vs_intrinsics(d1.values, intr1, "source")
    _check_depth_vs_intrinsics(d2.values, intr2, "target")
    ugrid, vgrid = _pixel_grid(intr1.width, intr1.height)

    v1 = d1.validity & (d1.values > 0)
    d1safe = np.where(v1, d1.values, 1.0)
    x, y, z = unproject_xyz(intr1, ugrid, vgrid, d1safe, d1.convention)
    xw, yw, zw = transform_xyz(t1, x, y, z)
    qx, qy, qz = inverse_transform_xyz(t2, xw, yw, zw)

    in_front = qz > 0
    flow_valid = v1 & in_front
    zsafe = np.where(qz == 0.0, 1.0, qz)
    ut, vt = project_components(intr2, qx, qy, zsafe)
    fov = flow_valid & _in_bounds(ut, vt, intr2)

    o = t2.translation
    ex = xw - o[0]
    ey = yw - o[1]
    ez = zw - o[2]
    expected = np.sqrt(ex * ex + ey * ey + ez * ez)

    d2ray, d2ok = _sample_target_ray_depth(d2, intr2, ut, vt, fov)
    err = np.abs(expected - d2ray)
    covis = fov & d2ok & (err < thr.bound(expected))
    supervision = supervision_mask(v1, fov, d2ok)
    defined = fov & d2ok
    return _result(flow_valid, ut, vt, ugrid, vgrid, fov, covis, supervision, err, defined)


def covis_sceneflow(d1, d2, t1, t2, intr, sf, thr):
    """Covisibility for dynamic pairs with ground-truth flow and depth change.

    The target pixel is i_s + flow; the expected point is the target pixel
    unprojected at the updated depth D1 + depth_change and placed in the
    world by the target pose.
    """
    _check_depth_vs_intrinsics(d1.values, intr, "source")
    _check_depth_vs_intrinsics(d2.values, intr, "target")
    if sf.flow_gt.shape != d1.shape:
        raise ValueError(f"flow {sf.flow_gt.shape} does not match depth {d1.shape}")
    ugrid, vgrid = _pixel_grid(intr.width, intr.height)

    fv = sf.flow_gt.validity
    du = np.where(fv, sf.flow_gt.du, 0.0)
    dv = np.where(fv, sf.flow_gt.dv, 0.0)
    ut = ugrid + du
    vt = vgrid + dv

    v1 = fv & d1.validity & (d1.values > 0) & np.isfinite(sf.depth_change)
    d1safe = np.where(v1, d1.values, 1.0)
    changesafe = np.where(v1, sf.depth_change, 0.0)
    updated = d1safe + changesafe
    positive = updated > 0
    # The expected point exists only where the source data is complete and
    # the updated depth is in front, so FoV restricts to those pixels.
    fov = v1 & positive & _in_bounds(ut, vt, intr)

    updsafe = np.where(positive, updated, 1.0)
    x, y, z = unproject_xyz(intr, ut, vt, updsafe, d1.convention)
    xw, yw, zw = transform_xyz(t2, x, y, z)
    o = t2.translation
    ex = xw - o[0]
    ey = yw - o[1]
    ez = zw - o[2]
    expected = np.sqrt(ex * ex + ey * ey + ez * ez)

    d2ray, d2ok = _sample_target_ray_depth(d2, intr, ut, vt, fov)
    err = np.abs(expected - d2ray)
    covis = fov & d2ok & (err < thr.bound(expected))
    supervision = supervision_mask(v1, fov, d2ok)
    defined = fov & d2ok

    du_out = np.where(fv, sf.flow_gt.du, np.nan)
    dv_out = np.where(fv, sf.flow_gt.dv, np.nan)
    flow = FlowField(du_out, dv_out, fv)
    reproj = np.where(defined, err, np.nan)
    return CovisResult(flow, covis, fov, supervision, reproj, defined)


def covis_rigid(d1, d2, t1, t2, intr1, intr2, ro, thr):
    """Covisibility for scenes of rigid objects posed at both timesteps.

    Each source point rides with its object: it is pulled into the object
    frame at t1 and re-posed at t2 before the static-style reprojection
    test. Pixels whose segmentation ID has no pose at either timestep are
    invalid and counted in diagnostics.
    """
    _check_depth_vs_intrinsics(d1.values, intr1, "source")
    _check_depth_vs_intrinsics(d2.values, intr2, "target")
    if ro.segmentation.shape != d1.shape:
        raise ValueError(f"segmentation {ro.segmentation.shape} does not match depth {d1.shape}")
    ugrid, vgrid = _pixel_grid(intr1.width, intr1.height)

    ids = np.unique(ro.segmentation)
    known_ids = [int(k) for k in ids if int(k) in ro.poses_t1 and int(k) in ro.poses_t2]
    known = np.isin(ro.segmentation, known_ids)

    depth_ok = d1.validity & (d1.values > 0)
    v1 = depth_ok & known
    unknown_pixels = int(np.count_nonzero(depth_ok & ~known))

    d1safe = np.where(v1, d1.values, 1.0)
    x, y, z = unproject_xyz(intr1, ugrid, vgrid, d1safe, d1.convention)
    xw, yw, zw = transform_xyz(t1, x, y, z)

    px = np.zeros_like(xw)
    py = np.zeros_like(yw)
    pz = np.zeros_like(zw)
    for k in known_ids:
        m = (ro.segmentation == k) & v1
        if not np.any(m):
            continue
        ox1, oy1, oz1 = inverse_transform_xyz(ro.poses_t1[k], xw[m], yw[m], zw[m])
        px[m], py[m], pz[m] = transform_xyz(ro.poses_t2[k], ox1, oy1, oz1)

    qx, qy, qz = inverse_transform_xyz(t2, px, py, pz)
    in_front = qz > 0
    flow_valid = v1 & in_front
    zsafe = np.where(qz == 0.0, 1.0, qz)
    ut, vt = project_components(intr2, qx, qy, zsafe)
    fov = flow_valid & _in_bounds(ut, vt, intr2)

    o = t2.translation
    ex = px - o[0]
    ey = py - o[1]
    ez = pz - o[2]
    expected = np.sqrt(ex * ex + ey * ey + ez * ez)

    d2ray, d2ok = _sample_target_ray_depth(d2, intr2, ut, vt, fov)
    err = np.abs(expected - d2ray)
    covis = fov & d2ok & (err < thr.bound(expected))
    supervision = supervision_mask(v1, fov, d2ok)
    defined = fov & d2ok
    diagnostics = {"unknown_object_pixels": unknown_pixels}
    return _result(flow_valid, ut, vt, ugrid, vgrid, fov, covis, supervision, err, defined, diagnostics)


def covis_fov_only(flow_gt, width, height):
    """FoV-proxy covisibility for datasets without depth or scene flow.

    The mask is just the in-bounds test of i_s + flow; the supervision mask
    is all-zero so the proxy never trains covisibility.
    """
    if flow_gt.shape != (height, width):
        raise ValueError(f"flow {flow_gt.shape} does not match {height}x{width}")
    ugrid, vgrid = _pixel_grid(width, height)
    fv = flow_gt.validity
    du = np.where(fv, flow_gt.du, 0.0)
    dv = np.where(fv, flow_gt.dv, 0.0)
    ut = ugrid + du
    vt = vgrid + dv
    inb = (ut >= 0.0) & (ut <= width - 1.0) & (vt >= 0.0) & (vt <= height - 1.0)
    covis = fv & inb

    du_out = np.where(fv, flow_gt.du, np.nan)
    dv_out = np.where(fv, flow_gt.dv, np.nan)
    flow = FlowField(du_out, dv_out, fv)
    supervision = np.zeros((height, width), dtype=bool)
    reproj = np.full((height, width), np.nan)
    defined = np.zeros((height, width), dtype=bool)
    return CovisResult(flow, covis, covis.copy(), supervision, reproj, defined)
