#!/usr/bin/env python3
"""Write a two-view synthetic plane fixture (depths, poses, configs).

The scene is a fronto-parallel plane seen from two slightly rotated
cameras, so the true flow is an analytic homography. After running this,
try:

    covisflow gen-covis --config fixture/fwd.cfg --output-dir fixture
    covisflow eval-flow --pred fixture/fwd_flow.flo --gt fixture/gt.flo \
        --mask fixture/fwd_covis.png
"""

import math
import os
import sys

import numpy as np

from covisflow.covis import FlowField
from covisflow.formats import write_config, write_flo, write_tensor, write_trajectory


def rotation_xy(ax, ay):
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    return ry @ rx


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "fixture"
    os.makedirs(out, exist_ok=True)
    h, w = 48, 64
    plane_z = 4.0
    fx = fy = float(w)
    cx, cy = (w - 1) / 2, (h - 1) / 2
    r2 = rotation_xy(-0.04, 0.06)
    c2 = np.array([0.45, -0.25, 0.1])

    d1 = np.full((h, w), plane_z)
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs = np.stack([(us - cx) / fx, (vs - cy) / fy, np.ones_like(us)], axis=-1)
    dirs_world = dirs @ r2.T
    d2 = (plane_z - c2[2]) / dirs_world[..., 2]

    write_tensor(os.path.join(out, "d1.tnsr"), d1)
    write_tensor(os.path.join(out, "d2.tnsr"), d2)
    from covisflow.geometry import Pose

    write_trajectory(os.path.join(out, "traj.txt"), [Pose.identity(), Pose(r2, c2)])

    intr_text = f"{fx},{fy},{cx},{cy},{w},{h}"
    for name, src, tgt, p0, p1 in (("fwd", "d1", "d2", 0, 1), ("bwd", "d2", "d1", 1, 0)):
        write_config(os.path.join(out, f"{name}.cfg"), {
            "mode": "static",
            "src_depth": f"{src}.tnsr",
            "tgt_depth": f"{tgt}.tnsr",
            "src_pose": f"traj.txt:{p0}",
            "tgt_pose": f"traj.txt:{p1}",
            "intrinsics": intr_text,
            "tau_d": "0.05",
            "tau_r": "0.01",
            "out_prefix": name,
        })

    # analytic ground-truth flow from the plane homography
    k = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])
    hmat = k @ (r2.T + np.outer(-r2.T @ c2, [0, 0, 1.0]) / plane_z) @ np.linalg.inv(k)
    p = np.stack([us, vs, np.ones_like(us)], axis=-1) @ hmat.T
    hu = p[..., 0] / p[..., 2]
    hv = p[..., 1] / p[..., 2]
    write_flo(os.path.join(out, "gt.flo"), FlowField(hu - us, hv - vs, np.ones((h, w), bool)))
    print(f"fixture written under {out}/")


if __name__ == "__main__":
    main()
