#!/usr/bin/env python3
"""Sample wide-baseline pairs on a toy ring scene and report the bin mix.

Usage: python scripts/sampler_demo.py [n_pairs] [seed]
"""

import math
import sys

import numpy as np

from covisflow.geometry import Intrinsics, Pose
from covisflow.manifest import write_candidate_manifest
from covisflow.sampler import SamplerConfig, compute_visibility, sample_manifest, voxelize


def ring_cameras(n, radius):
    cams = []
    intr = Intrinsics(64.0, 64.0, 31.5, 31.5, 64, 64)
    for i in range(n):
        a = 2 * math.pi * i / n
        center = np.array([radius * math.cos(a), 0.3, radius * math.sin(a)])
        fwd = -center / np.linalg.norm(center)
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(up, fwd)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        cams.append((Pose(np.stack([right, down, fwd], axis=1), center), intr))
    return cams


def main():
    n_pairs = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    rng = np.random.default_rng(7)
    points = rng.normal(scale=0.5, size=(800, 3))
    grid = voxelize(points, 0.25)
    cams = ring_cameras(16, 5.0)
    vis = compute_visibility(cams, grid)
    print(f"occupied voxels: {len(grid.flat_occupied())}; cameras: {len(cams)}")

    cfg = SamplerConfig(seed=seed)
    cands = sample_manifest(cfg, cams, vis, n_pairs)
    hist = np.bincount([c.bin_index for c in cands], minlength=4)
    print(f"accepted {len(cands)}/{n_pairs}")
    for i, (lo, hi) in enumerate(cfg.angle_bins):
        print(f"  bin [{math.degrees(lo):5.1f}, {math.degrees(hi):5.1f}) deg: {hist[i]}")
    write_candidate_manifest("candidates.tsv", cands)
    print("wrote candidates.tsv")


if __name__ == "__main__":
    main()
