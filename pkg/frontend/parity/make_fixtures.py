#!/usr/bin/env python3
"""Generate binding-parity fixtures.

For each seed and operation family this writes the raw input arrays
(binary tensor containers; scalars and poses as JSON) plus the expected
outputs computed natively with the library, NOT through the CLI. The
TypeScript parity suite replays the inputs through the bindings and
compares bitwise on the float64 paths.
"""

import argparse
import json
import os

import numpy as np

from covisflow.covis import (
    FlowField,
    RigidObjectsInput,
    SceneFlowInput,
    ThresholdParams,
    covis_rigid,
    covis_sceneflow,
    covis_static,
)
from covisflow.formats import write_tensor
from covisflow.geometry import DepthMap, Intrinsics, Pose
from covisflow.metrics import kitti_f1, metric_row, pose_auc, PoseErrorSample
from covisflow.objective import RobustLossParams, total_loss
from covisflow.refine import RefineConfig, refine_flow

H = W = 8


def rand_quat(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return [float(x) for x in q]


def rand_pose_json(rng, scale=0.3):
    return {
        "quaternion": rand_quat(rng),
        "translation": [float(x) for x in rng.uniform(-scale, scale, 3)],
    }


def pose_from_json(p):
    qx, qy, qz, qw = p["quaternion"]
    return Pose.from_quaternion(qx, qy, qz, qw, p["translation"])


def intrinsics_json(rng):
    return {
        "fx": float(rng.uniform(6, 12)),
        "fy": float(rng.uniform(6, 12)),
        "cx": float((W - 1) / 2),
        "cy": float((H - 1) / 2),
        "width": W,
        "height": H,
    }


def intr_from_json(j):
    return Intrinsics(j["fx"], j["fy"], j["cx"], j["cy"], j["width"], j["height"])


def rand_depth(rng, invalid_frac=0.08):
    values = rng.uniform(1.5, 4.0, size=(H, W))
    invalid = rng.random((H, W)) < invalid_frac
    values[invalid] = 0.0  # nonpositive marks invalid in the container transport
    return values


def rand_flow(rng, magnitude=2.0, invalid_frac=0.05):
    du = rng.uniform(-magnitude, magnitude, size=(H, W))
    dv = rng.uniform(-magnitude, magnitude, size=(H, W))
    invalid = rng.random((H, W)) < invalid_frac
    du[invalid] = np.nan
    dv[invalid] = np.nan
    return du, dv


def flow_field(du, dv):
    validity = np.isfinite(du) & np.isfinite(dv)
    return FlowField(np.where(validity, du, np.nan), np.where(validity, dv, np.nan), validity)


def write_covis_expected(out, name, seed, res):
    flow = np.stack([res.flow.du, res.flow.dv], axis=-1)
    write_tensor(os.path.join(out, f"exp_{name}_{seed}_flow.tnsr"), flow)
    write_tensor(os.path.join(out, f"exp_{name}_{seed}_covis.tnsr"), res.covis)
    write_tensor(os.path.join(out, f"exp_{name}_{seed}_fov.tnsr"), res.fov)
    write_tensor(os.path.join(out, f"exp_{name}_{seed}_supervision.tnsr"), res.supervision)
    write_tensor(os.path.join(out, f"exp_{name}_{seed}_error.tnsr"), res.reproj_error)
    write_tensor(os.path.join(out, f"exp_{name}_{seed}_error_defined.tnsr"), res.error_defined)


def gen_static(out, seed):
    rng = np.random.default_rng(10_000 + seed)
    case = {
        "srcPose": rand_pose_json(rng),
        "tgtPose": rand_pose_json(rng),
        "intrinsics": intrinsics_json(rng),
        "tauD": float(rng.uniform(0.02, 0.2)),
        "tauR": float(rng.uniform(0.001, 0.02)),
        "convention": "ray" if seed % 5 == 0 else "z",
    }
    d1 = rand_depth(rng)
    d2 = rand_depth(rng)
    write_tensor(os.path.join(out, f"case_static_{seed}_srcdepth.tnsr"), d1)
    write_tensor(os.path.join(out, f"case_static_{seed}_tgtdepth.tnsr"), d2)
    with open(os.path.join(out, f"case_static_{seed}.json"), "w") as f:
        json.dump(case, f)
    intr = intr_from_json(case["intrinsics"])
    res = covis_static(
        DepthMap(d1, np.isfinite(d1) & (d1 > 0), case["convention"]),
        DepthMap(d2, np.isfinite(d2) & (d2 > 0), case["convention"]),
        pose_from_json(case["srcPose"]),
        pose_from_json(case["tgtPose"]),
        intr,
        intr,
        ThresholdParams(case["tauD"], case["tauR"]),
    )
    write_covis_expected(out, "static", seed, res)


def gen_sceneflow(out, seed):
    rng = np.random.default_rng(20_000 + seed)
    case = {
        "srcPose": rand_pose_json(rng, 0.1),
        "tgtPose": rand_pose_json(rng, 0.1),
        "intrinsics": intrinsics_json(rng),
        "tauD": float(rng.uniform(0.02, 0.2)),
        "tauR": float(rng.uniform(0.001, 0.02)),
        "convention": "z",
    }
    d1 = rand_depth(rng)
    d2 = rand_depth(rng)
    du, dv = rand_flow(rng)
    change = rng.uniform(-0.3, 0.3, size=(H, W))
    for name, arr in (("srcdepth", d1), ("tgtdepth", d2), ("change", change)):
        write_tensor(os.path.join(out, f"case_sceneflow_{seed}_{name}.tnsr"), arr)
    write_tensor(os.path.join(out, f"case_sceneflow_{seed}_flow.tnsr"), np.stack([du, dv], axis=-1))
    with open(os.path.join(out, f"case_sceneflow_{seed}.json"), "w") as f:
        json.dump(case, f)
    intr = intr_from_json(case["intrinsics"])
    res = covis_sceneflow(
        DepthMap(d1, np.isfinite(d1) & (d1 > 0), "z"),
        DepthMap(d2, np.isfinite(d2) & (d2 > 0), "z"),
        pose_from_json(case["srcPose"]),
        pose_from_json(case["tgtPose"]),
        intr,
        SceneFlowInput(flow_field(du, dv), change),
        ThresholdParams(case["tauD"], case["tauR"]),
    )
    write_covis_expected(out, "sceneflow", seed, res)


def gen_rigid(out, seed):
    rng = np.random.default_rng(30_000 + seed)
    n_objects = 2 + seed % 2
    case = {
        "srcPose": rand_pose_json(rng, 0.1),
        "tgtPose": rand_pose_json(rng, 0.1),
        "intrinsics": intrinsics_json(rng),
        "tauD": float(rng.uniform(0.05, 0.3)),
        "tauR": float(rng.uniform(0.001, 0.02)),
        "convention": "z",
        "posesT1": [rand_pose_json(rng, 0.1) for _ in range(n_objects)],
        "posesT2": [rand_pose_json(rng, 0.1) for _ in range(n_objects)],
    }
    d1 = rand_depth(rng)
    d2 = rand_depth(rng)
    seg = rng.integers(1, n_objects + 1, size=(H, W)).astype(np.int32)
    if seed % 4 == 0:
        seg[0, :2] = 99  # exercise the unknown-id diagnostics
    write_tensor(os.path.join(out, f"case_rigid_{seed}_srcdepth.tnsr"), d1)
    write_tensor(os.path.join(out, f"case_rigid_{seed}_tgtdepth.tnsr"), d2)
    write_tensor(os.path.join(out, f"case_rigid_{seed}_seg.tnsr"), seg)
    with open(os.path.join(out, f"case_rigid_{seed}.json"), "w") as f:
        json.dump(case, f)
    intr = intr_from_json(case["intrinsics"])
    res = covis_rigid(
        DepthMap(d1, np.isfinite(d1) & (d1 > 0), "z"),
        DepthMap(d2, np.isfinite(d2) & (d2 > 0), "z"),
        pose_from_json(case["srcPose"]),
        pose_from_json(case["tgtPose"]),
        intr,
        intr,
        RigidObjectsInput(
            seg,
            {k + 1: pose_from_json(p) for k, p in enumerate(case["posesT1"])},
            {k + 1: pose_from_json(p) for k, p in enumerate(case["posesT2"])},
        ),
        ThresholdParams(case["tauD"], case["tauR"]),
    )
    write_covis_expected(out, "rigid", seed, res)
    case["expectedUnknownPixels"] = res.diagnostics["unknown_object_pixels"]
    with open(os.path.join(out, f"case_rigid_{seed}.json"), "w") as f:
        json.dump(case, f)


def gen_loss(out, seed):
    rng = np.random.default_rng(40_000 + seed)
    pdu, pdv = rand_flow(rng, 3.0)
    gdu, gdv = rand_flow(rng, 3.0)
    covis = (rng.random((H, W)) > 0.4).astype(np.uint8)
    sup = (rng.random((H, W)) > 0.3).astype(np.uint8)
    logits = rng.normal(scale=2.5, size=(H, W))
    weight = float(rng.choice([1.0, 5.0, 10.0]))
    write_tensor(os.path.join(out, f"case_loss_{seed}_pred.tnsr"), np.stack([pdu, pdv], axis=-1))
    write_tensor(os.path.join(out, f"case_loss_{seed}_gt.tnsr"), np.stack([gdu, gdv], axis=-1))
    write_tensor(os.path.join(out, f"case_loss_{seed}_covis.tnsr"), covis.astype(bool))
    write_tensor(os.path.join(out, f"case_loss_{seed}_sup.tnsr"), sup.astype(bool))
    write_tensor(os.path.join(out, f"case_loss_{seed}_logits.tnsr"), logits)
    # the CLI transports flows through the container: validity = finite
    pred = flow_field(pdu, pdv)
    gt = flow_field(gdu, gdv)
    res = total_loss(pred, gt, covis.astype(bool), logits, sup.astype(bool), RobustLossParams(), weight)
    case = {
        "covisWeight": weight,
        "expected": {
            "epeLoss": res.epe_loss,
            "bceLoss": res.bce_loss,
            "covisWeight": res.covis_weight,
            "total": res.total,
        },
    }
    with open(os.path.join(out, f"case_loss_{seed}.json"), "w") as f:
        json.dump(case, f)


def gen_refine(out, seed):
    rng = np.random.default_rng(50_000 + seed)
    channels = 3 + seed % 3
    window = 5 if seed % 3 == 0 else 7
    du, dv = rand_flow(rng, 1.5, invalid_frac=0.03)
    fs = rng.normal(size=(channels, H, W))
    ft = rng.normal(size=(channels, H, W))
    bias = float(rng.uniform(-0.5, 0.5))
    temperature = seed % 4 != 0
    write_tensor(os.path.join(out, f"case_refine_{seed}_flow.tnsr"), np.stack([du, dv], axis=-1))
    write_tensor(os.path.join(out, f"case_refine_{seed}_fs.tnsr"), fs)
    write_tensor(os.path.join(out, f"case_refine_{seed}_ft.tnsr"), ft)
    res = refine_flow(
        flow_field(du, dv), fs, ft, RefineConfig(window=window, bias=bias, temperature=temperature)
    )
    write_tensor(
        os.path.join(out, f"exp_refine_{seed}_flow.tnsr"),
        np.stack([res.flow.du, res.flow.dv], axis=-1),
    )
    write_tensor(os.path.join(out, f"exp_refine_{seed}_attn.tnsr"), res.attn)
    case = {
        "channels": channels,
        "window": window,
        "bias": bias,
        "temperature": temperature,
        "expectedRefinedPixels": int(np.count_nonzero(res.refined)),
    }
    with open(os.path.join(out, f"case_refine_{seed}.json"), "w") as f:
        json.dump(case, f)


def gen_metrics(out, seed):
    rng = np.random.default_rng(60_000 + seed)
    pdu, pdv = rand_flow(rng, 4.0, invalid_frac=0.0)
    gdu, gdv = rand_flow(rng, 4.0, invalid_frac=0.0)
    mask = rng.random((H, W)) > 0.3
    if not mask.any():
        mask[0, 0] = True
    thresholds = [1.0, 2.0, 5.0]
    write_tensor(os.path.join(out, f"case_metrics_{seed}_pred.tnsr"), np.stack([pdu, pdv], axis=-1))
    write_tensor(os.path.join(out, f"case_metrics_{seed}_gt.tnsr"), np.stack([gdu, gdv], axis=-1))
    write_tensor(os.path.join(out, f"case_metrics_{seed}_mask.tnsr"), mask)
    pred = flow_field(pdu, pdv)
    gt = flow_field(gdu, gdv)
    row = metric_row(pred, gt, mask, thresholds, with_f1=True)
    # float32 transport: the .flo path rounds flows to float32 first
    pred32 = flow_field(pdu.astype(np.float32).astype(np.float64), pdv.astype(np.float32).astype(np.float64))
    gt32 = flow_field(gdu.astype(np.float32).astype(np.float64), gdv.astype(np.float32).astype(np.float64))
    row32 = metric_row(pred32, gt32, mask, thresholds, with_f1=True)
    rot = rng.uniform(0, 30, size=12)
    trans = rng.uniform(0, 30, size=12)
    taus = [5.0, 10.0, 15.0]
    auc = pose_auc([PoseErrorSample(float(a), float(b)) for a, b in zip(rot, trans)], taus)
    case = {
        "thresholds": thresholds,
        "expected": {
            "aepe": row.aepe,
            "outliers": {format(t, "g"): row.outliers[t] for t in thresholds},
            "pixels": row.pixel_count,
            "f1": row.f1,
        },
        "expectedF32": {
            "aepe": row32.aepe,
            "outliers": {format(t, "g"): row32.outliers[t] for t in thresholds},
            "pixels": row32.pixel_count,
            "f1": row32.f1,
        },
        "poseErrors": [[float(a), float(b)] for a, b in zip(rot, trans)],
        "aucThresholds": taus,
        "expectedAuc": {format(t, "g"): auc[t] for t in taus},
    }
    with open(os.path.join(out, f"case_metrics_{seed}.json"), "w") as f:
        json.dump(case, f)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="parity/fixtures")
    parser.add_argument("--seeds", type=int, default=100)
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for seed in range(args.seeds):
        gen_static(args.out, seed)
        gen_sceneflow(args.out, seed)
        gen_rigid(args.out, seed)
        gen_loss(args.out, seed)
        gen_refine(args.out, seed)
        gen_metrics(args.out, seed)
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump({"seeds": args.seeds, "height": H, "width": W}, f)
    print(f"wrote fixtures for {args.seeds} seeds under {args.out}")


if __name__ == "__main__":
    main()
