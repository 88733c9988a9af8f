"""Command-line surface.

Subcommands: gen-covis, sample-pairs, eval-flow, eval-wb, warp-viz, refine,
loss-check, epoch-plan. Inputs come from flat key=value config files and
the documented file formats; paths inside a config resolve relative to the
config file. Runtime failures print one machine-parsable line to stderr
("error: <kind>: <message>") and exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import epoch as epoch_mod
from . import formats, manifest, metrics, objective, refine as refine_mod, sampler as sampler_mod
from .covis import (
    FlowField,
    RigidObjectsInput,
    SceneFlowInput,
    ThresholdParams,
    covis_fov_only,
    covis_rigid,
    covis_sceneflow,
    covis_static,
    threshold_preset,
)
from .geometry import DepthMap, Intrinsics
from .warp import viz_grid


class CliError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


def _require_file(path):
    if not os.path.isfile(path):
        raise CliError("missing-input", f"input file not found: {path}")
    return path


def _parse_intrinsics(text):
    parts = text.split(",")
    if len(parts) != 6:
        raise CliError("bad-config", f"intrinsics need 'fx,fy,cx,cy,width,height', got {text!r}")
    fx, fy, cx, cy = (float(x) for x in parts[:4])
    width, height = int(parts[4]), int(parts[5])
    return Intrinsics(fx, fy, cx, cy, width, height)


def _load_pose_ref(base_dir, text):
    path, _, index = text.partition(":")
    if not index:
        raise CliError("bad-config", f"pose reference must be 'file:index', got {text!r}")
    poses = formats.read_trajectory(_require_file(os.path.join(base_dir, path)))
    i = int(index)
    if not 0 <= i < len(poses):
        raise CliError("bad-config", f"pose index {i} out of range for {path} ({len(poses)} poses)")
    return poses[i]


def _load_depth(base_dir, path, scale, convention):
    full = _require_file(os.path.join(base_dir, path))
    ext = os.path.splitext(full)[1].lower()
    if ext == ".png":
        depth, _ = formats.read_depth_png16(full, scale, convention)
        return depth
    if ext == ".pfm":
        values, _ = formats.read_pfm(full)
        if values.ndim != 2:
            raise CliError("bad-input", f"{path}: depth PFM must be single channel")
        values = values.astype(np.float64)
        return DepthMap(values, np.isfinite(values) & (values > 0), convention)
    if ext == ".tnsr":
        values = formats.read_tensor(full).astype(np.float64)
        return DepthMap(values, np.isfinite(values) & (values > 0), convention)
    raise CliError("bad-config", f"unsupported depth format {ext!r} for {path}")


def _load_flow(base_dir, path):
    full = _require_file(os.path.join(base_dir, path))
    ext = os.path.splitext(full)[1].lower()
    if ext == ".flo":
        return formats.read_flo(full)
    if ext == ".tnsr":
        arr = formats.read_tensor(full).astype(np.float64)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise CliError("bad-input", f"{path}: flow tensor must be (H, W, 2)")
        du, dv = arr[..., 0], arr[..., 1]
        validity = np.isfinite(du) & np.isfinite(dv)
        return FlowField(np.where(validity, du, np.nan), np.where(validity, dv, np.nan), validity)
    raise CliError("bad-config", f"unsupported flow format {ext!r} for {path}")


def _load_grid(base_dir, path):
    """Raw (H, W) float grid from .pfm or .tnsr (values passed through)."""
    full = _require_file(os.path.join(base_dir, path))
    ext = os.path.splitext(full)[1].lower()
    if ext == ".pfm":
        values, _ = formats.read_pfm(full)
        return values.astype(np.float64)
    if ext == ".tnsr":
        return formats.read_tensor(full).astype(np.float64)
    raise CliError("bad-config", f"unsupported grid format {ext!r} for {path}")


def _load_mask(base_dir, path):
    full = _require_file(os.path.join(base_dir, path))
    ext = os.path.splitext(full)[1].lower()
    if ext == ".png":
        return formats.read_mask_png(full)
    if ext == ".tnsr":
        return formats.read_tensor(full).astype(bool)
    raise CliError("bad-config", f"unsupported mask format {ext!r} for {path}")


def _thresholds_from_config(cfg):
    if "threshold_preset" in cfg:
        try:
            return threshold_preset(cfg["threshold_preset"])
        except KeyError as exc:
            raise CliError("bad-config", str(exc)) from exc
    if "tau_d" in cfg and "tau_r" in cfg:
        return ThresholdParams(float(cfg["tau_d"]), float(cfg["tau_r"]))
    raise CliError("bad-config", "need threshold_preset or tau_d + tau_r")


def _cfg_get(cfg, key):
    if key not in cfg:
        raise CliError("bad-config", f"missing config key {key!r}")
    return cfg[key]


# --- gen-covis --------------------------------------------------------------


def _write_covis_outputs(result, prefix, out_format):
    if out_format == "tnsr":
        flow = np.stack([result.flow.du, result.flow.dv], axis=-1)
        formats.write_tensor(prefix + "_flow.tnsr", flow)
        formats.write_tensor(prefix + "_covis.tnsr", result.covis)
        formats.write_tensor(prefix + "_fov.tnsr", result.fov)
        formats.write_tensor(prefix + "_supervision.tnsr", result.supervision)
        formats.write_tensor(prefix + "_error.tnsr", result.reproj_error)
        formats.write_tensor(prefix + "_error_defined.tnsr", result.error_defined)
    else:
        formats.write_flo(prefix + "_flow.flo", result.flow)
        formats.write_mask_png(prefix + "_covis.png", result.covis)
        formats.write_mask_png(prefix + "_fov.png", result.fov)
        formats.write_mask_png(prefix + "_supervision.png", result.supervision)
        error = np.where(result.error_defined, result.reproj_error, np.nan).astype(np.float32)
        formats.write_pfm(prefix + "_error.pfm", error)
        formats.write_mask_png(prefix + "_error_defined.png", result.error_defined)


def cmd_gen_covis(args):
    cfg = formats.read_config(_require_file(args.config))
    base = os.path.dirname(os.path.abspath(args.config))
    mode = _cfg_get(cfg, "mode")
    convention = cfg.get("depth_convention", "z")
    scale = float(cfg.get("depth_scale", 1000.0))

    if mode == "fov_only":
        flow = _load_flow(base, _cfg_get(cfg, "flow_gt"))
        width = int(_cfg_get(cfg, "width"))
        height = int(_cfg_get(cfg, "height"))
        result = covis_fov_only(flow, width, height)
    else:
        d1 = _load_depth(base, _cfg_get(cfg, "src_depth"), scale, convention)
        d2 = _load_depth(base, _cfg_get(cfg, "tgt_depth"), scale, convention)
        t1 = _load_pose_ref(base, _cfg_get(cfg, "src_pose"))
        t2 = _load_pose_ref(base, _cfg_get(cfg, "tgt_pose"))
        intr1 = _parse_intrinsics(_cfg_get(cfg, "intrinsics"))
        intr2 = _parse_intrinsics(cfg["tgt_intrinsics"]) if "tgt_intrinsics" in cfg else intr1
        thr = _thresholds_from_config(cfg)
        if mode == "static":
            result = covis_static(d1, d2, t1, t2, intr1, intr2, thr)
        elif mode == "sceneflow":
            flow = _load_flow(base, _cfg_get(cfg, "flow_gt"))
            change = _load_grid(base, _cfg_get(cfg, "depth_change"))
            sf = SceneFlowInput(flow, change)
            result = covis_sceneflow(d1, d2, t1, t2, intr1, sf, thr)
        elif mode == "rigid":
            seg = formats.read_tensor(
                _require_file(os.path.join(base, _cfg_get(cfg, "segmentation")))
            ).astype(np.int64)
            poses_t1 = formats.read_trajectory(
                _require_file(os.path.join(base, _cfg_get(cfg, "obj_poses_t1")))
            )
            poses_t2 = formats.read_trajectory(
                _require_file(os.path.join(base, _cfg_get(cfg, "obj_poses_t2")))
            )
            ro = RigidObjectsInput(
                seg,
                {k + 1: p for k, p in enumerate(poses_t1)},
                {k + 1: p for k, p in enumerate(poses_t2)},
            )
            result = covis_rigid(d1, d2, t1, t2, intr1, intr2, ro, thr)
        else:
            raise CliError("bad-config", f"unknown mode {mode!r}")

    out_dir = args.output_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    prefix = os.path.join(out_dir, cfg.get("out_prefix", "pair"))
    _write_covis_outputs(result, prefix, cfg.get("out_format", "default"))
    print(f"covis_fraction={result.covis_fraction():.10g}")
    for key, value in sorted(result.diagnostics.items()):
        print(f"{key}={value}")
    return 0


# --- sample-pairs ------------------------------------------------------------


def _load_points(base_dir, path):
    full = _require_file(os.path.join(base_dir, path))
    ext = os.path.splitext(full)[1].lower()
    if ext == ".tnsr":
        return formats.read_tensor(full).astype(np.float64)
    if ext in (".txt", ".xyz"):
        return np.loadtxt(full, dtype=np.float64).reshape(-1, 3)
    raise CliError("bad-config", f"unsupported point cloud format {ext!r}")


def cmd_sample_pairs(args):
    cfg = formats.read_config(_require_file(args.config))
    base = os.path.dirname(os.path.abspath(args.config))
    points = _load_points(base, _cfg_get(cfg, "points"))
    grid = sampler_mod.voxelize(points, float(cfg.get("voxel_size", 0.25)))
    poses = formats.read_trajectory(_require_file(os.path.join(base, _cfg_get(cfg, "trajectory"))))
    intr = _parse_intrinsics(_cfg_get(cfg, "intrinsics"))
    cameras = [(p, intr) for p in poses]
    vis = sampler_mod.compute_visibility(cameras, grid)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    scfg = sampler_mod.SamplerConfig(
        roll_sigma=float(cfg.get("roll_sigma", 0.1)),
        perturb_sigma=float(cfg.get("perturb_sigma", 0.1)),
        seed=seed,
        max_attempts=int(cfg.get("max_attempts", 200)),
    )
    cands = sampler_mod.sample_manifest(
        scfg, cameras, vis, int(_cfg_get(cfg, "n_pairs")), jobs=args.jobs
    )
    out_dir = args.output_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, cfg.get("out", "candidates.tsv"))
    manifest.write_candidate_manifest(out, cands)
    print(f"accepted={len(cands)}")
    print(f"manifest={out}")
    return 0


# --- eval-flow / eval-wb -----------------------------------------------------


def _row_from_args(base, pred_path, gt_path, mask_path, thresholds, label, with_f1):
    pred = _load_flow(base, pred_path)
    gt = _load_flow(base, gt_path)
    mask = _load_mask(base, mask_path) if mask_path else np.ones(gt.shape, dtype=bool)
    try:
        return metrics.metric_row(pred, gt, mask, thresholds, label=label, with_f1=with_f1)
    except ValueError as exc:
        raise CliError("bad-input", str(exc)) from exc


def _print_row(row):
    print(f"label={row.label}")
    print(f"aepe={row.aepe:.17g}")
    for t in sorted(row.outliers):
        print(f"outlier_{t:g}px={row.outliers[t]:.17g}")
    print(f"pixels={row.pixel_count}")
    if row.f1 is not None:
        print(f"f1={row.f1:.17g}")


def cmd_eval_flow(args):
    thresholds = tuple(float(x) for x in args.thresholds.split(","))
    row = _row_from_args(".", args.pred, args.gt, args.mask, thresholds, args.label, args.f1)
    _print_row(row)
    return 0


def cmd_eval_wb(args):
    thresholds = tuple(float(x) for x in args.thresholds.split(","))
    rows = []
    if args.pairs:
        with open(_require_file(args.pairs)) as f:
            base = os.path.dirname(os.path.abspath(args.pairs))
            for line in f:
                if not line.strip() or line.startswith("#"):
                    continue
                fields = line.split()
                if len(fields) < 3:
                    raise CliError("bad-input", f"pair line needs 'pred gt mask [label]': {line!r}")
                label = fields[3] if len(fields) > 3 else "pairs"
                rows.append(_row_from_args(base, fields[0], fields[1], fields[2], thresholds, label, False))
    if args.pred:
        rows.append(_row_from_args(".", args.pred, args.gt, args.mask, thresholds, args.label, False))

    report = metrics.eval_report(rows, aggregate=args.aggregate)
    for line in report.to_records():
        print(line)
    have_pose = False
    if args.pose_errors:
        samples = []
        with open(_require_file(args.pose_errors)) as f:
            for line in f:
                if not line.strip() or line.startswith("#"):
                    continue
                rot, trans = (float(x) for x in line.split()[:2])
                samples.append(metrics.PoseErrorSample(rot, trans))
        taus = [float(x) for x in args.auc_thresholds.split(",")]
        for tau, auc in metrics.pose_auc(samples, taus).items():
            print(f"pose_auc_{tau:g}deg={auc:.17g}")
        have_pose = True
    if not report.empty:
        print()
        print(report.to_text(), end="")
        return 0
    if have_pose:
        return 0
    print("no pairs evaluated", file=sys.stderr)
    return 1


# --- warp-viz ----------------------------------------------------------------


def cmd_warp_viz(args):
    src = formats.read_image(_require_file(args.src))
    tgt = formats.read_image(_require_file(args.tgt))
    flow = _load_flow(".", args.flow)
    covis = _load_mask(".", args.covis)
    bwd_flow = _load_flow(".", args.bwd_flow) if args.bwd_flow else None
    bwd_covis = _load_mask(".", args.bwd_covis) if args.bwd_covis else None
    panel = viz_grid(src, tgt, flow, covis, bwd_flow, bwd_covis)
    formats.write_image_png(args.out, panel)
    print(f"panel={args.out}")
    return 0


# --- refine ------------------------------------------------------------------


def cmd_refine(args):
    flow = _load_flow(".", args.flow)
    feat_src = formats.read_tensor(_require_file(args.feat_src)).astype(np.float64)
    feat_tgt = formats.read_tensor(_require_file(args.feat_tgt)).astype(np.float64)
    bias_offset = tuple(int(x) for x in args.bias_offset.split(","))
    cfg = refine_mod.RefineConfig(
        window=args.window,
        bias=args.bias,
        bias_offset=bias_offset,
        temperature=not args.no_temperature,
    )
    try:
        out = refine_mod.refine_flow(flow, feat_src, feat_tgt, cfg)
    except ValueError as exc:
        raise CliError("bad-input", str(exc)) from exc
    if args.out.endswith(".tnsr"):
        formats.write_tensor(args.out, np.stack([out.flow.du, out.flow.dv], axis=-1))
    else:
        formats.write_flo(args.out, out.flow)
    if args.attn_out:
        formats.write_tensor(args.attn_out, out.attn)
    print(f"refined_pixels={int(np.count_nonzero(out.refined))}")
    return 0


# --- loss-check --------------------------------------------------------------


def cmd_loss_check(args):
    pred = _load_flow(".", args.pred)
    gt = _load_flow(".", args.gt)
    covis = _load_mask(".", args.covis)
    supervision = _load_mask(".", args.supervision)
    logits_path = _require_file(args.logits)
    if logits_path.endswith(".pfm"):
        logits, _ = formats.read_pfm(logits_path)
        logits = logits.astype(np.float64)
    else:
        logits = formats.read_tensor(logits_path).astype(np.float64)
    params = objective.RobustLossParams(args.alpha, args.c)
    try:
        out = objective.total_loss(
            pred, gt, covis, logits, supervision,
            params=params, covis_weight=args.covis_weight, bce_domain=args.bce_domain,
        )
    except ValueError as exc:
        raise CliError("bad-input", str(exc)) from exc
    print(f"epe_loss={out.epe_loss:.17g}")
    print(f"bce_loss={out.bce_loss:.17g}")
    print(f"covis_weight={out.covis_weight:.17g}")
    print(f"total={out.total:.17g}")
    return 0


# --- epoch-plan --------------------------------------------------------------


def cmd_epoch_plan(args):
    if args.print_defaults:
        for name in sorted(epoch_mod.EPOCH_PAIR_COUNTS):
            print(f"count.{name}={epoch_mod.EPOCH_PAIR_COUNTS[name]}")
        print(f"total={sum(epoch_mod.EPOCH_PAIR_COUNTS.values())}")
        return 0
    cfg_map = formats.read_config(_require_file(args.config))
    base = os.path.dirname(os.path.abspath(args.config))
    counts = {}
    manifests = {}
    for key, value in cfg_map.items():
        if key.startswith("count."):
            counts[key[len("count."):]] = int(value)
        elif key.startswith("manifest."):
            name = key[len("manifest."):]
            manifests[name] = manifest.read_pair_manifest(
                _require_file(os.path.join(base, value))
            )
    plan_cfg = epoch_mod.EpochPlan(
        counts=counts if counts else dict(epoch_mod.EPOCH_PAIR_COUNTS),
        symmetrize=cfg_map.get("symmetrize", "true").lower() in ("1", "true", "yes"),
        seed=args.seed if args.seed is not None else int(cfg_map.get("seed", 0)),
    )
    index_manifests = {name: list(range(len(rows))) for name, rows in manifests.items()}
    try:
        plan = epoch_mod.epoch_plan(plan_cfg, index_manifests)
    except (KeyError, ValueError) as exc:
        raise CliError("bad-config", str(exc)) from exc
    out_dir = args.output_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, args.out)
    lines = ["#covisflow-epoch-v1\tdataset\trow\treversed"]
    lines += [f"{e.dataset}\t{e.record}\t{int(e.reversed)}" for e in plan]
    formats._atomic_write_bytes(out, ("\n".join(lines) + "\n").encode())
    print(f"entries={len(plan)}")
    print(f"plan={out}")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="covisflow",
        description="Ground-truth correspondence, covisibility, sampling, and evaluation tools",
    )
    from . import __version__

    parser.add_argument("--version", action="version", version=f"covisflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-covis", help="compute flow + covisibility masks for one pair")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_gen_covis)

    p = sub.add_parser("sample-pairs", help="sample wide-baseline pair candidates")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_sample_pairs)

    p = sub.add_parser("eval-flow", help="optical-flow metrics for one pair")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask")
    p.add_argument("--thresholds", default="1,3,5")
    p.add_argument("--f1", action="store_true")
    p.add_argument("--label", default="pair")
    p.set_defaults(func=cmd_eval_flow)

    p = sub.add_parser("eval-wb", help="wide-baseline evaluation report")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--mask")
    p.add_argument("--pairs", help="file of 'pred gt mask [label]' lines")
    p.add_argument("--thresholds", default="1,2,5")
    p.add_argument("--aggregate", choices=("pair", "pixel"), default="pair")
    p.add_argument("--pose-errors", help="file of 'rot_deg trans_deg' lines")
    p.add_argument("--auc-thresholds", default="5,10,15")
    p.add_argument("--label", default="pair")
    p.set_defaults(func=cmd_eval_wb)

    p = sub.add_parser("warp-viz", help="2x2 warped-pair visualization panel")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--flow", required=True)
    p.add_argument("--covis", required=True)
    p.add_argument("--bwd-flow")
    p.add_argument("--bwd-covis")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_warp_viz)

    p = sub.add_parser("refine", help="classification refinement of a stored flow")
    p.add_argument("--flow", required=True)
    p.add_argument("--feat-src", required=True)
    p.add_argument("--feat-tgt", required=True)
    p.add_argument("--window", type=int, default=7)
    p.add_argument("--bias", type=float, default=0.0)
    p.add_argument("--bias-offset", default="0,0")
    p.add_argument("--no-temperature", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--attn-out")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("loss-check", help="evaluate the training losses on stored grids")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--covis", required=True)
    p.add_argument("--supervision", required=True)
    p.add_argument("--logits", required=True)
    p.add_argument("--covis-weight", type=float, default=10.0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--c", type=float, default=0.24)
    p.add_argument("--bce-domain", choices=("supervision", "all"), default="supervision")
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("epoch-plan", help="deterministic shuffled epoch pair plan")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="epoch_plan.tsv")
    p.add_argument("--output-dir")
    p.add_argument("--print-defaults", action="store_true")
    p.set_defaults(func=cmd_epoch_plan)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "epoch-plan" and not args.print_defaults and not args.config:
        parser.error("epoch-plan requires --config (or --print-defaults)")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing-input: {exc}", file=sys.stderr)
        return 1
    except formats.FormatError as exc:
        print(f"error: bad-format: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: invalid: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
