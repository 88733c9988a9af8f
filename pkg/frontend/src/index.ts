/**
 * Array-in/array-out bindings over the covisflow CLI.
 *
 * Every call serializes its arrays into the native file formats (float64
 * tensor containers for the bit-exact paths), drives one CLI subcommand in
 * a scratch directory, and decodes the outputs into fresh typed arrays.
 * Nothing is computed on this side, so the parity suite against the native
 * library defines correctness completely. Inputs are never mutated.
 */

import { BindingError, NativeError } from "./errors.js";
import { configText, readBytes, runCli, withWorkspace, writeBytes, writeText } from "./runner.js";
import { Tensor, decodeTensor, encodeFlo, encodeTensor } from "./tensor.js";

export { BindingError, NativeError };
export { encodeTensor, decodeTensor } from "./tensor.js";
export type { Tensor } from "./tensor.js";

export interface QuatPose {
  /** [qx, qy, qz, qw], unit up to 1e-3 (renormalized natively) */
  quaternion: [number, number, number, number];
  translation: [number, number, number];
}

export interface IntrinsicsSpec {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface FlowArrays {
  /** NaN entries mark invalid pixels */
  du: Float64Array;
  dv: Float64Array;
}

export interface CovisOutput {
  height: number;
  width: number;
  flowDu: Float64Array;
  flowDv: Float64Array;
  flowValid: Uint8Array;
  covis: Uint8Array;
  fov: Uint8Array;
  supervision: Uint8Array;
  reprojError: Float64Array;
  errorDefined: Uint8Array;
  covisFraction: number;
}

function checkGrid(name: string, data: unknown, height: number, width: number): Float64Array {
  if (!(data instanceof Float64Array)) {
    throw new BindingError("dtype", `${name} must be a Float64Array`);
  }
  if (data.length === 0) {
    throw new BindingError("shape", `${name} is empty`);
  }
  if (data.length !== height * width) {
    throw new BindingError("shape", `${name} has ${data.length} values, expected ${height}x${width}`);
  }
  return data;
}

function trajLine(index: number, pose: QuatPose): string {
  const [qx, qy, qz, qw] = pose.quaternion;
  const [tx, ty, tz] = pose.translation;
  for (const v of [...pose.quaternion, ...pose.translation]) {
    if (!Number.isFinite(v)) throw new BindingError("value", "pose entries must be finite");
  }
  // String() renders the shortest round-trip decimal; the native float()
  // parse recovers the exact double
  return `${index} ${tx} ${ty} ${tz} ${qx} ${qy} ${qz} ${qw}`;
}

function intrinsicsText(intr: IntrinsicsSpec): string {
  return `${intr.fx},${intr.fy},${intr.cx},${intr.cy},${intr.width},${intr.height}`;
}

function flowTensor(flow: FlowArrays, height: number, width: number): Buffer {
  checkGrid("flow.du", flow.du, height, width);
  checkGrid("flow.dv", flow.dv, height, width);
  const packed = new Float64Array(height * width * 2);
  for (let i = 0; i < height * width; i++) {
    packed[2 * i] = flow.du[i];
    packed[2 * i + 1] = flow.dv[i];
  }
  return encodeTensor({ data: packed, shape: [height, width, 2] });
}

function gridTensor(data: Float64Array, height: number, width: number): Buffer {
  return encodeTensor({ data, shape: [height, width] });
}

function boolTensor(data: Uint8Array, height: number, width: number): Buffer {
  if (!(data instanceof Uint8Array)) {
    throw new BindingError("dtype", "mask must be a Uint8Array of 0/1");
  }
  if (data.length !== height * width) {
    throw new BindingError("shape", `mask has ${data.length} values, expected ${height}x${width}`);
  }
  return encodeTensor({ data, shape: [height, width], bool: true });
}

function expectShape(tensor: Tensor, shape: number[], name: string): void {
  if (
    tensor.shape.length !== shape.length ||
    tensor.shape.some((dim, i) => dim !== shape[i])
  ) {
    throw new BindingError("shape", `${name}: native returned [${tensor.shape}], expected [${shape}]`);
  }
}

async function readCovisOutputs(dir: string, prefix: string, height: number, width: number, fraction: number): Promise<CovisOutput> {
  const flow = decodeTensor(await readBytes(dir, `${prefix}_flow.tnsr`));
  expectShape(flow, [height, width, 2], "flow");
  const fdata = flow.data as Float64Array;
  const flowDu = new Float64Array(height * width);
  const flowDv = new Float64Array(height * width);
  const flowValid = new Uint8Array(height * width);
  for (let i = 0; i < height * width; i++) {
    flowDu[i] = fdata[2 * i];
    flowDv[i] = fdata[2 * i + 1];
    flowValid[i] = Number.isNaN(flowDu[i]) || Number.isNaN(flowDv[i]) ? 0 : 1;
  }
  const loadMask = async (name: string): Promise<Uint8Array> => {
    const t = decodeTensor(await readBytes(dir, `${prefix}_${name}.tnsr`));
    expectShape(t, [height, width], name);
    return t.data as Uint8Array;
  };
  const error = decodeTensor(await readBytes(dir, `${prefix}_error.tnsr`));
  expectShape(error, [height, width], "error");
  return {
    height,
    width,
    flowDu,
    flowDv,
    flowValid,
    covis: await loadMask("covis"),
    fov: await loadMask("fov"),
    supervision: await loadMask("supervision"),
    reprojError: error.data as Float64Array,
    errorDefined: await loadMask("error_defined"),
    covisFraction: fraction,
  };
}

interface CovisCommonOptions {
  height: number;
  width: number;
  srcPose: QuatPose;
  tgtPose: QuatPose;
  intrinsics: IntrinsicsSpec;
  tauD: number;
  tauR: number;
  convention?: "z" | "ray";
}

async function runGenCovis(
  dir: string,
  config: Record<string, string | number>,
): Promise<{ fraction: number; values: Map<string, string> }> {
  await writeText(dir, "pair.cfg", configText(config));
  const result = await runCli(["gen-covis", "--config", "pair.cfg", "--output-dir", "."], dir);
  return { fraction: Number(result.values.get("covis_fraction")), values: result.values };
}

/** Static two-camera covisibility; depths use NaN (or <= 0) for invalid pixels. */
export async function bindCovisStatic(
  options: CovisCommonOptions & {
    srcDepth: Float64Array;
    tgtDepth: Float64Array;
    tgtIntrinsics?: IntrinsicsSpec;
  },
): Promise<CovisOutput> {
  const { height, width } = options;
  checkGrid("srcDepth", options.srcDepth, height, width);
  const tgtIntr = options.tgtIntrinsics ?? options.intrinsics;
  checkGrid("tgtDepth", options.tgtDepth, tgtIntr.height, tgtIntr.width);
  return withWorkspace(async (dir) => {
    await writeBytes(dir, "d1.tnsr", gridTensor(options.srcDepth, height, width));
    await writeBytes(dir, "d2.tnsr", gridTensor(options.tgtDepth, tgtIntr.height, tgtIntr.width));
    await writeText(dir, "traj.txt", `${trajLine(0, options.srcPose)}\n${trajLine(1, options.tgtPose)}\n`);
    const config: Record<string, string | number> = {
      mode: "static",
      src_depth: "d1.tnsr",
      tgt_depth: "d2.tnsr",
      depth_convention: options.convention ?? "z",
      src_pose: "traj.txt:0",
      tgt_pose: "traj.txt:1",
      intrinsics: intrinsicsText(options.intrinsics),
      tau_d: options.tauD,
      tau_r: options.tauR,
      out_prefix: "out",
      out_format: "tnsr",
    };
    if (options.tgtIntrinsics) config.tgt_intrinsics = intrinsicsText(options.tgtIntrinsics);
    const { fraction } = await runGenCovis(dir, config);
    return readCovisOutputs(dir, "out", height, width, fraction);
  });
}

/** Scene-flow covisibility: ground-truth flow plus per-pixel depth change. */
export async function bindCovisSceneflow(
  options: CovisCommonOptions & {
    srcDepth: Float64Array;
    tgtDepth: Float64Array;
    flowGt: FlowArrays;
    depthChange: Float64Array;
  },
): Promise<CovisOutput> {
  const { height, width } = options;
  checkGrid("srcDepth", options.srcDepth, height, width);
  checkGrid("tgtDepth", options.tgtDepth, height, width);
  checkGrid("depthChange", options.depthChange, height, width);
  return withWorkspace(async (dir) => {
    await writeBytes(dir, "d1.tnsr", gridTensor(options.srcDepth, height, width));
    await writeBytes(dir, "d2.tnsr", gridTensor(options.tgtDepth, height, width));
    await writeBytes(dir, "flow.tnsr", flowTensor(options.flowGt, height, width));
    await writeBytes(dir, "change.tnsr", gridTensor(options.depthChange, height, width));
    await writeText(dir, "traj.txt", `${trajLine(0, options.srcPose)}\n${trajLine(1, options.tgtPose)}\n`);
    const { fraction } = await runGenCovis(dir, {
      mode: "sceneflow",
      src_depth: "d1.tnsr",
      tgt_depth: "d2.tnsr",
      flow_gt: "flow.tnsr",
      depth_change: "change.tnsr",
      depth_convention: options.convention ?? "z",
      src_pose: "traj.txt:0",
      tgt_pose: "traj.txt:1",
      intrinsics: intrinsicsText(options.intrinsics),
      tau_d: options.tauD,
      tau_r: options.tauR,
      out_prefix: "out",
      out_format: "tnsr",
    });
    return readCovisOutputs(dir, "out", height, width, fraction);
  });
}

/** Rigid posed objects: segmentation ids (1-based) index the pose arrays. */
export async function bindCovisRigid(
  options: CovisCommonOptions & {
    srcDepth: Float64Array;
    tgtDepth: Float64Array;
    segmentation: Int32Array;
    posesT1: QuatPose[];
    posesT2: QuatPose[];
    tgtIntrinsics?: IntrinsicsSpec;
  },
): Promise<CovisOutput & { unknownObjectPixels: number }> {
  const { height, width } = options;
  checkGrid("srcDepth", options.srcDepth, height, width);
  if (!(options.segmentation instanceof Int32Array)) {
    throw new BindingError("dtype", "segmentation must be an Int32Array");
  }
  if (options.segmentation.length !== height * width) {
    throw new BindingError("shape", "segmentation does not match the image size");
  }
  if (options.posesT1.length !== options.posesT2.length) {
    throw new BindingError("shape", "posesT1 and posesT2 must pair up");
  }
  const tgtIntr = options.tgtIntrinsics ?? options.intrinsics;
  return withWorkspace(async (dir) => {
    await writeBytes(dir, "d1.tnsr", gridTensor(options.srcDepth, height, width));
    await writeBytes(dir, "d2.tnsr", gridTensor(options.tgtDepth, tgtIntr.height, tgtIntr.width));
    await writeBytes(
      dir,
      "seg.tnsr",
      encodeTensor({ data: options.segmentation, shape: [height, width] }),
    );
    await writeText(dir, "traj.txt", `${trajLine(0, options.srcPose)}\n${trajLine(1, options.tgtPose)}\n`);
    await writeText(dir, "obj1.txt", options.posesT1.map((p, i) => trajLine(i, p)).join("\n") + "\n");
    await writeText(dir, "obj2.txt", options.posesT2.map((p, i) => trajLine(i, p)).join("\n") + "\n");
    const config: Record<string, string | number> = {
      mode: "rigid",
      src_depth: "d1.tnsr",
      tgt_depth: "d2.tnsr",
      segmentation: "seg.tnsr",
      obj_poses_t1: "obj1.txt",
      obj_poses_t2: "obj2.txt",
      depth_convention: options.convention ?? "z",
      src_pose: "traj.txt:0",
      tgt_pose: "traj.txt:1",
      intrinsics: intrinsicsText(options.intrinsics),
      tau_d: options.tauD,
      tau_r: options.tauR,
      out_prefix: "out",
      out_format: "tnsr",
    };
    if (options.tgtIntrinsics) config.tgt_intrinsics = intrinsicsText(options.tgtIntrinsics);
    const { fraction, values } = await runGenCovis(dir, config);
    const out = await readCovisOutputs(dir, "out", height, width, fraction);
    return { ...out, unknownObjectPixels: Number(values.get("unknown_object_pixels") ?? 0) };
  });
}

export interface LossOutput {
  epeLoss: number;
  bceLoss: number;
  covisWeight: number;
  total: number;
}

/** Composite training loss on float64 grids (bit-exact path). */
export async function bindTotalLoss(options: {
  height: number;
  width: number;
  pred: FlowArrays;
  gt: FlowArrays;
  covis: Uint8Array;
  supervision: Uint8Array;
  logits: Float64Array;
  covisWeight?: number;
  alpha?: number;
  c?: number;
  bceDomain?: "supervision" | "all";
}): Promise<LossOutput> {
  const { height, width } = options;
  checkGrid("logits", options.logits, height, width);
  return withWorkspace(async (dir) => {
    await writeBytes(dir, "pred.tnsr", flowTensor(options.pred, height, width));
    await writeBytes(dir, "gt.tnsr", flowTensor(options.gt, height, width));
    await writeBytes(dir, "covis.tnsr", boolTensor(options.covis, height, width));
    await writeBytes(dir, "sup.tnsr", boolTensor(options.supervision, height, width));
    await writeBytes(dir, "logits.tnsr", gridTensor(options.logits, height, width));
    const args = [
      "loss-check",
      "--pred", "pred.tnsr",
      "--gt", "gt.tnsr",
      "--covis", "covis.tnsr",
      "--supervision", "sup.tnsr",
      "--logits", "logits.tnsr",
      "--covis-weight", String(options.covisWeight ?? 10),
      "--alpha", String(options.alpha ?? 0.5),
      "--c", String(options.c ?? 0.24),
      "--bce-domain", options.bceDomain ?? "supervision",
    ];
    const { values } = await runCli(args, dir);
    return {
      epeLoss: Number(values.get("epe_loss")),
      bceLoss: Number(values.get("bce_loss")),
      covisWeight: Number(values.get("covis_weight")),
      total: Number(values.get("total")),
    };
  });
}

/** Covisible robust EPE term alone. */
export async function bindEpeLoss(options: {
  height: number;
  width: number;
  pred: FlowArrays;
  gt: FlowArrays;
  covis: Uint8Array;
  alpha?: number;
  c?: number;
}): Promise<number> {
  const sup = new Uint8Array(options.height * options.width);
  const logits = new Float64Array(options.height * options.width);
  const out = await bindTotalLoss({ ...options, supervision: sup, logits });
  return out.epeLoss;
}

/** Supervision-masked covisibility BCE term alone. */
export async function bindBceLoss(options: {
  height: number;
  width: number;
  logits: Float64Array;
  covis: Uint8Array;
  supervision: Uint8Array;
  domain?: "supervision" | "all";
}): Promise<number> {
  const zeros = new Float64Array(options.height * options.width);
  const flow = { du: zeros, dv: new Float64Array(options.height * options.width) };
  const out = await bindTotalLoss({
    height: options.height,
    width: options.width,
    pred: flow,
    gt: flow,
    covis: options.covis,
    supervision: options.supervision,
    logits: options.logits,
    bceDomain: options.domain,
  });
  return out.bceLoss;
}

export interface RefineOutput {
  du: Float64Array;
  dv: Float64Array;
  attn: Float64Array; // (height, width, window, window) row-major
  window: number;
  refinedPixels: number;
}

/** Softmax-attention flow refinement over (C, H, W) feature grids. */
export async function bindRefineFlow(options: {
  height: number;
  width: number;
  channels: number;
  flow: FlowArrays;
  featSrc: Float64Array;
  featTgt: Float64Array;
  window?: number;
  bias?: number;
  temperature?: boolean;
}): Promise<RefineOutput> {
  const { height, width, channels } = options;
  const window = options.window ?? 7;
  const n = channels * height * width;
  if (!(options.featSrc instanceof Float64Array) || !(options.featTgt instanceof Float64Array)) {
    throw new BindingError("dtype", "feature maps must be Float64Array");
  }
  if (options.featSrc.length !== n || options.featTgt.length !== n) {
    throw new BindingError("shape", `feature maps must hold ${channels}x${height}x${width} values`);
  }
  return withWorkspace(async (dir) => {
    await writeBytes(dir, "flow.tnsr", flowTensor(options.flow, height, width));
    await writeBytes(dir, "fs.tnsr", encodeTensor({ data: options.featSrc, shape: [channels, height, width] }));
    await writeBytes(dir, "ft.tnsr", encodeTensor({ data: options.featTgt, shape: [channels, height, width] }));
    const args = [
      "refine",
      "--flow", "flow.tnsr",
      "--feat-src", "fs.tnsr",
      "--feat-tgt", "ft.tnsr",
      "--window", String(window),
      "--bias", String(options.bias ?? 0),
      "--out", "refined.tnsr",
      "--attn-out", "attn.tnsr",
    ];
    if (options.temperature === false) args.push("--no-temperature");
    const { values } = await runCli(args, dir);
    const refined = decodeTensor(await readBytes(dir, "refined.tnsr"));
    expectShape(refined, [height, width, 2], "refined flow");
    const attn = decodeTensor(await readBytes(dir, "attn.tnsr"));
    expectShape(attn, [height, width, window, window], "attention");
    const rdata = refined.data as Float64Array;
    const du = new Float64Array(height * width);
    const dv = new Float64Array(height * width);
    for (let i = 0; i < height * width; i++) {
      du[i] = rdata[2 * i];
      dv[i] = rdata[2 * i + 1];
    }
    return {
      du,
      dv,
      attn: attn.data as Float64Array,
      window,
      refinedPixels: Number(values.get("refined_pixels")),
    };
  });
}

export interface FlowMetrics {
  aepe: number;
  outliers: Map<number, number>;
  pixels: number;
  f1?: number;
}

/** AEPE + strict outlier rates (and optional KITTI F1) over a mask.

    transport "tnsr" (default) keeps float64 end to end; "flo" rounds the
    flows through the float32 interchange format. */
export async function bindFlowMetrics(options: {
  height: number;
  width: number;
  pred: FlowArrays;
  gt: FlowArrays;
  mask: Uint8Array;
  thresholds?: number[];
  f1?: boolean;
  transport?: "tnsr" | "flo";
}): Promise<FlowMetrics> {
  const { height, width } = options;
  const thresholds = options.thresholds ?? [1, 2, 5];
  return withWorkspace(async (dir) => {
    let predName = "pred.tnsr";
    let gtName = "gt.tnsr";
    if (options.transport === "flo") {
      predName = "pred.flo";
      gtName = "gt.flo";
      checkGrid("pred.du", options.pred.du, height, width);
      checkGrid("gt.du", options.gt.du, height, width);
      await writeBytes(dir, predName, encodeFlo(
        new Float32Array(options.pred.du), new Float32Array(options.pred.dv), width, height));
      await writeBytes(dir, gtName, encodeFlo(
        new Float32Array(options.gt.du), new Float32Array(options.gt.dv), width, height));
    } else {
      await writeBytes(dir, predName, flowTensor(options.pred, height, width));
      await writeBytes(dir, gtName, flowTensor(options.gt, height, width));
    }
    await writeBytes(dir, "mask.tnsr", boolTensor(options.mask, height, width));
    const args = [
      "eval-flow",
      "--pred", predName,
      "--gt", gtName,
      "--mask", "mask.tnsr",
      "--thresholds", thresholds.join(","),
    ];
    if (options.f1) args.push("--f1");
    const { values } = await runCli(args, dir);
    const outliers = new Map<number, number>();
    for (const t of thresholds) {
      const key = `outlier_${formatThreshold(t)}px`;
      outliers.set(t, Number(values.get(key)));
    }
    return {
      aepe: Number(values.get("aepe")),
      outliers,
      pixels: Number(values.get("pixels")),
      f1: options.f1 ? Number(values.get("f1")) : undefined,
    };
  });
}

function formatThreshold(t: number): string {
  // mirror the native %g rendering for the keys
  return String(t);
}

/** Pose AUC over precomputed angular errors (degrees). */
export async function bindPoseAuc(
  samples: Array<{ rotationError: number; translationAngleError: number }>,
  thresholds: number[],
): Promise<Map<number, number>> {
  if (samples.length === 0) {
    throw new BindingError("shape", "pose AUC needs at least one error sample");
  }
  return withWorkspace(async (dir) => {
    const body = samples
      .map((s) => `${s.rotationError} ${s.translationAngleError}`)
      .join("\n") + "\n";
    await writeText(dir, "pose.txt", body);
    const { values } = await runCli(
      ["eval-wb", "--pose-errors", "pose.txt", "--auc-thresholds", thresholds.join(",")],
      dir,
    );
    const out = new Map<number, number>();
    for (const t of thresholds) {
      out.set(t, Number(values.get(`pose_auc_${formatThreshold(t)}deg`)));
    }
    return out;
  });
}

/** Native library version; the binding package mirrors it. */
export async function nativeVersion(): Promise<string> {
  const { stdout } = await runCli(["--version"]);
  return stdout.trim().split(" ").pop() ?? "";
}
