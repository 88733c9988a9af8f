/**
 * Binary tensor container and .flo flow files.
 *
 * Container layout: magic "TNSR", dtype code (u8), ndim (u8), dims
 * (u32 LE each), then the row-major little-endian payload. Matches the
 * native library byte for byte.
 */

import { BindingError } from "./errors.js";

export type TensorData =
  | Float32Array
  | Float64Array
  | Uint8Array
  | Int32Array
  | BigInt64Array;

export interface Tensor {
  data: TensorData;
  shape: number[];
  /** bool tensors decode to Uint8Array with this flag set */
  bool?: boolean;
}

const MAGIC = Buffer.from("TNSR", "ascii");

const CODE_FLOAT32 = 1;
const CODE_FLOAT64 = 2;
const CODE_UINT8 = 3;
const CODE_BOOL = 4;
const CODE_INT32 = 5;
const CODE_INT64 = 6;

function dtypeCode(data: TensorData, bool: boolean | undefined): number {
  if (data instanceof Float32Array) return CODE_FLOAT32;
  if (data instanceof Float64Array) return CODE_FLOAT64;
  if (data instanceof Uint8Array) return bool ? CODE_BOOL : CODE_UINT8;
  if (data instanceof Int32Array) return CODE_INT32;
  if (data instanceof BigInt64Array) return CODE_INT64;
  throw new BindingError("dtype", `unsupported array type ${Object.prototype.toString.call(data)}`);
}

export function encodeTensor(tensor: Tensor): Buffer {
  const { data, shape } = tensor;
  const count = shape.reduce((a, b) => a * b, 1);
  if (count !== data.length) {
    throw new BindingError("shape", `shape [${shape}] does not match length ${data.length}`);
  }
  const header = Buffer.alloc(6 + 4 * shape.length);
  MAGIC.copy(header, 0);
  header.writeUInt8(dtypeCode(data, tensor.bool), 4);
  header.writeUInt8(shape.length, 5);
  shape.forEach((dim, i) => header.writeUInt32LE(dim, 6 + 4 * i));
  // typed arrays are little-endian on every platform node supports
  const payload = Buffer.from(data.buffer, data.byteOffset, data.byteLength);
  return Buffer.concat([header, payload]);
}

export function decodeTensor(buffer: Buffer): Tensor {
  if (buffer.length < 6 || !buffer.subarray(0, 4).equals(MAGIC)) {
    throw new BindingError("format", "bad tensor magic");
  }
  const code = buffer.readUInt8(4);
  const ndim = buffer.readUInt8(5);
  if (buffer.length < 6 + 4 * ndim) {
    throw new BindingError("format", "truncated tensor header");
  }
  const shape: number[] = [];
  for (let i = 0; i < ndim; i++) shape.push(buffer.readUInt32LE(6 + 4 * i));
  const count = shape.reduce((a, b) => a * b, 1);
  const start = 6 + 4 * ndim;
  const body = buffer.subarray(start);
  // fresh allocation: owns its ArrayBuffer at offset 0, so typed-array
  // views are aligned and never see node's shared buffer pool
  const copy = new Uint8Array(body.length);
  copy.set(body);

  const make = (): Tensor => {
    switch (code) {
      case CODE_FLOAT32:
        return { data: new Float32Array(copy.buffer, copy.byteOffset, count), shape };
      case CODE_FLOAT64:
        return { data: new Float64Array(copy.buffer, copy.byteOffset, count), shape };
      case CODE_UINT8:
        return { data: new Uint8Array(copy.buffer, copy.byteOffset, count), shape };
      case CODE_BOOL:
        return { data: new Uint8Array(copy.buffer, copy.byteOffset, count), shape, bool: true };
      case CODE_INT32:
        return { data: new Int32Array(copy.buffer, copy.byteOffset, count), shape };
      case CODE_INT64:
        return { data: new BigInt64Array(copy.buffer, copy.byteOffset, count), shape };
      default:
        throw new BindingError("format", `unknown tensor dtype code ${code}`);
    }
  };
  const tensor = make();
  if (tensor.data.byteLength !== body.length) {
    throw new BindingError("format", "truncated tensor payload");
  }
  return tensor;
}

/** Middlebury .flo: magic "PIEH", i32 width/height, interleaved f32 (u, v). */
export function encodeFlo(du: Float32Array, dv: Float32Array, width: number, height: number): Buffer {
  if (du.length !== width * height || dv.length !== du.length) {
    throw new BindingError("shape", "flow arrays do not match the given dimensions");
  }
  const out = Buffer.alloc(12 + 8 * du.length);
  out.write("PIEH", 0, "ascii");
  out.writeInt32LE(width, 4);
  out.writeInt32LE(height, 8);
  for (let i = 0; i < du.length; i++) {
    out.writeFloatLE(du[i], 12 + 8 * i);
    out.writeFloatLE(dv[i], 16 + 8 * i);
  }
  return out;
}

export function decodeFlo(buffer: Buffer): { du: Float32Array; dv: Float32Array; width: number; height: number } {
  if (buffer.length < 12 || buffer.toString("ascii", 0, 4) !== "PIEH") {
    throw new BindingError("format", "bad .flo magic");
  }
  const width = buffer.readInt32LE(4);
  const height = buffer.readInt32LE(8);
  const count = width * height;
  if (buffer.length !== 12 + 8 * count) {
    throw new BindingError("format", "truncated .flo payload");
  }
  const du = new Float32Array(count);
  const dv = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    du[i] = buffer.readFloatLE(12 + 8 * i);
    dv[i] = buffer.readFloatLE(16 + 8 * i);
  }
  return { du, dv, width, height };
}
