"""Bit-exact file formats: .flo flow, PFM grids, 16-bit PNG depth, mask PNGs,
a minimal binary tensor container, camera trajectories, and flat key=value
config files.

All writers go through a temp-file-plus-rename so partially written files
never appear under the final name.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .covis import FlowField
from .geometry import DepthMap, Pose

FLO_MAGIC = b"PIEH"  # little-endian float 202021.25


class FormatError(ValueError):
    """Malformed or mismatched file content."""


def _atomic_write_bytes(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- Middlebury .flo ------------------------------------------------------


def write_flo(path, flow):
    """Interleaved (u, v) float32 row-major; invalid pixels stored as NaN."""
    h, w = flow.shape
    du = np.where(flow.validity, flow.du, np.nan).astype(np.float32)
    dv = np.where(flow.validity, flow.dv, np.nan).astype(np.float32)
    data = np.empty((h, w, 2), dtype="<f4")
    data[..., 0] = du
    data[..., 1] = dv
    payload = FLO_MAGIC + struct.pack("<ii", w, h) + data.tobytes()
    _atomic_write_bytes(path, payload)


def read_flo(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FLO_MAGIC:
            raise FormatError(f"{path}: bad flow magic {magic!r}, expected {FLO_MAGIC!r}")
        header = f.read(8)
        if len(header) != 8:
            raise FormatError(f"{path}: truncated flow header")
        w, h = struct.unpack("<ii", header)
        if w <= 0 or h <= 0:
            raise FormatError(f"{path}: nonsensical flow dimensions {w}x{h}")
        raw = f.read(w * h * 8)
        if len(raw) != w * h * 8:
            raise FormatError(f"{path}: truncated flow payload")
    data = np.frombuffer(raw, dtype="<f4").reshape(h, w, 2)
    du = data[..., 0].astype(np.float64)
    dv = data[..., 1].astype(np.float64)
    validity = np.isfinite(du) & np.isfinite(dv)
    du = np.where(validity, du, np.nan)
    dv = np.where(validity, dv, np.nan)
    return FlowField(du, dv, validity)


# --- PFM ------------------------------------------------------------------


def write_pfm(path, grid, scale=-1.0):
    """'Pf' (1-channel) or 'PF' (3-channel) with bottom-up rows.

    Negative scale marks little-endian payload (the common convention).
    """
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim == 2:
        tag = b"Pf"
        h, w = grid.shape
    elif grid.ndim == 3 and grid.shape[2] == 3:
        tag = b"PF"
        h, w = grid.shape[:2]
    else:
        raise FormatError(f"PFM supports HxW or HxWx3 grids, got {grid.shape}")
    if scale == 0:
        raise FormatError("PFM scale must be nonzero")
    data = np.flipud(grid).astype("<f4" if scale < 0 else ">f4")
    header = tag + b"\n" + f"{w} {h}\n".encode() + f"{scale:.6f}\n".encode()
    _atomic_write_bytes(path, header + data.tobytes())


def read_pfm(path):
    """Returns (array, scale); 3-channel files come back as (H, W, 3)."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"Pf", b"PF"):
            raise FormatError(f"{path}: bad PFM tag {tag!r}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: malformed PFM dimensions line")
        try:
            w, h = int(dims[0]), int(dims[1])
        except ValueError as exc:
            raise FormatError(f"{path}: malformed PFM dimensions line") from exc
        try:
            scale = float(f.readline().strip())
        except ValueError as exc:
            raise FormatError(f"{path}: malformed PFM scale line") from exc
        if scale == 0:
            raise FormatError(f"{path}: PFM scale must be nonzero")
        channels = 3 if tag == b"PF" else 1
        count = w * h * channels
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise FormatError(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype).reshape(h, w, channels)
    data = np.flipud(data)
    if channels == 1:
        data = data[..., 0]
    return np.ascontiguousarray(data), scale


# --- PNG depth and masks --------------------------------------------------


@dataclass(frozen=True)
class DepthRangeReport:
    saturated_pixels: int  # raw value at the 16-bit ceiling
    invalid_pixels: int  # raw zeros


def read_depth_png16(path, scale, convention="z"):
    """16-bit PNG depth: meters = raw / scale; raw 0 means invalid."""
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype != np.uint16:
        raise FormatError(f"{path}: expected 16-bit depth PNG, got dtype {arr.dtype}")
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected single-channel depth, got shape {arr.shape}")
    validity = arr != 0
    values = arr.astype(np.float64) / float(scale)
    report = DepthRangeReport(
        saturated_pixels=int(np.count_nonzero(arr == np.iinfo(np.uint16).max)),
        invalid_pixels=int(np.count_nonzero(~validity)),
    )
    return DepthMap(values, validity, convention), report


def write_depth_png16(path, depth, scale):
    raw = np.zeros(depth.shape, dtype=np.uint16)
    vals = np.rint(depth.values * float(scale))
    vals = np.clip(vals, 1, np.iinfo(np.uint16).max)
    raw[depth.validity] = vals[depth.validity].astype(np.uint16)
    _atomic_write_image(path, Image.fromarray(raw))


def write_mask_png(path, mask):
    """Boolean mask as 8-bit PNG (0 / 255)."""
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    _atomic_write_image(path, Image.fromarray(arr))


def read_mask_png(path):
    arr = np.asarray(Image.open(path))
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr > 127


def write_image_png(path, array):
    _atomic_write_image(path, Image.fromarray(np.asarray(array)))


def read_image(path):
    return np.asarray(Image.open(path))


def _atomic_write_image(path, image):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".png")
    os.close(fd)
    try:
        image.save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- minimal binary tensor container ---------------------------------------

TENSOR_MAGIC = b"TNSR"
_DTYPE_CODES = {
    np.dtype(np.float32): 1,
    np.dtype(np.float64): 2,
    np.dtype(np.uint8): 3,
    np.dtype(np.bool_): 4,
    np.dtype(np.int32): 5,
    np.dtype(np.int64): 6,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def write_tensor(path, array):
    """Header: magic, dtype code (u8), ndim (u8), dims (u32 LE each); then
    the row-major little-endian payload."""
    array = np.ascontiguousarray(array)
    if array.dtype not in _DTYPE_CODES:
        raise FormatError(f"unsupported tensor dtype {array.dtype}")
    if array.ndim > 255:
        raise FormatError("tensor rank too large")
    header = TENSOR_MAGIC + struct.pack("<BB", _DTYPE_CODES[array.dtype], array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes()
    _atomic_write_bytes(path, header + payload)


def read_tensor(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TENSOR_MAGIC:
            raise FormatError(f"{path}: bad tensor magic {magic!r}")
        meta = f.read(2)
        if len(meta) != 2:
            raise FormatError(f"{path}: truncated tensor header")
        code, ndim = struct.unpack("<BB", meta)
        if code not in _CODE_DTYPES:
            raise FormatError(f"{path}: unknown tensor dtype code {code}")
        dims_raw = f.read(4 * ndim)
        if len(dims_raw) != 4 * ndim:
            raise FormatError(f"{path}: truncated tensor dims")
        dims = struct.unpack(f"<{ndim}I", dims_raw)
        dtype = _CODE_DTYPES[code]
        count = int(np.prod(dims)) if ndim else 1
        raw = f.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise FormatError(f"{path}: truncated tensor payload")
    return np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(dims)


# --- trajectories -----------------------------------------------------------


def read_trajectory(path):
    """Poses from 'timestamp tx ty tz qx qy qz qw' lines (camera-to-world).

    Quaternions must be unit up to 1e-3 and are renormalized on load.
    """
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = text.split()
            if len(fields) != 8:
                raise FormatError(
                    f"{path}:{lineno}: expected 8 fields (t tx ty tz qx qy qz qw), got {len(fields)}"
                )
            try:
                _, tx, ty, tz, qx, qy, qz, qw = (float(x) for x in fields)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric field") from exc
            norm = (qx * qx + qy * qy + qz * qz + qw * qw) ** 0.5
            if abs(norm - 1.0) > 1e-3:
                raise FormatError(
                    f"{path}:{lineno}: quaternion norm {norm:.6f} deviates from 1 by more than 1e-3"
                )
            poses.append(Pose.from_quaternion(qx, qy, qz, qw, (tx, ty, tz)))
    return poses


def _quat_from_rotation(r):
    # largest-component extraction keeps the division well conditioned
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = (tr + 1.0) ** 0.5 * 2
        return (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s, 0.25 * s
    if r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = (1.0 + r[0, 0] - r[1, 1] - r[2, 2]) ** 0.5 * 2
        return 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s, (r[2, 1] - r[1, 2]) / s
    if r[1, 1] > r[2, 2]:
        s = (1.0 + r[1, 1] - r[0, 0] - r[2, 2]) ** 0.5 * 2
        return (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s, (r[0, 2] - r[2, 0]) / s
    s = (1.0 + r[2, 2] - r[0, 0] - r[1, 1]) ** 0.5 * 2
    return (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s, (r[1, 0] - r[0, 1]) / s


def write_trajectory(path, poses):
    lines = []
    for i, pose in enumerate(poses):
        qx, qy, qz, qw = _quat_from_rotation(pose.rotation)
        t = pose.translation
        lines.append(
            f"{i} {t[0]:.17g} {t[1]:.17g} {t[2]:.17g} {qx:.17g} {qy:.17g} {qz:.17g} {qw:.17g}"
        )
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


# --- flat key=value config --------------------------------------------------


def parse_config_text(text):
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise FormatError(f"config line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def read_config(path):
    with open(path) as f:
        return parse_config_text(f.read())


def write_config(path, mapping):
    lines = [f"{k} = {v}" for k, v in mapping.items()]
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())
