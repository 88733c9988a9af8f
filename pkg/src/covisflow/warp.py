"""Backward image warping with dense flow and the 2x2 visualization grid."""

from __future__ import annotations

import numpy as np

MARKER_COLOR = (255, 0, 255)  # magenta: unambiguous "no correspondence here"


def _bilinear_image(image, u, v):
    """Sample every channel at continuous coordinates; returns (values, in_bounds)."""
    h, w = image.shape[:2]
    chans = image.reshape(h, w, -1).astype(np.float64)
    finite = np.isfinite(u) & np.isfinite(v)
    u = np.where(finite, u, 0.0)
    v = np.where(finite, v, 0.0)
    inb = finite & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uq = np.where(inb, u, 0.0)
    vq = np.where(inb, v, 0.0)
    x0 = np.floor(uq).astype(np.int64)
    y0 = np.floor(vq).astype(np.int64)
    wx = (uq - x0)[..., None]
    wy = (vq - y0)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = chans[y0, x0] * (1 - wx) + chans[y0, x1] * wx
    bot = chans[y1, x0] * (1 - wx) + chans[y1, x1] * wx
    return top * (1 - wy) + bot * wy, inb


def warp_backward(tgt, flow, covis, marker=MARKER_COLOR):
    """Pull the target image back to the source grid along the flow.

    out(i) = bilinear(tgt, i + flow(i)) wherever covis holds and the sample
    stays in bounds; everything else is painted the marker color. Keeps the
    input dtype (uint8 stays uint8 by rounding).
    """
    tgt = np.asarray(tgt)
    h, w = flow.shape
    if tgt.shape[:2] != (h, w):
        raise ValueError(f"image {tgt.shape[:2]} does not match flow {(h, w)}")
    covis = np.asarray(covis, dtype=bool)
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    use = covis & flow.validity
    u = us + np.where(use, flow.du, 0.0)
    v = vs + np.where(use, flow.dv, 0.0)
    values, inb = _bilinear_image(tgt, u, v)

    n_chan = 1 if tgt.ndim == 2 else tgt.shape[2]
    marker_vec = np.asarray(marker, dtype=np.float64).reshape(-1)[:n_chan]
    if marker_vec.size < n_chan:
        marker_vec = np.pad(marker_vec, (0, n_chan - marker_vec.size), constant_values=marker_vec[0])
    keep = (use & inb)[..., None]
    out = np.where(keep, values, marker_vec)
    if np.issubdtype(tgt.dtype, np.integer):
        info = np.iinfo(tgt.dtype)
        out = np.clip(np.rint(out), info.min, info.max).astype(tgt.dtype)
    else:
        out = out.astype(tgt.dtype)
    return out.reshape(tgt.shape)


def _to_rgb(image):
    image = np.asarray(image)
    if image.ndim == 2:
        return np.repeat(image[:, :, None], 3, axis=2)
    return image


def viz_grid(src, tgt, flow_fwd, covis_fwd, flow_bwd=None, covis_bwd=None, marker=MARKER_COLOR):
    """2x2 panel: inputs on top, cross-warped images underneath.

    Bottom-left is the target pulled onto the source grid by the forward
    flow; bottom-right is the source pulled onto the target grid by the
    backward flow (marker-filled when no backward flow is given).
    """
    src = _to_rgb(src)
    tgt = _to_rgb(tgt)
    warped_fwd = warp_backward(tgt, flow_fwd, covis_fwd, marker)
    if flow_bwd is not None:
        warped_bwd = warp_backward(src, flow_bwd, covis_bwd, marker)
    else:
        warped_bwd = np.full_like(tgt, 0)
        warped_bwd[:, :] = np.asarray(marker, dtype=tgt.dtype)
    top = np.concatenate([src, tgt], axis=1)
    bottom = np.concatenate([warped_fwd, warped_bwd], axis=1)
    return np.concatenate([top, bottom], axis=0)
