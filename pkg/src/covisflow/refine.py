"""Classification-based local flow refinement over dense feature maps.

For every source pixel, features are sampled on a K x K window of integer
offsets centered at the current flow target in the target feature map. The
softmax over feature dot products weights the offsets, and their weighted
sum is the sub-pixel residual added to the flow. The residual can never
leave the window: |residual| <= (K-1)/2 per axis by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covis import FlowField


@dataclass(frozen=True)
class RefineConfig:
    """Window size, attention bias, and dot-product scaling."""

    window: int = 7
    bias: float = 0.0
    bias_offset: tuple = (0, 0)  # (du, dv) cell receiving the bias; center keeps the regressed flow
    temperature: bool = True  # scale dot products by 1/sqrt(C)

    def __post_init__(self):
        if self.window % 2 != 1 or self.window < 3:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        r = (self.window - 1) // 2
        if max(abs(self.bias_offset[0]), abs(self.bias_offset[1])) > r:
            raise ValueError(f"bias offset {self.bias_offset} outside window radius {r}")


@dataclass
class RefineResult:
    flow: FlowField
    attn: np.ndarray  # (H, W, K, K); rows index dv offsets, cols du offsets
    refined: np.ndarray  # (H, W) bool; False where the window had no valid sample


def _bilinear_weights(u, v, h, w):
    """Shared bilinear gather indices/weights with the contributing-neighbor rule."""
    finite = np.isfinite(u) & np.isfinite(v)
    u = np.where(finite, u, 0.0)
    v = np.where(finite, v, 0.0)
    x0 = np.floor(u)
    y0 = np.floor(v)
    wx = u - x0
    wy = v - y0
    x0i = x0.astype(np.int64)
    y0i = y0.astype(np.int64)
    corners = []
    valid = finite
    for ix, iy, used, wgt in (
        (x0i, y0i, np.broadcast_to(True, u.shape), (1.0 - wx) * (1.0 - wy)),
        (x0i + 1, y0i, wx > 0, wx * (1.0 - wy)),
        (x0i, y0i + 1, wy > 0, (1.0 - wx) * wy),
        (x0i + 1, y0i + 1, (wx > 0) & (wy > 0), wx * wy),
    ):
        inb = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        ok = ~used | inb
        valid = valid & ok
        use = used & inb
        corners.append((np.clip(ix, 0, w - 1), np.clip(iy, 0, h - 1), np.where(use, wgt, 0.0)))
    return corners, valid


def refine_flow(flow_init, feat_src, feat_tgt, cfg=RefineConfig()):
    """Refine a flow field by local feature classification.

    feat_src and feat_tgt are (C, H, W) descriptor grids sharing C. Returns
    a RefineResult with the refined flow, the per-pixel attention over the
    offset window, and a mask of pixels that were actually refined.
    """
    feat_src = np.asarray(feat_src, dtype=np.float64)
    feat_tgt = np.asarray(feat_tgt, dtype=np.float64)
    if feat_src.ndim != 3 or feat_tgt.ndim != 3:
        raise ValueError("feature maps must be (C, H, W)")
    if feat_src.shape[0] != feat_tgt.shape[0]:
        raise ValueError(
            f"channel mismatch: source {feat_src.shape[0]} vs target {feat_tgt.shape[0]}"
        )
    if not (np.all(np.isfinite(feat_src)) and np.all(np.isfinite(feat_tgt))):
        raise ValueError("feature maps must be finite")
    c, h, w = feat_src.shape
    if flow_init.shape != (h, w):
        raise ValueError(f"flow {flow_init.shape} does not match features {(h, w)}")
    th, tw = feat_tgt.shape[1], feat_tgt.shape[2]
    k = cfg.window
    r = (k - 1) // 2
    scale = 1.0 / np.sqrt(c) if cfg.temperature else 1.0

    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    fv = flow_init.validity
    base_u = us + np.where(fv, flow_init.du, 0.0)
    base_v = vs + np.where(fv, flow_init.dv, 0.0)

    offs = np.arange(-r, r + 1, dtype=np.float64)
    ou = base_u[:, :, None, None] + offs[None, None, None, :]
    ov = base_v[:, :, None, None] + offs[None, None, :, None]

    corners, sample_valid = _bilinear_weights(ou, ov, th, tw)
    logits = np.zeros((h, w, k, k))
    for ch in range(c):
        plane = feat_tgt[ch]
        sample = np.zeros((h, w, k, k))
        for ix, iy, wgt in corners:
            sample += plane[iy, ix] * wgt
        logits += feat_src[ch][:, :, None, None] * sample
    logits *= scale
    logits[:, :, r + cfg.bias_offset[1], r + cfg.bias_offset[0]] += cfg.bias

    valid = sample_valid & fv[:, :, None, None]
    neg_inf = np.float64(-np.inf)
    masked = np.where(valid, logits, neg_inf)
    flat = masked.reshape(h, w, k * k)
    mx = np.max(flat, axis=2)
    refined = np.isfinite(mx) & fv
    mxsafe = np.where(refined, mx, 0.0)
    expd = np.exp(masked - mxsafe[:, :, None, None])
    expd = np.where(valid, expd, 0.0)
    denom = np.sum(expd.reshape(h, w, k * k), axis=2)
    denomsafe = np.where(denom > 0, denom, 1.0)
    attn = expd / denomsafe[:, :, None, None]

    # The residual is a convex combination of offsets in [-r, r]; the clip
    # only trims float spill so the window bound holds exactly.
    res_u = np.clip(np.sum(attn * offs[None, None, None, :], axis=(2, 3)), -r, r)
    res_v = np.clip(np.sum(attn * offs[None, None, :, None], axis=(2, 3)), -r, r)
    du = np.where(refined, flow_init.du + res_u, flow_init.du)
    dv = np.where(refined, flow_init.dv + res_v, flow_init.dv)
    return RefineResult(FlowField(du, dv, fv.copy()), attn, refined)
