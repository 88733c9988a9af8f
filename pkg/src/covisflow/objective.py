"""Training objectives and supervision targets as pure numeric operations.

Everything operates on plain numpy grids and returns Python floats or new
arrays, so external training loops can mirror the math exactly. Reductions
go through numpy's pairwise summation, which is deterministic run to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RobustLossParams:
    """Generalized Charbonnier shape/scale; defaults focus gradient on sub-pixel errors."""

    alpha: float = 0.5
    c: float = 0.24

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"scale c must be positive, got {self.c}")
        if self.alpha == 0 or self.alpha == 2:
            raise ValueError(f"alpha must avoid the degenerate values 0 and 2, got {self.alpha}")


@dataclass(frozen=True)
class LossBreakdown:
    epe_loss: float
    bce_loss: float
    covis_weight: float
    total: float


def robust_charbonnier(x, params=RobustLossParams()):
    """Generalized Charbonnier: (|a-2|/a) * (((x/c)^2 / |a-2| + 1)^(a/2) - 1)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("robust loss is defined for non-negative errors")
    a = params.alpha
    c = params.c
    k = abs(a - 2.0)
    xc = x / c
    out = (k / a) * (np.power(xc * xc / k + 1.0, a / 2.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def robust_charbonnier_grad(x, params=RobustLossParams()):
    """Closed-form derivative of robust_charbonnier with respect to x."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("robust loss is defined for non-negative errors")
    a = params.alpha
    c = params.c
    k = abs(a - 2.0)
    xc = x / c
    base = xc * xc / k + 1.0
    out = x / (c * c) * np.power(base, a / 2.0 - 1.0)
    return float(out) if out.ndim == 0 else out


def _check_same_shape(*arrays):
    shapes = {np.asarray(a).shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def epe_loss(flow_pred, flow_gt, covis_gt, params=RobustLossParams()):
    """Robust end-point-error averaged over ground-truth covisible pixels.

    The mask is intersected with both flows' validity (ground-truth
    covisibility is a subset of it by construction). Returns 0.0 when no
    pixel survives (the pair simply contributes nothing), never an error.
    """
    _check_same_shape(flow_pred.du, flow_gt.du, covis_gt)
    covis_gt = np.asarray(covis_gt, dtype=bool) & flow_pred.validity & flow_gt.validity
    n = int(np.count_nonzero(covis_gt))
    if n == 0:
        return 0.0
    eu = flow_pred.du[covis_gt] - flow_gt.du[covis_gt]
    ev = flow_pred.dv[covis_gt] - flow_gt.dv[covis_gt]
    err = np.sqrt(eu * eu + ev * ev)
    return float(np.sum(robust_charbonnier(err, params)) / n)


def bce_loss(logits, covis_gt, supervision, domain="supervision"):
    """Numerically stable with-logits binary cross-entropy for covisibility.

    domain="supervision" (default) averages over the supervision mask and
    returns 0.0 when the mask is empty. domain="all" reproduces the plain
    all-pixels mean (no mask, normalize by H*W).
    """
    logits = np.asarray(logits, dtype=np.float64)
    _check_same_shape(logits, covis_gt, supervision)
    if domain not in ("supervision", "all"):
        raise ValueError(f"unknown normalization domain {domain!r}")
    mask = np.asarray(supervision, dtype=bool)
    domain_mask = np.ones(logits.shape, dtype=bool) if domain == "all" else mask
    if not np.all(np.isfinite(logits[domain_mask])):
        raise ValueError("covisibility logits must be finite over the evaluated pixels")
    y = np.asarray(covis_gt, dtype=np.float64)
    z = logits
    per_pixel = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    if domain == "all":
        return float(np.sum(per_pixel) / per_pixel.size)
    n = int(np.count_nonzero(mask))
    if n == 0:
        return 0.0
    return float(np.sum(per_pixel[mask]) / n)


def total_loss(
    flow_pred,
    flow_gt,
    covis_gt,
    logits,
    supervision,
    params=RobustLossParams(),
    covis_weight=10.0,
    bce_domain="supervision",
):
    """Composite objective: robust EPE plus weighted covisibility BCE."""
    epe = epe_loss(flow_pred, flow_gt, covis_gt, params)
    bce = bce_loss(logits, covis_gt, supervision, domain=bce_domain)
    return LossBreakdown(epe, bce, covis_weight, epe + covis_weight * bce)


@dataclass
class RefinementTarget:
    """Per-pixel soft classification target over a K x K offset window."""

    weights: np.ndarray  # (H, W, K, K), rows are dv offsets, cols du
    in_window: np.ndarray  # (H, W)
    window: int


def refinement_soft_target(flow_gt, flow_init, window=7):
    """Distribute each residual flow target over its four bracketing offsets.

    The residual t = flow_gt - flow_init selects a fractional position in
    the window; bilinear weights over the four adjacent integer offsets
    make the target continuous in t and recover a one-hot at integers.
    Pixels whose residual leaves [-(K-1)/2, (K-1)/2]^2 (or with invalid
    flow) are excluded via in_window.
    """
    if window % 2 != 1 or window < 3:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    _check_same_shape(flow_gt.du, flow_init.du)
    h, w = flow_gt.shape
    r = (window - 1) // 2

    tx = flow_gt.du - flow_init.du
    ty = flow_gt.dv - flow_init.dv
    valid = flow_gt.validity & flow_init.validity
    inside = valid & (np.abs(tx) <= r) & (np.abs(ty) <= r) & np.isfinite(tx) & np.isfinite(ty)

    weights = np.zeros((h, w, window, window))
    txs = np.where(inside, tx, 0.0)
    tys = np.where(inside, ty, 0.0)
    bx = np.floor(txs).astype(np.int64)
    by = np.floor(tys).astype(np.int64)
    ax = txs - bx
    ay = tys - by

    rows, cols = np.nonzero(inside)
    for du_off, dv_off, wgt in (
        (0, 0, (1.0 - ax) * (1.0 - ay)),
        (1, 0, ax * (1.0 - ay)),
        (0, 1, (1.0 - ax) * ay),
        (1, 1, ax * ay),
    ):
        ci = bx[rows, cols] + du_off + r
        ri = by[rows, cols] + dv_off + r
        wv = wgt[rows, cols]
        ok = (wv > 0) & (ci >= 0) & (ci < window) & (ri >= 0) & (ri < window)
        weights[rows[ok], cols[ok], ri[ok], ci[ok]] += wv[ok]
    return RefinementTarget(weights, inside, window)


def refinement_ce_loss(attn_logits, target):
    """Cross-entropy between window logits and the soft target, averaged over in-window pixels."""
    attn_logits = np.asarray(attn_logits, dtype=np.float64)
    if attn_logits.shape != target.weights.shape:
        raise ValueError(
            f"logits {attn_logits.shape} do not match target {target.weights.shape}"
        )
    mask = target.in_window
    n = int(np.count_nonzero(mask))
    if n == 0:
        return 0.0
    logits = attn_logits[mask].reshape(n, -1)
    weights = target.weights[mask].reshape(n, -1)
    m = np.max(logits, axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(logits - m), axis=1))
    ce = lse - np.sum(weights * logits, axis=1)
    return float(np.sum(ce) / n)


def patch_similarity(flow_gt, covis_gt, patch):
    """Covisibility-weighted fraction of each source patch's pixels landing in each target patch.

    Entry (s, t) counts source pixels of patch s whose flow target falls
    inside target patch t, weighted by ground-truth covisibility and
    normalized by the full patch size. Images whose dimensions are not
    divisible by the patch size are padded with non-covisible pixels.
    """
    if patch <= 0:
        raise ValueError("patch size must be positive")
    covis_gt = np.asarray(covis_gt, dtype=bool)
    _check_same_shape(flow_gt.du, covis_gt)
    h, w = flow_gt.shape
    hp = -(-h // patch)
    wp = -(-w // patch)
    n_src = hp * wp
    sim = np.zeros((n_src, n_src))

    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    use = covis_gt & flow_gt.validity
    tu = us[use] + flow_gt.du[use]
    tv = vs[use] + flow_gt.dv[use]
    src_patch = (vs[use].astype(np.int64) // patch) * wp + us[use].astype(np.int64) // patch

    tc = np.floor(tu / patch).astype(np.int64)
    tr = np.floor(tv / patch).astype(np.int64)
    inb = (tu >= 0) & (tu < w) & (tv >= 0) & (tv < h)
    tgt_patch = tr * wp + tc
    np.add.at(sim, (src_patch[inb], tgt_patch[inb]), 1.0)
    return sim / float(patch * patch)
