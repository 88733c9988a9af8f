import math

import numpy as np
import pytest

from covisflow.covis import FlowField
from covisflow.refine import RefineConfig, refine_flow


def make_flow(du, dv, valid=None):
    du = np.asarray(du, dtype=np.float64)
    valid = np.ones(du.shape, dtype=bool) if valid is None else valid
    return FlowField(du, np.asarray(dv, dtype=np.float64), valid)


def scalar_refine_pixel(flow, feat_src, feat_tgt, u, v, cfg):
    """Per-pixel reference: python loops, bilinear samples, softmax."""
    c, th, tw = feat_tgt.shape
    r = (cfg.window - 1) // 2
    scale = 1.0 / math.sqrt(c) if cfg.temperature else 1.0
    bu = u + float(flow.du[v, u])
    bv = v + float(flow.dv[v, u])
    logits = {}
    for oy in range(-r, r + 1):
        for ox in range(-r, r + 1):
            su = bu + ox
            sv = bv + oy
            x0 = math.floor(su)
            y0 = math.floor(sv)
            wx = su - x0
            wy = sv - y0
            cells = [
                (int(x0), int(y0), (1 - wx) * (1 - wy), True),
                (int(x0) + 1, int(y0), wx * (1 - wy), wx > 0),
                (int(x0), int(y0) + 1, (1 - wx) * wy, wy > 0),
                (int(x0) + 1, int(y0) + 1, wx * wy, wx > 0 and wy > 0),
            ]
            if any(used and not (0 <= ix < tw and 0 <= iy < th) for ix, iy, _, used in cells):
                continue
            dot = 0.0
            for ch in range(c):
                s = 0.0
                for ix, iy, wgt, used in cells:
                    if used:
                        s += float(feat_tgt[ch, iy, ix]) * wgt
                dot += float(feat_src[ch, v, u]) * s
            logits[(ox, oy)] = dot * scale
    if not logits:
        return None
    bx, by = cfg.bias_offset
    if (bx, by) in logits:
        logits[(bx, by)] += cfg.bias
    m = max(logits.values())
    exps = {o: math.exp(l - m) for o, l in logits.items()}
    z = sum(exps.values())
    res_u = sum(o[0] * e for o, e in exps.items()) / z
    res_v = sum(o[1] * e for o, e in exps.items()) / z
    return res_u, res_v


class TestRefineFlow:
    def test_exact_center_match_keeps_flow(self):
        h = w = 9
        rng = np.random.default_rng(0)
        # orthogonal descriptors: center cell matches source, others do not
        feat_tgt = rng.normal(size=(8, h, w)) * 0.01
        feat_src = np.zeros((8, h, w))
        for v in range(h):
            for u in range(w):
                d = np.zeros(8)
                d[(u + v) % 8] = 1e4
                feat_tgt[:, v, u] = d
                feat_src[:, v, u] = d
        flow = make_flow(np.zeros((h, w)), np.zeros((h, w)))
        out = refine_flow(flow, feat_src, feat_tgt, RefineConfig())
        inner = np.zeros((h, w), dtype=bool)
        inner[3:-3, 3:-3] = True
        assert np.all(out.flow.du[inner] == 0.0)
        assert np.all(out.flow.dv[inner] == 0.0)

    def test_uniform_logits_centered_residual_zero(self):
        h = w = 8
        feat = np.ones((4, h, w))
        flow = make_flow(np.zeros((h, w)), np.zeros((h, w)))
        out = refine_flow(flow, feat, feat, RefineConfig())
        inner = np.zeros((h, w), dtype=bool)
        inner[3:-3, 3:-3] = True  # full window in bounds: symmetric offsets cancel
        assert np.max(np.abs(out.flow.du[inner])) < 1e-12
        assert np.max(np.abs(out.flow.dv[inner])) < 1e-12

    def test_dominant_offset_pulls_residual(self):
        h = w = 9
        feat_tgt = np.zeros((2, h, w))
        feat_src = np.zeros((2, h, w))
        # descriptor at (5, 3) matches the source pixel (4, 4): offset (+1, -1)
        feat_src[0, 4, 4] = 1.0
        feat_tgt[0, 3, 5] = 1.0
        flow = make_flow(np.zeros((h, w)), np.zeros((h, w)))
        for gain in (10.0, 100.0, 1000.0):
            out = refine_flow(flow, feat_src * gain, feat_tgt * gain, RefineConfig())
            got = (out.flow.du[4, 4], out.flow.dv[4, 4])
            if gain >= 1000:
                assert abs(got[0] - 1.0) < 1e-6 and abs(got[1] + 1.0) < 1e-6

    def test_residual_bounded_by_window_radius(self):
        rng = np.random.default_rng(1)
        h = w = 10
        feat_src = rng.normal(size=(6, h, w)) * 5
        feat_tgt = rng.normal(size=(6, h, w)) * 5
        flow = make_flow(rng.uniform(-4, 4, (h, w)), rng.uniform(-4, 4, (h, w)))
        out = refine_flow(flow, feat_src, feat_tgt, RefineConfig(window=7))
        res_u = out.flow.du - flow.du
        res_v = out.flow.dv - flow.dv
        assert np.max(np.abs(res_u)) <= 3.0
        assert np.max(np.abs(res_v)) <= 3.0

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(2)
        h = w = 8
        feat_src = rng.normal(size=(5, h, w))
        feat_tgt = rng.normal(size=(5, h, w))
        flow = make_flow(rng.uniform(-2, 2, (h, w)), rng.uniform(-2, 2, (h, w)))
        cfg = RefineConfig(window=5, bias=0.3)
        out = refine_flow(flow, feat_src, feat_tgt, cfg)
        for v in range(h):
            for u in range(w):
                ref = scalar_refine_pixel(flow, feat_src, feat_tgt, u, v, cfg)
                if ref is None:
                    assert not out.refined[v, u]
                    assert out.flow.du[v, u] == flow.du[v, u]
                else:
                    assert out.refined[v, u]
                    assert abs(out.flow.du[v, u] - (flow.du[v, u] + ref[0])) < 1e-10
                    assert abs(out.flow.dv[v, u] - (flow.dv[v, u] + ref[1])) < 1e-10

    def test_translation_equivariance(self):
        rng = np.random.default_rng(3)
        h = w = 12
        sx, sy = 2, 1
        feat_src = rng.normal(size=(4, h, w))
        feat_tgt = rng.normal(size=(4, h, w))
        shifted = np.zeros_like(feat_tgt)
        shifted[:, sy:, sx:] = feat_tgt[:, : h - sy, : w - sx]
        flow = make_flow(rng.uniform(-1, 1, (h, w)), rng.uniform(-1, 1, (h, w)))
        base = refine_flow(flow, feat_src, feat_tgt, RefineConfig())
        moved = refine_flow(
            make_flow(flow.du + sx, flow.dv + sy), feat_src, shifted, RefineConfig()
        )
        # compare where both windows stayed fully inside the respective images
        inner = np.zeros((h, w), dtype=bool)
        inner[5:-5, 5:-5] = True
        ok = inner & base.refined & moved.refined
        assert np.any(ok)
        assert np.allclose(moved.flow.du[ok] - sx, base.flow.du[ok], atol=1e-10)
        assert np.allclose(moved.flow.dv[ok] - sy, base.flow.dv[ok], atol=1e-10)

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(4)
        h = w = 8
        feat_src = rng.normal(size=(3, h, w))
        feat_tgt = rng.normal(size=(3, h, w))
        flow = make_flow(np.zeros((h, w)), np.zeros((h, w)))
        cfg = RefineConfig(temperature=False)
        base = refine_flow(flow, feat_src, feat_tgt, cfg)
        # an extra channel pairing per-pixel constants with all-ones target
        # features adds the same constant to every window logit
        shift = rng.normal(size=(1, h, w)) * 3
        src2 = np.concatenate([feat_src, shift], axis=0)
        tgt2 = np.concatenate([feat_tgt, np.ones((1, h, w))], axis=0)
        out = refine_flow(flow, src2, tgt2, cfg)
        m = base.refined
        assert np.allclose(out.attn[m], base.attn[m], atol=1e-12)
        assert np.allclose(out.flow.du[m], base.flow.du[m], atol=1e-12)

    def test_saturated_softmax_hits_argmax_exactly(self):
        rng = np.random.default_rng(5)
        h = w = 9
        feat_src = rng.normal(size=(3, h, w))
        feat_tgt = rng.normal(size=(3, h, w))
        flow = make_flow(np.zeros((h, w)), np.zeros((h, w)))
        cfg = RefineConfig(temperature=False)
        soft = refine_flow(flow, feat_src, feat_tgt, cfg)
        hard = refine_flow(flow, feat_src * 1e6, feat_tgt, cfg)
        v, u = 4, 4
        amax = np.unravel_index(np.argmax(np.where(soft.attn[v, u] > 0, soft.attn[v, u], -1)), (7, 7))
        assert hard.flow.du[v, u] - flow.du[v, u] == amax[1] - 3
        assert hard.flow.dv[v, u] - flow.dv[v, u] == amax[0] - 3

    def test_window_fully_outside_left_unrefined(self):
        h = w = 8
        feat = np.ones((2, h, w))
        du = np.zeros((h, w))
        du[0, 0] = 100.0  # window lands far outside the target
        flow = make_flow(du, np.zeros((h, w)))
        out = refine_flow(flow, feat, feat, RefineConfig())
        assert not out.refined[0, 0]
        assert out.flow.du[0, 0] == 100.0
        assert np.all(out.attn[0, 0] == 0)

    def test_attention_rows_sum_to_one_where_refined(self):
        rng = np.random.default_rng(6)
        h = w = 10
        feat_src = rng.normal(size=(4, h, w))
        feat_tgt = rng.normal(size=(4, h, w))
        flow = make_flow(rng.uniform(-1, 1, (h, w)), rng.uniform(-1, 1, (h, w)))
        out = refine_flow(flow, feat_src, feat_tgt, RefineConfig())
        sums = np.sum(out.attn, axis=(2, 3))
        assert np.allclose(sums[out.refined], 1.0, atol=1e-12)
        assert np.all(sums[~out.refined] == 0.0)

    def test_invalid_flow_pixels_skipped(self):
        h = w = 6
        valid = np.ones((h, w), dtype=bool)
        valid[2, 2] = False
        du = np.zeros((h, w))
        du[2, 2] = np.nan
        flow = make_flow(du, np.zeros((h, w)), valid)
        feat = np.ones((2, h, w))
        out = refine_flow(flow, feat, feat, RefineConfig())
        assert not out.refined[2, 2]
        assert not out.flow.validity[2, 2]

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            RefineConfig(window=4)
        with pytest.raises(ValueError):
            RefineConfig(window=3, bias_offset=(5, 0))

    def test_rejects_channel_mismatch(self):
        flow = make_flow(np.zeros((4, 4)), np.zeros((4, 4)))
        with pytest.raises(ValueError):
            refine_flow(flow, np.ones((2, 4, 4)), np.ones((3, 4, 4)))
