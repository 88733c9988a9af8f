"""Pair-quality filters: exposure, covisible fraction, and solvability.

The solvability check warps the target image back to the source with the
ground-truth flow; a matchable pair should then produce near-zero residual
displacements. The built-in matcher runs ZNCC template matching on a
sparse grid of high-gradient patches; any callable with the same signature
can replace it (e.g. a learned matcher).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .warp import warp_backward

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _luma(image):
    image = np.asarray(image)
    if image.ndim == 2:
        return image.astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    return r * image[..., 0] + g * image[..., 1] + b * image[..., 2]


@dataclass(frozen=True)
class ExposureReport:
    passed: bool
    fraction: float  # combined over- and under-exposed fraction


def exposure_filter(image, over_thresh=250, under_thresh=5, max_frac=0.10):
    """Fail when more than max_frac of pixels are blown out or crushed (strictly above)."""
    luma = _luma(image)
    frac = float(np.mean(luma <= under_thresh) + np.mean(luma >= over_thresh))
    return ExposureReport(frac <= max_frac, frac)


@dataclass(frozen=True)
class CovisFractionReport:
    passed: bool
    forward_fraction: float
    backward_fraction: float


def covis_fraction_filter(fwd, bwd, min_frac=0.20):
    """Require at least min_frac covisible pixels in both directions."""
    f = fwd.covis_fraction()
    b = bwd.covis_fraction()
    return CovisFractionReport(f >= min_frac and b >= min_frac, f, b)


@dataclass(frozen=True)
class SolvabilityReport:
    passed: bool
    mean_error_px: float
    n_matches: int
    reason: str = ""


def _gradient_magnitude(luma):
    gy, gx = np.gradient(luma)
    return np.hypot(gx, gy)


def zncc_grid_matcher(src, tgt, mask=None, grid=16, patch=15, search_radius=8, min_zncc=0.5):
    """ZNCC template matching on a sparse grid of textured patches.

    Picks the highest-gradient pixel in each grid cell of `src` (within the
    mask), matches its patch against `tgt` in a local search window, and
    returns matches as rows (x_src, y_src, x_tgt, y_tgt).
    """
    src_l = _luma(src)
    tgt_l = _luma(tgt)
    h, w = src_l.shape
    half = patch // 2
    margin = half + search_radius
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    grad = _gradient_magnitude(src_l)
    usable = mask.copy()
    usable[:margin, :] = False
    usable[-margin:, :] = False
    usable[:, :margin] = False
    usable[:, -margin:] = False

    matches = []
    ys = np.linspace(0, h, grid + 1).astype(int)
    xs = np.linspace(0, w, grid + 1).astype(int)
    for gy in range(grid):
        for gx in range(grid):
            cell = (slice(ys[gy], ys[gy + 1]), slice(xs[gx], xs[gx + 1]))
            cell_grad = np.where(usable[cell], grad[cell], -1.0)
            if cell_grad.size == 0 or cell_grad.max() <= 1e-6:
                continue
            dy, dx = np.unravel_index(int(np.argmax(cell_grad)), cell_grad.shape)
            cy, cx = ys[gy] + dy, xs[gx] + dx
            template = src_l[cy - half : cy + half + 1, cx - half : cx + half + 1]
            tstd = template.std()
            if tstd <= 1e-9:
                continue
            tnorm = (template - template.mean()) / tstd
            region = tgt_l[
                cy - half - search_radius : cy + half + search_radius + 1,
                cx - half - search_radius : cx + half + search_radius + 1,
            ]
            windows = np.lib.stride_tricks.sliding_window_view(region, (patch, patch))
            mu = windows.mean(axis=(2, 3), keepdims=True)
            sd = windows.std(axis=(2, 3))
            sdsafe = np.where(sd > 1e-9, sd, np.inf)
            scores = np.einsum("ijkl,kl->ij", windows - mu, tnorm) / (sdsafe * tnorm.size)
            best = np.unravel_index(int(np.argmax(scores)), scores.shape)
            if scores[best] < min_zncc:
                continue
            off_y = best[0] - search_radius
            off_x = best[1] - search_radius
            matches.append((float(cx), float(cy), float(cx + off_x), float(cy + off_y)))
    return np.array(matches, dtype=np.float64).reshape(-1, 4)


def solvability_check(src_image, tgt_image, gt, matcher=None, max_err=6.0, min_matches=8):
    """Warp the target by the ground-truth flow and verify it matches the source.

    Matches with displacement averaging below max_err pass; fewer than
    min_matches usable matches fail as untextured.
    """
    warped = warp_backward(tgt_image, gt.flow, gt.covis)
    matcher = matcher or zncc_grid_matcher
    matches = matcher(src_image, warped, gt.covis)
    if len(matches) < min_matches:
        return SolvabilityReport(False, float("nan"), len(matches), "untextured")
    disp = np.hypot(matches[:, 2] - matches[:, 0], matches[:, 3] - matches[:, 1])
    mean_err = float(np.mean(disp))
    return SolvabilityReport(mean_err < max_err, mean_err, len(matches))


@dataclass(frozen=True)
class FilterReport:
    """All pair-quality measurements and verdicts for one candidate pair."""

    exposure_frac_src: float
    exposure_frac_tgt: float
    covis_frac_fwd: float
    covis_frac_bwd: float
    solvability_error_px: float
    solvability_matches: int
    exposure_passed: bool
    covis_passed: bool
    solvability_passed: bool

    @property
    def passed(self):
        return self.exposure_passed and self.covis_passed and self.solvability_passed


def evaluate_pair(src_image, tgt_image, fwd, bwd, matcher=None, min_frac=0.20, max_err=6.0):
    """Run the full filter stack on one pair and bundle the verdicts."""
    exp_src = exposure_filter(src_image)
    exp_tgt = exposure_filter(tgt_image)
    cov = covis_fraction_filter(fwd, bwd, min_frac)
    sol = solvability_check(src_image, tgt_image, fwd, matcher, max_err)
    return FilterReport(
        exposure_frac_src=exp_src.fraction,
        exposure_frac_tgt=exp_tgt.fraction,
        covis_frac_fwd=cov.forward_fraction,
        covis_frac_bwd=cov.backward_fraction,
        solvability_error_px=sol.mean_error_px,
        solvability_matches=sol.n_matches,
        exposure_passed=exp_src.passed and exp_tgt.passed,
        covis_passed=cov.passed,
        solvability_passed=sol.passed,
    )
