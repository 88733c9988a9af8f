"""Flow and pose evaluation: AEPE, outlier rates, KITTI-style F1, pose AUC.

Pose errors are consumed, not estimated: a sample carries precomputed
angular errors in degrees (rotation angle and translation-direction angle)
and the curves integrate max(rotation, translation) recall.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EvalMask:
    """Boolean evaluation domain; kind is bookkeeping for reports."""

    mask: np.ndarray
    kind: str = "external"  # covisible | all | external


@dataclass
class MetricRow:
    """Per-pair (or per-dataset) flow metrics."""

    label: str
    aepe: float
    outliers: dict  # threshold (px) -> fraction with EPE strictly above
    pixel_count: int
    f1: float | None = None


@dataclass(frozen=True)
class PoseErrorSample:
    rotation_error: float  # degrees
    translation_angle_error: float  # degrees

    def __post_init__(self):
        if self.rotation_error < 0 or self.translation_angle_error < 0:
            raise ValueError("pose errors must be non-negative")

    @property
    def max_error(self):
        return max(self.rotation_error, self.translation_angle_error)


def _epe_values(pred, gt, mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape or mask.shape != gt.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}"
        )
    eff = mask & pred.validity & gt.validity
    if not np.any(eff):
        raise ValueError("evaluation mask selects no valid pixels")
    eu = pred.du[eff] - gt.du[eff]
    ev = pred.dv[eff] - gt.dv[eff]
    return np.sqrt(eu * eu + ev * ev), eff


def aepe(pred, gt, mask):
    """Mean end-point error over the mask (restricted to valid pixels)."""
    epe, _ = _epe_values(pred, gt, mask)
    return float(np.sum(epe) / epe.size)


def outlier_rates(pred, gt, mask, thresholds=(1.0, 2.0, 5.0)):
    """Fraction of masked pixels with EPE strictly above each threshold."""
    thresholds = tuple(float(t) for t in thresholds)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError(f"thresholds must be ascending, got {thresholds}")
    epe, _ = _epe_values(pred, gt, mask)
    return {t: float(np.count_nonzero(epe > t) / epe.size) for t in thresholds}


def kitti_f1(pred, gt, mask):
    """Fraction of pixels with EPE > 3 px and EPE > 5% of the true flow magnitude."""
    epe, eff = _epe_values(pred, gt, mask)
    mag = np.sqrt(gt.du[eff] * gt.du[eff] + gt.dv[eff] * gt.dv[eff])
    bad = (epe > 3.0) & (epe > 0.05 * mag)
    return float(np.count_nonzero(bad) / epe.size)


def pose_auc(errors, max_thresholds):
    """Normalized area under the cumulative pose-error recall curve.

    For each threshold tau, integrates the right-continuous step function
    recall(t) = #(max_error <= t) / N exactly over [0, tau] and divides by
    tau. Returns {tau: auc}.
    """
    if len(errors) == 0:
        raise ValueError("pose_auc needs at least one error sample")
    vals = np.sort(np.array([s.max_error for s in errors], dtype=np.float64))
    n = vals.size
    out = {}
    for tau in max_thresholds:
        tau = float(tau)
        if tau <= 0:
            raise ValueError(f"thresholds must be positive, got {tau}")
        knots = vals[vals <= tau]
        ts = np.concatenate([knots, [tau]])
        prev = np.concatenate([[0.0], knots])
        recall_before = np.arange(knots.size + 1) / n
        out[tau] = float(np.sum((ts - prev) * recall_before) / tau)
    return out


def metric_row(pred, gt, mask, thresholds=(1.0, 2.0, 5.0), label="", with_f1=False):
    """Convenience bundle: AEPE + outliers (+ optional F1) as one MetricRow."""
    epe, _ = _epe_values(pred, gt, mask)
    row = MetricRow(
        label=label,
        aepe=float(np.sum(epe) / epe.size),
        outliers={float(t): float(np.count_nonzero(epe > t) / epe.size) for t in thresholds},
        pixel_count=int(epe.size),
        f1=kitti_f1(pred, gt, mask) if with_f1 else None,
    )
    return row


@dataclass
class EvalReport:
    per_dataset: dict
    overall: dict | None
    aggregate: str
    rows: list = field(default_factory=list)

    @property
    def empty(self):
        return self.overall is None

    def to_records(self):
        """Flat key=value lines, machine-parsable."""
        lines = [f"aggregate={self.aggregate}"]
        if self.empty:
            lines.append("status=no-pairs")
            return lines
        lines.append("status=ok")
        for name, stats in sorted(self.per_dataset.items()):
            for key, value in stats.items():
                lines.append(f"{name}.{key}={value:.10g}")
        for key, value in self.overall.items():
            lines.append(f"overall.{key}={value:.10g}")
        return lines

    def to_text(self):
        if self.empty:
            return "no pairs evaluated\n"
        names = sorted(self.per_dataset)
        keys = list(next(iter(self.per_dataset.values())).keys())
        header = ["dataset"] + keys
        widths = [max(len(h), 12) for h in header]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines = [fmt.format(*header)]
        for name in names:
            stats = self.per_dataset[name]
            lines.append(fmt.format(name, *[f"{stats[k]:.6g}" for k in keys]))
        lines.append(fmt.format("overall", *[f"{self.overall[k]:.6g}" for k in keys]))
        return "\n".join(lines) + "\n"


def eval_report(rows, aggregate="pair"):
    """Aggregate MetricRows per dataset label, pair- or pixel-weighted."""
    if aggregate not in ("pair", "pixel"):
        raise ValueError(f"aggregate must be 'pair' or 'pixel', got {aggregate!r}")
    rows = list(rows)
    if not rows:
        return EvalReport({}, None, aggregate)

    def summarize(group):
        weights = np.array(
            [1.0 if aggregate == "pair" else float(r.pixel_count) for r in group]
        )
        weights = weights / np.sum(weights)
        stats = {"pairs": float(len(group)), "pixels": float(sum(r.pixel_count for r in group))}
        stats["aepe"] = float(np.sum(weights * np.array([r.aepe for r in group])))
        for t in group[0].outliers:
            stats[f"outlier_{t:g}px"] = float(
                np.sum(weights * np.array([r.outliers[t] for r in group]))
            )
        if all(r.f1 is not None for r in group):
            stats["f1"] = float(np.sum(weights * np.array([r.f1 for r in group])))
        return stats

    by_dataset = {}
    for row in rows:
        by_dataset.setdefault(row.label or "unlabeled", []).append(row)
    per_dataset = {name: summarize(group) for name, group in by_dataset.items()}
    overall = summarize(rows)
    return EvalReport(per_dataset, overall, aggregate, rows)
