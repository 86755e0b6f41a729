"""3D pose evaluation: MPJPE, Procrustes alignment, PA-MPJPE, PCK, AUC.

All distances are Euclidean per joint in millimeters. PCK counts joints
with error strictly below a threshold (150mm by default); AUC averages PCK
over thresholds 0..150mm in 5mm steps (31 points, so exact predictions
score 30/31 of 100 because the 0mm threshold admits nothing).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import check_array, check_same_shape

PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = tuple(float(t) for t in range(0, 151, 5))


@dataclass(frozen=True)
class EvalReport:
    """Aggregate pose metrics, optionally broken down by action tag."""

    mpjpe_mm: float
    pa_mpjpe_mm: float
    pck_percent: float
    auc_percent: float
    per_action: dict[str, dict[str, float]] | None = None

    def to_dict(self) -> dict:
        out = {
            "mpjpe": self.mpjpe_mm,
            "pa_mpjpe": self.pa_mpjpe_mm,
            "pck": self.pck_percent,
            "auc": self.auc_percent,
        }
        if self.per_action is not None:
            out["per_action"] = self.per_action
        return out


def _joint_distances(pred, target) -> np.ndarray:
    pred = check_array(pred, "pred")
    target = check_array(target, "target")
    check_same_shape(pred, target, "pred", "target")
    return np.linalg.norm(pred - target, axis=-1)


def mpjpe(pred, target) -> float:
    """Mean per-joint Euclidean distance over samples and joints."""
    return float(_joint_distances(pred, target).mean())


def procrustes_align(pred, target):
    """Optimal similarity transform of ``pred`` onto ``target``.

    Finds scale ``s``, proper rotation ``R`` (reflections excluded via the
    SVD determinant correction), and translation ``t`` minimizing
    ``sum_j || s * pred_j @ R + t - target_j ||^2``.

    Returns:
        ``(scale, rotation, translation, aligned)`` with ``aligned`` equal
        to ``s * pred @ R + t``.

    Raises:
        ValueError: if ``pred`` is degenerate (all points coincident).
    """
    pred = check_array(pred, "pred", shape=(None, 3))
    target = check_array(target, "target", shape=(None, 3))
    check_same_shape(pred, target, "pred", "target")
    mu_p = pred.mean(axis=0)
    mu_t = target.mean(axis=0)
    p = pred - mu_p
    t = target - mu_t
    p_norm_sq = float(np.sum(p * p))
    if p_norm_sq == 0.0:
        raise ValueError("cannot align a degenerate pose (all points coincident)")
    u, sing, vt = np.linalg.svd(p.T @ t)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0.0:
        d = 1.0
    flip = np.ones(3)
    flip[-1] = d
    rotation = u @ np.diag(flip) @ vt
    scale = float(np.sum(sing * flip)) / p_norm_sq
    translation = mu_t - scale * mu_p @ rotation
    aligned = scale * pred @ rotation + translation
    return scale, rotation, translation, aligned


def pa_mpjpe(pred, target) -> float:
    """MPJPE after per-sample Procrustes alignment, averaged over samples."""
    pred = check_array(pred, "pred")
    target = check_array(target, "target")
    check_same_shape(pred, target, "pred", "target")
    if pred.ndim == 2:
        pred = pred[None]
        target = target[None]
    per_sample = []
    for sample_pred, sample_target in zip(pred, target):
        _, _, _, aligned = procrustes_align(sample_pred, sample_target)
        per_sample.append(mpjpe(aligned, sample_target))
    return float(np.mean(per_sample))


def pck_auc(pred, target, threshold_mm: float = PCK_THRESHOLD_MM) -> tuple[float, float]:
    """Percentage of joints with error below the threshold, plus the AUC.

    AUC is the mean PCK over the fixed 0..150mm sweep in 5mm steps, using
    strict inequality at every threshold.
    """
    if not threshold_mm > 0:
        raise ValueError(f"threshold must be positive, got {threshold_mm}")
    distances = _joint_distances(pred, target).ravel()
    pck = 100.0 * float(np.mean(distances < threshold_mm))
    auc = float(np.mean([np.mean(distances < t) for t in AUC_THRESHOLDS_MM])) * 100.0
    return pck, auc


def evaluate(pred, target, actions: list[str] | None = None,
             threshold_mm: float = PCK_THRESHOLD_MM) -> EvalReport:
    """All four metrics over a batch, with an optional per-action table."""
    pred = check_array(pred, "pred", ndim=3)
    target = check_array(target, "target", ndim=3)
    check_same_shape(pred, target, "pred", "target")
    pck, auc = pck_auc(pred, target, threshold_mm)
    per_action = None
    if actions is not None:
        if len(actions) != pred.shape[0]:
            raise ValueError(f"{len(actions)} action tags for {pred.shape[0]} samples")
        per_action = {}
        for tag in sorted(set(a for a in actions if a is not None)):
            idx = [i for i, a in enumerate(actions) if a == tag]
            sub_pred, sub_target = pred[idx], target[idx]
            sub_pck, sub_auc = pck_auc(sub_pred, sub_target, threshold_mm)
            per_action[tag] = {
                "mpjpe": mpjpe(sub_pred, sub_target),
                "pa_mpjpe": pa_mpjpe(sub_pred, sub_target),
                "pck": sub_pck,
                "auc": sub_auc,
                "count": len(idx),
            }
    return EvalReport(
        mpjpe_mm=mpjpe(pred, target),
        pa_mpjpe_mm=pa_mpjpe(pred, target),
        pck_percent=pck,
        auc_percent=auc,
        per_action=per_action,
    )


def format_per_action_table(report: EvalReport) -> str:
    """Aligned plain-text table of the per-action metrics."""
    if not report.per_action:
        return ""
    header = f"{'Action':<16}{'MPJPE':>10}{'PA-MPJPE':>12}{'PCK':>8}{'AUC':>8}{'Count':>8}"
    lines = [header, "-" * len(header)]
    for tag, row in report.per_action.items():
        lines.append(
            f"{tag:<16}{row['mpjpe']:>10.2f}{row['pa_mpjpe']:>12.2f}"
            f"{row['pck']:>8.2f}{row['auc']:>8.2f}{row['count']:>8d}"
        )
    lines.append(
        f"{'All':<16}{report.mpjpe_mm:>10.2f}{report.pa_mpjpe_mm:>12.2f}"
        f"{report.pck_percent:>8.2f}{report.auc_percent:>8.2f}"
        f"{sum(r['count'] for r in report.per_action.values()):>8d}"
    )
    return "\n".join(lines)
