"""Evaluation metrics for oriented-box predictions.

Per-pair quantities (IoU, IoG, F1, dimension/rotation/center errors), the
containment-versus-quantile curve, and uncertainty-quality statistics
(Mann-Whitney ROC AUC, Spearman rank correlation).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata, spearmanr

from .boxes import BoxParams, SymmetryMode, enumerate_equivalent_params
from . import geometry

__all__ = [
    "EvalPair",
    "MetricsReport",
    "f1",
    "err_dim",
    "err_quat",
    "err_center",
    "compute_report",
    "containment_curve",
    "uncertainty_quality",
    "gaussian_uncertainty",
]


@dataclass(frozen=True)
class EvalPair:
    pred: BoxParams
    gt: BoxParams
    method: str = ""
    score: float = None  # optional uncertainty score
    symmetry: SymmetryMode = SymmetryMode.NONE


@dataclass(frozen=True)
class MetricsReport:
    mean_iou: float
    mean_iog: float
    f1: float
    err_dim: float
    err_quat: float
    err_center: float
    rows: tuple = field(default=(), repr=False)
    containment: tuple = None  # optional ((q, f), ...)
    roc_auc: float = None
    spearman_r: float = None

    def to_json_dict(self):
        return {
            "mean_iou": self.mean_iou,
            "mean_iog": self.mean_iog,
            "f1": self.f1,
            "err_dim": self.err_dim,
            "err_quat": self.err_quat,
            "err_center": self.err_center,
            "containment": list(self.containment) if self.containment else None,
            "roc_auc": self.roc_auc,
            "spearman_r": self.spearman_r,
        }


def f1(iou_value, iog_value):
    """Harmonic mean of IoU and IoG; 0 when both vanish."""
    if iou_value < 0 or iou_value > 1 or iog_value < 0 or iog_value > 1:
        raise ValueError("iou and iog must be in [0, 1]")
    if iou_value + iog_value == 0.0:
        return 0.0
    return 2.0 * iou_value * iog_value / (iou_value + iog_value)


def err_dim(dims, dims_gt):
    """Minimum over axis permutations of the summed absolute dims error (m)."""
    dims = np.asarray(dims, dtype=float)
    dims_gt = np.asarray(dims_gt, dtype=float)
    if np.any(dims <= 0) or np.any(dims_gt <= 0):
        raise ValueError("dims must be positive")
    return min(
        float(np.abs(dims[list(perm)] - dims_gt).sum())
        for perm in itertools.permutations(range(3))
    )


def _self_symmetry_quaternions(gt_rot, mode, dims):
    """Quaternions of rotations mapping a box with these dims onto itself."""
    box = BoxParams(dims, (0.0, 0.0, 0.0), gt_rot)
    members = enumerate_equivalent_params(box, mode)
    dims_arr = np.asarray(box.canonical().dims)
    quats = []
    for member in members:
        if np.allclose(np.asarray(member.dims), dims_arr, rtol=1e-9, atol=1e-9):
            quats.append(member.quaternion())
    return quats


def err_quat(quat, quat_gt, mode=SymmetryMode.NONE, dims=(1.0, 2.0, 4.0), gt_rot=None):
    """Rotation error 2 arccos(|<q, q_gt>|), minimized over the box's symmetries.

    The symmetry set is derived from the ground-truth dims: only relabelings
    that leave the dims unchanged (true self-symmetries, e.g. the 90-degree
    yaw of a square footprint) are considered.  `dims` defaults to a generic
    triple, which leaves only the 180-degree flips.
    """
    q = np.asarray(quat.as_array() if hasattr(quat, "as_array") else quat, dtype=float)
    if gt_rot is None:
        qg = np.asarray(quat_gt.as_array() if hasattr(quat_gt, "as_array") else quat_gt)
        gt_candidates = [qg]
        if mode is not SymmetryMode.NONE:
            from .boxes import matrix_to_euler_zyx

            rot_mat = _quat_to_matrix(qg)
            gt_rot_angles = matrix_to_euler_zyx(rot_mat)
            gt_candidates = [s.as_array() for s in _self_symmetry_quaternions(gt_rot_angles, mode, dims)]
    else:
        gt_candidates = [s.as_array() for s in _self_symmetry_quaternions(gt_rot, mode, dims)]
    best = math.pi
    for cand in gt_candidates:
        dot = abs(float(np.dot(q, np.asarray(cand))))
        best = min(best, 2.0 * math.acos(min(dot, 1.0)))
    return best


def _quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def err_center(center, center_gt):
    """Euclidean distance between the box centers (m)."""
    diff = np.asarray(center, dtype=float) - np.asarray(center_gt, dtype=float)
    if not np.all(np.isfinite(diff)):
        raise ValueError("centers must be finite")
    return float(np.linalg.norm(diff))


def _pair_row(pair, index=0):
    iou_v = geometry.iou(pair.pred, pair.gt)
    iog_v = geometry.iog(pair.pred, pair.gt)
    return {
        "id": index,
        "method": pair.method,
        "iou": iou_v,
        "iog": iog_v,
        "f1": f1(iou_v, iog_v),
        "err_dim": err_dim(pair.pred.dims, pair.gt.dims),
        "err_quat": err_quat(
            pair.pred.quaternion(),
            pair.gt.quaternion(),
            pair.symmetry,
            dims=pair.gt.dims,
            gt_rot=pair.gt.rot,
        ),
        "err_center": err_center(pair.pred.center, pair.gt.center),
        "score": pair.score,
    }


def compute_report(pairs, containment=None, roc_auc=None, spearman_r=None):
    """Aggregate per-object metrics into a MetricsReport."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one pair")
    rows = tuple(_pair_row(p, i) for i, p in enumerate(pairs))
    mean = lambda key: float(np.mean([r[key] for r in rows]))
    return MetricsReport(
        mean_iou=mean("iou"),
        mean_iog=mean("iog"),
        f1=mean("f1"),
        err_dim=mean("err_dim"),
        err_quat=mean("err_quat"),
        err_center=mean("err_center"),
        rows=rows,
        containment=tuple(containment) if containment else None,
        roc_auc=roc_auc,
        spearman_r=spearman_r,
    )


def containment_curve(pairs_by_q, iog_threshold=0.95):
    """f(q): fraction of predictions whose IoG with the gt exceeds the threshold."""
    curve = []
    for q in sorted(pairs_by_q):
        pairs = pairs_by_q[q]
        if not pairs:
            raise ValueError(f"no pairs for quantile {q}")
        hits = sum(1 for p in pairs if geometry.iog(p.pred, p.gt) > iog_threshold)
        curve.append((float(q), hits / len(pairs)))
    return curve


def uncertainty_quality(scores, pairs, iou_threshold=0.25):
    """(ROC AUC, Spearman r_s) of an uncertainty score against ground-truth IoU.

    AUC is the Mann-Whitney rank statistic for predicting IoU below the
    threshold, with average-rank tie handling; it is None when only one class
    is present.
    """
    scores = np.asarray(scores, dtype=float)
    ious = np.array([geometry.iou(p.pred, p.gt) for p in pairs])
    if len(scores) != len(ious) or len(scores) < 2:
        raise ValueError("need matching scores and >= 2 pairs")
    labels = ious < iou_threshold
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        auc = None
    else:
        ranks = rankdata(scores)  # average ranks on ties
        auc = (ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    rho = spearmanr(scores, ious).statistic
    return auc, float(rho)


def gaussian_uncertainty(model, ctx):
    """Gaussian dimension-variance score: product of sigmas over product of means."""
    mu, sigma = model.dims_moments(ctx)
    if np.any(mu <= 0.0):
        raise ValueError("non-positive dimension mean")
    return float(np.prod(sigma) / np.prod(mu))
