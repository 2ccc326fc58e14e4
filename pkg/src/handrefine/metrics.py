"""Reconstruction metrics: Procrustes alignment, MPVE, F-score, PCK AUC, mask IoU."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

MASK_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points):
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"point set size mismatch: {a.shape} vs {b.shape}")
    return a, b


def procrustes_align(source, target):
    """Least-squares similarity transform (Umeyama) mapping source onto target."""
    source, target = _pair(source, target)
    if source.shape[0] < 3:
        raise ValueError("procrustes_align needs at least 3 points")
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    xs = source - mu_s
    xt = target - mu_t
    sv_src = np.linalg.svd(xs, compute_uv=False)
    if sv_src[1] <= 1e-12 * max(sv_src[0], 1e-300):
        raise ValueError("degenerate configuration: source points are collinear")
    cov = xt.T @ xs / source.shape[0]
    U, d, Vt = np.linalg.svd(cov)
    if np.sum(d > 1e-12 * max(d[0], 1e-300)) < 2:
        raise ValueError("degenerate configuration: covariance rank < 2")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_s = np.sum(xs * xs) / source.shape[0]
    scale = float(np.sum(d * np.diag(S)) / var_s)
    t = mu_t - scale * R @ mu_s
    tf = SimilarityTransform(scale, R, t)
    return tf, tf.apply(source)


def mpve(pred, gt, aligned: bool = False) -> float:
    """Mean per-vertex Euclidean error in millimeters (inputs in meters)."""
    pred, gt = _pair(pred, gt)
    if aligned:
        pred = procrustes_align(pred, gt)[1]
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)) * 1000.0)


def fscore(pred, gt, threshold_mm: float) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if pred.shape[0] == 0 or gt.shape[0] == 0:
        raise ValueError("fscore needs non-empty point sets")
    thr = threshold_mm / 1000.0
    d_pred = cKDTree(gt).query(pred)[0]
    d_gt = cKDTree(pred).query(gt)[0]
    precision = float(np.mean(d_pred <= thr))
    recall = float(np.mean(d_gt <= thr))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def pck_curve(pred, gt, max_threshold_mm: float = 50.0, steps: int = 100):
    pred, gt = _pair(pred, gt)
    if steps < 2:
        raise ValueError("steps must be >= 2")
    err = np.linalg.norm(pred - gt, axis=1) * 1000.0
    thresholds = np.linspace(0.0, max_threshold_mm, steps)
    pck = np.mean(err[None, :] <= thresholds[:, None], axis=1)
    return thresholds, pck


def pck_auc(pred, gt, max_threshold_mm: float = 50.0, steps: int = 100) -> float:
    thresholds, pck = pck_curve(pred, gt, max_threshold_mm, steps)
    return float(np.trapezoid(pck, thresholds) / max_threshold_mm)


def _masks(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mask size mismatch: {a.shape} vs {b.shape}")
    if a.dtype != bool:
        a = a > MASK_THRESHOLD
    if b.dtype != bool:
        b = b > MASK_THRESHOLD
    return a, b


def mask_iou(a, b) -> float:
    """Intersection over union; non-boolean inputs are thresholded at 0.5."""
    a, b = _masks(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def pixel_accuracy(a, b) -> float:
    a, b = _masks(a, b)
    return float(np.mean(a == b))
