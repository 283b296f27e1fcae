"""Evaluation metrics: normalized mean error, error distributions, occlusion
precision/recall, and aggregate reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .shapes import as_points
from .textio import atomic_write_text, dumps_document

REPORT_FORMAT = "eval-report"
REPORT_VERSION = 1


def _paired(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = as_points(pred)
    t = as_points(truth)
    if p.shape != t.shape:
        raise ValueError(f"landmark counts differ: {p.shape[0]} vs {t.shape[0]}")
    return p, t


def landmark_errors(pred, truth) -> np.ndarray:
    """Per-landmark Euclidean errors in pixels."""
    p, t = _paired(pred, truth)
    return np.linalg.norm(p - t, axis=1)


def nme(pred, truth, normalizer: float, mask=None) -> float:
    """Mean landmark error over the masked (visible) landmarks, divided by
    the face-scale distance ``normalizer``.
    """
    if normalizer <= 0:
        raise ValueError("normalizer must be positive")
    errors = landmark_errors(pred, truth)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != errors.shape:
            raise ValueError("mask must have one entry per landmark")
        errors = errors[mask]
    if errors.size == 0:
        raise ValueError("no landmarks selected for evaluation")
    return float(errors.mean() / normalizer)


def mean_pixel_error(pred, truth, mask=None) -> float:
    """Mean landmark error in pixels (the per-image term of MAPE)."""
    errors = landmark_errors(pred, truth)
    if mask is not None:
        errors = errors[np.asarray(mask, dtype=bool)]
    if errors.size == 0:
        raise ValueError("no landmarks selected for evaluation")
    return float(errors.mean())


# -- face-scale normalizers ---------------------------------------------------


def group_distance(points, group_a, group_b) -> float:
    """Distance between the centroids of two landmark groups.

    With singleton groups this is the plain landmark distance (outer eye
    corners); with full eye rings it estimates the inter-pupil distance.
    """
    pts = as_points(points)
    a = pts[np.asarray(group_a, dtype=int)].mean(axis=0)
    b = pts[np.asarray(group_b, dtype=int)].mean(axis=0)
    return float(np.linalg.norm(a - b))


def bbox_scale(points) -> float:
    """Square root of the tight bounding-box area."""
    pts = as_points(points)
    extent = pts.max(axis=0) - pts.min(axis=0)
    return float(np.sqrt(extent[0] * extent[1]))


# -- error distributions -------------------------------------------------------


@dataclass(frozen=True)
class CedCurve:
    thresholds: np.ndarray
    fractions: np.ndarray


def ced_auc(errors, cutoff: float, samples: int = 1000) -> tuple[CedCurve, float, float]:
    """Cumulative error distribution on a uniform threshold grid.

    Returns the sampled curve, the trapezoidal area under it normalized by
    the cutoff, and the failure rate (fraction of errors above the cutoff).
    """
    errs = np.asarray(errors, dtype=float).ravel()
    if errs.size == 0:
        raise ValueError("no errors to evaluate")
    if np.any(errs < 0) or not np.all(np.isfinite(errs)):
        raise ValueError("errors must be finite and non-negative")
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    if samples < 2:
        raise ValueError("need at least 2 samples")
    thresholds = np.linspace(0.0, cutoff, samples)
    fractions = np.mean(errs[None, :] <= thresholds[:, None], axis=1)
    auc = float(np.trapezoid(fractions, thresholds) / cutoff)
    failure = float(np.mean(errs > cutoff))
    return CedCurve(thresholds, fractions), auc, failure


# -- occlusion prediction -------------------------------------------------------


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    precision: float
    recall: float


def occlusion_pr(
    weights, truth_occluded, thresholds=None
) -> tuple[list[PrPoint], PrPoint | None]:
    """Precision/recall of occlusion-by-low-confidence over a threshold sweep.

    A landmark is predicted occluded when its weight falls below the
    threshold. Alongside the sweep, returns the point whose precision is
    closest to 0.80 from above (highest-recall such point), or None when no
    threshold reaches that precision or the truth has no occlusions.
    """
    w = np.asarray(weights, dtype=float).ravel()
    occ = np.asarray(truth_occluded, dtype=bool).ravel()
    if w.shape != occ.shape:
        raise ValueError("weights and truth flags must align")
    if np.any((w < 0) | (w > 1)):
        raise ValueError("weights must lie in [0, 1]")
    if thresholds is None:
        thresholds = np.unique(np.concatenate([w, [0.0, 1.0]]))
        # predicted set is (w < t); nudge above each weight so it flips
        thresholds = np.unique(np.concatenate([thresholds, np.nextafter(thresholds, 2.0)]))
    points = []
    any_occluded = bool(occ.any())
    for t in np.asarray(thresholds, dtype=float):
        predicted = w < t
        true_pos = int(np.sum(predicted & occ))
        precision = true_pos / predicted.sum() if predicted.any() else float("nan")
        recall = true_pos / occ.sum() if any_occluded else float("nan")
        points.append(PrPoint(float(t), float(precision), float(recall)))
    if not any_occluded:
        return points, None
    admissible = [p for p in points if np.isfinite(p.precision) and p.precision >= 0.80]
    if not admissible:
        return points, None
    best_precision = min(p.precision for p in admissible)
    candidates = [p for p in admissible if p.precision == best_precision]
    operating = max(candidates, key=lambda p: p.recall)
    return points, operating


# -- aggregate report -----------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    per_image_nme: np.ndarray
    mean_nme: float
    mape: float
    ced: CedCurve
    auc: float
    failure_rate: float
    cutoff: float
    occlusion_precision: float | None = None
    occlusion_recall: float | None = None
    occlusion_threshold: float | None = None


def build_report(
    pred_shapes,
    truth_shapes,
    normalizers,
    masks=None,
    cutoff: float = 0.08,
    samples: int = 1000,
    weights=None,
    truth_occluded=None,
) -> EvalReport:
    """Aggregate per-image metrics into one report.

    ``normalizers`` holds one face-scale distance per image. Occlusion
    precision/recall is included when per-landmark ``weights`` and ground
    truth flags are supplied, pooled over all images.
    """
    count = len(pred_shapes)
    if count == 0 or len(truth_shapes) != count or len(normalizers) != count:
        raise ValueError("predictions, truths, and normalizers must align")
    if masks is None:
        masks = [None] * count
    nmes = np.array(
        [nme(p, t, d, m) for p, t, d, m in zip(pred_shapes, truth_shapes, normalizers, masks)]
    )
    pixel = np.array(
        [mean_pixel_error(p, t, m) for p, t, m in zip(pred_shapes, truth_shapes, masks)]
    )
    curve, auc, failure = ced_auc(nmes, cutoff, samples)

    precision = recall = threshold = None
    if weights is not None and truth_occluded is not None:
        pooled_w = np.concatenate([np.asarray(w, dtype=float).ravel() for w in weights])
        pooled_o = np.concatenate([np.asarray(o, dtype=bool).ravel() for o in truth_occluded])
        _, operating = occlusion_pr(pooled_w, pooled_o)
        if operating is not None:
            precision, recall, threshold = operating.precision, operating.recall, operating.threshold

    return EvalReport(
        per_image_nme=nmes,
        mean_nme=float(nmes.mean()),
        mape=float(pixel.mean()),
        ced=curve,
        auc=auc,
        failure_rate=failure,
        cutoff=cutoff,
        occlusion_precision=precision,
        occlusion_recall=recall,
        occlusion_threshold=threshold,
    )


def save_report(report: EvalReport, path) -> None:
    doc = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "mean_nme": report.mean_nme,
        "mape_px": report.mape,
        "auc": report.auc,
        "failure_rate": report.failure_rate,
        "cutoff": report.cutoff,
        "n_images": int(report.per_image_nme.size),
        "per_image_nme": report.per_image_nme.tolist(),
        "occlusion_precision": report.occlusion_precision,
        "occlusion_recall": report.occlusion_recall,
        "occlusion_threshold": report.occlusion_threshold,
    }
    atomic_write_text(path, dumps_document(doc))


def format_ced_table(curve: CedCurve) -> str:
    lines = ["threshold\tfraction"]
    lines += [
        f"{format(t, '.17g')}\t{format(f, '.17g')}"
        for t, f in zip(curve.thresholds, curve.fractions)
    ]
    return "\n".join(lines) + "\n"
