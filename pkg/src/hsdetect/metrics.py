"""Threshold-independent evaluation: ROC/AUC, PR/AP, and confusion counts.

Tied scores are grouped: the threshold set is the set of distinct score
values, so normalized maps with massive ties at 0 produce one curve point
per tie group rather than one per pixel. With this grouping the trapezoidal
AUC equals the Mann-Whitney statistic with ties counted 0.5, and AP is the
step sum of precision over recall increments (no interpolation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .envi_io import atomic_write_text
from .errors import ValidationError


@dataclass
class Curve:
    """An ROC or PR curve: points (x, y) per tie group plus a scalar summary
    (AUC for ROC, AP for PR)."""

    x: np.ndarray
    y: np.ndarray
    summary: float
    kind: str


def _scores_labels(scores, labels):
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64).ravel()
    y = np.asarray(getattr(labels, "labels", labels)).ravel()
    if s.shape != y.shape:
        raise ValidationError(
            f"scores ({s.shape[0]} values) and labels ({y.shape[0]}) differ"
        )
    bad = np.setdiff1d(np.unique(y), [0, 1])
    if bad.size:
        raise ValidationError(f"labels must be binary, found {bad.tolist()}")
    return s, y.astype(np.int64)


def _tie_group_counts(s, y):
    """Cumulative TP/FP at the end of each descending tie group."""
    order = np.argsort(-s, kind="stable")
    ss = s[order]
    ys = y[order]
    ends = np.flatnonzero(np.diff(ss))
    ends = np.concatenate([ends, [ss.shape[0] - 1]])
    tp = np.cumsum(ys)[ends].astype(np.float64)
    fp = (ends + 1).astype(np.float64) - tp
    return tp, fp


def roc(scores, labels) -> Curve:
    """ROC curve over tie groups with endpoints (0,0) and (1,1); trapezoidal
    AUC (equivalently the probability a random positive outscores a random
    negative, ties half-counted)."""
    s, y = _scores_labels(scores, labels)
    p = int(y.sum())
    n = int(y.shape[0]) - p
    if p == 0 or n == 0:
        raise ValidationError(
            f"ROC needs at least one positive and one negative "
            f"(got {p} positives, {n} negatives)"
        )
    tp, fp = _tie_group_counts(s, y)
    tpr = np.concatenate([[0.0], tp / p])
    fpr = np.concatenate([[0.0], fp / n])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))
    return Curve(x=fpr, y=tpr, summary=auc, kind="roc")


def pr(scores, labels) -> Curve:
    """Precision-recall curve over tie groups; AP is the step sum
    sum_n (R_n - R_{n-1}) P_n. A conventional (0, 1) anchor starts the curve."""
    s, y = _scores_labels(scores, labels)
    p = int(y.sum())
    if p == 0:
        raise ValidationError("PR needs at least one positive")
    tp, fp = _tie_group_counts(s, y)
    recall = tp / p
    precision = tp / (tp + fp)
    ap = float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))
    return Curve(
        x=np.concatenate([[0.0], recall]),
        y=np.concatenate([[1.0], precision]),
        summary=ap,
        kind="pr",
    )


def log_roc_resample(curve: Curve, fpr_grid) -> Curve:
    """Resample an ROC curve onto an FPR grid by step interpolation: each
    grid point takes the TPR of the largest curve FPR <= that point (points
    below the first step fall back to the FPR=0 value). Used for log-scale
    inspection of the low-false-positive regime."""
    if curve.kind != "roc":
        raise ValidationError("log_roc_resample expects an ROC curve")
    grid = np.asarray(fpr_grid, dtype=np.float64)
    if grid.size == 0:
        raise ValidationError("empty FPR grid")
    idx = np.searchsorted(curve.x, grid, side="right") - 1
    idx = np.clip(idx, 0, curve.x.shape[0] - 1)
    return Curve(x=grid, y=curve.y[idx], summary=curve.summary, kind="roc")


def default_log_fpr_grid(decades: int = 6, per_decade: int = 10) -> np.ndarray:
    return np.logspace(-decades, 0, decades * per_decade + 1)


def confusion_at(scores, labels, threshold: float):
    """(TP, FP, TN, FN) with the inclusive rule: predicted positive when
    score >= threshold."""
    if not np.isfinite(threshold):
        raise ValidationError("threshold must be finite")
    s, y = _scores_labels(scores, labels)
    pred = s >= threshold
    pos = y == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    return tp, fp, tn, fn


def write_curve_csv(curve: Curve, path):
    header = "fpr,tpr" if curve.kind == "roc" else "recall,precision"
    rows = [header]
    for xv, yv in zip(curve.x, curve.y):
        rows.append(f"{float(xv)!r},{float(yv)!r}")
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_curve_csv(path) -> Curve:
    with open(path, "r") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    kind = "roc" if lines[0].startswith("fpr") else "pr"
    pts = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return Curve(x=pts[:, 0], y=pts[:, 1], summary=float("nan"), kind=kind)


def summary_dict(method: str, region: str, roc_curve: Curve, pr_curve: Curve,
                 positives: int, negatives: int) -> dict:
    return {
        "method": method,
        "region": region,
        "auc": roc_curve.summary,
        "ap": pr_curve.summary,
        "positives": positives,
        "negatives": negatives,
    }


def write_summary_json(summary: dict, path):
    atomic_write_text(path, json.dumps(summary, indent=2) + "\n")


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def curves_svg(curves, log_x: bool = False, width: int = 640,
               height: int = 480) -> str:
    """Render labeled curves as a minimal SVG (axes box plus one path per
    curve). With log_x, points at x <= 0 are dropped and the x axis spans
    the grid's decades."""
    left, right, top, bottom = 60, 20, 20, 40
    pw, ph = width - left - right, height - top - bottom

    xmin, xmax = 0.0, 1.0
    if log_x:
        positive = [float(c.x[c.x > 0].min()) for _, c in curves if np.any(c.x > 0)]
        if not positive:
            raise ValidationError("no positive x values to draw on a log axis")
        xmin = np.log10(min(positive))
        xmax = 0.0
        if xmin >= xmax:
            xmin = xmax - 1.0

    def sx(v):
        t = (np.log10(v) - xmin) / (xmax - xmin) if log_x else v
        return left + t * pw

    def sy(v):
        return top + (1.0 - v) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" '
        'fill="none" stroke="#000"/>',
    ]
    for i, (label, curve) in enumerate(curves):
        x, y = curve.x, curve.y
        if log_x:
            keep = x > 0
            x, y = x[keep], y[keep]
        if x.size == 0:
            continue
        coords = ["M"] + [f"{sx(xv):.2f} {sy(yv):.2f}" for xv, yv in zip(x, y)]
        d = coords[0] + " " + " L ".join(coords[1:])
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(f'<path d="{d}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        parts.append(
            f'<text x="{left + 8}" y="{top + 16 + 14 * i}" font-size="12" '
            f'fill="{color}">{label} ({curve.summary:.3f})</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(curves, path, log_x: bool = False):
    atomic_write_text(path, curves_svg(curves, log_x=log_x))
