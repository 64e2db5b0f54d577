"""Per-pixel detection statistics against a known target signature.

Four classical detectors are provided:

  sam  negated spectral angle, -arccos(x.t / (|x||t|)), in [-pi, 0]
  mf   matched filter, w = C^-1 (t-m) / ((t-m)^T C^-1 (t-m)), D = w^T (x-m)
  ace  adaptive cosine estimator, squared cosine in background-whitened space
  cem  constrained energy minimization, unit gain on the target while
       minimizing background output energy

MF, ACE, and CEM consume a BackgroundModel; SAM needs none. Region scoring
min-max normalizes MF/ACE/CEM to [0, 1] and leaves SAM as the negated angle.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .background import CHUNK_ROWS, BackgroundModel, Signature, whiten
from .errors import ValidationError
from .scene import Region, region_of

METHODS = ("sam", "mf", "ace", "cem", "nn")

HALF_PI = np.pi / 2.0


@dataclass
class ScoreMap:
    """Per-pixel detection statistics aligned to a region.

    raw_min/raw_max record the pre-normalization range when normalization was
    applied; `constant` marks a degenerate all-equal map where normalization
    was skipped; `flagged` counts dead pixels scored by the documented
    fallback (-pi/2 for SAM, 0 for ACE).
    """

    region: Region
    scores: np.ndarray
    method: str
    normalized: bool = False
    raw_min: float | None = None
    raw_max: float | None = None
    constant: bool = False
    flagged: int = 0


def _as_rows(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValidationError(f"pixel input must be 1-D or 2-D, got shape {x.shape}")


def _signature_vector(t) -> np.ndarray:
    return t.values if isinstance(t, Signature) else np.asarray(t, dtype=np.float64)


def _check_bands(rows, t):
    if rows.shape[1] != t.shape[0]:
        raise ValidationError(
            f"pixel length {rows.shape[1]} does not match signature length "
            f"{t.shape[0]}"
        )


def sam_statistic(x, t):
    """Negated spectral angle for a batch. Returns (scores, dead_count);
    zero-norm pixels score -pi/2."""
    rows, single = _as_rows(x)
    t = _signature_vector(t)
    _check_bands(rows, t)
    tnorm = np.linalg.norm(t)
    xnorm = np.linalg.norm(rows, axis=1)
    dead = xnorm == 0.0
    denom = np.where(dead, 1.0, xnorm * tnorm)
    cosine = np.clip((rows @ t) / denom, -1.0, 1.0)
    scores = -np.arccos(cosine)
    scores[dead] = -HALF_PI
    return (scores[0] if single else scores), int(dead.sum())


def mf_statistic(x, model: BackgroundModel, t):
    """Matched-filter response; exactly 1 at x = t and 0 at x = mean."""
    rows, single = _as_rows(x)
    t = _signature_vector(t)
    _check_bands(rows, t)
    d = t - model.mean
    y = model.cov_inverse @ d
    denom = float(d @ y)
    if not denom > 0.0:
        raise ValidationError("degenerate target: signature equals background mean")
    w = y / denom
    scores = (rows - model.mean) @ w
    return (scores[0] if single else scores), 0


def ace_statistic(x, model: BackgroundModel, t):
    """Squared cosine between whitened pixel and whitened target, in [0, 1].
    Pixels equal to the background mean score 0 and are counted as flagged."""
    rows, single = _as_rows(x)
    t = _signature_vector(t)
    _check_bands(rows, t)
    wt = whiten(model, t)
    wt_norm2 = float(wt @ wt)
    if not wt_norm2 > 0.0:
        raise ValidationError("degenerate target: signature equals background mean")
    wx = whiten(model, rows)
    proj = wx @ wt
    wx_norm2 = np.einsum("ij,ij->i", wx, wx)
    dead = wx_norm2 == 0.0
    denom = np.where(dead, 1.0, wt_norm2 * wx_norm2)
    scores = np.clip(proj * proj / denom, 0.0, 1.0)
    scores[dead] = 0.0
    return (scores[0] if single else scores), int(dead.sum())


def cem_statistic(x, model: BackgroundModel, t, centered: bool = False):
    """Constrained-energy-minimization response, exactly 1 at x = t.

    Default form uses the uncentered second moment R with unit gain on the
    raw signature: w = R^-1 t / (t^T R^-1 t), D = w^T x. The centered variant
    replaces t by t - mean, x by x - mean, and R by the second moment of the
    centered data.
    """
    rows, single = _as_rows(x)
    t = _signature_vector(t)
    _check_bands(rows, t)
    if centered:
        n = model.sample_count
        centered_r = model.covariance * ((n - 1) / n)
        ridged = centered_r + model.ridge * np.eye(model.bands)
        d = t - model.mean
        y = linalg.cho_solve((linalg.cholesky(ridged, lower=True), True), d)
        denom = float(d @ y)
        if not denom > 0.0:
            raise ValidationError(
                "degenerate target: signature equals background mean"
            )
        scores = (rows - model.mean) @ (y / denom)
    else:
        y = model.second_moment_inverse @ t
        denom = float(t @ y)
        if not denom > 0.0:
            raise ValidationError("degenerate target for CEM filter")
        scores = rows @ (y / denom)
    return (scores[0] if single else scores), 0


def sam_score(x, t):
    return sam_statistic(x, t)[0]


def mf_score(x, model: BackgroundModel, t):
    return mf_statistic(x, model, t)[0]


def ace_score(x, model: BackgroundModel, t):
    return ace_statistic(x, model, t)[0]


def cem_score(x, model: BackgroundModel, t, centered: bool = False):
    return cem_statistic(x, model, t, centered=centered)[0]


def score_pixels(x, method: str, model: BackgroundModel | None, t,
                 centered: bool = False):
    """Apply one detector kernel to a batch of pixel rows.

    Returns (scores, flagged_count). SAM ignores the model. Non-finite input
    pixels yield non-finite scores without warnings; region scoring turns
    those into errors carrying the pixel coordinates.
    """
    with np.errstate(invalid="ignore", over="ignore"):
        if method == "sam":
            return sam_statistic(x, t)
        if model is None:
            raise ValidationError(
                f"method '{method}' requires background statistics"
            )
        if method == "mf":
            return mf_statistic(x, model, t)
        if method == "ace":
            return ace_statistic(x, model, t)
        if method == "cem":
            return cem_statistic(x, model, t, centered=centered)
    raise ValidationError(f"unknown detection method '{method}'")


def normalize_scores(raw: np.ndarray):
    """Min-max map to [0, 1]. Returns (values, raw_min, raw_max, constant)."""
    raw_min = float(raw.min())
    raw_max = float(raw.max())
    if raw_max == raw_min:
        return raw.copy(), raw_min, raw_max, True
    return (raw - raw_min) / (raw_max - raw_min), raw_min, raw_max, False


def score_region(cube, method: str, model: BackgroundModel | None, t,
                 centered: bool = False, workers: int = 1,
                 chunk_rows: int = CHUNK_ROWS) -> ScoreMap:
    """Score every pixel of a cube region.

    MF/ACE/CEM maps are min-max normalized to [0, 1]; SAM keeps the negated
    angle. Pixels are scored in fixed-size row chunks so the output is
    identical for any worker count.
    """
    region = region_of(cube)
    nl, ns, nb = cube.values.shape
    pixels = cube.values.reshape(nl * ns, nb)
    raw = np.empty(nl * ns, dtype=np.float64)
    flag_counts = []

    def run(start):
        chunk = pixels[start:start + chunk_rows]
        scores, flagged = score_pixels(chunk, method, model, t, centered=centered)
        raw[start:start + chunk_rows] = scores
        return flagged

    starts = range(0, nl * ns, chunk_rows)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            flag_counts = list(pool.map(run, starts))
    else:
        flag_counts = [run(s) for s in starts]

    bad = ~np.isfinite(raw)
    if bad.any():
        idx = int(np.argmax(bad))
        raise ValidationError(
            f"non-finite {method} score at line {idx // ns}, sample {idx % ns}"
        )

    raw = raw.reshape(nl, ns)
    flagged = int(sum(flag_counts))
    if method == "sam":
        return ScoreMap(region=region, scores=raw, method=method,
                        normalized=False, raw_min=float(raw.min()),
                        raw_max=float(raw.max()), flagged=flagged)
    values, raw_min, raw_max, constant = normalize_scores(raw)
    return ScoreMap(region=region, scores=values, method=method,
                    normalized=not constant, raw_min=raw_min, raw_max=raw_max,
                    constant=constant, flagged=flagged)


def report_entry(scoremap: ScoreMap, model: BackgroundModel | None = None,
                 variant: str | None = None) -> dict:
    """One run-report record for a scored region (JSON-lines friendly)."""
    return {
        "method": scoremap.method,
        "variant": variant,
        "region": scoremap.region.name,
        "lines": scoremap.region.lines,
        "samples": scoremap.region.samples,
        "ridge": None if model is None else model.ridge,
        "normalized": scoremap.normalized,
        "constant": scoremap.constant,
        "raw_min": scoremap.raw_min,
        "raw_max": scoremap.raw_max,
        "dead_pixels": scoremap.flagged,
    }
