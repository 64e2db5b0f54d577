"""Background statistics: mean, covariance, correlation, and whitening.

Moments are accumulated in a fixed pairwise tree order so results are
bit-stable regardless of how many workers computed the partial sums, and the
same accumulation path serves both in-memory tables and streamed chunks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ValidationError

# Rows per partial sum; also the scoring chunk size used elsewhere.
CHUNK_ROWS = 4096

RIDGE_SCALE = 1e-6
RIDGE_FLOOR = 1e-12


@dataclass(frozen=True)
class Signature:
    """A known target spectrum with free-text provenance."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValidationError("signature must be a 1-D vector")
        if not np.all(np.isfinite(values)):
            raise ValidationError("signature contains non-finite values")
        if not np.any(values):
            raise ValidationError("signature is the zero vector")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class BackgroundModel:
    """Estimated background moments plus ridged inverses and a whitener.

    covariance uses the N-1 denominator; second_moment is the uncentered
    (1/N) sum of x x^T. Both inverses are of the ridged matrices.
    """

    mean: np.ndarray
    covariance: np.ndarray
    second_moment: np.ndarray
    cov_inverse: np.ndarray
    second_moment_inverse: np.ndarray
    cov_cholesky: np.ndarray  # lower factor of covariance + ridge*I
    ridge: float
    sample_count: int

    @property
    def bands(self) -> int:
        return self.mean.shape[0]


def _ridge_for(cov: np.ndarray) -> float:
    trace = float(np.trace(cov))
    return max(RIDGE_SCALE * trace / cov.shape[0], RIDGE_FLOOR)


def _ridged_inverse(matrix: np.ndarray, ridge: float):
    """(matrix + ridge*I)^-1 and its lower Cholesky factor."""
    ridged = matrix + ridge * np.eye(matrix.shape[0])
    try:
        chol = linalg.cholesky(ridged, lower=True)
    except linalg.LinAlgError:
        raise ValidationError(
            "matrix not positive definite even after ridge; input statistics "
            "are corrupt"
        ) from None
    inverse = linalg.cho_solve((chol, True), np.eye(matrix.shape[0]))
    inverse = 0.5 * (inverse + inverse.T)
    return inverse, chol


def accumulate_chunk(chunk: np.ndarray):
    """Partial sums (n, sum x, sum x x^T) for one block of pixel rows."""
    x = np.asarray(chunk, dtype=np.float64)
    return x.shape[0], x.sum(axis=0), x.T @ x


def combine_partials(parts):
    """Combine partial sums pairwise in a fixed tree order."""
    parts = list(parts)
    if not parts:
        raise ValidationError("no pixel data to combine")
    while len(parts) > 1:
        merged = []
        for i in range(0, len(parts) - 1, 2):
            (n0, s0, q0), (n1, s1, q1) = parts[i], parts[i + 1]
            merged.append((n0 + n1, s0 + s1, q0 + q1))
        if len(parts) % 2:
            merged.append(parts[-1])
        parts = merged
    return parts[0]


def model_from_sums(n: int, sum_x: np.ndarray, sum_xxt: np.ndarray) -> BackgroundModel:
    """Finish the estimate from accumulated raw moments."""
    if n < 2:
        raise ValidationError(f"need at least 2 pixels to estimate covariance, got {n}")
    mean = sum_x / n
    second_moment = sum_xxt / n
    second_moment = 0.5 * (second_moment + second_moment.T)
    cov = (sum_xxt - n * np.outer(mean, mean)) / (n - 1)
    cov = 0.5 * (cov + cov.T)
    ridge = _ridge_for(cov)
    cov_inv, chol = _ridged_inverse(cov, ridge)
    r_inv, _ = _ridged_inverse(second_moment, ridge)
    return BackgroundModel(
        mean=mean, covariance=cov, second_moment=second_moment,
        cov_inverse=cov_inv, second_moment_inverse=r_inv,
        cov_cholesky=chol, ridge=ridge, sample_count=int(n),
    )


def estimate(pixels, exclude_positives: bool = False, workers: int = 1) -> BackgroundModel:
    """Estimate background statistics from a pixel table or (N, L) array.

    With exclude_positives, labeled target pixels are dropped first and the
    remaining count must exceed the band count (the covariance would be rank
    deficient by construction otherwise).
    """
    spectra = np.asarray(getattr(pixels, "spectra", pixels), dtype=np.float64)
    if spectra.ndim != 2:
        raise ValidationError(f"pixel array must be 2-D, got shape {spectra.shape}")
    if exclude_positives:
        labels = getattr(pixels, "labels", None)
        if labels is None:
            raise ValidationError("exclude_positives requires labeled pixels")
        spectra = spectra[np.asarray(labels) == 0]
    n, bands = spectra.shape
    if exclude_positives and n <= bands:
        raise ValidationError(
            f"insufficient samples: {n} pixels for {bands} bands "
            f"(need at least bands + 1)"
        )
    if not np.all(np.isfinite(spectra)):
        raise ValidationError("pixel data contains non-finite values")

    chunks = [spectra[i:i + CHUNK_ROWS] for i in range(0, n, CHUNK_ROWS)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(accumulate_chunk, chunks))
    else:
        parts = [accumulate_chunk(c) for c in chunks]
    return model_from_sums(*combine_partials(parts))


def model_from_moments(mean, covariance, sample_count: int,
                       second_moment=None) -> BackgroundModel:
    """Build a model from known moments (e.g. the true parameters of a
    synthetic scene). The uncentered second moment defaults to the population
    identity cov + mean mean^T."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(covariance, dtype=np.float64)
    if second_moment is None:
        second_moment = cov + np.outer(mean, mean)
    second_moment = np.asarray(second_moment, dtype=np.float64)
    ridge = _ridge_for(cov)
    cov_inv, chol = _ridged_inverse(cov, ridge)
    r_inv, _ = _ridged_inverse(second_moment, ridge)
    return BackgroundModel(
        mean=mean, covariance=cov, second_moment=second_moment,
        cov_inverse=cov_inv, second_moment_inverse=r_inv,
        cov_cholesky=chol, ridge=ridge, sample_count=int(sample_count),
    )


def whiten(model: BackgroundModel, x) -> np.ndarray:
    """Map x to the whitened space of the background: W (x - mean) with
    W^T W = (covariance + ridge*I)^-1. The whitened background population has
    sample covariance close to the identity."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = np.atleast_2d(x)
    if rows.shape[1] != model.bands:
        raise ValidationError(
            f"pixel length {rows.shape[1]} does not match model bands {model.bands}"
        )
    out = linalg.solve_triangular(model.cov_cholesky, (rows - model.mean).T,
                                  lower=True).T
    return out[0] if single else out


def save_model(model: BackgroundModel, path):
    """Persist as a flat binary blob: L and N as little-endian uint64, ridge
    as float64, then mean, covariance, second moment row-major float64."""
    from .envi_io import atomic_write_bytes

    head = np.array([model.bands, model.sample_count], dtype="<u8").tobytes()
    body = (
        np.float64(model.ridge).astype("<f8").tobytes()
        + model.mean.astype("<f8").tobytes()
        + np.ascontiguousarray(model.covariance).astype("<f8").tobytes()
        + np.ascontiguousarray(model.second_moment).astype("<f8").tobytes()
    )
    atomic_write_bytes(path, head + body)


def load_model(path) -> BackgroundModel:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 24:
        raise ValidationError(f"{path}: truncated background model file")
    bands, count = np.frombuffer(data[:16], dtype="<u8")
    bands, count = int(bands), int(count)
    expected = 16 + 8 + 8 * bands + 2 * 8 * bands * bands
    if len(data) != expected:
        raise ValidationError(
            f"{path}: file size {len(data)} does not match {bands} bands "
            f"(expected {expected})"
        )
    ridge = float(np.frombuffer(data[16:24], dtype="<f8")[0])
    off = 24
    mean = np.frombuffer(data[off:off + 8 * bands], dtype="<f8").copy()
    off += 8 * bands
    cov = np.frombuffer(data[off:off + 8 * bands * bands],
                        dtype="<f8").reshape(bands, bands).copy()
    off += 8 * bands * bands
    second = np.frombuffer(data[off:], dtype="<f8").reshape(bands, bands).copy()
    cov_inv, chol = _ridged_inverse(cov, ridge)
    r_inv, _ = _ridged_inverse(second, ridge)
    return BackgroundModel(
        mean=mean, covariance=cov, second_moment=second,
        cov_inverse=cov_inv, second_moment_inverse=r_inv,
        cov_cholesky=chol, ridge=ridge, sample_count=count,
    )
