"""Seeded synthetic scenes with known background statistics and planted
targets, used as ground-truth oracles for end-to-end detector validation.

Background pixels are Gaussian with a seeded random covariance; targets are
planted by linear mixing x = a*t + (1-a)*b at chosen abundances. The true
mean/covariance are returned alongside the scene so estimators can be checked
against the parameters that actually generated the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .background import BackgroundModel, Signature, model_from_moments
from .envi_io import EnviHeader, SpectralCube
from .errors import ValidationError
from .scene import GroundTruthMask, Region


@dataclass
class SynthSpec:
    """Recipe for one scene; every random draw flows from `seed`.

    Unset background/target fields are generated: covariance as A A^T + d*I
    with A a seeded standard-normal L x L matrix and d = 0.01 * mean diagonal,
    mean and signature as smooth positive spectra (sums of seeded Gaussian
    bumps over the band axis). `target_deflection`, when set, rescales the
    signature so the matched-filter deflection at the minimum planted
    abundance equals it. `contaminate` scales a seeded 5% of background
    pixels by 3, a heavy-tailed stress of the Gaussian background assumption.
    """

    lines: int
    samples: int
    bands: int
    seed: int = 0
    background_mean: np.ndarray | None = None
    background_cov: np.ndarray | None = None
    target_signature: np.ndarray | None = None
    plants: list = field(default_factory=list)  # (line, sample, abundance)
    noise_floor: float = 0.0
    contaminate: bool = False
    target_deflection: float | None = None

    def __post_init__(self):
        if self.lines <= 0 or self.samples <= 0 or self.bands <= 0:
            raise ValidationError("scene extents must be positive")
        if self.noise_floor < 0:
            raise ValidationError("noise floor must be >= 0")
        seen = set()
        for line, sample, alpha in self.plants:
            if not (0 <= line < self.lines and 0 <= sample < self.samples):
                raise ValidationError(
                    f"plant at ({line},{sample}) outside scene "
                    f"{self.lines}x{self.samples}"
                )
            if not 0.0 < alpha <= 1.0:
                raise ValidationError(
                    f"plant abundance {alpha} outside (0, 1]"
                )
            if (line, sample) in seen:
                raise ValidationError(f"duplicate plant at ({line},{sample})")
            seen.add((line, sample))


def smooth_spectrum(bands: int, rng: np.random.Generator, base: float = 1.0,
                    amplitude: float = 1.0, bumps: int = 3) -> np.ndarray:
    """A positive, spectrally plausible curve: offset plus seeded Gaussian
    bumps along the band axis."""
    axis = np.arange(bands, dtype=np.float64)
    out = np.full(bands, base, dtype=np.float64)
    for _ in range(bumps):
        center = rng.uniform(0, bands)
        width = rng.uniform(bands / 12, bands / 3)
        height = rng.uniform(0.3, 1.0) * amplitude
        out += height * np.exp(-0.5 * ((axis - center) / width) ** 2)
    return out


def _materialize(spec: SynthSpec):
    """Resolve (mean, cov, cov_cholesky, signature) plus the generator set to
    the state the scene draws continue from. Draw order is fixed so snr_of
    and generate agree for the same spec."""
    rng = np.random.default_rng(spec.seed)
    bands = spec.bands

    if spec.background_cov is not None:
        cov = np.asarray(spec.background_cov, dtype=np.float64)
        if cov.shape != (bands, bands):
            raise ValidationError(
                f"background covariance shape {cov.shape} != ({bands},{bands})"
            )
    else:
        a = rng.standard_normal((bands, bands)) / np.sqrt(bands)
        cov = a @ a.T
        cov += 0.01 * float(np.mean(np.diag(cov))) * np.eye(bands)
    chol = linalg.cholesky(cov, lower=True)

    scale = float(np.sqrt(np.mean(np.diag(cov))))
    if spec.background_mean is not None:
        mean = np.asarray(spec.background_mean, dtype=np.float64)
        if mean.shape != (bands,):
            raise ValidationError(f"background mean length {mean.shape} != {bands}")
    else:
        mean = smooth_spectrum(bands, rng, base=6.0 * scale, amplitude=4.0 * scale)

    if spec.target_signature is not None:
        target = np.asarray(spec.target_signature, dtype=np.float64)
        if target.shape != (bands,):
            raise ValidationError(f"target length {target.shape} != {bands}")
    else:
        target = smooth_spectrum(bands, rng, base=7.0 * scale,
                                 amplitude=5.0 * scale)

    if spec.target_deflection is not None:
        alpha_min = min((a for _, _, a in spec.plants), default=1.0)
        d = target - mean
        current = float(np.sqrt(d @ linalg.cho_solve((chol, True), d)))
        if current == 0.0:
            raise ValidationError("cannot rescale a target equal to the mean")
        target = mean + (spec.target_deflection / (alpha_min * current)) * d

    return mean, cov, chol, target, rng


def snr_of(spec: SynthSpec) -> float:
    """Matched-filter deflection a_min * sqrt((t-m)^T C^-1 (t-m)) at the
    scene's minimum planted abundance; 0 for a scene with no plants."""
    mean, _, chol, target, _ = _materialize(spec)
    if not spec.plants:
        return 0.0
    alpha_min = min(a for _, _, a in spec.plants)
    d = target - mean
    return float(alpha_min * np.sqrt(d @ linalg.cho_solve((chol, True), d)))


def generate(spec: SynthSpec):
    """Build the scene.

    Returns (cube, mask, signature, true_model): the cube with planted
    targets, the mask marking exactly the plant list, the signature actually
    used, and a BackgroundModel holding the true generating moments.
    """
    mean, cov, chol, target, rng = _materialize(spec)
    nl, ns, nb = spec.lines, spec.samples, spec.bands
    n = nl * ns

    pixels = mean + rng.standard_normal((n, nb)) @ chol.T

    labels = np.zeros((nl, ns), dtype=np.uint8)
    plant_rows = np.array(
        [line * ns + sample for line, sample, _ in spec.plants], dtype=np.int64
    )
    for (line, sample, alpha), row in zip(spec.plants, plant_rows):
        noise = (spec.noise_floor * rng.standard_normal(nb)
                 if spec.noise_floor > 0 else 0.0)
        pixels[row] = alpha * target + (1.0 - alpha) * pixels[row] + noise
        labels[line, sample] = 1

    if spec.contaminate:
        candidates = np.setdiff1d(np.arange(n), plant_rows)
        count = int(round(0.05 * candidates.size))
        chosen = rng.choice(candidates, size=count, replace=False)
        pixels[chosen] *= 3.0

    header = EnviHeader(samples=ns, lines=nl, bands=nb, data_type=4,
                        interleave="bsq", byte_order=0)
    region = Region("synthetic", 0, 0, nl, ns)
    cube = SpectralCube(header=header, values=pixels.reshape(nl, ns, nb),
                        region=region)
    mask = GroundTruthMask(region=region, labels=labels)
    signature = Signature(values=target, label="synthetic target")
    true_model = model_from_moments(mean, cov, sample_count=n)
    return cube, mask, signature, true_model


def random_plants(lines: int, samples: int, count: int,
                  rng: np.random.Generator,
                  alpha_range=(0.5, 1.0)) -> list:
    """Unique random plant positions with abundances drawn from alpha_range."""
    if count > lines * samples:
        raise ValidationError("more plants than pixels")
    flat = rng.choice(lines * samples, size=count, replace=False)
    alphas = rng.uniform(alpha_range[0], alpha_range[1], size=count)
    return [(int(i // samples), int(i % samples), float(a))
            for i, a in zip(flat, alphas)]
