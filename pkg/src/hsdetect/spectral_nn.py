"""Lightweight fully connected spectral classifier for per-pixel detection.

Architecture: bands -> 128 -> 64 -> 1, PMish activations on the hidden layers
(x * tanh(beta * softplus(x)), one learnable beta per layer, beta = 1 is
Mish), sigmoid output. Trained with weighted binary cross-entropy and Adam.
Forward, backward, and the optimizer are implemented directly in numpy; the
gradients are analytic and checked against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detectors import ScoreMap
from .errors import TrainingError, ValidationError
from .scene import PixelTable, region_of

HIDDEN1 = 128
HIDDEN2 = 64

MODEL_MAGIC = b"SPECNN01"

# Probability clamp for loss evaluation only; reported scores are unclamped.
_P_EPS = 1e-12


@dataclass
class MlpParams:
    """Network parameters plus the per-band standardization statistics the
    model was trained with (applied to raw spectra before the first layer)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: float
    beta1_act: float = 1.0
    beta2_act: float = 1.0
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None

    @property
    def bands(self) -> int:
        return self.W1.shape[1]


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.0002
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1024
    positive_weight: float | None = None  # None: auto N_neg / N_pos
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValidationError("epochs must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")
        if self.batch_size <= 0:
            raise ValidationError("batch size must be positive")


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    # tanh form is overflow-safe for any finite input; note float64 rounds
    # the result to exactly 0/1 once |x| exceeds ~37.4
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def pmish(x, beta: float):
    """Parametric Mish: x * tanh(beta * softplus(x)); beta = 1 is Mish."""
    if beta <= 0:
        raise ValidationError("pmish beta must be positive")
    x = np.asarray(x, dtype=np.float64)
    return x * np.tanh(beta * softplus(x))


def pmish_grads(x, beta: float):
    """(df/dx, df/dbeta) of PMish, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    s = softplus(x)
    th = np.tanh(beta * s)
    sech2 = 1.0 - th * th
    df_dx = th + x * beta * sigmoid(x) * sech2
    df_dbeta = x * s * sech2
    return df_dx, df_dbeta


def init_params(bands: int, seed: int = 0,
                rng: np.random.Generator | None = None) -> MlpParams:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases, beta 1."""
    if rng is None:
        rng = np.random.default_rng(seed)

    def layer(n_out, n_in):
        limit = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-limit, limit, size=(n_out, n_in))

    return MlpParams(
        W1=layer(HIDDEN1, bands), b1=np.zeros(HIDDEN1),
        W2=layer(HIDDEN2, HIDDEN1), b2=np.zeros(HIDDEN2),
        W3=layer(1, HIDDEN2), b3=0.0,
    )


def _forward_cached(params: MlpParams, x: np.ndarray):
    # non-optimized einsum keeps per-element accumulation independent of the
    # batch size, so scoring N pixels equals N single-pixel forwards exactly
    # (BLAS gemm rounds differently for different batch shapes)
    z1 = np.einsum("nk,mk->nm", x, params.W1) + params.b1
    h1 = pmish(z1, params.beta1_act)
    z2 = np.einsum("nk,mk->nm", h1, params.W2) + params.b2
    h2 = pmish(z2, params.beta2_act)
    z3 = np.einsum("nk,mk->nm", h2, params.W3)[:, 0] + params.b3
    p = sigmoid(z3)
    return p, (x, z1, h1, z2, h2)


def forward(params: MlpParams, x) -> np.ndarray:
    """Target probability for standardized spectra; accepts a single vector
    or an (N, bands) batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = np.atleast_2d(x)
    if rows.shape[1] != params.bands:
        raise ValidationError(
            f"input length {rows.shape[1]} does not match model bands "
            f"{params.bands}"
        )
    p, _ = _forward_cached(params, rows)
    return float(p[0]) if single else p


def weighted_bce(p, y, w_pos: float = 1.0) -> float:
    """Mean weighted binary cross-entropy; probabilities are clamped to
    [1e-12, 1 - 1e-12] before the logs."""
    p = np.clip(np.atleast_1d(np.asarray(p, dtype=np.float64)), _P_EPS, 1.0 - _P_EPS)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    with np.errstate(invalid="ignore"):
        loss = -(w_pos * y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(loss.mean())


def _backward_from_cache(params: MlpParams, cache, p, y, w_pos: float):
    x, z1, h1, z2, h2 = cache
    y = np.asarray(y, dtype=np.float64)
    batch = x.shape[0]
    # d(mean loss)/dz3 for the unclamped loss
    dz3 = ((1.0 - y) * p - w_pos * y * (1.0 - p)) / batch
    gW3 = (dz3 @ h2)[None, :]
    gb3 = float(dz3.sum())
    dh2 = np.outer(dz3, params.W3[0])
    dfdz2, dfdb2 = pmish_grads(z2, params.beta2_act)
    dz2 = dh2 * dfdz2
    gbeta2 = float((dh2 * dfdb2).sum())
    gW2 = dz2.T @ h1
    gb2 = dz2.sum(axis=0)
    dh1 = dz2 @ params.W2
    dfdz1, dfdb1 = pmish_grads(z1, params.beta1_act)
    dz1 = dh1 * dfdz1
    gbeta1 = float((dh1 * dfdb1).sum())
    gW1 = dz1.T @ x
    gb1 = dz1.sum(axis=0)
    return {
        "W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2, "W3": gW3, "b3": gb3,
        "beta1_act": gbeta1, "beta2_act": gbeta2,
    }


def backward(params: MlpParams, x, y, w_pos: float = 1.0) -> dict:
    """Gradients of the mean weighted BCE with respect to every parameter,
    the PMish betas included. `x` is a standardized (N, bands) batch."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValidationError("backward needs a non-empty batch")
    p, cache = _forward_cached(params, x)
    return _backward_from_cache(params, cache, p, y, w_pos)


def auto_positive_weight(labels) -> float:
    """Ratio of negative to positive pixels, the default class weight."""
    y = np.asarray(labels)
    n_pos = int(np.count_nonzero(y == 1))
    n_neg = int(y.shape[0]) - n_pos
    if n_pos == 0:
        raise ValidationError("no positive pixels: positive weight is undefined")
    return n_neg / n_pos


class _Adam:
    def __init__(self, config: TrainConfig):
        self.lr = config.learning_rate
        self.b1 = config.adam_beta1
        self.b2 = config.adam_beta2
        self.eps = config.adam_eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: MlpParams, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            m = self.m.get(name, 0.0)
            v = self.v.get(name, 0.0)
            m = self.b1 * m + (1.0 - self.b1) * g
            v = self.b2 * v + (1.0 - self.b2) * np.square(g)
            self.m[name] = m
            self.v[name] = v
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            value = getattr(params, name) - update
            if name.startswith("beta"):
                # PMish shape parameters stay positive
                value = float(max(value, 1e-6))
            elif name == "b3":
                value = float(value)
            setattr(params, name, value)


def train(pixels: PixelTable, config: TrainConfig | None = None):
    """Train on a labeled pixel table; returns (params, per-epoch mean loss).

    Deterministic for a fixed seed: one generator drives both initialization
    and the shuffle stream, batches are visited in shuffle order, and all
    reductions are single-threaded numpy.
    """
    config = config or TrainConfig()
    if pixels.labels is None:
        raise ValidationError("training requires labeled pixels")
    x = np.asarray(pixels.spectra, dtype=np.float64)
    y = np.asarray(pixels.labels, dtype=np.float64)
    n_pos = int(np.count_nonzero(y == 1))
    n_neg = int(y.shape[0]) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError(
            f"training needs both classes, got {n_pos} positive / {n_neg} negative"
        )
    w_pos = config.positive_weight
    if w_pos is None:
        w_pos = auto_positive_weight(y)

    if config.standardize:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
    else:
        mean = np.zeros(x.shape[1])
        std = np.ones(x.shape[1])
    xs = (x - mean) / std

    rng = np.random.default_rng(config.seed)
    params = init_params(x.shape[1], rng=rng)
    params.input_mean = mean
    params.input_std = std
    opt = _Adam(config)

    n = xs.shape[0]
    trace = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb, yb = xs[idx], y[idx]
            p, cache = _forward_cached(params, xb)
            loss = weighted_bce(p, yb, w_pos)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            grads = _backward_from_cache(params, cache, p, yb, w_pos)
            opt.step(params, grads)
            total += loss * xb.shape[0]
        trace.append(total / n)
    return params, trace


def nn_score_region(cube, params: MlpParams, chunk_rows: int = 65536) -> ScoreMap:
    """Score a cube region with a trained model. Output probabilities are in
    (0, 1) already; no further normalization is applied."""
    if params.input_mean is None or params.input_std is None:
        raise ValidationError("model is missing standardization statistics")
    nl, ns, nb = cube.values.shape
    if nb != params.bands:
        raise ValidationError(
            f"cube has {nb} bands but model expects {params.bands}"
        )
    pixels = cube.values.reshape(nl * ns, nb)
    out = np.empty(nl * ns, dtype=np.float64)
    for start in range(0, nl * ns, chunk_rows):
        chunk = (pixels[start:start + chunk_rows] - params.input_mean) / params.input_std
        out[start:start + chunk_rows] = _forward_cached(params, chunk)[0]
    scores = out.reshape(nl, ns)
    return ScoreMap(region=region_of(cube), scores=scores, method="nn",
                    normalized=False, raw_min=float(scores.min()),
                    raw_max=float(scores.max()))


def save_model(params: MlpParams, path):
    """Flat binary layout: magic, uint64 dims (bands, 128, 64), the two beta
    values, standardization mean/std, then W1 b1 W2 b2 W3 b3 as row-major
    little-endian float64."""
    if params.input_mean is None or params.input_std is None:
        raise ValidationError("refusing to save a model without "
                              "standardization statistics")
    from .envi_io import atomic_write_bytes

    dims = np.array([params.bands, HIDDEN1, HIDDEN2], dtype="<u8")
    betas = np.array([params.beta1_act, params.beta2_act], dtype="<f8")
    blobs = [MODEL_MAGIC, dims.tobytes(), betas.tobytes()]
    for arr in (params.input_mean, params.input_std, params.W1, params.b1,
                params.W2, params.b2, params.W3,
                np.array([params.b3])):
        blobs.append(np.ascontiguousarray(arr, dtype=np.float64)
                     .astype("<f8").tobytes())
    atomic_write_bytes(path, b"".join(blobs))


def load_model(path) -> MlpParams:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MODEL_MAGIC:
        raise ValidationError(f"{path}: not a spectral model file")
    dims = np.frombuffer(data[8:32], dtype="<u8")
    bands, h1, h2 = (int(v) for v in dims)
    if (h1, h2) != (HIDDEN1, HIDDEN2):
        raise ValidationError(
            f"{path}: unsupported layer sizes {h1}/{h2} "
            f"(expected {HIDDEN1}/{HIDDEN2})"
        )
    betas = np.frombuffer(data[32:48], dtype="<f8")
    off = 48

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(data[off:off + 8 * count], dtype="<f8")
        if arr.shape[0] != count:
            raise ValidationError(f"{path}: truncated model file")
        off += 8 * count
        return arr.reshape(shape).copy()

    mean = take((bands,))
    std = take((bands,))
    w1 = take((HIDDEN1, bands))
    b1 = take((HIDDEN1,))
    w2 = take((HIDDEN2, HIDDEN1))
    b2 = take((HIDDEN2,))
    w3 = take((1, HIDDEN2))
    b3 = float(take((1,))[0])
    if off != len(data):
        raise ValidationError(f"{path}: trailing bytes in model file")
    return MlpParams(W1=w1, b1=b1, W2=w2, b2=b2, W3=w3, b3=b3,
                     beta1_act=float(betas[0]), beta2_act=float(betas[1]),
                     input_mean=mean, input_std=std)


def write_loss_trace(trace, path):
    rows = ["epoch,mean_loss"]
    for i, loss in enumerate(trace):
        rows.append(f"{i},{float(loss)!r}")
    from .envi_io import atomic_write_text

    atomic_write_text(path, "\n".join(rows) + "\n")
