"""Hyperspectral target detection toolkit.

Classical per-pixel detectors (SAM, MF, ACE, CEM) against a known target
signature, a lightweight spectral neural network, threshold-independent
ROC/PR evaluation, ENVI cube I/O, and a synthetic-scene oracle harness.
"""

from .background import BackgroundModel, Signature, estimate, whiten
from .detectors import (ScoreMap, ace_score, cem_score, mf_score, sam_score,
                        score_region)
from .envi_io import EnviHeader, SpectralCube, parse_header, read_cube
from .metrics import Curve, confusion_at, log_roc_resample, pr, roc
from .scene import (GroundTruthMask, PixelTable, Region, crop, flatten,
                    split_train_test)
from .spectral_nn import MlpParams, TrainConfig, forward, nn_score_region, train
from .synth import SynthSpec, generate, snr_of

__version__ = "0.1.0"

__all__ = [
    "BackgroundModel", "Signature", "estimate", "whiten",
    "ScoreMap", "sam_score", "mf_score", "ace_score", "cem_score",
    "score_region",
    "EnviHeader", "SpectralCube", "parse_header", "read_cube",
    "Curve", "roc", "pr", "log_roc_resample", "confusion_at",
    "Region", "GroundTruthMask", "PixelTable", "crop", "flatten",
    "split_train_test",
    "MlpParams", "TrainConfig", "forward", "train", "nn_score_region",
    "SynthSpec", "generate", "snr_of",
    "__version__",
]
