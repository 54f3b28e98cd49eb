"""Feature extraction with a trained GRBM: per-patch encoders, dense convolution
over 32x32 images, and sum-pooling over the four image quadrants."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import GrbmParams, hidden_conditional
from .data import PreprocessModel, preprocess, rf_size_for
from .errors import ContractViolation

CONDITIONAL = "conditional"
SOFT_THRESHOLD = "soft"


@dataclass(frozen=True)
class EncoderConfig:
    scheme: str = SOFT_THRESHOLD
    threshold: float = 0.25
    stride: int = 1

    def __post_init__(self):
        if self.scheme not in (CONDITIONAL, SOFT_THRESHOLD):
            raise ContractViolation(f"unknown encoder scheme {self.scheme!r}")
        if self.stride < 1:
            raise ContractViolation("stride must be >= 1")
        if not np.isfinite(self.threshold):
            raise ContractViolation("threshold must be finite")


def encode_preprocessed(params: GrbmParams, v, cfg: EncoderConfig) -> np.ndarray:
    """Encode patches that are already contrast-normalized and whitened."""
    if cfg.scheme == CONDITIONAL:
        return hidden_conditional(params, v)
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.N:
        raise ContractViolation(f"patch dimension {v.shape[-1]} != N={params.N}")
    return np.maximum(v @ params.W.T - cfg.threshold, 0.0)


def encode_patch(params: GrbmParams, model: Optional[PreprocessModel], patch, cfg: EncoderConfig) -> np.ndarray:
    """Encode raw patch(es); ``model=None`` means the input is already preprocessed."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape[-1] != params.N:
        raise ContractViolation(f"patch dimension {patch.shape[-1]} != N={params.N}")
    if model is not None:
        single = patch.ndim == 1
        patch = preprocess(model, np.atleast_2d(patch))
        if single:
            patch = patch[0]
    return encode_preprocessed(params, patch, cfg)


def patch_grid(side: int, rf_size: int, stride: int) -> np.ndarray:
    """Top-left offsets along one axis."""
    if rf_size > side:
        raise ContractViolation(f"receptive field {rf_size} exceeds image side {side}")
    return np.arange(0, side - rf_size + 1, stride)


def quadrant_index(offsets: np.ndarray, side: int, rf_size: int) -> np.ndarray:
    """0 for patches whose centre is in the first half (midline included), else 1."""
    centre = offsets + (rf_size - 1) / 2.0
    return (centre > (side - 1) / 2.0).astype(np.int64)


def extract_image_features(params: GrbmParams, model: Optional[PreprocessModel], images,
                           cfg: EncoderConfig) -> np.ndarray:
    """Quadrant-pooled features of length 4M per image, ordered unit-major.

    ``features[4 * i + q]`` is the sum of unit i's response over quadrant q,
    with q = 2 * row_half + col_half.  Accepts one (32, 32, 3) image or a batch.
    """
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 3
    if single:
        images = images[None]
    if images.ndim != 4 or images.shape[3] != 3:
        raise ContractViolation(f"expected images of shape (n, H, W, 3), got {images.shape}")
    w = rf_size_for(params.N)
    _, H, W, _ = images.shape
    ys, xs = patch_grid(H, w, cfg.stride), patch_grid(W, w, cfg.stride)
    qy, qx = quadrant_index(ys, H, w), quadrant_index(xs, W, w)
    quadrant = (2 * qy[:, None] + qx[None, :]).reshape(-1)
    pool = np.zeros((len(quadrant), 4))
    pool[np.arange(len(quadrant)), quadrant] = 1.0
    out = np.empty((len(images), 4 * params.M))
    for k, img in enumerate(images):
        windows = sliding_window_view(img, (w, w, 3))[ys][:, xs, 0]
        patches = windows.reshape(len(ys) * len(xs), 3 * w * w)
        responses = encode_patch(params, model, patches, cfg)
        out[k] = (responses.T @ pool).reshape(-1)
    return out[0] if single else out
