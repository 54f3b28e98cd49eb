"""Datasets: CIFAR-10 binary ingestion, patch sampling, contrast normalization,
ZCA whitening, the 2-D Gaussian-mixture toy data and a synthetic dead-leaves image set.

Images are handled as (n, 32, 32, 3) float arrays in [0, 1]; a patch of
receptive field ``w`` is flattened in (row, column, channel) order to length 3 w^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractViolation, FormatError, MissingArtifact

IMAGE_SIDE = 32
CIFAR_RECORD = 1 + 3 * IMAGE_SIDE * IMAGE_SIDE
CIFAR_RECORDS_PER_FILE = 10_000
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"

CONTRAST_EPS = 10.0 / 255.0 ** 2
ZCA_EPS = 0.01


@dataclass
class Dataset:
    rows: np.ndarray
    labels: Optional[np.ndarray] = None
    kind: str = "raw"

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.rows),):
                raise ContractViolation("labels must have one entry per row")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


# ---------------------------------------------------------------------------
# CIFAR-10


def read_cifar_file(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"{path}: CIFAR-10 batch file not found")
    expected = CIFAR_RECORDS_PER_FILE * CIFAR_RECORD
    size = path.stat().st_size
    if size != expected:
        raise FormatError(f"{path}: size {size} bytes, expected {expected} (10000 records x 3073 bytes)")
    raw = np.fromfile(path, dtype=np.uint8).reshape(CIFAR_RECORDS_PER_FILE, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise FormatError(f"{path}: label byte {labels.max()} outside 0..9")
    return Dataset(raw[:, 1:].astype(np.float64) / 255.0, labels, kind="raw")


def load_cifar10(directory):
    """Train (50000 x 3072) and test (10000 x 3072) sets with pixels scaled to [0, 1].

    Pixel rows keep the on-disk layout: the R, G and B planes, each 32x32 row-major.
    """
    directory = Path(directory)
    parts = [read_cifar_file(directory / name) for name in CIFAR_TRAIN_FILES]
    train = Dataset(np.concatenate([p.rows for p in parts]),
                    np.concatenate([p.labels for p in parts]), kind="raw")
    return train, read_cifar_file(directory / CIFAR_TEST_FILE)


def rows_to_images(rows) -> np.ndarray:
    """(n, 3072) CIFAR plane layout -> (n, 32, 32, 3)."""
    rows = np.asarray(rows, dtype=np.float64)
    return rows.reshape(-1, 3, IMAGE_SIDE, IMAGE_SIDE).transpose(0, 2, 3, 1)


def images_to_rows(images) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    return images.transpose(0, 3, 1, 2).reshape(len(images), -1)


# ---------------------------------------------------------------------------
# patches and preprocessing


def patch_dim(rf_size: int) -> int:
    return 3 * rf_size * rf_size


def rf_size_for(dim: int) -> int:
    w = math.isqrt(dim // 3)
    if 3 * w * w != dim:
        raise ContractViolation(f"visible dimension {dim} is not 3 w^2 for any receptive field w")
    return w


def extract_patches(images, rf_size: int, count: int, seed) -> np.ndarray:
    """``count`` patches at uniformly random (image, row, col), sampled with replacement."""
    images = np.asarray(images, dtype=np.float64)
    n, H, W, C = images.shape
    if rf_size < 1 or rf_size > min(H, W):
        raise ContractViolation(f"receptive field {rf_size} does not fit a {H}x{W} image")
    if count == 0:
        return np.empty((0, rf_size * rf_size * C))
    rng = np.random.default_rng(seed)
    which = rng.integers(0, n, size=count)
    ys = rng.integers(0, H - rf_size + 1, size=count)
    xs = rng.integers(0, W - rf_size + 1, size=count)
    out = np.empty((count, rf_size * rf_size * C))
    for k in range(count):
        y, x = ys[k], xs[k]
        out[k] = images[which[k], y:y + rf_size, x:x + rf_size, :].reshape(-1)
    return out


def contrast_normalize(patches, eps: float = CONTRAST_EPS) -> np.ndarray:
    """Per-row brightness and contrast normalization."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[1] == 0:
        raise ContractViolation("contrast_normalize expects a non-empty (n, dim) array")
    centred = patches - patches.mean(axis=1, keepdims=True)
    return centred / np.sqrt(patches.var(axis=1, keepdims=True) + eps)


@dataclass
class PreprocessModel:
    patch_mean: np.ndarray
    whitening_matrix: np.ndarray
    contrast_epsilon: float = CONTRAST_EPS
    zca_epsilon: float = ZCA_EPS
    eigenvalues: np.ndarray = field(default=None, repr=False)
    eigenvectors: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.patch_mean)

    def save(self, path) -> None:
        np.savez(path, patch_mean=self.patch_mean, whitening_matrix=self.whitening_matrix,
                 contrast_epsilon=self.contrast_epsilon, zca_epsilon=self.zca_epsilon,
                 eigenvalues=self.eigenvalues, eigenvectors=self.eigenvectors)

    @classmethod
    def load(cls, path) -> "PreprocessModel":
        try:
            z = np.load(path)
        except FileNotFoundError as exc:
            raise MissingArtifact(f"{path}: preprocessing model not found") from exc
        return cls(z["patch_mean"], z["whitening_matrix"], float(z["contrast_epsilon"]),
                   float(z["zca_epsilon"]), z["eigenvalues"], z["eigenvectors"])


def zca_fit(patches, eps: float = ZCA_EPS, contrast_epsilon: float = CONTRAST_EPS) -> PreprocessModel:
    """Fit a symmetric whitening matrix U (L + eps I)^(-1/2) U^T to already-normalized patches."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[0] == 0 or patches.shape[1] == 0:
        raise ContractViolation("zca_fit expects a non-empty (n, dim) array")
    mean = patches.mean(axis=0)
    centred = patches - mean
    cov = centred.T @ centred / len(patches)
    evals, evecs = np.linalg.eigh((cov + cov.T) / 2.0)
    evals = np.maximum(evals, 0.0)
    Wz = (evecs / np.sqrt(evals + eps)) @ evecs.T
    Wz = (Wz + Wz.T) / 2.0
    return PreprocessModel(mean, Wz, contrast_epsilon, eps, evals, evecs)


def zca_apply(model: PreprocessModel, patches) -> np.ndarray:
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[1] != model.dim:
        raise ContractViolation(f"expected patches of dimension {model.dim}, got {patches.shape}")
    return (patches - model.patch_mean) @ model.whitening_matrix


def preprocess(model: PreprocessModel, raw_patches) -> np.ndarray:
    """Contrast normalization followed by the fitted whitening."""
    return zca_apply(model, contrast_normalize(raw_patches, model.contrast_epsilon))


def fit_preprocessing(raw_patches, contrast_epsilon: float = CONTRAST_EPS, zca_epsilon: float = ZCA_EPS):
    """Fit the whitening on normalized patches; returns ``(model, whitened patches)``."""
    normed = contrast_normalize(raw_patches, contrast_epsilon)
    model = zca_fit(normed, zca_epsilon, contrast_epsilon)
    return model, zca_apply(model, normed)


# ---------------------------------------------------------------------------
# toy Gaussian mixture


def _default_means() -> np.ndarray:
    angles = np.deg2rad([45.0, 90.0, 135.0])
    sparse = 3.5 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return np.vstack([[0.0, 0.0], sparse])


@dataclass
class ToyGmmSpec:
    """One dense component at the origin and three sparse ones on a circle around it."""

    weights: np.ndarray = field(default_factory=lambda: np.array([0.55, 0.15, 0.15, 0.15]))
    means: np.ndarray = field(default_factory=_default_means)
    covariances: np.ndarray = field(default_factory=lambda: np.stack(
        [0.2 ** 2 * np.eye(2)] * 4))
    seed: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        if self.weights.shape != (4,) or self.means.shape != (4, 2) or self.covariances.shape != (4, 2, 2):
            raise ContractViolation("toy mixture needs 4 weights, 4 means in R^2 and 4 2x2 covariances")
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0, rtol=0, atol=1e-12):
            raise ContractViolation("mixture weights must be non-negative and sum to 1")

    def cholesky(self) -> np.ndarray:
        out = []
        for k, c in enumerate(self.covariances):
            if not np.allclose(c, c.T):
                raise ContractViolation(f"covariance {k} is not symmetric")
            try:
                out.append(np.linalg.cholesky(c))
            except np.linalg.LinAlgError:
                raise ContractViolation(f"covariance {k} is not positive definite") from None
        return np.stack(out)


def toy_gmm_generate(spec: ToyGmmSpec, n: int, seed=None) -> Dataset:
    """``n`` i.i.d. draws labelled by generating component; ``seed`` overrides ``spec.seed``."""
    if n < 1:
        raise ContractViolation("n must be >= 1")
    chol = spec.cholesky()
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    labels = rng.choice(4, size=n, p=spec.weights)
    z = rng.standard_normal((n, 2))
    rows = spec.means[labels] + np.einsum("nij,nj->ni", chol[labels], z)
    return Dataset(rows, labels, kind="toy")


# ---------------------------------------------------------------------------
# synthetic labelled images


def _leaf_radius(rng, r_min: float, r_max: float, alpha: float) -> float:
    """Inverse-CDF draw from p(r) proportional to r^-alpha on [r_min, r_max]."""
    lo, hi = r_min ** (1 - alpha), r_max ** (1 - alpha)
    return (lo + rng.uniform() * (hi - lo)) ** (1 / (1 - alpha))


def synthetic_images(n: int, seed, n_classes: int = 4, noise: float = 0.0, n_leaves: int = 60):
    """Labelled 32x32 colour images from an occluding dead-leaves model.

    Elliptical leaves with power-law radii are stacked front to back, which gives
    the sharp edges, flat regions and scale mixture typical of natural images.
    Each class owns a leaf orientation (jittered by up to 30 degrees) and a base
    colour; leaf colours scatter around it.  Returns ``(images, labels)`` with
    images shaped (n, 32, 32, 3) in [0, 1].
    """
    rng = np.random.default_rng(seed)
    side = IMAGE_SIDE
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    base_angles = np.pi * np.arange(n_classes) / n_classes
    palette = np.random.default_rng(12345).uniform(0.15, 0.85, size=(n_classes, 3))
    labels = rng.integers(0, n_classes, size=n)
    images = np.empty((n, side, side, 3))
    for k in range(n):
        c = labels[k]
        img = np.full((side, side, 3), 0.5)
        covered = np.zeros((side, side), dtype=bool)
        for _ in range(n_leaves):
            r = _leaf_radius(rng, 1.5, 16.0, 2.0)
            angle = base_angles[c] + rng.uniform(-np.pi / 6, np.pi / 6)
            cy, cx = rng.uniform(-4, side + 4, size=2)
            along = (xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)
            across = -(xx - cx) * np.sin(angle) + (yy - cy) * np.cos(angle)
            leaf = ((along / (2.5 * r)) ** 2 + (across / r) ** 2 < 1.0) & ~covered
            colour = palette[c] + 0.15 * rng.standard_normal(3) + rng.uniform(-0.3, 0.3)
            img[leaf] = np.clip(colour, 0.0, 1.0)
            covered |= leaf
            if covered.all():
                break
        if noise:
            img += noise * rng.standard_normal(img.shape)
        images[k] = np.clip(img, 0.0, 1.0)
    return images, labels
