"""Experiment drivers shared by the command line and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .classify import accuracy, train_l2svm
from .core import PCD, Exact, GrbmParams, SparsityConfig, TrainConfig, init_params
from .data import (CONTRAST_EPS, ZCA_EPS, ToyGmmSpec, extract_patches, fit_preprocessing, load_cifar10,
                   rows_to_images, synthetic_images, toy_gmm_generate)
from .encode import EncoderConfig, extract_image_features
from .infomax import AmiTrace, MutualInfoReport, StopCriterion, early_stop_index, unit_mutual_information
from .training import MemoryCheckpointStore, train


@dataclass
class ToyConfig:
    n_samples: int = 1000
    epochs: int = 2000
    n_hidden: int = 4
    sigma: float = 0.9
    learning_rate: float = 0.3
    seed: int = 0
    snapshot_epochs: tuple = (0, 10, 140, 2000)
    spec: ToyGmmSpec = field(default_factory=ToyGmmSpec)


@dataclass
class ToyResult:
    data: np.ndarray
    components: np.ndarray
    filter_norms: np.ndarray  # (epochs + 1, M)
    trace: AmiTrace
    snapshots: dict  # epoch -> GrbmParams
    params: GrbmParams
    metrics: list


def run_toy(cfg: ToyConfig, on_epoch: Optional[Callable] = None) -> ToyResult:
    """Full-batch training of a small GRBM on the toy mixture with the exact gradient."""
    ds = toy_gmm_generate(cfg.spec, cfg.n_samples)
    params = init_params(cfg.n_hidden, 2, np.random.default_rng(cfg.seed), sigma=cfg.sigma)
    tc = TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs, batch_size=cfg.n_samples,
                     algorithm=Exact(), seed=cfg.seed, ami_eval_size=cfg.n_samples,
                     checkpoint_every=max(1, cfg.epochs))
    norms = []
    snapshots = {}

    def hook(row, p):
        norms.append(p.filter_norms())
        if row["epoch"] in cfg.snapshot_epochs:
            snapshots[row["epoch"]] = p.copy()
        if on_epoch is not None:
            on_epoch(row, p)

    result = train(params, ds.rows, tc, store=MemoryCheckpointStore(), on_epoch=hook)
    return ToyResult(ds.rows, ds.labels, np.array(norms), result.trace, snapshots, result.params, result.metrics)


@dataclass
class ImageRunConfig:
    """A desk-scale image run: synthetic images, 6x6 colour patches, small GRBM.

    The learning rate is scaled so that rate times update count matches a run of
    80 epochs over 100,000 patches at 0.003; sigma sits below the unit variance
    of whitened data so filters can grow away from zero.
    """

    n_train_images: int = 2000
    n_test_images: int = 1000
    rf_size: int = 6
    n_patches: int = 20000
    n_hidden: int = 64
    epochs: int = 20
    learning_rate: float = 0.05
    batch_size: int = 100
    sigma: float = 0.7
    noise: float = 0.0
    sparsity_target: Optional[float] = 0.03
    sparsity_strength: float = 0.3
    threshold: float = 0.25
    C: float = 35.0
    seed: int = 0
    ami_eval_size: int = 10000


@dataclass
class ImageRunResult:
    trace: AmiTrace
    store: MemoryCheckpointStore
    metrics: list
    selected_epoch: int
    selected_report: MutualInfoReport
    final_report: MutualInfoReport
    selected_params: GrbmParams
    final_params: GrbmParams
    accuracy_selected: float = float("nan")
    eval_patches: Optional[np.ndarray] = None
    accuracy_final: float = float("nan")


def load_images(source: str, n_train: int, n_test: int, seed, cifar_dir=None, noise: float = 0.0):
    """``(train_images, train_labels, test_images, test_labels)``.

    Synthetic sets are generated from ``seed``; CIFAR-10 sets take the first
    ``n_train`` / ``n_test`` images of each split (0 means all).
    """
    if source == "synthetic":
        train_imgs, train_labels = synthetic_images(n_train, [seed, 10], noise=noise)
        test_imgs, test_labels = synthetic_images(n_test, [seed, 11], noise=noise)
        return train_imgs, train_labels, test_imgs, test_labels
    train, test = load_cifar10(cifar_dir)
    n_train = n_train or len(train)
    n_test = n_test or len(test)
    return (rows_to_images(train.rows[:n_train]), train.labels[:n_train],
            rows_to_images(test.rows[:n_test]), test.labels[:n_test])


def training_patches(images, rf_size: int, n_patches: int, seed, contrast_eps=CONTRAST_EPS, zca_eps=ZCA_EPS):
    """Random patches, normalized and whitened; returns ``(PreprocessModel, patches)``."""
    raw = extract_patches(images, rf_size, n_patches, [seed, 12])
    return fit_preprocessing(raw, contrast_eps, zca_eps)


def initial_image_params(n_hidden: int, dim: int, seed, sigma=1.0, weight_std=0.01) -> GrbmParams:
    return init_params(n_hidden, dim, np.random.default_rng([seed, 13]), sigma=sigma, weight_std=weight_std)


def run_image_experiment(cfg: ImageRunConfig, theta: float = 0.0, classify: bool = True) -> ImageRunResult:
    """Train on whitened patches, pick a checkpoint by AMI, optionally compare test accuracy.

    Accuracy is measured for the selected checkpoint and for the final epoch with
    the same encoder and SVM settings.
    """
    train_imgs, train_labels, test_imgs, test_labels = load_images(
        "synthetic", cfg.n_train_images, cfg.n_test_images, cfg.seed, noise=cfg.noise)
    prep, patches = training_patches(train_imgs, cfg.rf_size, cfg.n_patches, cfg.seed)
    params = initial_image_params(cfg.n_hidden, patches.shape[1], cfg.seed, cfg.sigma)
    sparsity = None
    if cfg.sparsity_target is not None:
        sparsity = SparsityConfig(cfg.sparsity_target, cfg.sparsity_strength)
    tc = TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs, batch_size=cfg.batch_size,
                     algorithm=PCD(), sparsity=sparsity, seed=cfg.seed, ami_eval_size=cfg.ami_eval_size)
    store = MemoryCheckpointStore()
    result = train(params, patches, tc, store=store)
    epoch, ckpt = early_stop_index(result.trace, StopCriterion(theta))
    selected = store.load(ckpt)
    out = ImageRunResult(result.trace, store, result.metrics, epoch,
                         unit_mutual_information(selected, patches[:cfg.ami_eval_size]),
                         unit_mutual_information(result.params, patches[:cfg.ami_eval_size]),
                         selected, result.params, eval_patches=patches[:cfg.ami_eval_size])
    if classify:
        enc = EncoderConfig(threshold=cfg.threshold)

        def score(p):
            f_train = extract_image_features(p, prep, train_imgs, enc)
            f_test = extract_image_features(p, prep, test_imgs, enc)
            return accuracy(train_l2svm(f_train, train_labels, cfg.C), f_test, test_labels)

        out.accuracy_selected = score(selected)
        out.accuracy_final = out.accuracy_selected if epoch == cfg.epochs else score(result.params)
    return out
