"""Subcommand implementations.  Each takes a :class:`Run` and returns an exit status."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import oracle
from ..classify import CvGrid, PipelineHooks, accuracy, cross_validate, train_l2svm
from ..core import CD, PCD, Exact, SparsityConfig, TrainConfig
from ..data import PreprocessModel, ToyGmmSpec, extract_patches, preprocess
from ..encode import EncoderConfig, extract_image_features
from ..errors import ContractViolation, MissingArtifact, NumericFailure
from ..experiments import (ToyConfig, initial_image_params, load_images, run_toy, training_patches)
from ..formats import read_dataset, read_svm, write_checkpoint, write_dataset, write_svm
from ..infomax import AmiTrace, StopCriterion, early_stop_index, unit_mutual_information
from ..training import MemoryCheckpointStore, train
from . import plots
from .config import RunConfig, checkpoint_every
from .store import DirectoryCheckpointStore, load_train_state, save_train_state

log = logging.getLogger(__name__)


@dataclass
class Run:
    cfg: RunConfig
    out: Path

    @property
    def seed(self) -> int:
        return self.cfg["seed"]

    @property
    def config_hash(self) -> str:
        return self.cfg.hash

    def stamp(self, doc: dict) -> dict:
        return {**doc, "config_hash": self.config_hash, "seed": self.seed}

    def write_json(self, name, doc) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.stamp(doc), indent=1, sort_keys=True) + "\n")
        return path

    def store(self) -> DirectoryCheckpointStore:
        return DirectoryCheckpointStore(self.out / "checkpoints", self.config_hash, self.seed)


def _jsonl_line(run: Run, row: dict) -> str:
    return json.dumps(run.stamp(row), sort_keys=True) + "\n"


def _read_metrics(run: Run) -> list:
    path = run.out / "metrics.jsonl"
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run 'train' first")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# toy


def _toy_spec(cfg: RunConfig) -> ToyGmmSpec:
    spec = ToyGmmSpec(seed=cfg["seed"])
    if cfg["toy.weights"] is not None:
        spec.weights = np.array(cfg["toy.weights"])
    if cfg["toy.means"] is not None:
        spec.means = np.array(cfg["toy.means"]).reshape(4, 2)
    if cfg["toy.covariances"] is not None:
        spec.covariances = np.array(cfg["toy.covariances"]).reshape(4, 2, 2)
    spec.__post_init__()
    return spec


def cmd_toy(run: Run) -> int:
    cfg = run.cfg
    epochs = cfg["toy.epochs"]
    snapshots = tuple(e for e in cfg["toy.snapshots"] if 0 <= e <= epochs) or (0,)
    toy = ToyConfig(n_samples=cfg["toy.n_samples"], epochs=epochs, n_hidden=cfg["toy.n_hidden"],
                    sigma=cfg["toy.sigma"], learning_rate=cfg["toy.learning_rate"], seed=cfg["seed"],
                    snapshot_epochs=snapshots, spec=_toy_spec(cfg))
    with open(run.out / "metrics.jsonl", "w") as fh:
        def on_epoch(row, p):
            norms = p.filter_norms()
            fh.write(_jsonl_line(run, {
                "epoch": row["epoch"], "ami": row["ami"], "filter_norms": norms.tolist(),
                "attenuated": int(np.sum(norms < 0.1 * norms.max())) if norms.max() > 0 else 0,
            }))

        result = run_toy(toy, on_epoch)
    stamp = dict(config_hash=run.config_hash, seed=run.seed)
    for epoch, params in sorted(result.snapshots.items()):
        plots.toy_snapshot(run.out / f"toy_epoch_{epoch:04d}.svg", result.data, result.components, params, epoch,
                           **stamp)
    epochs_axis = result.trace.epochs
    plots.ami_trace(run.out / "ami.svg", epochs_axis, result.trace.values,
                    selected={result.trace.peak_epoch: "peak"}, constant=cfg["plot.ami_constant"], **stamp)
    plots.filter_norm_trace(run.out / "filter_norms.svg", epochs_axis, result.filter_norms, **stamp)
    final = result.filter_norms[-1]
    run.write_json("toy_summary.json", {
        "epochs": epochs,
        "peak_epoch": result.trace.peak_epoch,
        "peak_ami": result.trace.peak_value,
        "final_ami": float(result.trace.values[-1]),
        "final_filter_norms": final.tolist(),
        "final_attenuated": int(np.sum(final < 0.1 * final.max())) if final.max() > 0 else 0,
        "snapshots": [f"toy_epoch_{e:04d}.svg" for e in sorted(result.snapshots)],
    })
    print(f"toy: AMI peak {result.trace.peak_value:.4f} at epoch {result.trace.peak_epoch}, "
          f"final {result.trace.values[-1]:.4f}")
    return 0


# ---------------------------------------------------------------------------
# train


def _train_config(cfg: RunConfig) -> TrainConfig:
    alg = {"pcd": lambda: PCD(cfg["train.k"], cfg["train.n_chains"]),
           "cd": lambda: CD(cfg["train.k"]),
           "exact": Exact}[cfg["train.algorithm"]]()
    sparsity = None
    if cfg["train.sparsity_target"] is not None:
        sparsity = SparsityConfig(cfg["train.sparsity_target"], cfg["train.sparsity_strength"])
    return TrainConfig(learning_rate=cfg["train.learning_rate"], epochs=cfg["train.epochs"],
                       batch_size=cfg["train.batch_size"], algorithm=alg, sparsity=sparsity,
                       momentum=cfg["train.momentum"], seed=cfg["seed"], checkpoint_every=checkpoint_every(cfg),
                       ami_eval_size=cfg["train.ami_eval_size"], ami_window=cfg["train.ami_window"])


def _images(run: Run):
    cfg = run.cfg
    return load_images(cfg["data.source"], cfg["data.n_train_images"], cfg["data.n_test_images"], cfg["seed"],
                       cfg["data.cifar_dir"] or None)


def _prepare_patches(run: Run):
    """Whitened training patches, plus held-out patches from the test images for FED."""
    cfg = run.cfg
    train_imgs, _, test_imgs, _ = _images(run)
    if len(train_imgs) == 0:
        raise ContractViolation("no training images (data.n_train_images = 0)")
    prep, patches = training_patches(train_imgs, cfg["data.rf_size"], cfg["data.n_patches"], cfg["seed"],
                                     cfg["data.contrast_eps"], cfg["data.zca_eps"])
    prep.save(run.out / "preprocess.npz")
    write_dataset(run.out / "patches.dset", patches)
    heldout = None
    if len(test_imgs):
        n_held = max(1, min(cfg["train.ami_eval_size"], cfg["data.n_patches"] // 10))
        heldout = preprocess(prep, extract_patches(test_imgs, cfg["data.rf_size"], n_held, [cfg["seed"], 14]))
        write_dataset(run.out / "heldout.dset", heldout)
    return patches, heldout


def _plot_training(run: Run, metrics: list) -> None:
    stamp = dict(config_hash=run.config_hash, seed=run.seed)
    epochs = [m["epoch"] for m in metrics]
    trace = AmiTrace.from_records(metrics)
    plots.ami_trace(run.out / "ami.svg", epochs, trace.values, selected={trace.peak_epoch: "peak"},
                    constant=run.cfg["plot.ami_constant"], **stamp)
    plots.filter_norm_trace(run.out / "filter_norms.svg", epochs, [m["filter_norms"] for m in metrics], **stamp)


def cmd_train(run: Run, resume: bool = False) -> int:
    cfg = run.cfg
    tc = _train_config(cfg)
    store = run.store()
    metrics_path = run.out / "metrics.jsonl"
    state = None
    if resume:
        state = load_train_state(run.out / "train_state.npz")
        params = store.load(f"epoch-{state.epoch:04d}")
        patches, _ = read_dataset(run.out / "patches.dset")
        heldout = read_dataset(run.out / "heldout.dset")[0] if (run.out / "heldout.dset").exists() else None
        store.truncate_after(state.epoch)
        kept = [m for m in _read_metrics(run) if m["epoch"] <= state.epoch]
        metrics_path.write_text("".join(json.dumps(m, sort_keys=True) + "\n" for m in kept))
        remaining = cfg["train.epochs"] - state.epoch
        if remaining <= 0:
            print(f"train: already at epoch {state.epoch}, nothing to do")
            return 0
        tc = replace(tc, epochs=remaining)
        mode = "a"
    else:
        patches, heldout = _prepare_patches(run)
        params = initial_image_params(cfg["train.n_hidden"], patches.shape[1], cfg["seed"], cfg["train.sigma"],
                                      cfg["train.weight_std"])
        mode = "w"
    with open(metrics_path, mode) as fh:
        def on_epoch(row, p):
            fh.write(_jsonl_line(run, {**row, "filter_norms": p.filter_norms().tolist()}))
            fh.flush()

        try:
            train(params, patches, tc, store=store, on_epoch=on_epoch, heldout=heldout, state=state,
                  on_checkpoint=lambda st: save_train_state(run.out / "train_state.npz", st))
        except NumericFailure as exc:
            if exc.last_good is not None:
                write_checkpoint(run.out / "last_good.grbm", exc.last_good, max(0, (exc.epoch or 1) - 1))
            raise
    metrics = _read_metrics(run)
    _plot_training(run, metrics)
    trace = AmiTrace.from_records(metrics)
    run.write_json("train_summary.json", {
        "epochs": int(trace.epochs[-1]), "peak_epoch": trace.peak_epoch, "peak_ami": trace.peak_value,
        "final_ami": float(trace.values[-1]), "checkpoints": len(store.entries),
    })
    print(f"train: {len(metrics)} epochs logged, AMI peak {trace.peak_value:.4f} at epoch {trace.peak_epoch}")
    return 0


# ---------------------------------------------------------------------------
# select-stop, features, classify


def select_checkpoint(run: Run, theta: float):
    """``(epoch, checkpoint id)`` chosen on the (optionally smoothed) AMI trace."""
    trace = AmiTrace.from_records(_read_metrics(run)).smoothed(run.cfg["train.ami_window"])
    return early_stop_index(trace, StopCriterion(theta))


def cmd_select_stop(run: Run, theta: float) -> int:
    epoch, ckpt = select_checkpoint(run, theta)
    run.store().load(ckpt)  # fail now, not later, if the file is gone
    line = _jsonl_line(run, {"theta": theta, "t_star": epoch, "checkpoint_id": ckpt})
    with open(run.out / "stop.jsonl", "a") as fh:
        fh.write(line)
    print(ckpt)
    return 0


def _feature_dir(run: Run, ckpt: str) -> Path:
    return run.out / "features" / ckpt


def cmd_features(run: Run, ckpt: str) -> int:
    cfg = run.cfg
    params = run.store().load(ckpt)
    prep_path = run.out / "preprocess.npz"
    if not prep_path.exists():
        raise MissingArtifact(f"{prep_path} not found; run 'train' first")
    prep = PreprocessModel.load(prep_path)
    train_imgs, train_labels, test_imgs, test_labels = _images(run)
    if len(train_imgs) == 0 or len(test_imgs) == 0:
        raise ContractViolation("empty feature set: need both training and test images")
    enc = EncoderConfig(cfg["encode.scheme"], cfg["encode.threshold"], cfg["encode.stride"])
    out = _feature_dir(run, ckpt)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "train.dset", extract_image_features(params, prep, train_imgs, enc), train_labels)
    write_dataset(out / "test.dset", extract_image_features(params, prep, test_imgs, enc), test_labels)
    run.write_json(f"features/{ckpt}/features.json", {
        "checkpoint_id": ckpt, "n_train": len(train_imgs), "n_test": len(test_imgs), "dim": 4 * params.M,
        "scheme": enc.scheme, "threshold": enc.threshold, "stride": enc.stride,
    })
    print(f"features: {out}")
    return 0


def _load_features(run: Run, ckpt: str, split: str):
    path = _feature_dir(run, ckpt) / f"{split}.dset"
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run 'features --checkpoint {ckpt}' first")
    rows, labels = read_dataset(path)
    if len(rows) == 0:
        raise ContractViolation(f"{path}: empty feature set")
    if labels is None:
        raise ContractViolation(f"{path}: features carry no labels")
    return rows, labels


def classify_checkpoint(run: Run, ckpt: str) -> dict:
    cfg = run.cfg
    X_train, y_train = _load_features(run, ckpt, "train")
    X_test, y_test = _load_features(run, ckpt, "test")
    model = train_l2svm(X_train, y_train, cfg["svm.C"], cfg["svm.tol"], cfg["svm.max_iter"])
    write_svm(_feature_dir(run, ckpt) / "svm.svmm", model)
    report = {
        "checkpoint_id": ckpt,
        "C": cfg["svm.C"],
        "train_accuracy": accuracy(model, X_train, y_train),
        "test_accuracy": accuracy(model, X_test, y_test),
    }
    run.write_json(f"features/{ckpt}/classify.json", report)
    return report


def cmd_classify(run: Run, ckpt: str) -> int:
    report = classify_checkpoint(run, ckpt)
    print(f"classify {ckpt}: test accuracy {report['test_accuracy']:.2f}%")
    return 0


# ---------------------------------------------------------------------------
# pipeline


def _training_complete(run: Run) -> bool:
    try:
        metrics = _read_metrics(run)
    except MissingArtifact:
        return False
    return bool(metrics) and metrics[-1]["epoch"] == run.cfg["train.epochs"] and \
        metrics[-1]["config_hash"] == run.config_hash


def _cv_hooks(run: Run, train_imgs, patches_seed):
    """GRBM + encoder rebuilt from the training-fold images only."""
    cfg = run.cfg
    enc_base = (cfg["encode.scheme"], cfg["encode.stride"])

    def fit(train_idx, rho, lam):
        prep, patches = training_patches(train_imgs[train_idx], cfg["data.rf_size"], cfg["data.n_patches"],
                                         patches_seed, cfg["data.contrast_eps"], cfg["data.zca_eps"])
        tc = replace(_train_config(cfg), sparsity=SparsityConfig(rho, lam))
        params = initial_image_params(cfg["train.n_hidden"], patches.shape[1], cfg["seed"], cfg["train.sigma"],
                                      cfg["train.weight_std"])
        result = train(params, patches, tc, store=MemoryCheckpointStore())
        return prep, result.params

    def encode(rep, idx, t):
        prep, params = rep
        return extract_image_features(params, prep, train_imgs[idx], EncoderConfig(enc_base[0], t, enc_base[1]))

    return PipelineHooks(fit, encode)


def cmd_pipeline(run: Run) -> int:
    cfg = run.cfg
    # for CIFAR a count of 0 means the whole split
    if cfg["data.source"] == "synthetic" and 0 in (cfg["data.n_train_images"], cfg["data.n_test_images"]):
        raise ContractViolation("empty feature set: data.n_train_images and data.n_test_images must be positive")
    report = {}
    if cfg["pipeline.cross_validate"]:
        train_imgs, train_labels, _, _ = _images(run)
        grid = CvGrid(cfg["cv.rho"], cfg["cv.lambda"], cfg["cv.C"], cfg["cv.t"], cfg["cv.folds"])
        cv = cross_validate(train_labels, grid, _cv_hooks(run, train_imgs, cfg["seed"]), seed=cfg["seed"])
        rho, lam, C, t = cv.best
        run.write_json("cv.json", json.loads(cv.to_json()))
        run.cfg = type(cfg)({**cfg, "train.sparsity_target": rho, "train.sparsity_strength": lam,
                             "svm.C": C, "encode.threshold": t})
        run.cfg.write(run.out / "config.txt")
        report["cross_validation"] = dict(zip(("rho", "lambda", "C", "t"), cv.best))
    if not _training_complete(run):
        cmd_train(run)
    metrics = _read_metrics(run)
    final_ckpt = next(m["checkpoint_id"] for m in reversed(metrics) if m["checkpoint_id"])
    chosen = {}
    for theta in cfg["stop.thetas"]:
        epoch, ckpt = select_checkpoint(run, theta)
        chosen[repr(float(theta))] = {"theta": theta, "t_star": epoch, "checkpoint_id": ckpt}
    done = {}
    for ckpt in sorted({c["checkpoint_id"] for c in chosen.values()} | {final_ckpt}):
        cmd_features(run, ckpt)
        done[ckpt] = classify_checkpoint(run, ckpt)
    for entry in chosen.values():
        entry["test_accuracy"] = done[entry["checkpoint_id"]]["test_accuracy"]
    report.update({
        "final": {"checkpoint_id": final_ckpt, "epoch": metrics[-1]["epoch"],
                  "test_accuracy": done[final_ckpt]["test_accuracy"]},
        "early_stopping": [chosen[k] for k in sorted(chosen, key=float)],
    })
    run.write_json("report.json", report)
    for entry in report["early_stopping"]:
        print(f"theta={entry['theta']:+.2f}  epoch {entry['t_star']:3d}  accuracy {entry['test_accuracy']:.2f}%")
    print(f"final         epoch {metrics[-1]['epoch']:3d}  accuracy {report['final']['test_accuracy']:.2f}%")
    return 0


# ---------------------------------------------------------------------------
# verify


def _fd_relative_error(params, data, step=1e-4) -> float:
    grad = oracle.exact_gradient(params, data)
    worst = 0.0
    for name, g in (("W", grad.dW), ("a", grad.da), ("b", grad.db)):
        for idx in np.ndindex(g.shape):
            plus, minus = params.copy(), params.copy()
            getattr(plus, name)[idx] += step
            getattr(minus, name)[idx] -= step
            fd = (oracle.exact_log_likelihood(plus, data) - oracle.exact_log_likelihood(minus, data)) / (2 * step)
            worst = max(worst, abs(g[idx] - fd) / max(abs(fd), 1e-3))
    return worst


def verify_models(n_models: int, seed: int) -> list:
    """Upper-bound and gradient checks on seeded random tiny GRBMs."""
    from ..core import GrbmParams
    from ..infomax import ami

    rows = []
    for s in range(n_models):
        rng = np.random.default_rng([seed, 99, s])
        M, N, n = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 201))
        params = GrbmParams(rng.normal(0, 1.5, (M, N)), rng.normal(0, 1, M), rng.normal(0, 0.5, N),
                            rng.uniform(0.5, 1.5, N))
        data = rng.normal(0, 2, (n, N))
        joint = oracle.exact_joint_mutual_information(params, data)
        approx = ami(params, data)
        fd_err = _fd_relative_error(params, data[:min(n, 50)])
        rows.append({"model": s, "M": M, "N": N, "n": n, "joint_mi": joint, "ami": approx,
                     "upper_bound_ok": bool(joint <= approx + 1e-9),
                     "gradient_rel_error": fd_err, "gradient_ok": bool(fd_err <= 1e-5)})
    return rows


def cmd_verify(run: Run) -> int:
    rows = verify_models(run.cfg["verify.n_models"], run.seed)
    ok = all(r["upper_bound_ok"] and r["gradient_ok"] for r in rows)
    run.write_json("verify.json", {"passed": ok, "models": rows})
    n_bound = sum(r["upper_bound_ok"] for r in rows)
    n_grad = sum(r["gradient_ok"] for r in rows)
    print(f"verify: upper bound {n_bound}/{len(rows)}, gradient {n_grad}/{len(rows)}")
    return 0 if ok else 1
