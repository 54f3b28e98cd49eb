"""On-disk run artifacts: checkpoint directory with manifest, resumable training
state, and the per-run lockfile."""

from __future__ import annotations

import fcntl
import json
import os
from pathlib import Path

import numpy as np

from ..core import GradientEstimate, GrbmParams, PersistentChains
from ..errors import ConfigError, FormatError, MissingArtifact, ResolutionError
from ..formats import read_checkpoint, write_checkpoint
from ..training import TrainState

MANIFEST = "manifest.json"


def _write_json(path: Path, doc) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)


class DirectoryCheckpointStore:
    """``<root>/epoch-NNNN.grbm`` files plus a manifest mapping epoch to file and AMI."""

    def __init__(self, root, config_hash: str = "", seed: int = 0):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash
        self.seed = seed
        path = self.root / MANIFEST
        if path.exists():
            try:
                self.manifest = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: corrupt manifest ({exc})") from None
        else:
            self.manifest = {"config_hash": config_hash, "seed": seed, "checkpoints": {}}

    @property
    def entries(self) -> dict:
        return self.manifest["checkpoints"]

    def save(self, epoch: int, params: GrbmParams, ami: float) -> str:
        key = f"epoch-{epoch:04d}"
        write_checkpoint(self.root / f"{key}.grbm", params, epoch)
        self.entries[key] = {"epoch": int(epoch), "file": f"{key}.grbm", "ami": float(ami)}
        self.manifest["config_hash"] = self.config_hash or self.manifest.get("config_hash", "")
        _write_json(self.root / MANIFEST, self.manifest)
        return key

    def load(self, checkpoint_id: str) -> GrbmParams:
        entry = self.entries.get(checkpoint_id)
        if entry is None:
            raise ResolutionError(f"checkpoint {checkpoint_id!r} is not in {self.root / MANIFEST}")
        params, epoch = read_checkpoint(self.root / entry["file"])
        if epoch != entry["epoch"]:
            raise FormatError(f"checkpoint {checkpoint_id!r}: file holds epoch {epoch}, manifest says {entry['epoch']}")
        return params

    def latest(self) -> str:
        if not self.entries:
            raise MissingArtifact(f"no checkpoints in {self.root}; run 'train' first")
        return max(self.entries, key=lambda k: self.entries[k]["epoch"])

    def truncate_after(self, epoch: int) -> None:
        """Forget checkpoints newer than ``epoch`` (used when resuming)."""
        for key in [k for k, e in self.entries.items() if e["epoch"] > epoch]:
            (self.root / self.entries.pop(key)["file"]).unlink(missing_ok=True)
        _write_json(self.root / MANIFEST, self.manifest)


def save_train_state(path, state: TrainState) -> None:
    path = Path(path)
    arrays = {"epoch": np.array(state.epoch), "dW": state.velocity.dW, "da": state.velocity.da,
              "db": state.velocity.db}
    if state.chains is not None:
        chain_state = state.chains.get_state()
        arrays["chain_states"] = chain_state["states"]
        arrays["chain_streams"] = np.array(json.dumps(chain_state["streams"]))
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_train_state(path) -> TrainState:
    try:
        z = np.load(path)
    except FileNotFoundError:
        raise MissingArtifact(f"{path}: no saved training state; run 'train' without --resume first") from None
    chains = None
    if "chain_states" in z:
        chains = PersistentChains.from_state({"states": z["chain_states"],
                                              "streams": json.loads(str(z["chain_streams"]))})
    velocity = GradientEstimate(z["dW"].copy(), z["da"].copy(), z["db"].copy())
    return TrainState(int(z["epoch"]), velocity, chains)


class RunLock:
    """Exclusive, non-blocking lock on ``<run dir>/.lock``."""

    def __init__(self, run_dir):
        self.path = Path(run_dir) / ".lock"
        self.fh = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w")
        try:
            fcntl.flock(self.fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            self.fh.close()
            raise ConfigError(f"{self.path.parent} is in use by another command") from None
        return self

    def __exit__(self, *exc):
        fcntl.flock(self.fh, fcntl.LOCK_UN)
        self.fh.close()
