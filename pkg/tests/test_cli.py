import json

import numpy as np
import pytest

from grbm_infomax.cli import main
from grbm_infomax.cli.config import checkpoint_every, load, parse_lines, resolve
from grbm_infomax.cli.store import DirectoryCheckpointStore, RunLock
from grbm_infomax.core import init_params
from grbm_infomax.errors import ConfigError, FormatError, MissingArtifact, ResolutionError
from grbm_infomax.formats import read_checkpoint

TINY = """
data.n_train_images = 24
data.n_test_images = 12
data.n_patches = 400
train.n_hidden = 6
train.epochs = 3
train.batch_size = 50
train.ami_eval_size = 400
svm.max_iter = 200
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def run(*argv):
    return main([str(a) for a in argv])


# ---------------------------------------------------------------------------
# configuration


class TestConfig:
    def test_defaults(self):
        cfg = resolve()
        assert cfg["train.epochs"] == 80
        assert cfg["stop.thetas"] == (-1.5, -0.7, 0.0, 0.7, 1.5)
        assert cfg["train.sparsity_target"] == 0.03 and cfg["train.sigma"] == 0.7

    def test_unknown_and_duplicate_keys(self):
        with pytest.raises(ConfigError, match="bogus"):
            parse_lines(["bogus = 1"])
        with pytest.raises(ConfigError, match="duplicate"):
            parse_lines(["seed = 1", "seed = 2"])
        with pytest.raises(ConfigError, match="train.epochs"):
            resolve({"train.epochs": "many"})

    def test_comments_and_blank_lines(self):
        assert parse_lines(["# header", "", "seed = 4  # trailing"]) == {"seed": "4"}

    def test_value_checks_name_the_key(self):
        for key, value in [("train.learning_rate", "0"), ("train.momentum", "1.0"), ("toy.weights", "1 2"),
                           ("train.sparsity_target", "1.5"), ("stop.theta", "nan")]:
            with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
                resolve({key: value})

    def test_hash_is_stable_and_sensitive(self, tmp_path):
        a = resolve({"seed": "3"})
        assert a.hash == resolve({"seed": "3"}).hash
        assert a.hash != resolve({"seed": "4"}).hash
        a.write(tmp_path / "c.txt")
        text = (tmp_path / "c.txt").read_text()
        assert a.hash in text
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        assert load(tmp_path / "c.txt") == a
        assert len(lines) == len(a)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load(tmp_path / "nope.cfg")

    @pytest.mark.parametrize("epochs, expected", [(20, 1), (80, 1), (100, 1), (101, 2), (2000, 20)])
    def test_checkpoint_density(self, epochs, expected):
        assert checkpoint_every(resolve({"train.epochs": str(epochs)})) == expected


# ---------------------------------------------------------------------------
# checkpoint store


class TestStore:
    def test_round_trip_and_manifest(self, tmp_path):
        store = DirectoryCheckpointStore(tmp_path, "abc", 1)
        p = init_params(3, 2, 0)
        key = store.save(5, p, 0.25)
        assert key == "epoch-0005"
        again = DirectoryCheckpointStore(tmp_path)
        assert again.load(key).identical_to(p)
        assert again.entries[key] == {"epoch": 5, "file": "epoch-0005.grbm", "ami": 0.25}
        assert again.manifest["config_hash"] == "abc"

    def test_missing_and_inconsistent(self, tmp_path):
        store = DirectoryCheckpointStore(tmp_path)
        with pytest.raises(MissingArtifact):
            store.latest()
        with pytest.raises(ResolutionError):
            store.load("epoch-0001")
        store.save(1, init_params(2, 2, 0), 0.0)
        store.entries["epoch-0001"]["epoch"] = 2
        with pytest.raises(FormatError):
            store.load("epoch-0001")

    def test_truncate(self, tmp_path):
        store = DirectoryCheckpointStore(tmp_path)
        for e in range(4):
            store.save(e, init_params(2, 2, e), 0.0)
        store.truncate_after(1)
        assert sorted(store.entries) == ["epoch-0000", "epoch-0001"]
        assert not (tmp_path / "epoch-0003.grbm").exists()

    def test_lock_is_exclusive(self, tmp_path):
        with RunLock(tmp_path):
            with pytest.raises(ConfigError, match="in use"):
                with RunLock(tmp_path):
                    pass
        with RunLock(tmp_path):
            pass


# ---------------------------------------------------------------------------
# commands


def test_verify(tmp_path, capsys):
    assert run("verify", "--out", tmp_path, "--set", "verify.n_models=8", "--seed", 2) == 0
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert doc["passed"] and len(doc["models"]) == 8 and doc["seed"] == 2
    assert all(m["M"] <= 8 and m["N"] <= 4 and m["n"] <= 200 for m in doc["models"])
    assert "8/8" in capsys.readouterr().out


def test_toy_small(tmp_path):
    out = tmp_path / "toy"
    assert run("toy", "--out", out, "--set", "toy.epochs=12", "--set", "toy.snapshots=0,10,140") == 0
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 13
    row = json.loads(lines[-1])
    assert len(row["filter_norms"]) == 4 and "attenuated" in row
    assert sorted(p.name for p in out.glob("toy_epoch_*.svg")) == ["toy_epoch_0000.svg", "toy_epoch_0010.svg"]
    assert (out / "ami.svg").exists() and (out / "filter_norms.svg").exists()
    summary = json.loads((out / "toy_summary.json").read_text())
    assert summary["config_hash"] == row["config_hash"]


def test_toy_zero_epochs(tmp_path):
    assert run("toy", "--out", tmp_path, "--set", "toy.epochs=0") == 0
    assert [p.name for p in tmp_path.glob("toy_epoch_*.svg")] == ["toy_epoch_0000.svg"]
    assert len((tmp_path / "metrics.jsonl").read_text().splitlines()) == 1


def test_toy_svg_is_reproducible_and_stamped(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("toy", "--out", d, "--set", "toy.epochs=3", "--set", "toy.snapshots=3") == 0
    for name in ("toy_epoch_0003.svg", "ami.svg", "filter_norms.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    cfg_hash = json.loads((a / "toy_summary.json").read_text())["config_hash"]
    assert cfg_hash in (a / "toy_epoch_0003.svg").read_text()


def test_pipeline_end_to_end(tmp_path, tiny_cfg, capsys):
    out = tmp_path / "run"
    assert run("pipeline", "--config", tiny_cfg, "--out", out) == 0
    metrics = [json.loads(x) for x in (out / "metrics.jsonl").read_text().splitlines()]
    assert [m["epoch"] for m in metrics] == [0, 1, 2, 3]
    for m in metrics:
        assert {"epoch", "ami", "fed", "mean_abs_weight", "sparsity_mean"} <= set(m)
        assert np.isfinite(m["fed"])
    report = json.loads((out / "report.json").read_text())
    assert [e["theta"] for e in report["early_stopping"]] == [-1.5, -0.7, 0.0, 0.7, 1.5]
    assert report["final"]["epoch"] == 3
    cfg_hash = report["config_hash"]
    assert (out / "config.txt").read_text().startswith(f"# config_hash = {cfg_hash}")
    for path in out.rglob("*.json"):
        if path.name != "manifest.json":
            doc = json.loads(path.read_text())
            assert doc["config_hash"] == cfg_hash and doc["seed"] == 0, path
    assert json.loads((out / "checkpoints" / "manifest.json").read_text())["config_hash"] == cfg_hash
    assert "final" in capsys.readouterr().out


def test_pipeline_is_reproducible(tmp_path, tiny_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("pipeline", "--config", tiny_cfg, "--out", d) == 0
    assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    # rerunning in place reuses the finished training and gives the same report
    assert run("pipeline", "--config", tiny_cfg, "--out", a) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_pipeline_empty_feature_set(tmp_path, tiny_cfg, capsys):
    assert run("pipeline", "--config", tiny_cfg, "--out", tmp_path, "--set", "data.n_test_images=0") == 2
    assert "empty feature set" in capsys.readouterr().err
    assert not (tmp_path / "report.json").exists()


def test_stepwise_commands(tmp_path, tiny_cfg, capsys):
    args = ["--config", tiny_cfg, "--out", tmp_path]
    assert run("train", *args) == 0
    assert run("select-stop", *args, "--theta", 0.0) == 0
    ckpt = capsys.readouterr().out.strip().splitlines()[-1]
    stop = json.loads((tmp_path / "stop.jsonl").read_text().splitlines()[-1])
    assert stop["checkpoint_id"] == ckpt and stop["theta"] == 0.0
    assert run("features", *args, "--checkpoint", ckpt) == 0
    assert run("classify", *args, "--checkpoint", ckpt) == 0
    report = json.loads((tmp_path / "features" / ckpt / "classify.json").read_text())
    assert 0.0 <= report["test_accuracy"] <= 100.0
    assert (tmp_path / "features" / ckpt / "svm.svmm").exists()
    # default checkpoint is the theta-selected one
    assert run("features", *args, "--theta", 1.5) == 0


def test_resume_matches_uninterrupted(tmp_path):
    base = TINY.replace("train.epochs = 3", "train.epochs = {}")
    full_cfg, short_cfg = tmp_path / "full.cfg", tmp_path / "short.cfg"
    full_cfg.write_text(base.format(4))
    short_cfg.write_text(base.format(2))
    assert run("train", "--config", full_cfg, "--out", tmp_path / "full") == 0
    assert run("train", "--config", short_cfg, "--out", tmp_path / "part") == 0
    assert run("train", "--config", full_cfg, "--out", tmp_path / "part", "--resume") == 0
    a, _ = read_checkpoint(tmp_path / "full" / "checkpoints" / "epoch-0004.grbm")
    b, _ = read_checkpoint(tmp_path / "part" / "checkpoints" / "epoch-0004.grbm")
    assert a.identical_to(b)
    epochs = [json.loads(x)["epoch"] for x in (tmp_path / "part" / "metrics.jsonl").read_text().splitlines()]
    assert epochs == [0, 1, 2, 3, 4]


def test_resume_without_state(tmp_path, tiny_cfg):
    assert run("train", "--config", tiny_cfg, "--out", tmp_path, "--resume") == 4


def test_missing_artifacts_name_the_producer(tmp_path, tiny_cfg, capsys):
    for cmd in ("select-stop", "features", "classify"):
        assert run(cmd, "--config", tiny_cfg, "--out", tmp_path / cmd) == 4
        assert "run 'train' first" in capsys.readouterr().err
    assert run("train", "--config", tiny_cfg, "--out", tmp_path / "t") == 0
    assert run("classify", "--config", tiny_cfg, "--out", tmp_path / "t", "--checkpoint", "epoch-0001") == 4
    assert "features --checkpoint epoch-0001" in capsys.readouterr().err
    assert run("features", "--config", tiny_cfg, "--out", tmp_path / "t", "--checkpoint", "epoch-0099") == 4


def test_config_errors_exit_2(tmp_path, capsys):
    assert run("verify", "--out", tmp_path, "--set", "verify.n_model=3") == 2
    assert "verify.n_model" in capsys.readouterr().err
    bad = tmp_path / "bad.cfg"
    bad.write_text("train.epochs = -1\n")
    assert run("train", "--config", bad, "--out", tmp_path) == 2
    assert run("verify", "--out", tmp_path, "--threads", 0) == 2


def test_numeric_failure_exit_3(tmp_path, tiny_cfg, capsys):
    with np.errstate(all="ignore"):
        code = run("train", "--config", tiny_cfg, "--out", tmp_path, "--set", "train.learning_rate=1e300",
                   "--set", "train.algorithm=cd")
    assert code == 3
    assert "epoch" in capsys.readouterr().err
    params, _ = read_checkpoint(tmp_path / "last_good.grbm")
    assert np.all(np.isfinite(params.W))


def test_busy_run_directory(tmp_path):
    with RunLock(tmp_path):
        assert run("verify", "--out", tmp_path, "--set", "verify.n_models=1") == 2


def test_out_root_override(tmp_path, monkeypatch):
    monkeypatch.setenv("GRBM_OUT_ROOT", str(tmp_path))
    assert run("verify", "--out", "nested", "--set", "verify.n_models=1", "--threads", 1) == 0
    assert (tmp_path / "nested" / "verify.json").exists()
