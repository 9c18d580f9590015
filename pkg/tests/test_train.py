"""Training loop, run directories and checkpoints."""

import csv

import numpy as np
import pytest

from physdiff.config import default_config
from physdiff.data import read_manifest
from physdiff.metrics import MetricsReport
from physdiff.tasks import build_setup
from physdiff.train import (LOSS_COLUMNS, latest_checkpoint, load_checkpoint, load_run,
                            save_checkpoint, train)

TINY_TOY = {"run.iterations": 12, "data.n": 300, "data.heldout_n": 100, "sample.n": 40,
            "net.hidden": 16, "net.depth": 1, "net.time_dim": 16, "run.checkpoint_every": 5}
TINY_DARCY = {"run.iterations": 3, "data.n": 4, "data.heldout_n": 4, "sample.n": 4, "data.s": 8,
              "net.channels": "4,4,4", "net.time_dim": 8}


@pytest.fixture
def toy_cfg():
    return default_config("toy").with_overrides(TINY_TOY)


class TestRunDirectory:
    def test_layout(self, toy_cfg, tmp_path):
        res = train(toy_cfg, run_dir=tmp_path / "run")
        d = tmp_path / "run"
        for name in ("config.txt", "run.txt", "loss.csv", "samples.pild", "metrics.json"):
            assert (d / name).exists()
        cks = sorted(p.name for p in (d / "checkpoints").iterdir())
        assert cks == ["iter_000005", "iter_000010", "iter_000012"]
        with open(d / "loss.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == LOSS_COLUMNS and len(rows) == 13
        assert MetricsReport.load(d / "metrics.json") == res.metrics
        assert read_manifest(d / "run.txt")["dataset_digest"] == res.setup.train.digest()

    def test_history_invariants(self, toy_cfg):
        res = train(toy_cfg)
        h = res.history
        np.testing.assert_array_equal(h[:, 0], np.arange(1, 13))
        np.testing.assert_allclose(h[:, 4], h[:, 2] + h[:, 3], rtol=1e-12)
        assert res.metrics.n_samples == 40

    def test_deterministic(self, toy_cfg, tmp_path):
        train(toy_cfg, run_dir=tmp_path / "a")
        train(toy_cfg, run_dir=tmp_path / "b")
        for name in ("loss.csv", "metrics.json", "samples.pild"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_run(self, toy_cfg):
        a = train(toy_cfg, evaluate_after=False).history
        b = train(toy_cfg.with_overrides({"run.seed": 1}), evaluate_after=False).history
        assert not np.array_equal(a, b)

    def test_task_mismatch(self, toy_cfg):
        setup = build_setup(default_config("gauss-sanity").with_overrides({"data.n": 10}))
        with pytest.raises(ValueError, match="does not match"):
            train(toy_cfg, setup)


class TestCheckpoints:
    def test_round_trip_mlp(self, toy_cfg, tmp_path):
        res = train(toy_cfg, evaluate_after=False)
        save_checkpoint(tmp_path / "ck", res.net, res.setup, 12)
        net, man = load_checkpoint(tmp_path / "ck")
        x = np.random.default_rng(0).standard_normal((3, 2))
        np.testing.assert_array_equal(net(x, 7).data, res.net(x, 7).data)
        assert man["iteration"] == "12"

    def test_round_trip_conv(self, tmp_path):
        cfg = default_config("darcy").with_overrides(TINY_DARCY)
        res = train(cfg, run_dir=tmp_path / "run")
        cfg2, net, setup, sched = load_run(tmp_path / "run")
        x = np.random.default_rng(1).standard_normal((2, 2, 8, 8))
        np.testing.assert_array_equal(net(x, 3).data, res.net(x, 3).data)
        assert sched.T == cfg.schedule.T

    def test_corrupt_parameter_count(self, toy_cfg, tmp_path):
        from physdiff.data import save_tensor

        res = train(toy_cfg, evaluate_after=False)
        save_checkpoint(tmp_path / "ck", res.net, res.setup, 1)
        save_tensor(tmp_path / "ck" / "params.pild", np.zeros((1, 5)))
        with pytest.raises(ValueError, match="architecture needs"):
            load_checkpoint(tmp_path / "ck")

    def test_no_checkpoints(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            latest_checkpoint(tmp_path)


class TestConditional:
    def test_oscillator_run_uses_conditions(self):
        cfg = default_config("oscillator").with_overrides(
            {"run.iterations": 3, "data.n": 50, "data.heldout_n": 20, "sample.n": 10,
             "net.hidden": 8, "net.depth": 1, "net.time_dim": 8, "net.film_hidden": 8})
        res = train(cfg)
        assert res.samples.shape == (10, 32)
        assert res.net.config.cond_kind == "film" and res.net.config.cond_dim == 2
