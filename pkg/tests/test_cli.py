"""Command line interface."""

import json

import numpy as np
import pytest

from physdiff.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from physdiff.data import load_tensor

TINY = ["--set", "run.iterations=6", "--set", "data.n=300", "--set", "data.heldout_n=80",
        "--set", "sample.n=30", "--set", "net.hidden=8", "--set", "net.depth=1",
        "--set", "net.time_dim=8"]


@pytest.fixture
def run_dir(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--task", "toy", "--out", str(out)] + TINY) == EXIT_OK
    return out


def test_config_prints_recipe(capsys):
    assert main(["config", "--task", "darcy"]) == EXIT_OK
    assert "net.backbone=conv2d" in capsys.readouterr().out


def test_gen_data_and_eval(tmp_path, run_dir, capsys):
    data = tmp_path / "toy-data"
    assert main(["gen-data", "--task", "toy", "--n", "200", "--seed", "3", "--out", str(data)]) == 0
    assert (data / "samples.pild").exists()
    code = main(["eval", "--samples", str(run_dir / "samples.pild"), "--data", str(data),
                 "--out", str(tmp_path / "m.json")])
    assert code == EXIT_OK
    rep = json.loads((tmp_path / "m.json").read_text())
    assert rep["n_samples"] == 30 and rep["n_reference"] == 200


def test_self_eval_is_zero_distance(tmp_path, capsys):
    data = tmp_path / "d"
    main(["gen-data", "--task", "gauss-sanity", "--n", "50", "--out", str(data)])
    assert main(["eval", "--samples", str(data / "samples.pild"), "--data", str(data)]) == 0
    rep = json.loads(capsys.readouterr().out.split("\n", 1)[1])
    assert rep["energy_distance"] == 0.0


def test_sample_writes_container_and_csv(run_dir, tmp_path):
    out = tmp_path / "s" / "x.pild"
    assert main(["sample", "--run", str(run_dir), "--n", "12", "--seed", "4", "--out", str(out)]) == 0
    x = load_tensor(out).data
    assert x.shape == (12, 2)
    np.testing.assert_allclose(np.loadtxt(out.with_suffix(".csv"), delimiter=","), x, rtol=1e-15)


def test_sample_matches_training_evaluation(run_dir, tmp_path):
    out = tmp_path / "again.pild"
    assert main(["sample", "--run", str(run_dir), "--n", "30", "--seed", "12345",
                 "--out", str(out)]) == 0
    assert load_tensor(out).data.tobytes() == load_tensor(run_dir / "samples.pild").data.tobytes()


def test_train_is_bit_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--task", "toy", "--out", str(tmp_path / name)] + TINY) == 0
    for f in ("loss.csv", "metrics.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_ablate(tmp_path, capsys):
    code = main(["ablate", "--task", "toy", "--axis", "loss.gate", "--values", "none,log",
                 "--seeds", "0,1,2", "--out", str(tmp_path / "abl")] + TINY)
    assert code == EXIT_OK
    lines = (tmp_path / "abl" / "comparison.csv").read_text().splitlines()
    assert len(lines) == 7


def test_sample_fields_to_pgm(tmp_path):
    run = tmp_path / "darcy"
    args = ["train", "--task", "darcy", "--out", str(run), "--set", "run.iterations=2",
            "--set", "data.n=3", "--set", "data.heldout_n=3", "--set", "sample.n=3",
            "--set", "data.s=8", "--set", "net.channels=4,4,4", "--set", "net.time_dim=8"]
    assert main(args) == EXIT_OK
    assert main(["sample", "--run", str(run), "--n", "2", "--pgm", str(tmp_path / "img")]) == 0
    assert len(list((tmp_path / "img").glob("*.pgm"))) == 4


class TestExitCodes:
    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == EXIT_CONFIG

    def test_bad_override(self, capsys):
        assert main(["train", "--task", "toy", "--set", "loss.c=-1"]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_malformed_set(self):
        assert main(["train", "--set", "loss.c"]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.txt")]) == EXIT_DATA

    def test_missing_dataset(self, tmp_path):
        assert main(["eval", "--samples", str(tmp_path / "x"), "--data", str(tmp_path / "y")]) \
            == EXIT_DATA

    def test_not_a_run_directory(self, tmp_path):
        assert main(["sample", "--run", str(tmp_path)]) == EXIT_DATA

    def test_corrupt_container(self, tmp_path, run_dir):
        bad = tmp_path / "bad.pild"
        bad.write_bytes(b"junk")
        data = tmp_path / "d"
        main(["gen-data", "--task", "toy", "--n", "20", "--out", str(data)])
        assert main(["eval", "--samples", str(bad), "--data", str(data)]) == EXIT_DATA

    def test_numeric_failure(self, tmp_path, monkeypatch):
        import physdiff.train as train_mod
        from physdiff.autograd import NumericError

        def boom(*a, **k):
            raise NumericError("loss became NaN")

        monkeypatch.setattr(train_mod, "train", boom)
        assert main(["train", "--task", "toy", "--out", str(tmp_path / "r")]) == EXIT_NUMERIC


def test_stored_dataset_and_config_file(tmp_path):
    data = tmp_path / "toy-data"
    assert main(["gen-data", "--task", "toy", "--n", "10000", "--seed", "7", "--out", str(data)]) == 0
    cfg = tmp_path / "toy.cfg"
    cfg.write_text(f"run.task=toy\ndata.path={data}\nrun.evaluate=false\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == EXIT_OK
    rows = (tmp_path / "run" / "loss.csv").read_text().splitlines()
    assert len(rows) == 401


def test_sample_from_untrained_run(tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--task", "toy", "--out", str(run), "--set", "run.iterations=0",
                 "--set", "run.evaluate=false"]) == EXIT_OK
    out = tmp_path / "x.pild"
    assert main(["sample", "--run", str(run), "--n", "1000", "--out", str(out)]) == EXIT_OK
    x = load_tensor(out).data
    assert x.shape == (1000, 2) and np.all(np.isfinite(x))
