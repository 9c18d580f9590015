"""Training loop, run directories and checkpoints."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config, save_config
from .data import load_tensor, read_manifest, save_tensor, write_manifest
from .denoiser import DenoiserConfig, DenoiserNet
from .loss import LossConfig, train_step
from .metrics import MetricsReport, evaluate
from .optim import Adam
from .sampler import SamplerConfig, generate
from .schedule import NoiseSchedule, PhysicsWeightConfig, build_schedule
from .tasks import TaskSetup, build_setup, denoiser_config, heldout_dataset

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("iteration", "t_mean", "data_term", "physics_term", "total", "residual_l1")
LOSS_SCHEMA = "loss/1"


@dataclass
class TrainResult:
    net: DenoiserNet
    setup: TaskSetup
    sched: NoiseSchedule
    history: np.ndarray  # (iterations, len(LOSS_COLUMNS))
    run_dir: Path | None = None
    metrics: MetricsReport | None = None
    samples: np.ndarray | None = field(default=None, repr=False)


def schedule_from(cfg: RunConfig) -> NoiseSchedule:
    s = cfg.schedule
    return build_schedule(s.kind, s.T, s.beta_min, s.beta_max)


def loss_config_from(cfg: RunConfig) -> LossConfig:
    lo = cfg.loss
    return LossConfig(PhysicsWeightConfig(lo.c, lo.w_max, lo.gate), lo.residual, lo.K, lo.gamma_snr)


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(directory, net: DenoiserNet, setup: TaskSetup, iteration: int) -> Path:
    """Flat f64 parameter vector plus a manifest of names, shapes and architecture."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    named = list(net.named_parameters())
    flat = np.concatenate([p.data.reshape(-1) for _, p in named]) if named else np.zeros(0)
    save_tensor(d / "params.pild", flat.reshape(1, -1))
    entries = {"iteration": str(iteration), "num_parameters": str(flat.size)}
    for key, val in net.config.to_dict().items():
        entries[f"net.{key}"] = ",".join(map(str, val)) if isinstance(val, tuple) else str(val)
    ds = setup.train
    entries["data.mean"] = ",".join(repr(float(v)) for v in ds.mean.reshape(-1))
    entries["data.std"] = ",".join(repr(float(v)) for v in ds.std.reshape(-1))
    entries["data.stats_shape"] = ",".join(map(str, ds.mean.shape))
    if setup.cond_mean is not None:
        entries["cond.mean"] = ",".join(repr(float(v)) for v in setup.cond_mean.reshape(-1))
        entries["cond.std"] = ",".join(repr(float(v)) for v in setup.cond_std.reshape(-1))
    for name, p in named:
        entries[f"param.{name}"] = ",".join(map(str, p.shape))
    write_manifest(d / "manifest.txt", entries)
    return d


def _ints(s: str) -> tuple:
    return tuple(int(v) for v in s.split(",")) if s else ()


def load_checkpoint(directory) -> tuple[DenoiserNet, dict]:
    d = Path(directory)
    man = read_manifest(d / "manifest.txt")
    fields = DenoiserConfig.__dataclass_fields__
    kw = {}
    for key, raw in man.items():
        if not key.startswith("net."):
            continue
        name = key[4:]
        if name not in fields:
            raise ValueError(f"checkpoint: unknown architecture key {name!r}")
        if name in ("data_shape", "channels"):
            kw[name] = _ints(raw)
        elif name in ("backbone", "cond_kind"):
            kw[name] = raw
        else:
            kw[name] = int(raw)
    net = DenoiserNet(DenoiserConfig(**kw))
    flat = load_tensor(d / "params.pild").data.reshape(-1)
    named = list(net.named_parameters())
    want = sum(p.data.size for _, p in named)
    if flat.size != want:
        raise ValueError(f"checkpoint holds {flat.size} values, architecture needs {want}")
    off = 0
    for name, p in named:
        if _ints(man[f"param.{name}"]) != p.shape:
            raise ValueError(f"checkpoint: shape mismatch for {name}")
        p.data[...] = flat[off:off + p.data.size].reshape(p.shape)
        off += p.data.size
    return net, man


def latest_checkpoint(run_dir) -> Path:
    cks = sorted((Path(run_dir) / "checkpoints").glob("iter_*"))
    if not cks:
        raise FileNotFoundError(f"no checkpoints under {run_dir}")
    return cks[-1]


# -- loop -------------------------------------------------------------------


def _write_loss_csv(path: Path, history: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for row in history:
            w.writerow([str(int(row[0]))] + [repr(float(v)) for v in row[1:]])


def draw_samples(net, setup: TaskSetup, sched: NoiseSchedule, cfg: RunConfig, n: int,
                 cond=None, seed: int | None = None) -> np.ndarray:
    """Raw-unit samples; ``cond`` is given in raw units for conditional tasks."""
    scfg = SamplerConfig(cfg.sample.kind, cfg.sample.K, cfg.sample.seed if seed is None else seed)
    c = setup.normalize_cond(cond) if cond is not None else None
    x = generate(net, c, sched, scfg, n=n, shape=setup.train.sample_shape)
    return setup.train.denormalize(x)


def sample_and_evaluate(net, setup: TaskSetup, sched: NoiseSchedule, cfg: RunConfig,
                        loss_curve: str = "") -> tuple[np.ndarray, MetricsReport]:
    held = heldout_dataset(cfg)
    n = cfg.sample.n
    cond = None
    if setup.train.conditional:
        n = min(n, len(held))
        cond = held.conditions[:n]
    x = draw_samples(net, setup, sched, cfg, n, cond)
    report = evaluate(x, held, setup.residual, cfg.eval.max_points, cfg.eval.seed, loss_curve)
    return x, report


def train(cfg: RunConfig, setup: TaskSetup | None = None, run_dir=None,
          evaluate_after: bool | None = None) -> TrainResult:
    """Run ``cfg.run.iterations`` Adam steps; with ``run_dir`` everything is written to disk."""
    cfg.validate()
    setup = setup if setup is not None else build_setup(cfg)
    if setup.task != cfg.run.task:
        raise ValueError(f"setup task {setup.task!r} does not match run.task {cfg.run.task!r}")
    sched = schedule_from(cfg)
    lcfg = loss_config_from(cfg)
    net = DenoiserNet(denoiser_config(cfg, setup))
    o = cfg.optim
    adam = Adam(net.parameters(), lr=o.lr, betas=(o.beta1, o.beta2), eps=o.eps)
    rng = np.random.default_rng(cfg.run.seed)
    x_train = setup.train.normalize(setup.train.samples)
    c_train = setup.normalize_cond(setup.train.conditions)
    out = Path(run_dir) if run_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_config(out / "config.txt", cfg)
        write_manifest(out / "run.txt", {
            "seed": str(cfg.run.seed),
            "task": cfg.run.task,
            "dataset_digest": setup.train.digest(),
            "loss_schema": LOSS_SCHEMA,
            "version": __version__,
        })

    iters = cfg.run.iterations
    history = np.zeros((iters, len(LOSS_COLUMNS)))
    every = cfg.run.checkpoint_every
    for it in range(1, iters + 1):
        idx = rng.integers(0, len(x_train), size=cfg.run.batch_size)
        cond = None if c_train is None else c_train[idx]
        b = train_step(net, x_train[idx], cond, setup.normalized_residual, sched, lcfg, adam, rng)
        history[it - 1] = (it, b.t, b.data_term, b.physics_term, b.total, b.residual_l1)
        if out is not None and every and it % every == 0 and it != iters:
            save_checkpoint(out / "checkpoints" / f"iter_{it:06d}", net, setup, it)
        if it % max(1, iters // 10) == 0:
            log.info("iter %d data %.4g physics %.4g", it, b.data_term, b.physics_term)

    result = TrainResult(net, setup, sched, history, out)
    if out is not None:
        _write_loss_csv(out / "loss.csv", history)
        save_checkpoint(out / "checkpoints" / f"iter_{iters:06d}", net, setup, iters)
    do_eval = cfg.run.evaluate if evaluate_after is None else evaluate_after
    if do_eval:
        x, report = sample_and_evaluate(net, setup, sched, cfg,
                                        "loss.csv" if out is not None else "")
        result.samples, result.metrics = x, report
        if out is not None:
            save_tensor(out / "samples.pild", x)
            report.save(out / "metrics.json")
    return result


def load_run(run_dir) -> tuple[RunConfig, DenoiserNet, TaskSetup, NoiseSchedule]:
    """Config, final network, task setup and schedule of a finished run."""
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.txt")
    net, man = load_checkpoint(latest_checkpoint(run_dir))
    setup = build_setup(cfg)
    digest = read_manifest(run_dir / "run.txt").get("dataset_digest")
    if digest and digest != setup.train.digest():
        raise ValueError("training data no longer matches the digest recorded for this run")
    return cfg, net, setup, schedule_from(cfg)

