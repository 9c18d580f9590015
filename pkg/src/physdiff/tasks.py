"""Per-task wiring: datasets, residual operators and network shapes."""

from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import RunConfig, default_config
from .data import (Dataset, gen_darcy_dataset, gen_gaussian_dataset, gen_oscillator_dataset,
                   gen_parallelogram, load_dataset)
from .denoiser import DenoiserConfig
from .physics import (DarcyProblem, InequalitySet, OscillatorSpec, darcy_residual,
                      default_parallelogram, inequality_residual, oscillator_residual)

# gauss-sanity fixture moments
GAUSS_MEAN = (1.0, -2.0)
GAUSS_COV = ((1.0, 0.6), (0.6, 0.5))


@dataclass
class TaskSetup:
    """A dataset together with the raw-unit residual that applies to it."""

    task: str
    train: Dataset
    residual: Callable[[Tensor], Tensor]  # raw units in, residual out
    cond_mean: np.ndarray | None = None
    cond_std: np.ndarray | None = None

    def normalized_residual(self, x: Tensor) -> Tensor:
        """Residual of a normalized batch; the map back to raw units is differentiable."""
        return self.residual(x * self.train.std + self.train.mean)

    def normalize_cond(self, cond):
        if cond is None or self.cond_mean is None:
            return cond
        return (np.asarray(cond, dtype=float) - self.cond_mean) / self.cond_std

    @property
    def cond_dim(self) -> int:
        return 0 if self.train.conditions is None else int(np.prod(self.train.conditions.shape[1:]))


def generate_dataset(cfg: RunConfig, n: int | None = None, seed: int | None = None) -> Dataset:
    d = cfg.data
    n = d.n if n is None else n
    seed = d.seed if seed is None else seed
    task = cfg.run.task
    if task == "toy":
        return gen_parallelogram(n, default_parallelogram(), seed)
    if task == "darcy":
        return gen_darcy_dataset(n, d.s, d.corr_len, DarcyProblem.default(d.s, d.amplitude), seed)
    if task == "oscillator":
        return gen_oscillator_dataset(n, OscillatorSpec(d.omega, d.dt, d.L), seed)
    return gen_gaussian_dataset(n, GAUSS_MEAN, GAUSS_COV, seed)


def residual_for(cfg: RunConfig, ds: Dataset | None = None) -> Callable[[Tensor], Tensor]:
    """Raw-unit residual operator for ``cfg.run.task``."""
    task, d = cfg.run.task, cfg.data
    if task == "toy":
        ineq = default_parallelogram()
        if ds is not None and "A" in ds.params:
            A, b = ds.params["A"], ds.params["b"]
            A = ast.literal_eval(A) if isinstance(A, str) else A
            b = ast.literal_eval(b) if isinstance(b, str) else b
            ineq = InequalitySet(np.array(A), np.array(b))
        return lambda x: inequality_residual(x, ineq)
    if task == "darcy":
        prob = DarcyProblem.default(d.s, d.amplitude)
        floor = d.k_floor

        def darcy(x: Tensor) -> Tensor:
            return darcy_residual(ag.clamp_min(x[:, 0], floor), x[:, 1], prob)

        return darcy
    if task == "oscillator":
        spec = OscillatorSpec(d.omega, d.dt, d.L)
        return lambda x: oscillator_residual(x, spec)
    return lambda x: ag.as_tensor(x) * 0.0


def build_setup(cfg: RunConfig, dataset: Dataset | None = None) -> TaskSetup:
    if dataset is None:
        dataset = load_dataset(cfg.data.path) if cfg.data.path else generate_dataset(cfg)
    if dataset.task != cfg.run.task:
        raise ValueError(f"dataset task {dataset.task!r} does not match run.task {cfg.run.task!r}")
    cm = cs = None
    if dataset.conditions is not None:
        if cfg.run.task == "oscillator":
            # conditions are trajectory samples; share the scalar sample stats
            cm, cs = dataset.mean.reshape(-1)[:1], dataset.std.reshape(-1)[:1]
        else:
            cm = dataset.conditions.mean(axis=0)
            sd = dataset.conditions.std(axis=0)
            cs = np.where(sd > 0, sd, 1.0)
    return TaskSetup(cfg.run.task, dataset, residual_for(cfg, dataset), cm, cs)


def heldout_dataset(cfg: RunConfig) -> Dataset:
    return generate_dataset(cfg, cfg.data.heldout_n, cfg.data.heldout_seed)


def denoiser_config(cfg: RunConfig, setup: TaskSetup) -> DenoiserConfig:
    n = cfg.net
    shape = setup.train.sample_shape
    backbone = n.backbone
    chans = tuple(int(c) for c in n.channels.split(","))
    cond_kind = n.cond_kind if setup.cond_dim else "none"
    return DenoiserConfig(
        backbone=backbone, data_shape=shape, cond_kind=cond_kind, cond_dim=setup.cond_dim,
        token_width=n.token_width, hidden=n.hidden, depth=n.depth, channels=chans,
        time_dim=n.time_dim, heads=n.heads, film_hidden=n.film_hidden, seed=cfg.run.seed,
    )


_PARAM_KEYS = {
    "darcy": {"s": "data.s", "corr_len": "data.corr_len"},
    "oscillator": {"omega": "data.omega", "dt": "data.dt", "L": "data.L"},
}


def config_for_dataset(ds: Dataset, base: RunConfig | None = None) -> RunConfig:
    """A config whose task and physics parameters agree with a stored dataset."""
    cfg = base.copy() if base is not None else default_config(ds.task)
    cfg.set("run.task", ds.task)
    cfg.set("data.n", len(ds))
    cfg.set("data.seed", ds.seed)
    for key, target in _PARAM_KEYS.get(ds.task, {}).items():
        if key in ds.params:
            cfg.set(target, ds.params[key])
    return cfg.validate()
