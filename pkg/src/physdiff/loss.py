"""Noise-matching loss plus a Laplace-likelihood penalty on physical residuals.

For a batch element with timestep t,

    loss = lambda_t * mean((eps - eps_hat)^2) + w_t * mean(|R(x0*)|)

where lambda_t is the Min-SNR weight, w_t = min(G(t) c / B_t, w_max) and
x0* is a K-step deterministic DDIM estimate of the clean sample taken with
full gradient flow.  The Gaussian variant replaces |R| by R^2 / 2.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import NumericError, Tensor
from .optim import Adam
from .sampler import ddim_jump, ddim_timesteps, predict_x0
from .schedule import NoiseSchedule, PhysicsWeightConfig, forward_noise, min_snr_weight, physics_weight

RESIDUAL_KINDS = ("laplace", "gaussian")


@dataclass(frozen=True)
class ResidualModel:
    kind: str = "laplace"
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in RESIDUAL_KINDS:
            raise ValueError(f"residual model must be one of {RESIDUAL_KINDS}")
        if not self.b > 0:
            raise ValueError(f"scale b must be > 0, got {self.b}")


def nll_constant(n: int, model: ResidualModel) -> float:
    if model.kind == "laplace":
        return n * math.log(2.0 * model.b)
    return n * math.log(model.b * math.sqrt(2.0 * math.pi))


def residual_nll(r, model: ResidualModel) -> Tensor:
    """Negative log-likelihood of observing r under a zero-centred Laplace or Gaussian.

    laplace: |r|_1 / b + n log(2b); gaussian: |r|_2^2 / (2 b^2) + n log(b sqrt(2 pi)).
    """
    if not model.b > 0:
        raise ValueError("scale b must be > 0")
    r = ag.as_tensor(r)
    if model.kind == "laplace":
        data = ag.scale(ag.l1_norm(r), 1.0 / model.b)
    else:
        data = ag.scale(ag.tsum(ag.square(r)), 0.5 / model.b ** 2)
    return data + nll_constant(r.size, model)


@dataclass(frozen=True)
class LossConfig:
    physics: PhysicsWeightConfig = field(default_factory=PhysicsWeightConfig)
    residual_kind: str = "laplace"
    K: int = 2
    gamma_snr: float = 5.0
    track_residual: bool = True

    def __post_init__(self):
        if self.residual_kind not in RESIDUAL_KINDS:
            raise ValueError(f"residual_kind must be one of {RESIDUAL_KINDS}")
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class LossBreakdown:
    data_term: float
    physics_term: float
    total: float
    t: float
    residual_l1: float
    nll_constant: float = 0.0
    t_values: np.ndarray = field(default=None, repr=False)
    residual_values: np.ndarray = field(default=None, repr=False)
    loss: Tensor | None = field(default=None, repr=False)

    def row(self) -> tuple[float, float, float, float]:
        return self.t, self.data_term, self.physics_term, self.total


def substep_schedule(t, K: int, sched: NoiseSchedule, clamp: bool = False) -> np.ndarray:
    """(K, N) evaluation timesteps per element.

    With ``clamp`` an element whose t < K gets min(K, t) real steps, padded
    at the front by repeats of t (a repeated DDIM move is the identity).
    """
    t = np.atleast_1d(np.asarray(t, dtype=int))
    if np.any(t < 1) or np.any(t > sched.T):
        raise ValueError(f"timestep out of range [1, {sched.T}]")
    if not clamp and np.any(t < K):
        raise ValueError(f"K={K} sub-steps exceed the remaining levels for t={int(t.min())}")
    out = np.empty((K, t.size), dtype=int)
    cache: dict[int, np.ndarray] = {}
    for j, tj in enumerate(t):
        tj = int(tj)
        if tj not in cache:
            k_eff = min(K, tj)
            cache[tj] = np.concatenate([np.full(K - k_eff, tj), ddim_timesteps(tj, k_eff, sched)])
        out[:, j] = cache[tj]
    return out


def estimate_x0(net, x_t, t, cond, sched: NoiseSchedule, K: int = 1, eps_first=None,
                clamp: bool = False) -> Tensor:
    """Deterministic K-evaluation DDIM estimate of x0 from x_t, differentiable throughout."""
    x = ag.as_tensor(x_t)
    n = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=int), (n,))
    steps = substep_schedule(t, K, sched, clamp=clamp)
    x0 = None
    for i in range(K):
        tau = steps[i]
        eps = eps_first if (i == 0 and eps_first is not None) else net(x, tau, cond)
        x0 = predict_x0(x, eps, tau, sched)
        if i + 1 < K:
            x = ddim_jump(x, x0, tau, steps[i + 1], sched)
    return x0


def _per_sample_mean(x: Tensor) -> Tensor:
    return ag.mean(x.reshape(x.shape[0], -1), axis=1)


def pild_loss(net, x0, cond, t, eps, residual_op: Callable[[Tensor], Tensor],
              sched: NoiseSchedule, cfg: LossConfig) -> LossBreakdown:
    """Weighted noise-matching plus gated physics penalty on one batch; records one tape."""
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    n = x0.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=int), (n,)).copy()
    try:
        x_t = Tensor(forward_noise(x0, t, eps, sched))
        eps_hat = net(x_t, t, cond)
        data_per = _per_sample_mean(ag.square(eps_hat - eps))
        lam = min_snr_weight(t, sched, cfg.gamma_snr)
        data_term = ag.mean(data_per * lam)
        w = physics_weight(t, sched, cfg.physics)
        active = bool(np.any(w > 0))
        res_vals = np.zeros(n)
        if active or cfg.track_residual:
            with ag.no_grad() if not active else contextlib.nullcontext():
                x0_star = estimate_x0(net, x_t, t, cond, sched, cfg.K, eps_first=eps_hat,
                                      clamp=True)
                r = residual_op(x0_star)
                abs_per = _per_sample_mean(ag.abs(r))
                res_vals = abs_per.data.copy()
                if active:
                    pen = abs_per if cfg.residual_kind == "laplace" else \
                        ag.scale(_per_sample_mean(ag.square(r)), 0.5)
                    physics_term = ag.mean(pen * w)
        total = data_term + physics_term if active else data_term
    except NumericError as exc:
        raise NumericError(f"{exc} (timesteps {t.tolist()})") from exc
    phys = float(physics_term.data) if active else 0.0
    const = 0.0
    if active:
        # b_t = B_t / c; reported only, it carries no parameter gradient
        r_size = int(np.prod(r.shape[1:]))
        b_t = np.maximum(sched.B[t], 1e-8) / cfg.physics.c
        const = float(np.mean([nll_constant(r_size, ResidualModel(cfg.residual_kind, b))
                               for b in b_t]))
    return LossBreakdown(
        data_term=float(data_term.data), physics_term=phys, total=float(total.data),
        t=float(t.mean()), residual_l1=float(res_vals.mean()), nll_constant=const,
        t_values=t, residual_values=res_vals, loss=total,
    )


def train_step(net, x0, cond, residual_op, sched: NoiseSchedule, cfg: LossConfig, adam: Adam,
               rng: np.random.Generator) -> LossBreakdown:
    """Sample t and eps, evaluate the loss, backpropagate once and take one Adam step."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    n = x0.shape[0]
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    tape = ag.get_tape()
    tape.clear()
    try:
        out = pild_loss(net, x0, cond, t, eps, residual_op, sched, cfg)
        ag.backward(out.loss)
        adam.step()
    except Exception:
        tape.clear()
        adam.zero_grad()
        raise
    out.loss = None
    return out
