"""DDIM (two-step and K-step, eta = 0) and ancestral sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ddim2"
    K: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ddim2", "ddimK", "ancestral"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")


def _bcast(values: np.ndarray, ndim: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values.reshape((-1,) + (1,) * (ndim - 1)) if values.ndim == 1 else values


def predict_x0(x_t, eps_hat, t, sched: NoiseSchedule):
    """(x_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)."""
    ab = _bcast(sched.alpha_bar[np.asarray(t)], len(np.shape(x_t)))
    return (x_t - eps_hat * np.sqrt(1.0 - ab)) * (1.0 / np.sqrt(ab))


def ddim_jump(x_t, x0_hat, t, t_next, sched: NoiseSchedule):
    """Deterministic DDIM move from t to t_next >= 1 given the clean estimate.

    x_next = sqrt(ab') x0 + sqrt((1 - ab') / (1 - ab)) (x_t - sqrt(ab) x0)
    """
    nd = len(np.shape(x_t))
    ab = _bcast(sched.alpha_bar[np.asarray(t)], nd)
    abn = _bcast(sched.alpha_bar[np.asarray(t_next)], nd)
    return x0_hat * np.sqrt(abn) + (x_t - x0_hat * np.sqrt(ab)) * np.sqrt((1.0 - abn) / (1.0 - ab))


def ddim_timesteps(t_start: int, K: int, sched: NoiseSchedule, t_end: int = 1) -> np.ndarray:
    """K distinct timesteps from t_start down to t_end, roughly uniform in log-SNR.

    K = 1 gives [t_start]; K = 2 gives [t_start, t_end]; K = t_start - t_end + 1
    gives every step.
    """
    t_start, t_end = int(t_start), int(t_end)
    if K < 1:
        raise ValueError("K must be >= 1")
    if K == 1:
        return np.array([t_start])
    if K > t_start - t_end + 1:
        raise ValueError(f"K={K} exceeds the {t_start - t_end + 1} levels between {t_start} and {t_end}")
    logsnr = np.log(sched.alpha_bar[1:] / (1.0 - sched.alpha_bar[1:]))  # index t-1
    targets = np.linspace(logsnr[t_start - 1], logsnr[t_end - 1], K)
    seq = [t_start]
    for i in range(1, K):
        nearest = int(np.argmin(np.abs(logsnr - targets[i]))) + 1
        lower = t_end + (K - 1 - i)
        upper = seq[-1] - 1
        seq.append(min(max(nearest, lower), upper))
    return np.array(seq)


def _eval(net, x, t, cond):
    out = net(x, t, cond)
    return out.data if isinstance(out, Tensor) else np.asarray(out)


def _draw(rng, n, shape):
    return np.asarray(rng.standard_normal((n,) + tuple(shape)), dtype=float)


def _resolve(net, cond, n, shape):
    if shape is None:
        shape = net.config.data_shape
    if cond is not None:
        n = np.shape(cond)[0] if np.ndim(cond) > 1 else 1
    return n, tuple(shape)


def sample_ddim2(net, cond, sched: NoiseSchedule, rng, n: int = 1, shape=None,
                 return_x1: bool = False):
    """Two network evaluations: at T, jump to t = 1, then predict x0."""
    n, shape = _resolve(net, cond, n, shape)
    T = sched.T
    ab_T, ab_1 = sched.alpha_bar[T], sched.alpha_bar[1]
    with ag.no_grad():
        x_T = _draw(rng, n, shape)
        eps = _eval(net, x_T, np.full(n, T), cond)
        x0_T = (x_T - np.sqrt(1.0 - ab_T) * eps) / np.sqrt(ab_T)
        x1 = np.sqrt(ab_1) * x0_T + np.sqrt((1.0 - ab_1) / (1.0 - ab_T)) * (x_T - np.sqrt(ab_T) * x0_T)
        eps1 = _eval(net, x1, np.full(n, 1), cond)
        x0 = (x1 - np.sqrt(1.0 - ab_1) * eps1) / np.sqrt(ab_1)
    if return_x1:
        return x0, {"x_T": x_T, "x0_T": x0_T, "x1": x1}
    return x0


def sample_ddimK(net, cond, sched: NoiseSchedule, K: int, rng, n: int = 1, shape=None,
                 timesteps=None):
    """Deterministic DDIM through K evaluation timesteps from T down to 1."""
    if not 1 <= K <= sched.T:
        raise ValueError(f"K must lie in [1, {sched.T}], got {K}")
    n, shape = _resolve(net, cond, n, shape)
    seq = ddim_timesteps(sched.T, K, sched) if timesteps is None else np.asarray(timesteps)
    with ag.no_grad():
        x = _draw(rng, n, shape)
        for i, t in enumerate(seq):
            ab = sched.alpha_bar[t]
            eps = _eval(net, x, np.full(n, t), cond)
            x0 = (x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
            if i + 1 < len(seq):
                abn = sched.alpha_bar[seq[i + 1]]
                x = np.sqrt(abn) * x0 + np.sqrt((1.0 - abn) / (1.0 - ab)) * (x - np.sqrt(ab) * x0)
    return x0


def sample_ancestral(net, cond, sched: NoiseSchedule, rng, n: int = 1, shape=None):
    """T-step stochastic reverse chain with per-step noise of variance B_t.

    Written in the DDIM form x_{t-1} = sqrt(ab_{t-1}) x0 + sqrt(1 - ab_{t-1} - B_t) eps + sqrt(B_t) z,
    which equals the Gaussian posterior step and reduces to DDIM when B = 0.
    """
    n, shape = _resolve(net, cond, n, shape)
    with ag.no_grad():
        x = _draw(rng, n, shape)
        for t in range(sched.T, 0, -1):
            ab, abp, Bt = sched.alpha_bar[t], sched.alpha_bar[t - 1], sched.B[t]
            eps = _eval(net, x, np.full(n, t), cond)
            x0 = (x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
            if t == 1:
                x = x0
                break
            dir_coef = np.sqrt(max(1.0 - abp - Bt, 0.0))
            x = np.sqrt(abp) * x0 + dir_coef * eps
            if Bt > 0:
                x = x + np.sqrt(Bt) * _draw(rng, n, shape)
    return x


def generate(net, cond, sched: NoiseSchedule, cfg: SamplerConfig, n: int = 1, shape=None,
             rng=None):
    """Dispatch on ``cfg.kind``."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if cfg.kind == "ddim2":
        return sample_ddim2(net, cond, sched, rng, n, shape)
    if cfg.kind == "ddimK":
        return sample_ddimK(net, cond, sched, cfg.K, rng, n, shape)
    return sample_ancestral(net, cond, sched, rng, n, shape)
