"""Noise schedules and the per-timestep weights of the training objective.

Arrays are indexed by timestep directly: ``alpha_bar[0] == 1`` and
``beta[t]``, ``B[t]`` are meaningful for ``1 <= t <= T`` (index 0 holds a
placeholder 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor

GATE_KINDS = ("none", "linear", "inverse", "log")
COSINE_OFFSET = 0.008
B_FLOOR = 1e-8


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    B: np.ndarray
    kind: str = "cosine"

    def snr(self, t):
        ab = self.alpha_bar[np.asarray(t)]
        return ab / (1.0 - ab)

    def with_posterior_variance(self, B: np.ndarray) -> "NoiseSchedule":
        """Copy with an overridden posterior-variance array (diagnostics only)."""
        B = np.asarray(B, dtype=float)
        if B.shape != self.B.shape:
            raise ValueError(f"B must have shape {self.B.shape}")
        return NoiseSchedule(self.T, self.beta, self.alpha, self.alpha_bar, B, self.kind)


@dataclass(frozen=True)
class PhysicsWeightConfig:
    c: float = 0.005
    w_max: float = 100.0
    gate_kind: str = "log"

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"c must be >= 0, got {self.c}")
        if self.w_max <= 0:
            raise ValueError(f"w_max must be > 0, got {self.w_max}")
        if self.gate_kind not in GATE_KINDS:
            raise ValueError(f"gate_kind must be one of {GATE_KINDS}, got {self.gate_kind!r}")


def _from_betas(beta: np.ndarray, kind: str) -> NoiseSchedule:
    T = beta.size
    beta_full = np.concatenate([[0.0], beta])
    alpha = 1.0 - beta_full
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    B = np.zeros(T + 1)
    B[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta
    return NoiseSchedule(T, beta_full, alpha, alpha_bar, B, kind)


def build_schedule(kind: str = "cosine", T: int = 100, beta_min: float = 1e-4,
                   beta_max: float = 0.03) -> NoiseSchedule:
    """Cosine schedule with betas clamped into [beta_min, beta_max], or a linear one."""
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not 0.0 < beta_min < beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}")
    if kind == "linear":
        beta = np.linspace(beta_min, beta_max, T)
    elif kind == "cosine":
        t = np.arange(T + 1)
        f = np.cos(((t / T + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * np.pi / 2.0) ** 2
        ab = f / f[0]
        beta = np.clip(1.0 - ab[1:] / ab[:-1], beta_min, beta_max)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return _from_betas(beta, kind)


def _check_t(t, T: int, lo: int = 1) -> np.ndarray:
    t = np.asarray(t)
    if np.any(t < lo) or np.any(t > T):
        raise ValueError(f"timestep out of range [{lo}, {T}]: {t}")
    return t


def forward_noise(x0, t, eps, sched: NoiseSchedule):
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.

    ``t`` may be a scalar or one timestep per leading-axis element.  Works on
    arrays or tensors; tensors stay differentiable.
    """
    if tuple(np.shape(eps)) != tuple(np.shape(x0)):
        raise ValueError(f"eps shape {np.shape(eps)} != x0 shape {np.shape(x0)}")
    t = _check_t(t, sched.T)
    ab = sched.alpha_bar[t]
    ndim = len(np.shape(x0))
    if ab.ndim == 1:
        ab = ab.reshape((-1,) + (1,) * (ndim - 1))
    a, s = np.sqrt(ab), np.sqrt(1.0 - ab)
    if isinstance(x0, Tensor) or isinstance(eps, Tensor):
        return x0 * a + eps * s
    return a * np.asarray(x0) + s * np.asarray(eps)


def gate(t, T: int, kind: str = "log"):
    """Timestep gate: none -> 1, linear 2 - t/T, inverse T/(1+t), log log(1 + T/(1+t))."""
    t = np.asarray(t, dtype=float)
    if kind == "none":
        out = np.ones_like(t)
    elif kind == "linear":
        out = 2.0 - t / T
    elif kind == "inverse":
        out = T / (1.0 + t)
    elif kind == "log":
        out = np.log(1.0 + T / (1.0 + t))
    else:
        raise ValueError(f"unknown gate kind {kind!r}")
    return out if out.ndim else float(out)


def physics_weight(t, sched: NoiseSchedule, cfg: PhysicsWeightConfig):
    """min(gate(t) * c / max(B_t, 1e-8), w_max); exactly 0 when c == 0."""
    t = _check_t(t, sched.T)
    w = gate(t, sched.T, cfg.gate_kind) * cfg.c / np.maximum(sched.B[t], B_FLOOR)
    w = np.minimum(w, cfg.w_max)
    return w if np.ndim(w) else float(w)


def min_snr_weight(t, sched: NoiseSchedule, gamma_snr: float = 5.0):
    """min(SNR_t, gamma) / SNR_t for epsilon prediction."""
    if gamma_snr <= 0:
        raise ValueError("gamma_snr must be > 0")
    t = _check_t(t, sched.T)
    ab = sched.alpha_bar[t]
    if np.any(ab >= 1.0):
        raise ValueError("alpha_bar_t = 1 gives infinite SNR")
    snr = ab / (1.0 - ab)
    w = np.minimum(snr, gamma_snr) / snr
    return w if np.ndim(w) else float(w)
