"""Residual operators R(x0) for PDE, ODE, algebraic and inequality constraints.

All operators are pure and built from autograd primitives, so they are
differentiable w.r.t. their tensor inputs and accept leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor


def trapezoid_weights(s: int) -> np.ndarray:
    """Per-node trapezoid weights (1/2 on edges, 1/4 on corners, else 1)."""
    w = np.ones(s)
    w[0] = w[-1] = 0.5
    return np.outer(w, w)


def gaussian_source_sink(s: int, amplitude: float = 10.0, width: float = 0.1,
                         centers=((0.25, 0.25), (0.75, 0.75))) -> np.ndarray:
    """Opposite-sign Gaussian bumps with trapezoid-weighted sum removed to round-off."""
    x = np.linspace(0.0, 1.0, s)
    X, Y = np.meshgrid(x, x, indexing="ij")
    (ax, ay), (bx, by) = centers
    src = np.exp(-((X - ax) ** 2 + (Y - ay) ** 2) / (2 * width ** 2))
    snk = np.exp(-((X - bx) ** 2 + (Y - by) ** 2) / (2 * width ** 2))
    f = amplitude * (src - snk)
    w = trapezoid_weights(s)
    return f - (w * f).sum() / w.sum()


@dataclass(frozen=True)
class DarcyProblem:
    """-div(k grad p) = f on the unit square, no-flow walls, zero-mean p."""

    s: int
    f: np.ndarray = field(repr=False)
    zero_mean: bool = True
    boundary: str = "neumann"

    def __post_init__(self):
        if self.s < 4:
            raise ValueError(f"grid size must be >= 4, got {self.s}")
        f = np.asarray(self.f, dtype=float)
        if f.shape != (self.s, self.s):
            raise ShapeError(f"forcing shape {f.shape} != ({self.s}, {self.s})")
        object.__setattr__(self, "f", f)
        net = float((trapezoid_weights(self.s) * f).sum())
        if abs(net) > 1e-10 * max(1.0, float(np.abs(f).sum())):
            raise ValueError(f"forcing violates Neumann compatibility: weighted sum {net:.3e}")

    @property
    def h(self) -> float:
        return 1.0 / (self.s - 1)

    @classmethod
    def default(cls, s: int = 16, amplitude: float = 10.0) -> "DarcyProblem":
        return cls(s, gaussian_source_sink(s, amplitude))


def harmonic_mean(a: Tensor, b: Tensor) -> Tensor:
    return ag.scale(a * b / (a + b), 2.0)


def darcy_residual(k, p, prob: DarcyProblem) -> Tensor:
    """Conservative 5-point residual on interior nodes, shape (..., s-2, s-2).

    R = -(1/h^2) [k_E (p_E - p_C) - k_W (p_C - p_W) + k_N (p_N - p_C) - k_S (p_C - p_S)] - f
    with face permeabilities the harmonic mean of the two adjacent nodes.
    """
    k, p = ag.as_tensor(k), ag.as_tensor(p)
    s = prob.s
    if k.shape != p.shape or k.shape[-2:] != (s, s):
        raise ShapeError(f"darcy_residual: k {k.shape} and p {p.shape} must end in ({s}, {s})")
    if np.any(k.data <= 0):
        raise ValueError("darcy_residual: permeability must be positive")
    kc = k[..., 1:-1, 1:-1]
    pc = p[..., 1:-1, 1:-1]
    flux = 0.0
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        sl_i = slice(1 + di, s - 1 + di)
        sl_j = slice(1 + dj, s - 1 + dj)
        kn = k[..., sl_i, sl_j]
        pn = p[..., sl_i, sl_j]
        flux = flux + harmonic_mean(kc, kn) * (pn - pc)
    return ag.scale(flux, -1.0 / prob.h ** 2) - prob.f[1:-1, 1:-1]


@dataclass(frozen=True)
class InequalitySet:
    """Feasible region {x : A x <= b}."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] < 1 or A.shape[0] != b.size:
            raise ShapeError(f"inequality set: A {A.shape} and b {b.shape} disagree")
        if np.any(np.all(A == 0, axis=1)):
            raise ValueError("inequality set: zero row in A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @classmethod
    def from_vertices(cls, vertices) -> "InequalitySet":
        """Half-planes of a convex polygon given counter-clockwise vertices."""
        v = np.asarray(vertices, dtype=float)
        rows, rhs = [], []
        for i in range(len(v)):
            p, q = v[i], v[(i + 1) % len(v)]
            edge = q - p
            normal = np.array([edge[1], -edge[0]])  # outward for CCW order
            normal /= np.linalg.norm(normal)
            rows.append(normal)
            rhs.append(normal @ p)
        return cls(np.array(rows), np.array(rhs))

    @classmethod
    def unit_square(cls) -> "InequalitySet":
        return cls(np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]]), np.array([1.0, 0, 1, 0]))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned box of the region, one LP per coordinate bound."""
        from scipy.optimize import linprog

        lo, hi = np.empty(self.d), np.empty(self.d)
        for i in range(self.d):
            e = np.zeros(self.d)
            e[i] = 1.0
            for sign, store in ((1.0, lo), (-1.0, hi)):
                res = linprog(sign * e, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * self.d)
                if res.status != 0:
                    raise ValueError("inequality region is empty or unbounded")
                store[i] = res.x[i]
        return lo, hi


# Fixture region: vertices (0,0), (2,0.5), (2.5,2), (0.5,1.5).
DEFAULT_PARALLELOGRAM = ((0.0, 0.0), (2.0, 0.5), (2.5, 2.0), (0.5, 1.5))


def default_parallelogram() -> InequalitySet:
    return InequalitySet.from_vertices(DEFAULT_PARALLELOGRAM)


def inequality_residual(x, ineq: InequalitySet) -> Tensor:
    """ReLU(A x - b) per constraint; x is (..., d), result is (..., m)."""
    x = ag.as_tensor(x)
    if x.shape[-1] != ineq.d:
        raise ShapeError(f"inequality_residual: x has last axis {x.shape[-1]}, A expects {ineq.d}")
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    r = ag.relu(ag.matmul(x, Tensor(ineq.A.T)) - ineq.b)
    return r.reshape(ineq.m) if squeeze else r


@dataclass(frozen=True)
class AlgebraicSpec:
    """Constraint A(x) = target for a differentiable map ``op`` built from primitives."""

    op: Callable[[Tensor], Tensor]
    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float))


def algebraic_residual(x, spec: AlgebraicSpec) -> Tensor:
    x = ag.as_tensor(x)
    out = spec.op(x)
    try:
        np.broadcast_shapes(out.shape, spec.target.shape)
    except ValueError:
        raise ShapeError(
            f"algebraic_residual: operator output {out.shape} vs target {spec.target.shape}"
        ) from None
    if spec.target.size != 1 and out.shape[-spec.target.ndim:] != spec.target.shape:
        raise ShapeError(
            f"algebraic_residual: operator output {out.shape} vs target {spec.target.shape}"
        )
    return out - spec.target


@dataclass(frozen=True)
class OscillatorSpec:
    """Harmonic oscillator x'' + omega^2 x = 0 sampled at L points spaced dt."""

    omega: float = 2.0 * np.pi
    dt: float = 0.05
    L: int = 32

    def __post_init__(self):
        if self.omega < 0:  # omega == 0 is the free-particle limit
            raise ValueError("omega must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.L < 3:
            raise ValueError("trajectory length must be >= 3")


def oscillator_residual(traj, spec: OscillatorSpec) -> Tensor:
    """(x[i+1] - 2 x[i] + x[i-1]) / dt^2 + omega^2 x[i] on interior indices."""
    traj = ag.as_tensor(traj)
    if traj.shape[-1] < 3:
        raise ShapeError(f"oscillator_residual: trajectory too short ({traj.shape[-1]} < 3)")
    x_prev, x_mid, x_next = traj[..., :-2], traj[..., 1:-1], traj[..., 2:]
    second = ag.scale(x_next - ag.scale(x_mid, 2.0) + x_prev, 1.0 / spec.dt ** 2)
    return second + ag.scale(x_mid, spec.omega ** 2)
