"""Dataset generators, the Darcy forward solver, and on-disk persistence.

Tensor container layout (little-endian)::

    b"PILD" | u16 version | u8 dtype code (1=f32, 2=f64) | u8 ndim | ndim x u64 dims | payload
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage
import scipy.sparse

from .autograd import Tensor
from .physics import (DarcyProblem, InequalitySet, OscillatorSpec, default_parallelogram,
                      trapezoid_weights)

MAGIC = b"PILD"
FORMAT_VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
CODE_FOR = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class ContainerError(ValueError):
    pass


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# tensor container


def encode_tensor(x, dtype=None) -> bytes:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype)
    if arr.dtype not in CODE_FOR:
        arr = arr.astype(np.float64)
    if arr.ndim == 0:
        raise ContainerError("tensor container needs at least one dimension")
    if arr.ndim > 255:
        raise ContainerError("too many dimensions")
    code = CODE_FOR[arr.dtype]
    head = MAGIC + struct.pack("<HBB", FORMAT_VERSION, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    """Parse a container; f32 payloads are widened to f64."""
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise BadMagicError("not a tensor container (bad magic bytes)")
    version, code, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    if code not in DTYPE_CODES:
        raise ContainerError(f"unknown element type code {code}")
    if ndim == 0:
        raise ContainerError("container declares zero dimensions")
    if len(buf) < 8 + 8 * ndim:
        raise TruncatedPayloadError("truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 8)
    dt = DTYPE_CODES[code]
    start = 8 + 8 * ndim
    nbytes = dt.itemsize * int(np.prod(dims))
    if len(buf) - start != nbytes:
        raise TruncatedPayloadError(f"payload has {len(buf) - start} bytes, expected {nbytes}")
    arr = np.frombuffer(buf, dtype=dt, count=int(np.prod(dims)), offset=start).reshape(dims)
    return arr.astype(np.float64)


def save_tensor(path, x, dtype=None) -> None:
    Path(path).write_bytes(encode_tensor(x, dtype))


def load_tensor(path) -> Tensor:
    return Tensor(decode_tensor(Path(path).read_bytes()))


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    samples: np.ndarray
    task: str
    seed: int
    conditions: np.ndarray | None = None
    stats_axes: tuple = (0,)
    params: dict = field(default_factory=dict)
    mean: np.ndarray = field(init=False, repr=False)
    std: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.shape[0] < 1:
            raise ValueError("dataset must hold at least one sample")
        if self.conditions is not None:
            self.conditions = np.asarray(self.conditions, dtype=float)
            if self.conditions.shape[0] != self.samples.shape[0]:
                raise ValueError("conditions and samples differ in count")
        self.stats_axes = tuple(self.stats_axes)
        self.mean, self.std = self.compute_stats()

    def compute_stats(self) -> tuple[np.ndarray, np.ndarray]:
        mu = self.samples.mean(axis=self.stats_axes, keepdims=True)[0]
        sd = self.samples.std(axis=self.stats_axes, keepdims=True)[0]
        return mu, np.where(sd > 0, sd, 1.0)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.samples.shape[1:]

    @property
    def conditional(self) -> bool:
        return self.conditions is not None

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, x):
        return x * self.std + self.mean

    def manifest(self) -> dict[str, str]:
        lines = {
            "task": self.task,
            "seed": str(self.seed),
            "n": str(len(self)),
            "sample_shape": ",".join(map(str, self.sample_shape)),
            "stats_axes": ",".join(map(str, self.stats_axes)),
            "conditional": str(self.conditional).lower(),
            "mean": ",".join(repr(float(v)) for v in self.mean.reshape(-1)),
            "std": ",".join(repr(float(v)) for v in self.std.reshape(-1)),
        }
        for k, v in self.params.items():
            lines[f"param.{k}"] = str(v)
        return lines

    def digest(self) -> str:
        h = hashlib.sha256(encode_tensor(self.samples))
        if self.conditions is not None:
            h.update(encode_tensor(self.conditions))
        return h.hexdigest()


def write_manifest(path, entries: dict[str, str]) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in entries.items()), encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: malformed manifest line {line!r}")
        out[key.strip()] = val.strip()
    return out


def save_dataset(directory, ds: Dataset) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_tensor(d / "samples.pild", ds.samples)
    if ds.conditions is not None:
        save_tensor(d / "conditions.pild", ds.conditions)
    entries = ds.manifest()
    entries["digest"] = ds.digest()
    write_manifest(d / "manifest.txt", entries)
    return d


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    man = read_manifest(d / "manifest.txt")
    samples = load_tensor(d / "samples.pild").data
    cond = load_tensor(d / "conditions.pild").data if man.get("conditional") == "true" else None
    params = {k[6:]: v for k, v in man.items() if k.startswith("param.")}
    axes = tuple(int(a) for a in man["stats_axes"].split(","))
    return Dataset(samples, man["task"], int(man["seed"]), cond, axes, params)


# ---------------------------------------------------------------------------
# toy inequality region


def gen_parallelogram(n: int, ineq: InequalitySet | None = None, seed: int = 0,
                      batch: int = 10000) -> Dataset:
    """Uniform samples inside {A x <= b} by rejection from the bounding box."""
    ineq = ineq or default_parallelogram()
    lo, hi = ineq.bounding_box()
    rng = np.random.default_rng(seed)
    kept, proposed, accepted = [], 0, 0
    while accepted < n:
        x = rng.uniform(lo, hi, size=(batch, ineq.d))
        ok = np.all(x @ ineq.A.T - ineq.b <= 0.0, axis=1)
        proposed += batch
        accepted += int(ok.sum())
        kept.append(x[ok])
        if proposed >= 100_000 and accepted / proposed < 0.01:
            raise ValueError(f"degenerate region: acceptance rate {accepted / proposed:.4f}")
    samples = np.concatenate(kept)[:n]
    params = {"A": ineq.A.tolist(), "b": ineq.b.tolist()}
    return Dataset(samples, "toy", seed, None, (0,), params)


# ---------------------------------------------------------------------------
# Darcy flow


def darcy_matrix(k: np.ndarray) -> scipy.sparse.csr_matrix:
    """Symmetric vertex-centred finite-volume matrix with no-flow walls.

    Row (i, j) holds sum over faces of w_face * k_face * (p_C - p_nb), where
    k_face is the harmonic mean and w_face = 1/2 on faces along the boundary.
    Multiplying by 1/h^2 on interior rows gives the 5-point residual stencil.
    """
    s = k.shape[0]
    idx = np.arange(s * s).reshape(s, s)
    wedge = np.ones(s)
    wedge[0] = wedge[-1] = 0.5
    rows, cols, vals = [], [], []
    # faces between (i, j) and (i + 1, j): length weight from j
    kf = 2.0 * k[:-1, :] * k[1:, :] / (k[:-1, :] + k[1:, :]) * wedge[None, :]
    a, b = idx[:-1, :].ravel(), idx[1:, :].ravel()
    # faces between (i, j) and (i, j + 1): length weight from i
    kg = 2.0 * k[:, :-1] * k[:, 1:] / (k[:, :-1] + k[:, 1:]) * wedge[:, None]
    c, d = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    for (u, v, w) in ((a, b, kf.ravel()), (c, d, kg.ravel())):
        rows += [u, v, u, v]
        cols += [v, u, u, v]
        vals += [-w, -w, w, w]
    A = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(s * s, s * s)
    )
    return A.tocsr()


def conjugate_gradient_mean_zero(A, rhs: np.ndarray, tol: float = 1e-10,
                                 max_iter: int | None = None) -> tuple[np.ndarray, int]:
    """CG for singular A with null space span{1}; iterates and rhs stay mean-free."""
    b = rhs - rhs.mean()
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    bnorm = np.sqrt(b @ b)
    max_iter = max_iter or 10 * b.size
    if bnorm == 0.0:
        return x, 0
    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rr / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        r -= r.mean()
        rr_new = r @ r
        if np.sqrt(rr_new) <= tol * bnorm:
            x -= x.mean()
            # confirm with the true residual, not the recursive one
            true = b - A @ x
            if np.sqrt(true @ true) <= tol * bnorm:
                return x, it
            r = true - true.mean()
            rr_new = r @ r
            p = r.copy()
            rr = rr_new
            continue
        p = r + (rr_new / rr) * p
        p -= p.mean()
        rr = rr_new
    raise SolverError(f"CG did not reach relative residual {tol} in {max_iter} iterations")


def solve_darcy(k, prob: DarcyProblem, tol: float = 1e-10) -> np.ndarray:
    """Pressure with exact zero node mean for permeability ``k`` (s x s)."""
    k = np.asarray(k.data if isinstance(k, Tensor) else k, dtype=float)
    s = prob.s
    if k.shape != (s, s):
        raise ValueError(f"permeability shape {k.shape} != ({s}, {s})")
    if np.any(k <= 0):
        raise ValueError("permeability must be positive")
    rhs = (prob.f * trapezoid_weights(s) * prob.h ** 2).ravel()
    p, _ = conjugate_gradient_mean_zero(darcy_matrix(k), rhs, tol=tol, max_iter=10 * s * s)
    p = p.reshape(s, s)
    return p - p.mean()


def gen_permeability(s: int, corr_len: float, seed, log_std: float = 1.0) -> np.ndarray:
    """exp of Gaussian-smoothed white noise normalized to unit pointwise variance."""
    if not 0.0 < corr_len < 1.0:
        raise ValueError(f"corr_len must lie in (0, 1), got {corr_len}")
    rng = np.random.default_rng(seed)
    sigma = corr_len * (s - 1)  # kernel std in grid units
    pad = int(np.ceil(4 * sigma))
    noise = rng.standard_normal((s + 2 * pad, s + 2 * pad))
    smooth = scipy.ndimage.gaussian_filter(noise, sigma, mode="constant", truncate=4.0)
    delta = np.zeros((2 * pad + 1, 2 * pad + 1))
    delta[pad, pad] = 1.0
    kernel = scipy.ndimage.gaussian_filter(delta, sigma, mode="constant", truncate=4.0)
    field_ = smooth[pad:pad + s, pad:pad + s] / np.sqrt((kernel ** 2).sum())
    return np.exp(log_std * field_)


def _sample_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def gen_darcy_dataset(n: int, s: int = 16, corr_len: float = 0.2,
                      prob: DarcyProblem | None = None, seed: int = 0) -> Dataset:
    """n samples of shape (2, s, s): channel 0 permeability, channel 1 pressure."""
    prob = prob or DarcyProblem.default(s)
    out = np.empty((n, 2, s, s))
    for i in range(n):
        k = gen_permeability(s, corr_len, _sample_seed(seed, i))
        try:
            p = solve_darcy(k, prob)
        except SolverError as exc:
            raise SolverError(f"sample {i}: {exc}") from exc
        out[i, 0], out[i, 1] = k, p
    params = {"s": s, "corr_len": corr_len}
    return Dataset(out, "darcy", seed, None, (0, 2, 3), params)


# ---------------------------------------------------------------------------
# oscillator


def oscillator_basis(spec: OscillatorSpec) -> np.ndarray:
    """(2, L) rows cos(w i dt), sin(w i dt)."""
    tt = np.arange(spec.L) * spec.dt
    return np.stack([np.cos(spec.omega * tt), np.sin(spec.omega * tt)])


def gen_oscillator_dataset(n: int, spec: OscillatorSpec | None = None, seed: int = 0) -> Dataset:
    """Trajectories a cos + b sin with (a, b) standard normal, conditioned on (x_0, x_1)."""
    spec = spec or OscillatorSpec()
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((n, 2))
    traj = coef @ oscillator_basis(spec)
    params = {"omega": spec.omega, "dt": spec.dt, "L": spec.L}
    return Dataset(traj, "oscillator", seed, traj[:, :2].copy(), (0, 1), params)


def oscillator_from_condition(cond: np.ndarray, spec: OscillatorSpec) -> np.ndarray:
    """Analytic trajectory through the two observed initial points."""
    basis = oscillator_basis(spec)
    coef = np.linalg.solve(basis[:, :2].T, np.asarray(cond, dtype=float).T).T
    return coef @ basis


def gen_gaussian_dataset(n: int, mean, cov, seed: int = 0) -> Dataset:
    """Multivariate normal samples for moment-matching sanity checks."""
    rng = np.random.default_rng(seed)
    x = rng.multivariate_normal(np.asarray(mean, float), np.asarray(cov, float), size=n)
    params = {"mean": list(map(float, mean)), "cov": np.asarray(cov, float).tolist()}
    return Dataset(x, "gauss-sanity", seed, None, (0,), params)
