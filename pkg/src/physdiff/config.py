"""Run configuration as flat ``section.key=value`` lines."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

TASKS = ("toy", "darcy", "oscillator", "gauss-sanity")


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    task: str = "toy"
    seed: int = 0
    iterations: int = 400
    batch_size: int = 8
    checkpoint_every: int = 0  # 0 -> only the final checkpoint
    evaluate: bool = True


@dataclass
class DataSection:
    path: str = ""  # empty -> generate in memory
    n: int = 10000
    seed: int = 7
    heldout_n: int = 2000
    heldout_seed: int = 1007
    s: int = 16
    corr_len: float = 0.2
    amplitude: float = 10.0
    omega: float = 6.283185307179586
    dt: float = 0.05
    L: int = 32
    k_floor: float = 1e-3


@dataclass
class ScheduleSection:
    kind: str = "cosine"
    T: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.03


@dataclass
class NetSection:
    backbone: str = "mlp"
    cond_kind: str = "none"
    hidden: int = 128
    depth: int = 3
    channels: str = "16,32,64"
    time_dim: int = 128
    heads: int = 4
    film_hidden: int = 64
    token_width: int = 0


@dataclass
class LossSection:
    c: float = 0.005
    gate: str = "log"
    residual: str = "laplace"
    K: int = 2
    gamma_snr: float = 5.0
    w_max: float = 100.0


@dataclass
class OptimSection:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class SampleSection:
    kind: str = "ddim2"
    K: int = 2
    n: int = 1000
    seed: int = 12345


@dataclass
class EvalSection:
    max_points: int = 2000
    seed: int = 0


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    net: NetSection = field(default_factory=NetSection)
    loss: LossSection = field(default_factory=LossSection)
    optim: OptimSection = field(default_factory=OptimSection)
    sample: SampleSection = field(default_factory=SampleSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # -- access ---------------------------------------------------------

    def items(self):
        for sec in dataclasses.fields(self):
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                yield f"{sec.name}.{f.name}", getattr(obj, f.name)

    def get(self, key: str):
        sec, _, name = key.partition(".")
        try:
            return getattr(getattr(self, sec), name)
        except AttributeError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def set(self, key: str, raw) -> None:
        sec_name, _, name = key.partition(".")
        sec = getattr(self, sec_name, None)
        if sec is None or not dataclasses.is_dataclass(sec) or name not in {
            f.name for f in dataclasses.fields(sec)
        }:
            raise ConfigError(f"unknown config key {key!r}")
        ftype = {f.name: f.type for f in dataclasses.fields(sec)}[name]
        setattr(sec, name, _coerce(key, raw, ftype))

    def copy(self) -> "RunConfig":
        return parse_config(format_config(self))

    def with_overrides(self, overrides: dict) -> "RunConfig":
        cfg = self.copy()
        for k, v in overrides.items():
            cfg.set(k, v)
        cfg.validate()
        return cfg

    def validate(self) -> "RunConfig":
        r, s, lo, o = self.run, self.schedule, self.loss, self.optim
        checks = [
            (r.task in TASKS, f"run.task must be one of {TASKS}"),
            (r.iterations >= 0, "run.iterations must be >= 0"),
            (r.batch_size >= 1, "run.batch_size must be >= 1"),
            (self.data.n >= 1, "data.n must be >= 1"),
            (s.kind in ("cosine", "linear"), "schedule.kind must be cosine or linear"),
            (s.T >= 2, "schedule.T must be >= 2"),
            (0 < s.beta_min < s.beta_max < 1, "need 0 < schedule.beta_min < schedule.beta_max < 1"),
            (lo.c >= 0, "loss.c must be >= 0"),
            (lo.w_max > 0, "loss.w_max must be > 0"),
            (lo.gate in ("none", "linear", "inverse", "log"), "loss.gate invalid"),
            (lo.residual in ("laplace", "gaussian"), "loss.residual must be laplace or gaussian"),
            (lo.K >= 1, "loss.K must be >= 1"),
            (lo.gamma_snr > 0, "loss.gamma_snr must be > 0"),
            (o.lr >= 0, "optim.lr must be >= 0"),
            (0 <= o.beta1 < 1 and 0 <= o.beta2 < 1, "optim betas must lie in [0, 1)"),
            (self.sample.kind in ("ddim2", "ddimK", "ancestral"), "sample.kind invalid"),
            (1 <= self.sample.K <= s.T, "sample.K must lie in [1, schedule.T]"),
            (self.net.backbone in ("mlp", "conv2d"), "net.backbone must be mlp or conv2d"),
            (self.net.cond_kind in ("none", "film", "attention"), "net.cond_kind invalid"),
            (0 < self.data.corr_len < 1, "data.corr_len must lie in (0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self


def _coerce(key: str, raw, ftype):
    if not isinstance(raw, str):
        raw = str(raw)
    raw = raw.strip()
    try:
        if ftype in (bool, "bool"):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if ftype in (int, "int"):
            return int(raw)
        if ftype in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {ftype}") from None


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in cfg.items())


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base.copy() if base is not None else RunConfig()
    task_line = None
    lines = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key = key.strip()
        if key == "run.task":
            task_line = val.strip()
        lines.append((key, val))
    if base is None and task_line is not None:
        cfg = default_config(task_line)
    for key, val in lines:
        cfg.set(key, val)
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8")).validate()


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")


def default_config(task: str = "toy") -> RunConfig:
    """Recipe defaults per task; explicit config lines override them."""
    if task not in TASKS:
        raise ConfigError(f"run.task must be one of {TASKS}, got {task!r}")
    cfg = RunConfig()
    cfg.run.task = task
    if task == "darcy":
        cfg.run.iterations = 5000
        cfg.data.n = 64
        cfg.data.heldout_n = 256
        cfg.schedule.beta_min, cfg.schedule.beta_max = 1e-6, 1e-2
        cfg.net.backbone = "conv2d"
        cfg.loss.c, cfg.loss.w_max = 3e-6, 1e-3
        cfg.sample.n = 256
    elif task == "oscillator":
        cfg.run.iterations = 3000
        cfg.run.batch_size = 32
        cfg.data.n = 2000
        cfg.data.heldout_n = 500
        cfg.net.cond_kind = "film"
        cfg.loss.c = 0.0
        cfg.sample.n = 500
    elif task == "gauss-sanity":
        cfg.run.iterations = 2000
        cfg.run.batch_size = 64
        cfg.data.n = 4000
        cfg.loss.c = 0.0
        cfg.sample.kind = "ancestral"
    return cfg
