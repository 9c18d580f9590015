"""Command line entry point: gen-data, train, sample, eval, ablate, config.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .autograd import NumericError
from .config import TASKS, ConfigError, default_config, format_config, load_config
from .data import ContainerError, SolverError, load_dataset, load_tensor, save_dataset, save_tensor

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


class DataError(Exception):
    """Missing or unreadable input files."""


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = val
    return out


def _base_config(args):
    if getattr(args, "config", None):
        try:
            cfg = load_config(args.config)
        except FileNotFoundError as exc:
            raise DataError(str(exc)) from None
    else:
        cfg = default_config(getattr(args, "task", None) or "toy")
    return cfg.with_overrides(_overrides(getattr(args, "set", None)))


def _load_dataset(path):
    try:
        return load_dataset(path)
    except (FileNotFoundError, ContainerError) as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from None


# -- subcommands ------------------------------------------------------------


def cmd_config(args) -> int:
    sys.stdout.write(format_config(default_config(args.task)))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from .tasks import generate_dataset

    cfg = _base_config(args)
    over = {"run.task": args.task or cfg.run.task}
    if args.n is not None:
        over["data.n"] = args.n
    if args.seed is not None:
        over["data.seed"] = args.seed
    cfg = cfg.with_overrides(over)
    ds = generate_dataset(cfg)
    out = Path(args.out or f"data/{cfg.run.task}-seed{cfg.data.seed}")
    save_dataset(out, ds)
    print(f"wrote {len(ds)} {cfg.run.task} samples to {out} (digest {ds.digest()[:12]})")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train

    cfg = _base_config(args)
    if cfg.data.path and not Path(cfg.data.path).exists():
        raise DataError(f"data.path {cfg.data.path} does not exist")
    out = Path(args.out or f"runs/{cfg.run.task}-seed{cfg.run.seed}")
    res = train(cfg, run_dir=out)
    print(f"trained {cfg.run.iterations} iterations; run directory {out}")
    if res.metrics is not None:
        print(res.metrics.to_json())
    return EXIT_OK


def cmd_sample(args) -> int:
    from .pgm import write_fields
    from .tasks import heldout_dataset
    from .train import draw_samples, load_checkpoint, load_run

    run = Path(args.run)
    if not (run / "config.txt").exists():
        raise DataError(f"{run} is not a run directory (config.txt missing)")
    try:
        cfg, net, setup, sched = load_run(run)
        if args.checkpoint:
            net, _ = load_checkpoint(args.checkpoint)
    except (FileNotFoundError, ContainerError) as exc:
        raise DataError(str(exc)) from None
    over = {}
    if args.kind:
        over["sample.kind"] = args.kind
    if args.K is not None:
        over["sample.K"] = args.K
    cfg = cfg.with_overrides(over)
    n = args.n
    cond = None
    if setup.train.conditional:
        if args.conditions:
            cond = load_tensor(args.conditions).data
        else:
            cond = heldout_dataset(cfg).conditions
        cond = cond[:n]
        n = len(cond)
    x = draw_samples(net, setup, sched, cfg, n, cond, seed=args.seed)
    out = Path(args.out or run / "samples.pild")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tensor(out, x)
    if cond is not None:
        save_tensor(out.with_name(out.stem + "_conditions.pild"), cond)
    if x.ndim == 2:
        np.savetxt(out.with_suffix(".csv"), x, delimiter=",", fmt="%.17g")
    if x.ndim == 4 and args.pgm:
        write_fields(args.pgm, x, limit=args.pgm_limit)
    print(f"wrote {x.shape[0]} samples of shape {x.shape[1:]} to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate
    from .tasks import config_for_dataset, residual_for

    ds = _load_dataset(args.data)
    try:
        samples = load_tensor(args.samples).data
    except (FileNotFoundError, ContainerError) as exc:
        raise DataError(f"cannot read samples {args.samples}: {exc}") from None
    base = None
    if args.config:
        try:
            base = load_config(args.config)
        except FileNotFoundError as exc:
            raise DataError(str(exc)) from None
    cfg = config_for_dataset(ds, base)
    try:
        report = evaluate(samples, ds, residual_for(cfg, ds), args.max_points, args.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablate import ablate, seed_means

    cfg = _base_config(args)
    values = [v for v in args.values.split(",") if v != ""]
    seeds = [int(s) for s in args.seeds.split(",")]
    if len(seeds) < 3:
        print("warning: fewer than 3 seeds per cell", file=sys.stderr)
    out = Path(args.out or "ablate") / "comparison.csv"
    rows = ablate(cfg, args.axis, values, seeds, out, jobs=args.jobs)
    failed = sum(r["status"] != "ok" for r in rows)
    for metric in ("violation_rate", "mean_abs_residual", "energy_distance"):
        means = seed_means(rows, metric)
        print(metric, " ".join(f"{k}:{v:.6g}" for k, v in means.items()))
    print(f"wrote {len(rows)} rows ({failed} failed) to {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="physdiff", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, task=True):
        sp.add_argument("--config", help="key=value run config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        if task:
            sp.add_argument("--task", choices=TASKS)

    sp = sub.add_parser("config", help="print the default config of a task")
    sp.add_argument("--task", choices=TASKS, default="toy")
    sp.set_defaults(func=cmd_config)

    sp = sub.add_parser("gen-data", help="generate and store a dataset")
    common(sp)
    sp.add_argument("--n", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model into a run directory")
    common(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="draw samples from a trained run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--kind", choices=("ddim2", "ddimK", "ancestral"))
    sp.add_argument("--K", type=int)
    sp.add_argument("--conditions")
    sp.add_argument("--out")
    sp.add_argument("--pgm", help="directory for per-channel PGM images of field samples")
    sp.add_argument("--pgm-limit", type=int, default=8)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="metrics of stored samples against a dataset")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--config")
    sp.add_argument("--max-points", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="sweep one config key over seeds")
    common(sp)
    sp.add_argument("--axis", required=True, help="config key, e.g. loss.c")
    sp.add_argument("--values", required=True, help="comma separated values")
    sp.add_argument("--seeds", default="0,1,2")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: unknown subcommand or bad flags
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"physdiff {stage}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, ContainerError) as exc:
        print(f"physdiff {stage}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, SolverError, FloatingPointError) as exc:
        print(f"physdiff {stage}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:
        print(f"physdiff {stage}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    raise SystemExit(main())
