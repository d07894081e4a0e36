"""Command-line experiment runner.

Subcommands::

    pdr-anpg run <config>
    pdr-anpg verify <config>
    pdr-anpg sweep <config> --epsilons 0.4 0.2 0.1

Exit codes: 0 success, 2 configuration error, 3 infeasible schedule,
4 diverged run, 5 failed verification check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import statistics
import sys
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .cmdp import load_cmdp, load_features
from .exceptions import DivergedError, InfeasibleError, InvalidParameterError, ScheduleInfeasibleError
from .outer import RunRecord, ScheduleConfig, run_pdr_anpg
from .policy import PolicyParams
from .verify import VerifyConfig, run_checks

log = logging.getLogger("pdr_anpg")

EXIT_OK, EXIT_CONFIG, EXIT_SCHEDULE, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4, 5
DEFAULT_SAMPLE_CAP = 10 ** 8


class ConfigError(InvalidParameterError):
    pass


@dataclass
class ExperimentConfig:
    cmdp_path: str
    schedule: dict
    mode: str = "exact"
    seeds: list = field(default_factory=lambda: [0])
    record_stride: int | None = None
    output_dir: str = "results"
    policy_kind: str = "tabular_softmax"
    sample_cap: int = DEFAULT_SAMPLE_CAP
    workers: int = 1
    verify: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("exact", "stochastic"):
            raise ConfigError(f"mode must be 'exact' or 'stochastic', got {self.mode!r}")
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigError("seeds must be a nonempty list of integers")
        if any(not isinstance(s, int) or isinstance(s, bool) for s in self.seeds):
            raise ConfigError("seeds must be integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.record_stride is not None and (not isinstance(self.record_stride, int) or self.record_stride < 1):
            raise ConfigError(f"record_stride must be a positive integer, got {self.record_stride!r}")
        if self.policy_kind not in ("tabular_softmax", "log_linear"):
            raise ConfigError(f"unknown policy_kind {self.policy_kind!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        if not self.sample_cap > 0:
            raise ConfigError("sample_cap must be positive")
        if not isinstance(self.schedule, dict):
            raise ConfigError("schedule must be an object")
        ScheduleConfig.from_dict(self.schedule)


def load_config(path):
    """Parse an experiment config; relative ``cmdp_path`` resolves against the config's folder."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("cmdp_path", "schedule"):
        if key not in doc:
            raise ConfigError(f"config is missing {key!r}")
    cmdp_path = str(doc["cmdp_path"])
    if not cmdp_path.startswith("bundled:") and not Path(cmdp_path).is_absolute():
        doc["cmdp_path"] = str(path.parent / cmdp_path)
    try:
        return ExperimentConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def atomic_write(path, text):
    """Write through a temporary file in the same folder, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def records_csv(records):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RunRecord.CSV_COLUMNS)
    for rec in records:
        writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in rec.csv_row()])
    return buf.getvalue()


def _initial_params(cfg, spec):
    if cfg.policy_kind == "tabular_softmax":
        return PolicyParams.tabular(spec.n_states, spec.n_actions)
    feats = load_features(cfg.cmdp_path)
    if feats is None:
        raise ConfigError(f"policy_kind log_linear needs a 'features' table in {cfg.cmdp_path}")
    return PolicyParams.log_linear(feats)


def _run_seed(cfg, schedule_doc, seed):
    spec = load_cmdp(cfg.cmdp_path)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = run_pdr_anpg(spec, ScheduleConfig.from_dict(schedule_doc), mode=cfg.mode, rng=seed,
                              record_stride=cfg.record_stride, params0=_initial_params(cfg, spec),
                              sample_cap=cfg.sample_cap)
    final = result.records[-1] if result.records else None
    return {
        "seed": seed,
        "csv": records_csv(result.records),
        "final": {
            "k": final.k if final else 0,
            "optimality_gap": final.optimality_gap if final else None,
            "violation": final.violation if final else None,
            "lambda": result.dual.lam,
            "samples": result.samples,
            "truncated": result.truncated,
        },
        "schedule": result.schedule.to_dict(),
        "constants": {"G": result.config.G, "B": result.config.B, "mu_F": result.config.mu_F,
                      "c_slat": result.config.c_slat, "mu_floor": result.config.mu_floor},
        "reference": result.reference,
    }


def _seed_stats(values):
    values = [v for v in values if v is not None]
    if not values:
        return {}
    return {"mean": statistics.fmean(values), "median": statistics.median(values),
            "min": min(values), "max": max(values)}


def execute(cfg, schedule_doc, out_dir):
    """Run every seed, write one CSV per seed and ``summary.json``; return the summary."""
    out_dir = Path(out_dir)
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            runs = list(pool.map(_run_seed, [cfg] * len(cfg.seeds), [schedule_doc] * len(cfg.seeds), cfg.seeds))
    else:
        runs = [_run_seed(cfg, schedule_doc, s) for s in cfg.seeds]
    for run in runs:
        atomic_write(out_dir / f"seed_{run['seed']}.csv", run["csv"])
    summary = {
        "cmdp_path": cfg.cmdp_path,
        "mode": cfg.mode,
        "policy_kind": cfg.policy_kind,
        "seeds": cfg.seeds,
        "record_stride": cfg.record_stride,
        "sample_cap": cfg.sample_cap,
        "schedule_config": schedule_doc,
        "schedule": runs[0]["schedule"],
        "constants": runs[0]["constants"],
        "reference": runs[0]["reference"],
        "per_seed": [dict(seed=r["seed"], **r["final"]) for r in runs],
        "across_seeds": {
            "optimality_gap": _seed_stats([r["final"]["optimality_gap"] for r in runs]),
            "violation": _seed_stats([r["final"]["violation"] for r in runs]),
            "samples": _seed_stats([r["final"]["samples"] for r in runs]),
        },
    }
    atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _apply_overrides(cfg, args):
    if getattr(args, "seed_offset", 0):
        cfg.seeds = [s + args.seed_offset for s in cfg.seeds]
    if getattr(args, "exact", False):
        cfg.mode = "exact"
    if getattr(args, "record_stride", None) is not None:
        if args.record_stride < 1:
            raise ConfigError("--record-stride must be positive")
        cfg.record_stride = args.record_stride
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    schedule = dict(cfg.schedule)
    if getattr(args, "k_override", None) is not None:
        schedule["K"] = args.k_override
    return cfg, schedule


def cmd_run(args):
    cfg, schedule = _apply_overrides(load_config(args.config), args)
    ScheduleConfig.from_dict(schedule)
    summary = execute(cfg, schedule, cfg.output_dir)
    gap = summary["across_seeds"]["optimality_gap"].get("mean")
    print(f"run complete: {len(cfg.seeds)} seed(s), mean final gap {gap}, output in {cfg.output_dir}")
    return EXIT_OK


def cmd_verify(args):
    cfg, _ = _apply_overrides(load_config(args.config), args)
    spec = load_cmdp(cfg.cmdp_path)
    features = None
    if cfg.policy_kind == "log_linear":
        features = load_features(cfg.cmdp_path)
        if features is None:
            raise ConfigError(f"policy_kind log_linear needs a 'features' table in {cfg.cmdp_path}")
    results = run_checks(spec, features, VerifyConfig.from_dict(cfg.verify))
    for res in results:
        print(res.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"verification failed: {failed[0].name}")
        return EXIT_VERIFY
    return EXIT_OK


def cmd_sweep(args):
    if not args.epsilons:
        raise ConfigError("--epsilons needs at least one value")
    cfg, schedule = _apply_overrides(load_config(args.config), args)
    rows = []
    base = Path(cfg.output_dir)
    for eps in args.epsilons:
        doc = dict(schedule, epsilon=eps)
        ScheduleConfig.from_dict(doc)
        summary = execute(cfg, doc, base / f"eps_{eps:g}")
        rows.append((eps, summary["across_seeds"]["samples"]["mean"],
                     summary["across_seeds"]["optimality_gap"]["mean"],
                     summary["across_seeds"]["violation"]["mean"]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("epsilon", "samples", "final_gap", "final_violation"))
    for row in rows:
        writer.writerow([repr(float(v)) for v in row])
    atomic_write(base / "sweep.csv", buf.getvalue())
    print(f"sweep complete: {len(rows)} point(s), output in {base}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="pdr-anpg", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="experiment config (JSON)")
        p.add_argument("--seed-offset", type=int, default=0)
        p.add_argument("--output-dir")
        p.add_argument("--exact", action="store_true", help="force exact-gradient mode")
        p.add_argument("--k-override", type=int)
        p.add_argument("--record-stride", type=int)

    common(sub.add_parser("run", help="run every seed of a config"))
    common(sub.add_parser("verify", help="run the property checks on the config's CMDP"))
    sweep = sub.add_parser("sweep", help="run one config per target accuracy")
    common(sweep)
    sweep.add_argument("--epsilons", type=float, nargs="*", default=[])
    return parser


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ScheduleInfeasibleError as exc:
        print(f"error: schedule infeasible: {exc}", file=sys.stderr)
        return EXIT_SCHEDULE
    except DivergedError as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidParameterError, InfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
