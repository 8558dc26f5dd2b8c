"""Command line entry point: ``dynadv <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import analytic, harness
from .attack import Strategy, write_transcript
from .data import DataError, SyntheticSpec, generate_synthetic, write_csv

log = logging.getLogger("dynadv")


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise harness.ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def _config(args) -> harness.ExperimentConfig:
    overrides = _parse_set(args.set)
    if args.repetitions is not None:
        overrides["repetitions"] = args.repetitions
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if getattr(args, "output", None) is not None:
        overrides["output"] = str(args.output)
    if args.data is not None:
        overrides["dataset.kind"] = "csv"
        overrides["dataset.path"] = str(args.data)
    if args.dim is not None:
        overrides["dataset.dim"] = args.dim
    if args.config is not None:
        return harness.load_config(args.config, overrides)
    return harness.load_preset(args.preset or "robust_ensemble", overrides)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="YAML experiment config")
    src.add_argument("--preset", help=f"built-in config ({', '.join(harness.preset_names())})")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--jobs", type=int, help="worker processes for repetitions")
    p.add_argument("--data", type=Path, help="CSV dataset instead of synthetic data")
    p.add_argument("--dim", type=int, help="synthetic dimensionality")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config entry by dotted key, e.g. attack.b_explore=50")


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(args.dim, args.n_per_class, args.mu_legitimate, args.mu_malicious,
                         args.sigma, args.seed)
    write_csv(generate_synthetic(spec), args.out, args.label_column)
    print(f"wrote {2 * args.n_per_class} samples x {args.dim} features to {args.out}")
    return 0


def cmd_analytic(args) -> int:
    kinds = list(analytic.DesignKind) if args.design == "all" else [analytic.DesignKind(args.design)]
    header = f"{'design':<24} {'n':>3}  {'evasion (closed)':>18}  {'certainty (closed)':>18}"
    if args.brute_force:
        header += f"  {'evasion (brute)':>18}  {'certainty (brute)':>18}  match"
    print(header)
    for kind in kinds:
        if kind.needs_even_n and args.n % 2:
            print(f"{kind.value:<24} {args.n:>3}  (needs even n)")
            continue
        m = analytic.design_metrics(kind, args.n)
        line = (f"{kind.value:<24} {args.n:>3}  {str(m.evasion_probability):>18}"
                f"  {str(m.adversarial_certainty):>18}")
        if args.brute_force:
            b = analytic.brute_force_binary(kind, args.n)
            ok = "yes" if b.evasion_probability == m.evasion_probability else "no"
            line += (f"  {str(b.evasion_probability):>18}  {str(b.adversarial_certainty):>18}"
                     f"  {ok}")
        print(line)
        if kind is analytic.DesignKind.FEATURE_BAGGED_MAJORITY:
            print(f"{'':<24} {'':>3}  shortcut value {analytic.majority_evasion_footnote(args.n)}"
                  " (omits the central binomial term)")
    return 0


def cmd_attack(args) -> int:
    cfg = _config(args)
    names = [d.label for d in cfg.defenders]
    if args.defender is None:
        index = 0
    elif args.defender in names:
        index = names.index(args.defender)
    else:
        raise harness.ConfigError(f"unknown defender {args.defender!r}; config has {names}")
    result, metrics = harness.run_single(cfg, index, args.strategy, args.repetition)
    write_transcript(result, args.transcript)
    print(json.dumps({"defender": names[index], "attack": result.strategy.value,
                      **metrics, "flags": result.flags}, indent=1))
    print(f"transcript written to {args.transcript}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output or Path("results") / cfg.name)
    if cfg.output is None:
        cfg = replace(cfg, output=str(out))
    rows = harness.run_experiment(cfg)
    harness.emit_report(rows, out, cfg)
    print(harness.render_table(rows), end="")
    print(f"report written to {out}")
    invalid = [f"{r.defender}/{r.attack}" for r in rows if not r.valid]
    if invalid:
        print(f"error: fewer than half the repetitions completed for {', '.join(invalid)}",
              file=sys.stderr)
        return 3
    return 0


def cmd_report(args) -> int:
    rows = harness.aggregate(harness.read_records(args.path))
    if not rows:
        raise ValueError(f"{args.path}: no repetition records")
    if args.json:
        print(json.dumps([harness.row_to_dict(r) for r in rows], indent=1, sort_keys=True))
    else:
        print(harness.render_table(rows), end="")
    return 0


def cmd_presets(args) -> int:
    for name in harness.preset_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynadv", description="Simulate exploratory attacks "
                                     "on classifiers and measure the outcome.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic two-class dataset as CSV")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--n-per-class", type=int, default=250)
    p.add_argument("--mu-legitimate", type=float, default=0.75)
    p.add_argument("--mu-malicious", type=float, default=0.25)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-column", default="label")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("analytic", help="binary feature space design calculator")
    p.add_argument("--design", default="all",
                   choices=["all", *(k.value for k in analytic.DesignKind)])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--brute-force", action="store_true")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("attack", help="one attack run, transcript written as JSON lines")
    _add_config_args(p)
    p.add_argument("--defender", help="defender name from the config (default: first)")
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--repetition", type=int, default=0)
    p.add_argument("--transcript", type=Path, required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("experiment", help="repeated runs of a config, report written to disk")
    _add_config_args(p)
    p.add_argument("--output", type=Path, help="report directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="re-render a report from its repetition records")
    p.add_argument("path", type=Path, help="report directory or repetitions.jsonl")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("presets", help="list built-in configs")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
