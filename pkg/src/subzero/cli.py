"""Command line interface.

Every experiment takes a config file, command line flags, or both; flags
win over file values.  Output locations resolve in the same spirit:
``--out`` flag, then the config's ``out`` key, then the ``SUBZERO_OUT``
environment variable, then ``./runs``.

Exit codes: 0 when the command (and its pass criterion, if any)
succeeded, 1 when a verification criterion failed, 2 for usage or
config errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import __version__
from .config import (METHODS, PROJECTIONS, RunConfig, config_hash,
                     load_config, parse_config, write_config)
from .errors import ConfigError, DimensionError, UnsupportedObjectiveError
from .harness import compare_methods, emit_plot_data, run_to_files
from .objectives import KINDS, ObjectiveSpec, make_objective
from .optimizer import GainSchedule
from .reparam import VariantKind, delta
from .verify import (VerificationReport, ablation_grid,
                     dimension_scaling_experiment, threshold_sweep,
                     verify_second_moment, verify_unbiasedness)

# flag name, config section, config key; objective seed gets a distinct
# flag so it cannot be confused with the run seeds list
_FLAG_TABLE = (
    ("method", "run", "method"),
    ("seeds", "run", "seeds"),
    ("budget", "run", "budget"),
    ("n-samples", "run", "n_samples"),
    ("batch-size", "run", "batch_size"),
    ("workers", "run", "workers"),
    ("projection", "run", "projection"),
    ("clip-threshold", "run", "clip_threshold"),
    ("eval-every", "run", "eval_every"),
    ("fo-lr", "run", "fo_lr"),
    ("fo-steps", "run", "fo_steps"),
    ("kind", "objective", "kind"),
    ("data-seed", "objective", "seed"),
    ("dim", "objective", "dim"),
    ("condition", "objective", "condition"),
    ("n-classes", "objective", "n_classes"),
    ("n-features", "objective", "n_features"),
    ("n-train", "objective", "n_train"),
    ("n-eval", "objective", "n_eval"),
    ("noise", "objective", "noise"),
    ("class-sep", "objective", "class_sep"),
    ("token-dim", "objective", "token_dim"),
    ("token-count", "objective", "token_count"),
    ("hidden", "objective", "hidden"),
    ("ridge", "objective", "ridge"),
    ("ridge-radius", "objective", "ridge_radius"),
    ("q", "prompt", "q"),
    ("r", "prompt", "r"),
    ("variant", "prompt", "variant"),
    ("a1", "schedule", "a1"),
    ("lr-decay", "schedule", "lr_decay"),
    ("c1", "schedule", "c1"),
    ("pm-decay", "schedule", "pm_decay"),
)
_INT_FLAGS = {"budget", "n_samples", "batch_size", "workers", "eval_every",
              "fo_steps", "seed", "dim", "n_classes", "n_features", "n_train",
              "n_eval", "token_dim", "token_count", "hidden", "q", "r"}
_FLOAT_FLAGS = {"clip_threshold", "fo_lr", "condition", "noise", "class_sep",
                "ridge", "ridge_radius", "a1", "lr_decay", "c1", "pm_decay"}


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for flag, section, key in _FLAG_TABLE:
        dest = f"{section}__{key}"
        kwargs: dict = {"dest": dest, "default": None}
        if key in _INT_FLAGS:
            kwargs["type"] = int
        elif key in _FLOAT_FLAGS:
            kwargs["type"] = float
        if flag == "method":
            kwargs["choices"] = METHODS
        elif flag == "projection":
            kwargs["choices"] = PROJECTIONS
        elif flag == "kind":
            kwargs["choices"] = KINDS
        elif flag == "variant":
            kwargs["choices"] = [v.value for v in VariantKind]
        names = [f"--{flag}"]
        if flag == "n-samples":
            names.append("--n-spsa")
        group.add_argument(*names, **kwargs)
    group.add_argument("--clip", dest="run__clip",
                       action=argparse.BooleanOptionalAction, default=None)


def _parse_int_list(value: str, what: str) -> tuple[int, ...]:
    tokens = value.replace(",", " ").split()
    if not tokens:
        raise ConfigError(f"{what} cannot be empty")
    try:
        return tuple(int(token) for token in tokens)
    except ValueError:
        raise ConfigError(f"{what} expects integers, got {value!r}") from None


def _merged_config(args: argparse.Namespace) -> RunConfig:
    """Config file merged with flag overrides, then revalidated by a
    round trip through the canonical text form."""
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        kind = getattr(args, "objective__kind", None)
        if kind is None:
            raise ConfigError("no config file given, so --kind is required")
        cfg = RunConfig(objective=ObjectiveSpec(kind=kind))

    run_over: dict = {}
    obj_over: dict = {}
    sched_over: dict = {}
    for flag, section, key in _FLAG_TABLE:
        value = getattr(args, f"{section}__{key}", None)
        if value is None:
            continue
        if section == "run":
            if key == "seeds":
                value = _parse_int_list(value, "seeds")
            run_over[key] = value
        elif section == "objective":
            obj_over[key] = value
        elif section == "schedule":
            sched_over[key] = value
        elif section == "prompt":
            name = {"q": "subspace_per_token", "r": "subspace_rank",
                    "variant": "variant"}[key]
            if key == "variant":
                value = VariantKind(value)
            run_over[name] = value
    if getattr(args, "run__clip", None) is not None:
        run_over["clip"] = args.run__clip

    try:
        if obj_over:
            run_over["objective"] = dataclasses.replace(cfg.objective, **obj_over)
        if sched_over:
            run_over["schedule"] = dataclasses.replace(cfg.schedule, **sched_over)
        cfg = dataclasses.replace(cfg, **run_over)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return parse_config(write_config(cfg))


def _resolve_out(args: argparse.Namespace, cfg: RunConfig | None = None) -> str:
    if getattr(args, "out", None):
        return args.out
    if cfg is not None and cfg.out:
        return cfg.out
    return os.environ.get("SUBZERO_OUT", "runs")


def _print_runs(summary: dict) -> None:
    for run in summary["runs"]:
        acc = run["final_eval_accuracy"]
        acc_text = "-" if acc is None else f"{acc:.3f}"
        line = (f"{run['method']:>10}  seed {run['seed']:<3d} "
                f"loss {run['final_train_loss']:.6g}  acc {acc_text}  "
                f"queries {run['queries_used']}")
        if "note" in run:
            line += f"  ({run['note']})"
        print(line)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _merged_config(args)
    out_dir = _resolve_out(args, cfg)
    summary, paths = run_to_files(cfg, out_dir)
    print(f"config {summary['config_hash']}  delta "
          f"{summary['delta'] if summary['delta'] is not None else '-'}  "
          f"ambient {summary['ambient_dim']}")
    _print_runs(summary)
    print(f"wrote {len(paths)} file(s) under {out_dir}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _merged_config(args)
    out_dir = _resolve_out(args, cfg)
    summary = compare_methods(cfg, out_dir)
    _print_runs(summary)
    by_seed: dict[int, dict[str, float]] = {}
    for run in summary["runs"]:
        by_seed.setdefault(run["seed"], {})[run["method"]] = \
            run["final_train_loss"]
    wins = sum(1 for losses in by_seed.values()
               if losses["intrinsic"] < losses["naive-zo"])
    print(f"intrinsic beats naive-zo in {wins}/{len(by_seed)} seed(s); "
          f"traces under {out_dir}")
    return 0


def _write_report(report: VerificationReport, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{report.name}-report.json")
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(report.to_dict(), handle, indent=2)
        handle.write("\n")
    return path


def _finish_check(report: VerificationReport, out_dir: str) -> int:
    path = _write_report(report, out_dir)
    if report.passed is None:
        verdict = "REPORT (no pass criterion)"
    else:
        verdict = "PASS" if report.passed else "FAIL"
    print(f"{report.name}: {verdict}  [{report.tolerance}]")
    print(f"report written to {path}")
    return 0 if report.passed is not False else 1


def cmd_verify(args: argparse.Namespace) -> int:
    seeds = _parse_int_list(args.seeds, "seeds") if args.seeds else (0, 1, 2, 3, 4)
    if args.check == "lemma1":
        report = verify_unbiasedness(
            dim=args.d or 20, n_samples=args.n or 1, c=args.c,
            m_draws=args.m_samples, seed=args.seed)
    elif args.check == "lemma2":
        report = verify_second_moment(
            dim=args.d or 32, n_samples=args.n or 1, c=args.c,
            m_draws=args.m_samples, seed=args.seed)
    elif args.check == "dim-scaling":
        dims = _parse_int_list(args.dims, "dims") if args.dims else (16, 64, 256)
        report = dimension_scaling_experiment(
            dims=dims, budget=args.budget or 20_000,
            n_samples=args.n or 1, seeds=seeds)
    elif args.check == "threshold-sweep":
        report = threshold_sweep(
            budget=args.budget or 2_000, n_samples=args.n or 5, seeds=seeds)
    else:
        report = ablation_grid(
            budget=args.budget or 2_000, n_samples=args.n or 5, seeds=seeds)
    return _finish_check(report, _resolve_out(args))


def _sweep_kwargs(args: argparse.Namespace, with_variant: bool) -> dict:
    """threshold_sweep / ablation_grid arguments.

    With a config (or --kind) every knob comes from the merged config;
    bare flags on top of the built-in sweep defaults only override the
    budgeting knobs, since the sweep's own spec/schedule defaults are
    tuned together."""
    if args.config is not None or getattr(args, "objective__kind", None):
        cfg = _merged_config(args)
        kwargs = {
            "spec": cfg.objective,
            "shape": cfg.shape(),
            "budget": cfg.budget,
            "n_samples": cfg.n_samples,
            "seeds": cfg.seeds,
            "schedule": cfg.schedule,
            "batch_size": cfg.batch_size,
            "projection_kind": cfg.projection,
        }
        if with_variant:
            kwargs["variant"] = cfg.variant
        return kwargs
    kwargs = {}
    for key in ("budget", "n_samples", "batch_size"):
        value = getattr(args, f"run__{key}", None)
        if value is not None:
            kwargs[key] = value
    seeds = getattr(args, "run__seeds", None)
    if seeds is not None:
        kwargs["seeds"] = _parse_int_list(seeds, "seeds")
    return kwargs


def cmd_sweep_threshold(args: argparse.Namespace) -> int:
    report = threshold_sweep(**_sweep_kwargs(args, with_variant=True))
    _print_arm_table(report)
    return _finish_check(report, _resolve_out(args))


def cmd_ablate(args: argparse.Namespace) -> int:
    report = ablation_grid(**_sweep_kwargs(args, with_variant=False))
    _print_arm_table(report)
    return _finish_check(report, _resolve_out(args))


def _print_arm_table(report: VerificationReport) -> None:
    for arm, mean in report.estimates.items():
        stderr = report.stderrs.get(arm)
        spread = "" if stderr is None else f" +- {stderr:.4g}"
        print(f"{arm:>24}  {mean:.6g}{spread}")


def cmd_emit_plot_data(args: argparse.Namespace) -> int:
    text = emit_plot_data(args.traces, args.out)
    if args.out is None:
        sys.stdout.write(text)
    else:
        print(f"wrote {args.out}")
    return 0


def cmd_describe_objective(args: argparse.Namespace) -> int:
    cfg = _merged_config(args)
    objective = make_objective(cfg.objective)
    print(f"kind: {cfg.objective.kind}")
    print(f"ambient dimension: {objective.dim}")
    for field in dataclasses.fields(cfg.objective):
        if field.name == "kind":
            continue
        print(f"  {field.name} = {getattr(cfg.objective, field.name)}")
    try:
        shape = cfg.shape()
    except ConfigError:
        return 0
    print(f"prompt shape: p={shape.p} m={shape.m} q={shape.q} r={shape.r}")
    for variant in VariantKind:
        marker = " (configured)" if variant is cfg.variant else ""
        print(f"  delta[{variant.value}] = {delta(shape, variant)}{marker}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subzero",
        description="Query-budgeted zeroth-order subspace optimization "
                    "experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("config", nargs="?", default=None,
                       help="INI config file; flags override its values")
        p.add_argument("--out", default=None, help="output directory")
        _add_override_flags(p)

    p_run = sub.add_parser("run", help="train the configured method once "
                                       "per seed")
    with_config(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="intrinsic vs naive-zo vs fo on "
                                           "one objective")
    with_config(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_ver = sub.add_parser("verify", help="run one named check")
    p_ver.add_argument("check", choices=("lemma1", "lemma2", "dim-scaling",
                                         "threshold-sweep", "ablation"))
    p_ver.add_argument("--d", type=int, default=None)
    p_ver.add_argument("--n", "--n-spsa", type=int, default=None,
                       dest="n", help="perturbation samples per estimate")
    p_ver.add_argument("--c", type=float, default=1e-5)
    p_ver.add_argument("--m-samples", type=int, default=100_000)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--seeds", default=None)
    p_ver.add_argument("--dims", default=None)
    p_ver.add_argument("--budget", type=int, default=None)
    p_ver.add_argument("--out", default=None)
    p_ver.set_defaults(func=cmd_verify)

    p_swp = sub.add_parser("sweep-threshold",
                           help="clip-threshold sweep on the surrogate")
    with_config(p_swp)
    p_swp.set_defaults(func=cmd_sweep_threshold)

    p_abl = sub.add_parser("ablate", help="module ablation grid")
    with_config(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_plot = sub.add_parser("emit-plot-data",
                            help="merge traces into one plot table")
    p_plot.add_argument("traces", nargs="+")
    p_plot.add_argument("--out", default=None)
    p_plot.set_defaults(func=cmd_emit_plot_data)

    p_desc = sub.add_parser("describe-objective",
                            help="print an objective's dimensions")
    with_config(p_desc)
    p_desc.set_defaults(func=cmd_describe_objective)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, DimensionError, UnsupportedObjectiveError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    console_entry()
