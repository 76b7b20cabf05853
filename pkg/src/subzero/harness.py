"""Experiment harness.

Turns a :class:`~subzero.config.RunConfig` into trace files on disk.
Traces are tab-separated with a tiny comment header carrying the config
hash and the git revision, so any result file can be traced back to the
exact settings that produced it.  All floats are written with ``repr``,
which makes a rerun of the same config byte-identical to the original.
"""

from __future__ import annotations

import json
import os
import subprocess
import time
from typing import Iterable, Sequence

from .config import METHODS, RunConfig, config_hash
from .errors import ConfigError
from .objectives import make_objective
from .optimizer import OptimizerState, TraceRecord, run_fo_sgd, run_naive_zo, run_training
from .reparam import delta

TRACE_FORMAT = "subzero trace v1"
PLOT_FORMAT = "subzero plot-data v1"
TRACE_COLUMNS = ("method", "seed", "step", "queries_used", "train_loss",
                 "grad_norm", "alpha", "eval_accuracy")
PLOT_COLUMNS = ("method", "seed", "queries_used", "loss", "accuracy")
FO_QUERY_NOTE = ("fo is charged 1 query per step so all methods share the "
                 "queries_used axis")


def git_revision() -> str:
    """Describe-string of the working tree the harness runs from, or
    "unknown" outside a repository."""
    try:
        proc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
        )
    except OSError:
        return "unknown"
    if proc.returncode != 0:
        return "unknown"
    return proc.stdout.strip()


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_trace(method: str, seed: int, records: Iterable[TraceRecord],
                 cfg_hash: str, git_rev: str) -> str:
    lines = [
        f"# {TRACE_FORMAT}",
        f"# config_hash={cfg_hash}",
        f"# git={git_rev}",
        "\t".join(TRACE_COLUMNS),
    ]
    for rec in records:
        lines.append("\t".join((
            method, str(seed), str(rec.step), str(rec.queries_used),
            repr(rec.train_loss), repr(rec.grad_norm), repr(rec.alpha),
            _format_value(rec.eval_accuracy),
        )))
    return "\n".join(lines) + "\n"


def write_trace(path: str, method: str, seed: int,
                records: Iterable[TraceRecord], cfg_hash: str,
                git_rev: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(format_trace(method, seed, records, cfg_hash, git_rev))


def read_trace(path: str) -> tuple[dict, list[dict]]:
    """Header metadata and parsed rows.  Raises ConfigError on any
    deviation from the trace schema; downstream merges must not guess."""
    meta: dict = {}
    rows: list[dict] = []
    columns = None
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                key, sep, value = body.partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
                else:
                    meta.setdefault("format", body)
                continue
            parts = line.split("\t")
            if columns is None:
                columns = tuple(parts)
                if columns != TRACE_COLUMNS:
                    raise ConfigError(
                        f"{path}: trace columns {list(columns)} do not match "
                        f"{list(TRACE_COLUMNS)}")
                continue
            rows.append(_parse_row(path, parts))
    if columns is None:
        raise ConfigError(f"{path}: no trace header found")
    return meta, rows


def _parse_row(path: str, parts: Sequence[str]) -> dict:
    if len(parts) != len(TRACE_COLUMNS):
        raise ConfigError(
            f"{path}: row has {len(parts)} fields, expected {len(TRACE_COLUMNS)}")
    try:
        return {
            "method": parts[0],
            "seed": int(parts[1]),
            "step": int(parts[2]),
            "queries_used": int(parts[3]),
            "train_loss": float(parts[4]),
            "grad_norm": float(parts[5]),
            "alpha": float(parts[6]),
            "eval_accuracy": None if parts[7] == "" else float(parts[7]),
        }
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed trace row: {exc}") from None


def _summarize_run(method: str, seed: int, state: OptimizerState,
                   trace_name: str) -> dict:
    last = state.trace[-1] if state.trace else None
    unused = state.ledger.remaining
    summary = {
        "method": method,
        "seed": seed,
        "steps": state.step,
        "queries_used": state.ledger.used,
        "final_train_loss": None if last is None else last.train_loss,
        "final_grad_norm": None if last is None else last.grad_norm,
        "final_eval_accuracy": None if last is None else last.eval_accuracy,
        "trace": trace_name,
    }
    if unused:
        summary["note"] = (f"truncated: {unused} budgeted evaluation(s) left, "
                           "less than one full step")
    return summary


def _aggregate(runs: list[dict]) -> dict:
    """Mean and SD of the final metrics, grouped by method."""
    grouped: dict[str, dict] = {}
    for method in sorted({run["method"] for run in runs},
                         key=lambda m: (_method_rank(m), m)):
        rows = [run for run in runs if run["method"] == method]
        block: dict = {"runs": len(rows)}
        for metric in ("final_train_loss", "final_eval_accuracy"):
            values = [run[metric] for run in rows if run[metric] is not None]
            if not values:
                block[metric + "_mean"] = None
                block[metric + "_sd"] = None
                continue
            mean = sum(values) / len(values)
            block[metric + "_mean"] = mean
            if len(values) > 1:
                var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
                block[metric + "_sd"] = var ** 0.5
            else:
                block[metric + "_sd"] = None
        block["queries_used"] = [run["queries_used"] for run in rows]
        grouped[method] = block
    return grouped


def run_one(cfg: RunConfig, seed: int | None = None) -> OptimizerState:
    """Execute the configured method once.  ``seed`` overrides the first
    configured seed so sweeps can reuse one config."""
    seed = cfg.seeds[0] if seed is None else seed
    objective = make_objective(cfg.objective)
    if cfg.method == "intrinsic":
        return run_training(
            objective, cfg.shape(), cfg.variant, cfg.schedule,
            n_samples=cfg.n_samples, budget=cfg.budget, seed=seed,
            clip=cfg.clip, clip_threshold=cfg.clip_threshold,
            eval_every=cfg.eval_every, batch_size=cfg.batch_size,
            workers=cfg.workers, projection_kind=cfg.projection,
        )
    if cfg.method == "naive-zo":
        threshold = None
        if cfg.clip:
            threshold = cfg.clip_threshold
            if threshold is None:
                threshold = float(objective.dim) ** 0.5
        return run_naive_zo(
            objective, cfg.schedule, n_samples=cfg.n_samples,
            budget=cfg.budget, seed=seed, clip_threshold=threshold,
            eval_every=cfg.eval_every, batch_size=cfg.batch_size,
            workers=cfg.workers,
        )
    if cfg.method == "fo":
        return run_fo_sgd(
            objective, lr=cfg.fo_lr, steps=cfg.fo_steps, seed=seed,
            batch_size=cfg.batch_size, eval_every=cfg.eval_every,
        )
    raise ConfigError(f"unknown method {cfg.method!r}")


def _write_summary(out_dir: str, cfg: RunConfig, cfg_hash: str, git_rev: str,
                   runs: list[dict], wall_time: float) -> dict:
    subspace_dim = None
    if cfg.subspace_per_token is not None:
        subspace_dim = delta(cfg.shape(), cfg.variant)
    summary = {
        "format": "subzero summary v1",
        "config_hash": cfg_hash,
        "git": git_rev,
        "objective": cfg.objective.kind,
        "ambient_dim": make_objective(cfg.objective).dim,
        "delta": subspace_dim,
        "fo_query_convention": FO_QUERY_NOTE,
        "wall_time_s": round(wall_time, 3),
        "aggregates": _aggregate(runs),
        "runs": runs,
    }
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(summary, handle, indent=2)
        handle.write("\n")
    return summary


def run_to_files(cfg: RunConfig, out_dir: str) -> tuple[dict, list[str]]:
    """The configured method, once per seed: one trace each plus
    summary.json.  Returns the summary and the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    cfg_hash = config_hash(cfg)
    git_rev = git_revision()
    started = time.monotonic()
    runs: list[dict] = []
    paths: list[str] = []
    for seed in cfg.seeds:
        state = run_one(cfg, seed)
        trace_name = f"{cfg.method}-seed{seed}.tsv"
        trace_path = os.path.join(out_dir, trace_name)
        write_trace(trace_path, cfg.method, seed, state.trace, cfg_hash, git_rev)
        runs.append(_summarize_run(cfg.method, seed, state, trace_name))
        paths.append(trace_path)
    summary = _write_summary(out_dir, cfg, cfg_hash, git_rev, runs,
                             time.monotonic() - started)
    paths.append(os.path.join(out_dir, "summary.json"))
    return summary, paths


def compare_methods(cfg: RunConfig, out_dir: str,
                    seeds: Sequence[int] | None = None) -> dict:
    """The three-way comparison: clipped subspace descent, unclipped
    full-space descent, and first-order SGD, all on the configured
    objective with the shared schedule.  One trace file per method and
    seed, plus summary.json."""
    os.makedirs(out_dir, exist_ok=True)
    cfg_hash = config_hash(cfg)
    git_rev = git_revision()
    shape = cfg.shape()
    started = time.monotonic()
    runs: list[dict] = []
    if seeds is None:
        seeds = cfg.seeds
    for seed in seeds:
        states = {
            "intrinsic": run_training(
                make_objective(cfg.objective), shape, cfg.variant,
                cfg.schedule, n_samples=cfg.n_samples, budget=cfg.budget,
                seed=seed, clip=cfg.clip, clip_threshold=cfg.clip_threshold,
                eval_every=cfg.eval_every, batch_size=cfg.batch_size,
                workers=cfg.workers, projection_kind=cfg.projection,
            ),
            "naive-zo": run_naive_zo(
                make_objective(cfg.objective), cfg.schedule,
                n_samples=cfg.n_samples, budget=cfg.budget, seed=seed,
                eval_every=cfg.eval_every, batch_size=cfg.batch_size,
                workers=cfg.workers,
            ),
            "fo": run_fo_sgd(
                make_objective(cfg.objective), lr=cfg.fo_lr,
                steps=cfg.fo_steps, seed=seed, batch_size=cfg.batch_size,
                eval_every=cfg.eval_every,
            ),
        }
        for method, state in states.items():
            trace_name = f"{method}-seed{seed}.tsv"
            write_trace(os.path.join(out_dir, trace_name), method, seed,
                        state.trace, cfg_hash, git_rev)
            runs.append(_summarize_run(method, seed, state, trace_name))
    return _write_summary(out_dir, cfg, cfg_hash, git_rev, runs,
                          time.monotonic() - started)


def _method_rank(label: str) -> int:
    try:
        return METHODS.index(label)
    except ValueError:
        return len(METHODS)


def emit_plot_data(paths: Sequence[str], out_path: str | None = None) -> str:
    """Merge traces into one long-format table for plotting.

    Columns are reduced to what loss-over-queries plots need.  Rows are
    ordered by method (comparison methods first, other labels
    alphabetically), then seed, then step, so the output is independent
    of the order the input files were given in.
    """
    all_rows: list[dict] = []
    hashes: list[str] = []
    for path in paths:
        meta, rows = read_trace(path)
        if meta.get("config_hash") and meta["config_hash"] not in hashes:
            hashes.append(meta["config_hash"])
        all_rows.extend(rows)
    all_rows.sort(key=lambda row: (_method_rank(row["method"]), row["method"],
                                   row["seed"], row["step"]))
    lines = [
        f"# {PLOT_FORMAT}",
        f"# config_hash={','.join(sorted(hashes))}",
        f"# git={git_revision()}",
        f"# sources={len(paths)}",
        "\t".join(PLOT_COLUMNS),
    ]
    for row in all_rows:
        lines.append("\t".join((
            row["method"], str(row["seed"]), str(row["queries_used"]),
            repr(row["train_loss"]), _format_value(row["eval_accuracy"]),
        )))
    text = "\n".join(lines) + "\n"
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    return text
