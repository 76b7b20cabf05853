"""Run configuration files.

A run is described by a flat INI file with four sections: ``[run]``
(method, budget, seeds), ``[objective]`` (which synthetic task and its
knobs), ``[prompt]`` (subspace shape, only needed for the intrinsic
method) and ``[schedule]`` (gain sequences).  Parsing is strict:
unknown sections or keys are rejected with the offending line number so
a typo cannot silently fall back to a default.

``write_config`` emits a canonical rendering; parse followed by write
is a fixed point, which is what lets the harness hash configs for
reproducibility stamps.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

from .errors import ConfigError, DimensionError
from .objectives import KINDS, ObjectiveSpec
from .optimizer import GainSchedule
from .reparam import PromptShape, VariantKind

METHODS = ("intrinsic", "naive-zo", "fo")
PROJECTIONS = ("fastfood", "dense")

_RUN_INT = ("budget", "n_samples", "batch_size", "workers", "fo_steps")
_RUN_KEYS = _RUN_INT + ("method", "seeds", "projection", "clip",
                        "clip_threshold", "eval_every", "fo_lr", "out")
_OBJECTIVE_INT = ("seed", "dim", "n_classes", "n_features", "n_train",
                  "n_eval", "token_dim", "token_count", "hidden")
_OBJECTIVE_FLOAT = ("condition", "noise", "class_sep", "ridge", "ridge_radius")
_OBJECTIVE_KEYS = ("kind",) + _OBJECTIVE_INT + _OBJECTIVE_FLOAT
_PROMPT_KEYS = ("q", "r", "variant")
_SCHEDULE_KEYS = ("a1", "lr_decay", "c1", "pm_decay")
_SECTIONS = {"run": _RUN_KEYS, "objective": _OBJECTIVE_KEYS,
             "prompt": _PROMPT_KEYS, "schedule": _SCHEDULE_KEYS}


@dataclass(frozen=True)
class RunConfig:
    objective: ObjectiveSpec
    method: str = "intrinsic"
    seeds: tuple[int, ...] = (0,)
    budget: int = 5_000
    n_samples: int = 5
    batch_size: int = 128
    workers: int = 1
    projection: str = "fastfood"
    clip: bool = True
    clip_threshold: float | None = None       # None: sqrt(delta) at run time
    eval_every: int | None = None
    fo_lr: float = 0.05
    fo_steps: int = 500
    out: str | None = None                    # None: resolved by the CLI
    subspace_per_token: int | None = None     # [prompt] q
    subspace_rank: int | None = None          # [prompt] r
    variant: VariantKind = VariantKind.LOW_RANK_DIAG_SHARE
    schedule: GainSchedule = field(default_factory=GainSchedule)

    def shape(self) -> PromptShape:
        if self.subspace_per_token is None or self.subspace_rank is None:
            raise ConfigError("no [prompt] section was given")
        return PromptShape(p=self.objective.token_dim,
                           m=self.objective.token_count,
                           q=self.subspace_per_token,
                           r=self.subspace_rank)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    """First line carrying the given section header or key, 1-based."""
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return lineno
            continue
        if key is not None and current == section:
            if line.split("=", 1)[0].strip() == key:
                return lineno
    return None


def _fail(text: str, section: str, key: str | None, message: str) -> ConfigError:
    return ConfigError(message, line=_line_of(text, section, key))


def _parse_seeds(text: str, value: str) -> tuple[int, ...]:
    tokens = value.replace(",", " ").split()
    if not tokens:
        raise _fail(text, "run", "seeds", "seeds cannot be empty")
    try:
        return tuple(int(token) for token in tokens)
    except ValueError:
        raise _fail(text, "run", "seeds",
                    f"seeds expects integers, got {value!r}") from None


def _convert(text: str, section: str, key: str, value: str, kind: type):
    if kind is bool:
        lowered = value.strip().lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise _fail(text, section, key, f"{key} expects a boolean, got {value!r}")
    try:
        return kind(value)
    except ValueError:
        raise _fail(text, section, key,
                    f"{key} expects {kind.__name__}, got {value!r}") from None


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(exc.message.splitlines()[0], line=line) from None

    for section in parser.sections():
        if section not in _SECTIONS:
            raise _fail(text, section, None, f"unknown section [{section}]")
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise _fail(text, section, key,
                            f"unknown key {key!r} in [{section}]")
    for required in ("run", "objective"):
        if not parser.has_section(required):
            raise ConfigError(f"missing required section [{required}]")

    obj_kwargs: dict = {}
    section = parser["objective"]
    if "kind" not in section:
        raise _fail(text, "objective", None, "objective needs a kind")
    kind = section["kind"].strip()
    if kind not in KINDS:
        raise _fail(text, "objective", "kind",
                    f"unknown objective kind {kind!r}; choose from "
                    + ", ".join(KINDS))
    obj_kwargs["kind"] = kind
    for key in _OBJECTIVE_INT:
        if key in section:
            obj_kwargs[key] = _convert(text, "objective", key, section[key], int)
    for key in _OBJECTIVE_FLOAT:
        if key in section:
            obj_kwargs[key] = _convert(text, "objective", key, section[key], float)
    spec = ObjectiveSpec(**obj_kwargs)

    run_kwargs: dict = {}
    section = parser["run"]
    for key in _RUN_INT:
        if key in section:
            run_kwargs[key] = _convert(text, "run", key, section[key], int)
    if "method" in section:
        method = section["method"].strip()
        if method not in METHODS:
            raise _fail(text, "run", "method",
                        f"unknown method {method!r}; choose from "
                        + ", ".join(METHODS))
        run_kwargs["method"] = method
    if "seeds" in section:
        run_kwargs["seeds"] = _parse_seeds(text, section["seeds"])
    if "out" in section:
        run_kwargs["out"] = section["out"].strip()
    if "projection" in section:
        projection = section["projection"].strip()
        if projection not in PROJECTIONS:
            raise _fail(text, "run", "projection",
                        f"unknown projection {projection!r}; choose from "
                        + ", ".join(PROJECTIONS))
        run_kwargs["projection"] = projection
    if "clip" in section:
        run_kwargs["clip"] = _convert(text, "run", "clip", section["clip"], bool)
    if "clip_threshold" in section:
        run_kwargs["clip_threshold"] = _convert(
            text, "run", "clip_threshold", section["clip_threshold"], float)
    if "eval_every" in section:
        run_kwargs["eval_every"] = _convert(
            text, "run", "eval_every", section["eval_every"], int)
    if "fo_lr" in section:
        run_kwargs["fo_lr"] = _convert(text, "run", "fo_lr", section["fo_lr"], float)

    if parser.has_section("prompt"):
        section = parser["prompt"]
        for key, name in (("q", "subspace_per_token"), ("r", "subspace_rank")):
            if key not in section:
                raise _fail(text, "prompt", None, f"[prompt] needs {key}")
            run_kwargs[name] = _convert(text, "prompt", key, section[key], int)
        if "variant" in section:
            raw = section["variant"].strip()
            try:
                run_kwargs["variant"] = VariantKind(raw)
            except ValueError:
                raise _fail(text, "prompt", "variant",
                            f"unknown variant {raw!r}; choose from "
                            + ", ".join(v.value for v in VariantKind)) from None

    if parser.has_section("schedule"):
        section = parser["schedule"]
        sched_kwargs = {key: _convert(text, "schedule", key, section[key], float)
                        for key in _SCHEDULE_KEYS if key in section}
        try:
            run_kwargs["schedule"] = GainSchedule(**sched_kwargs)
        except ValueError as exc:
            raise _fail(text, "schedule", None, str(exc)) from None

    cfg = RunConfig(objective=spec, **run_kwargs)
    _check_config(text, cfg)
    return cfg


def _check_config(text: str, cfg: RunConfig) -> None:
    def bad(key: str, message: str, section: str = "run"):
        return _fail(text, section, key, message)

    if cfg.n_samples < 1:
        raise bad("n_samples", "n_samples must be at least 1")
    if cfg.budget < 2 * cfg.n_samples:
        raise bad("budget",
                  f"budget {cfg.budget} cannot cover one step: "
                  f"{2 * cfg.n_samples} evaluations needed per step")
    for key in ("batch_size", "workers", "fo_steps"):
        if getattr(cfg, key) < 1:
            raise bad(key, f"{key} must be at least 1")
    if cfg.eval_every is not None and cfg.eval_every < 1:
        raise bad("eval_every", "eval_every must be at least 1")
    spec = cfg.objective
    for key, minimum in (("dim", 1), ("n_classes", 2), ("n_features", 1),
                         ("n_train", 1), ("n_eval", 1), ("token_dim", 1),
                         ("token_count", 1), ("hidden", 1)):
        if getattr(spec, key) < minimum:
            raise bad(key, f"{key} must be at least {minimum}",
                      section="objective")
    if spec.condition < 1:
        raise bad("condition", "condition must be at least 1",
                  section="objective")
    for key in ("noise", "ridge", "ridge_radius"):
        if getattr(spec, key) < 0:
            raise bad(key, f"{key} cannot be negative", section="objective")
    if cfg.clip_threshold is not None and cfg.clip_threshold <= 0:
        raise bad("clip_threshold", "clip_threshold must be positive")
    if cfg.fo_lr <= 0:
        raise bad("fo_lr", "fo_lr must be positive")
    if cfg.method == "intrinsic":
        if cfg.subspace_per_token is None:
            raise ConfigError(
                "[prompt] section is required when method = intrinsic",
                line=_line_of(text, "run", "method"))
        try:
            cfg.shape()
        except (DimensionError, ValueError) as exc:
            raise _fail(text, "prompt", None, str(exc)) from None


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as handle:
        return parse_config(handle.read())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_config(cfg: RunConfig) -> str:
    """Canonical rendering; every effective value is spelled out."""
    out = io.StringIO()
    out.write("[run]\n")
    out.write(f"method = {cfg.method}\n")
    out.write("seeds = " + " ".join(str(seed) for seed in cfg.seeds) + "\n")
    for key in ("budget", "n_samples", "batch_size", "workers"):
        out.write(f"{key} = {_fmt(getattr(cfg, key))}\n")
    out.write(f"projection = {cfg.projection}\n")
    out.write(f"clip = {_fmt(cfg.clip)}\n")
    if cfg.clip_threshold is not None:
        out.write(f"clip_threshold = {_fmt(cfg.clip_threshold)}\n")
    if cfg.eval_every is not None:
        out.write(f"eval_every = {_fmt(cfg.eval_every)}\n")
    out.write(f"fo_lr = {_fmt(cfg.fo_lr)}\n")
    out.write(f"fo_steps = {_fmt(cfg.fo_steps)}\n")
    if cfg.out is not None:
        out.write(f"out = {cfg.out}\n")
    out.write("\n[objective]\n")
    out.write(f"kind = {cfg.objective.kind}\n")
    for key in _OBJECTIVE_INT + _OBJECTIVE_FLOAT:
        out.write(f"{key} = {_fmt(getattr(cfg.objective, key))}\n")
    if cfg.subspace_per_token is not None:
        out.write("\n[prompt]\n")
        out.write(f"q = {cfg.subspace_per_token}\n")
        out.write(f"r = {cfg.subspace_rank}\n")
        out.write(f"variant = {cfg.variant.value}\n")
    out.write("\n[schedule]\n")
    for key in _SCHEDULE_KEYS:
        out.write(f"{key} = {_fmt(getattr(cfg.schedule, key))}\n")
    return out.getvalue()


def config_hash(cfg: RunConfig) -> str:
    """Short digest of the canonical form, for trace headers."""
    return hashlib.sha256(write_config(cfg).encode("utf-8")).hexdigest()[:12]
