"""Typed INI configuration with environment overrides.

Every key has a type and a default; unknown sections or keys are errors.
An environment variable ``SPRKIT_<SECTION>_<KEY>`` (upper case) overrides
the file, e.g. ``SPRKIT_PHASE1_EPOCHS=5``.
"""

from __future__ import annotations

import configparser
import os
from pathlib import Path

from . import pipeline as pl

ENV_PREFIX = "SPRKIT_"


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(t) for t in s.replace(",", " ").split())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(t) for t in s.replace(",", " ").split())


def _choice(*options):
    def parse(s: str) -> str:
        s = s.strip()
        if s not in options:
            raise ValueError(f"{s!r} is not one of {', '.join(options)}")
        return s

    parse.options = options
    return parse


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_P1, _FT = pl.desk_milestones()
_OPT = _choice("none", "crop+flip")


def _train_keys(epochs, lr0, milestones):
    return {
        "epochs": (int, epochs),
        "batch_size": (int, 64),
        "lr0": (float, lr0),
        "lr_milestones": (_ints, milestones),
        "lr_factor": (float, 0.1),
        "momentum": (float, 0.9),
        "augment": (_OPT, "none"),
        "pad": (int, 1),
    }


SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (int, 0),
        "out_dir": (str, "sprkit-out"),
        "threads": (int, 1),
        "mode": (_choice("full", "baseline", "phase1"), "full"),
    },
    "data": {
        "source": (_choice("synthetic", "idx", "sprd"), "synthetic"),
        "kind": (_choice("tiny-images", "blobs", "moons", "rings"), "tiny-images"),
        "n_train": (int, 1024),
        "n_test": (int, 512),
        "classes": (int, 4),
        "noise": (float, 0.3),
        "channels": (int, 3),
        "size": (int, 8),
        "normalize": (_bool, True),
        "train_images": (str, ""),
        "train_labels": (str, ""),
        "test_images": (str, ""),
        "test_labels": (str, ""),
        "train_file": (str, ""),
        "test_file": (str, ""),
    },
    "model": {
        "arch": (_choice("convnet-s", "mlp"), "convnet-s"),
        "c1": (int, 8),
        "c2": (int, 16),
        "hidden": (_ints, (32,)),
    },
    "spr": {
        "lam": (float, 0.5),
        "alpha": (float, 0.3),
        "variant": (_choice("consistent", "literal"), "consistent"),
        "nonprunable": (_choice("mean-entity", "plain", "none"), "mean-entity"),
    },
    "baseline": _train_keys(60, 0.05, _P1),
    "phase1": {
        **_train_keys(60, 0.05, _P1),
        "regularizer": (_choice("spr", "l2", "l1", "group_lasso", "none"), "spr"),
    },
    "finetune": {
        **_train_keys(30, 0.005, _FT),
        "l2": (_choice("entity-weighted", "plain"), "entity-weighted"),
    },
    "prune": {
        "weight_tol": (float, 1e-4),
        "entity_frac": (float, 0.99),
        "policy": (_choice("fraction", "linf"), "fraction"),
        "prune_bias": (_bool, True),
        "include_dense": (_bool, False),
        "on_degenerate": (_choice("error", "warn"), "error"),
    },
    "grid": {
        "lambdas": (_floats, (0.1, 0.5, 2.0)),
        "alphas": (_floats, (0.01, 0.1, 0.3)),
    },
    "bench": {
        "epochs": (int, 3),
    },
    "relax": {
        "n_instances": (int, 200),
        "first_seed": (int, 0),
        "m": (int, 20),
        "n_max": (int, 12),
        "N_max": (int, 6),
        "loss": (_choice("least-squares", "logistic"), "least-squares"),
        "noise": (float, 0.1),
        "instance": (str, ""),
        "worked": (_bool, False),
        "joint": (_bool, False),
        "tol": (float, 1e-6),
    },
}


class Config:
    """Resolved configuration: ``cfg["section"]["key"]`` is always present and typed."""

    def __init__(self, values: dict[str, dict], source: str | None = None):
        self.values = values
        self.source = source

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def to_ini(self) -> str:
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {_fmt(self.values[sec][k])}" for k in keys]
            lines.append("")
        return "\n".join(lines)

    # builders ---------------------------------------------------------

    def _train(self, section: str, **extra) -> pl.TrainConfig:
        s = self.values[section]
        return pl.TrainConfig(
            epochs=s["epochs"],
            batch_size=s["batch_size"],
            lr0=s["lr0"],
            lr_milestones=s["lr_milestones"],
            lr_factor=s["lr_factor"],
            momentum=s["momentum"],
            seed=self.values["run"]["seed"],
            augment=s["augment"],
            pad=s["pad"],
            variant=self.values["spr"]["variant"],
            nonprunable=self.values["spr"]["nonprunable"],
            **extra,
        )

    def pipeline_config(self) -> pl.PipelineConfig:
        m = self.values["model"]
        p = self.values["prune"]
        spr = self.values["spr"]
        base = pl.PipelineConfig(
            model=pl.ModelConfig(m["arch"], m["c1"], m["c2"], m["hidden"]),
            baseline=self._train("baseline", phase="baseline", regularizer="none"),
            phase1=self._train("phase1", phase="spr", regularizer=self.values["phase1"]["regularizer"]),
            finetune=self._train("finetune", phase="finetune", finetune_l2=self.values["finetune"]["l2"]),
            prune=pl.PruneConfig(
                p["weight_tol"], p["entity_frac"], p["policy"], p["prune_bias"], p["include_dense"], p["on_degenerate"]
            ),
            seed=self.values["run"]["seed"],
        )
        return base.with_spr(spr["lam"], spr["alpha"])


def defaults() -> Config:
    return Config({sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()})


def _parse(section: str, key: str, raw: str, origin: str):
    kind, _ = SCHEMA[section][key]
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{origin}: [{section}] {key}: {exc}") from None


def _validate(cfg: Config) -> None:
    try:
        cfg.pipeline_config()  # TrainConfig checks milestones, lr factor, ...
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["run"]["threads"] < 1:
        raise ConfigError("[run] threads must be >= 1")
    if cfg["spr"]["lam"] < 0 or not 0 <= cfg["spr"]["alpha"] <= 1:
        raise ConfigError("[spr] needs lam >= 0 and 0 <= alpha <= 1")
    if not cfg["grid"]["lambdas"] or not cfg["grid"]["alphas"]:
        raise ConfigError("[grid] lambdas and alphas must be non-empty")
    if cfg["bench"]["epochs"] < 1:
        raise ConfigError("[bench] epochs must be >= 1")


def load(path=None, env: dict | None = None) -> Config:
    """Defaults <- file <- environment, validated."""
    env = os.environ if env is None else env
    cfg = defaults()
    origin = "<defaults>"
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str  # keys are case-sensitive (N_max)
        try:
            parser.read_string(path.read_text(), source=str(path))
        except (configparser.Error, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        origin = str(path)
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
                cfg.values[sec][key] = _parse(sec, key, raw, origin)
    lookup = {f"{ENV_PREFIX}{sec}_{key}".upper(): (sec, key) for sec, keys in SCHEMA.items() for key in keys}
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        if name.upper() not in lookup:
            raise ConfigError(f"unknown override {name}")
        sec, key = lookup[name.upper()]
        cfg.values[sec][key] = _parse(sec, key, raw, f"${name}")
    cfg.source = origin
    _validate(cfg)
    return cfg


def with_overrides(cfg: Config, **sections) -> Config:
    """Copy with ``section={"key": value}`` replacements (already typed)."""
    values = {sec: dict(keys) for sec, keys in cfg.values.items()}
    for sec, kv in sections.items():
        for k, v in kv.items():
            if k not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {k!r} in [{sec}]")
            values[sec][k] = v
    out = Config(values, cfg.source)
    _validate(out)
    return out


__all__ = ["Config", "ConfigError", "ENV_PREFIX", "SCHEMA", "defaults", "load", "with_overrides"]
