"""Run configuration: JSON file, dotted overrides, derived stage seeds.

A run is fully described by one JSON document. Unset keys take the defaults
below; relative data paths resolve against the output directory so that a
generator stage and the stages consuming its files agree without repeated
path plumbing. The effective configuration is written next to every stage's
outputs as ``config_snapshot.json``, and re-running any stage from that
snapshot reproduces its outputs byte for byte.

All randomness flows from the single top-level ``seed``: each stage draws
its own sub-seed as the first eight little-endian bytes of
``sha256("{seed}:{stage}")``, so changing one stage's stream never perturbs
another's.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .data import SynthSpec
from .embeddings import SkipgramConfig
from .training import JointConfig

OUT_DIR_ENV = "STORMSENSE_OUT_DIR"

SNAPSHOT_NAME = "config_snapshot.json"

F2_KINDS = ("cnn", "dnn", "rnn")

DEFAULTS: dict = {
    "seed": 42,
    "paths": {
        "besttrack": "besttrack.csv",
        "tweets": "tweets.jsonl",
        "sentiment": "sentiment.jsonl",
        "semantic_vectors": "",
        "embedding_table": "",
        "out_dir": "out",
    },
    "models": {
        "f1_kind": "bilstm",
        "f1_units": 64,
        "f2_kind": "cnn",
    },
    "training": {
        "lambda_f1": 1.0,
        "lambda_f2": 1.0,
        "epochs": 100,
        "batch_size": 32,
        "learning_rate": 0.001,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-8,
        "mode": "joint",
        "sentiment_sample": 256,
        "grad_clip": 5.0,
        "warmup_epochs": 2,
        "hard_labels": False,
        "oversample": True,
        "smote_neighbors": 5,
    },
    "skipgram": {
        "d": 16,
        "window": 4,
        "negatives": 5,
        "epochs": 2,
        "learning_rate": 0.025,
        "min_count": 2,
    },
    "data": {
        "slot_length": 21600.0,
        "split_ratio": 0.8,
        "pool_eval_fraction": 0.2,
    },
    "synth": {
        "n": 2000,
        "class_priors": [0.4, 0.3, 0.2, 0.1],
        "vmax_means": [35.0, 60.0, 95.0, 140.0],
        "vmax_std": 19.0,
        "tweet_signal": 1.0,
        "tweets_per_slot": 24,
        "tweet_len": 8,
        "pos_rate_center": 0.25,
        "pos_rate_spread": 0.48,
        "labeled_tweets": 1500,
    },
}

# keys that must come out of merging as nonempty strings
_REQUIRED_PATHS = ("besttrack", "tweets", "sentiment", "out_dir")


class ConfigError(ValueError):
    """Raised for any malformed, unknown, or missing configuration input."""


def derive_seed(seed: int, stage: str) -> int:
    """Deterministic per-stage sub-seed from the top-level seed."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _type_ok(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, (list, tuple))
    return True


def _merge(values: dict, incoming: dict, problems: list[str]) -> None:
    for key, value in incoming.items():
        if key not in values:
            problems.append(f"unknown config key {key!r}")
            continue
        if isinstance(values[key], dict):
            if not isinstance(value, dict):
                problems.append(f"config section {key!r} must be an object")
                continue
            for sub, sub_value in value.items():
                if sub not in values[key]:
                    problems.append(f"unknown config key {key!r}.{sub!r}")
                elif sub_value is None:
                    values[key][sub] = None
                elif not _type_ok(DEFAULTS[key][sub], sub_value):
                    problems.append(
                        f"config key {key}.{sub} has wrong type "
                        f"{type(sub_value).__name__}")
                else:
                    values[key][sub] = sub_value
        elif value is None:
            values[key] = None
        elif not _type_ok(DEFAULTS[key], value):
            problems.append(f"config key {key} has wrong type {type(value).__name__}")
        else:
            values[key] = value


def parse_override(item: str) -> tuple[str, object]:
    """Split one ``key=value`` override; values parse as JSON when they can."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _resolve_override_key(values: dict, key: str) -> tuple[str, ...]:
    parts = key.split(".")
    if len(parts) == 2 and parts[0] in values and isinstance(values[parts[0]], dict):
        if parts[1] not in values[parts[0]]:
            raise ConfigError(f"unknown config key {parts[0]!r}.{parts[1]!r}")
        return (parts[0], parts[1])
    if len(parts) == 1:
        if key in values and not isinstance(values[key], dict):
            return (key,)
        owners = [section for section, body in values.items()
                  if isinstance(body, dict) and key in body]
        if len(owners) == 1:
            return (owners[0], key)
        if len(owners) > 1:
            choices = ", ".join(f"{o}.{key}" for o in owners)
            raise ConfigError(f"override key {key!r} is ambiguous: {choices}")
    raise ConfigError(f"unknown config key {key!r}")


@dataclass
class RunConfig:
    """A fully merged, validated run description."""

    values: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["paths"]["out_dir"])

    def data_path(self, key: str) -> Path:
        """Input/output data location; relative names live in out_dir."""
        raw = self.values["paths"][key]
        if not raw:
            raise ConfigError(f"config key paths.{key} is not set")
        p = Path(raw)
        return p if p.is_absolute() else self.out_dir / p

    def joint_config(self) -> JointConfig:
        return JointConfig(seed=derive_seed(self.seed, "train"),
                           **self.values["training"])

    def skipgram_config(self) -> SkipgramConfig:
        return SkipgramConfig(seed=derive_seed(self.seed, "skipgram"),
                              **self.values["skipgram"])

    def synth_spec(self) -> SynthSpec:
        body = dict(self.values["synth"])
        body["class_priors"] = tuple(body["class_priors"])
        body["vmax_means"] = tuple(body["vmax_means"])
        return SynthSpec(seed=derive_seed(self.seed, "synth"),
                         slot_length=self.values["data"]["slot_length"],
                         **body)

    def snapshot(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.values, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _validate(values: dict, problems: list[str]) -> None:
    missing = []
    if values["seed"] is None:
        missing.append("seed")
    for key in _REQUIRED_PATHS:
        if not values["paths"].get(key):
            missing.append(f"paths.{key}")
    if missing:
        problems.append("missing config keys: " + ", ".join(missing))
    for section, body in values.items():
        if isinstance(body, dict):
            nulls = [f"{section}.{k}" for k, v in body.items()
                     if v is None and f"{section}.{k}" not in
                     {f"paths.{p}" for p in _REQUIRED_PATHS}]
            if nulls:
                problems.append("config keys set to null: " + ", ".join(nulls))
    kind = values["models"]["f2_kind"]
    if kind is not None and kind not in F2_KINDS:
        problems.append(f"models.f2_kind must be one of {F2_KINDS}, got {kind!r}")
    f1 = values["models"]["f1_kind"]
    if f1 is not None and f1 != "bilstm":
        problems.append(f"models.f1_kind must be 'bilstm', got {f1!r}")


def load_config(config_path: Optional[str] = None,
                overrides: Iterable[str] = ()) -> RunConfig:
    """Defaults, then the JSON file, then key=value overrides, then the
    output-dir environment override; every problem is reported at once."""
    values = copy.deepcopy(DEFAULTS)
    problems: list[str] = []
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{config_path}: top level must be a JSON object")
        _merge(values, loaded, problems)
    for item in overrides:
        key, value = parse_override(item)
        target = _resolve_override_key(values, key)
        node = values
        for part in target[:-1]:
            node = node[part]
        default = DEFAULTS
        for part in target:
            default = default[part]
        if value is not None and not _type_ok(default, value):
            problems.append(
                f"override {'.'.join(target)} has wrong type {type(value).__name__}")
        else:
            node[target[-1]] = value
    env_out = os.environ.get(OUT_DIR_ENV)
    if env_out:
        values["paths"]["out_dir"] = env_out
    _validate(values, problems)
    if problems:
        raise ConfigError("invalid configuration: " + "; ".join(problems))
    return RunConfig(values=values)
