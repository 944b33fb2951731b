"""Experiment configuration: a strict JSON document.

Sections: data (generator spec or path to pre-written splits, plus split
fractions and seed), encoder, train, distill, output. Unknown keys anywhere
are rejected with the offending path, so a typo cannot silently fall back to
a default. A written manifest is itself a valid config (it carries one extra
"subcommand" key) so any run can be replayed from its manifest verbatim.
"""

from __future__ import annotations

import json

from .dataio import GenSpec
from .encoders import EncoderConfig, config_from_dict
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid experiment configuration."""


_SCHEMA = {
    "subcommand": str,
    "data": {
        "path": str,
        "gen": {
            "num_videos": int,
            "num_classes": int,
            "feature_dim": int,
            "n_min": int,
            "n_max": int,
            "labels_min": int,
            "labels_max": int,
            "segment_noise": float,
            "seed": int,
        },
        "split": list,
        "seed": int,
    },
    "encoder": {
        "kind": str,
        "input_dim": int,
        "num_classes": int,
        "frames_per_block": int,
        "cell": int,
        "clusters": int,
        "hidden": int,
        "groups": int,
        "expansion": int,
        "dropout": float,
    },
    "train": {
        "lr0": float,
        "decay": float,
        "batch_size": int,
        "epochs": int,
        "l2": float,
        "seed": int,
        "beta1": float,
        "beta2": float,
        "adam_eps": float,
    },
    "distill": {
        "combo": str,
        "k": int,
        "sampler": str,
        "rep_mode": str,
        "pred_distance": str,
        "weights": {"CE": float, "REP": float, "REP_I": float, "PRED": float},
    },
    "output": {"dir": str},
}


def _check_keys(doc, schema, path):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    for key, value in doc.items():
        if key not in schema:
            raise ConfigError(f"{path + key}: unknown key")
        want = schema[key]
        if isinstance(want, dict):
            _check_keys(value, want, path + key + ".")
        elif want is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{path + key}: expected a number")
        elif want is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{path + key}: expected an integer")
        elif not isinstance(value, want):
            raise ConfigError(f"{path + key}: expected {want.__name__}")


def validate_config(doc: dict) -> dict:
    """Schema-check a raw config document; returns it unchanged."""
    _check_keys(doc, _SCHEMA, "")
    data = doc.get("data", {})
    if "gen" not in data and "path" not in data:
        raise ConfigError("data: need either 'gen' or 'path'")
    split = data.get("split", [0.8, 0.1, 0.1])
    if len(split) != 3:
        raise ConfigError("data.split: need exactly three fractions")
    return doc


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}")
    return validate_config(doc)


def gen_spec_from_config(doc: dict) -> GenSpec:
    gen = dict(doc["data"]["gen"])
    lo = gen.pop("labels_min", 1)
    hi = gen.pop("labels_max", 3)
    try:
        return GenSpec(labels_per_video=(lo, hi), **gen)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"data.gen: {exc}")


def encoder_from_config(doc: dict) -> EncoderConfig:
    if "encoder" not in doc:
        raise ConfigError("missing 'encoder' section")
    try:
        return config_from_dict(doc["encoder"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"encoder: {exc}")


def train_from_config(doc: dict) -> TrainConfig:
    try:
        return TrainConfig(**doc.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}")
