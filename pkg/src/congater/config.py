"""Run configuration: one JSON document with strictly validated sections.

Unknown keys are rejected with their full dotted path, so a typo like
"training.task_lrr" fails loudly instead of silently training with the
default.  Values can be overridden from the command line with
--set section.key=value (value parsed as JSON, bare words as strings).
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from congater.encoder import EncoderConfig
from congater.data import SynthConfig
from congater.evaluation import ProbeConfig
from congater.objectives import LossConfig
from congater.training import TrainConfig


class ConfigError(ValueError):
    """Raised with the dotted key path of the offending entry."""


DEFAULTS: dict[str, dict] = {
    "encoder": {
        "vocab_size": 512,
        "hidden": 48,
        "blocks": 2,
        "heads": 2,
        "ff_width": 192,
        "max_length": 32,
        "kind": "transformer",
        "task_classes": 2,
        "attributes": {"gender": "congater"},
        "bottleneck_factor": 8,
        "adversary_ensemble": 5,
        "dropout": 0.1,
        "layer_norm_eps": 1e-5,
        "seed": 0,
    },
    "data": {
        "mode": "classification",
        "n_examples": 10000,
        "seq_length": 32,
        "task_classes": 2,
        "attributes": {"gender": 2},
        "rho_corr": 0.9,
        "topic_share": 0.5,
        "marker_share": 0.125,
        "markers_per_example": 4,
        "topic_density": 0.65,
        "n_queries": 300,
        "candidates_per_query": 10,
        "background_docs": 400,
        "upsample": True,
        "seed": 0,
    },
    "training": {
        "regime": "parallel",
        "train_epochs": 5,
        "adv_epochs": 5,
        "batch_size": 64,
        "task_lr": 2e-5,
        "adv_lr": 1e-4,
        "weight_decay": 0.01,
        "cosine_decay": True,
        "seed": 0,
    },
    "losses": {
        "lambda": 1.0,
        "warmup_epochs": 3,
    },
    "evaluation": {
        "omega_grid": [round(0.1 * i, 1) for i in range(11)],
        "k": 10,
        "n_probes": 5,
        "probe_epochs": 30,
        "probe_lr": 1e-4,
        "probe_batch_size": 128,
        "probe_seed": 0,
    },
    "service": {
        "host": "127.0.0.1",
        "port": 8000,
        "model_dir": "models",
        "cors_origins": ["*"],
    },
}

# Keys whose values are free-form maps (attribute name -> something).
_MAP_KEYS = {("encoder", "attributes"), ("data", "attributes"), ("losses", "lambda")}


def _check_type(path: str, value, default) -> None:
    if path.count(".") == 1 and tuple(path.split(".")) in _MAP_KEYS:
        return
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
    elif isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {value!r}")


def validate(document: dict) -> dict:
    """Merge a raw document over the defaults; reject unknown keys."""
    if not isinstance(document, dict):
        raise ConfigError("config root must be a JSON object")
    resolved = copy.deepcopy(DEFAULTS)
    for section, body in document.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"{section}: expected an object")
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            _check_type(f"{section}.{key}", value, DEFAULTS[section][key])
            resolved[section][key] = copy.deepcopy(value)
    return resolved


def apply_overrides(document: dict, overrides: list[str]) -> dict:
    """--set section.key=value; values parsed as JSON, bare words as strings."""
    document = copy.deepcopy(document)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, _, raw = item.partition("=")
        parts = dotted.split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {dotted!r} must be section.key")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        document.setdefault(parts[0], {})[parts[1]] = value
    return document


def config_hash(resolved: dict) -> str:
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> "RunConfig":
    if path is None:
        document: dict = {}
    else:
        try:
            document = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON: {err}") from None
    document = apply_overrides(document, overrides or [])
    return RunConfig(validate(document))


class RunConfig:
    """A resolved config document plus typed views onto its sections."""

    def __init__(self, resolved: dict):
        self.resolved = resolved
        self.hash = config_hash(resolved)

    def __getitem__(self, section: str) -> dict:
        return self.resolved[section]

    def encoder_config(self) -> EncoderConfig:
        enc = self.resolved["encoder"]
        return EncoderConfig(
            vocab_size=enc["vocab_size"], hidden=enc["hidden"], blocks=enc["blocks"],
            heads=enc["heads"], ff_width=enc["ff_width"], max_length=enc["max_length"],
            kind=enc["kind"], task_classes=enc["task_classes"],
            attributes=dict(enc["attributes"]),
            attr_classes={name: int(c) for name, c in self.resolved["data"]["attributes"].items()},
            bottleneck_factor=enc["bottleneck_factor"],
            adversary_ensemble=enc["adversary_ensemble"], dropout=enc["dropout"],
            layer_norm_eps=enc["layer_norm_eps"], seed=enc["seed"],
        )

    def synth_config(self) -> SynthConfig:
        d = self.resolved["data"]
        return SynthConfig(
            n_examples=d["n_examples"], vocab_size=self.resolved["encoder"]["vocab_size"],
            seq_length=d["seq_length"], task_classes=d["task_classes"],
            attributes={name: int(c) for name, c in d["attributes"].items()},
            rho_corr=d["rho_corr"], topic_share=d["topic_share"],
            marker_share=d["marker_share"], markers_per_example=d["markers_per_example"],
            topic_density=d["topic_density"], n_queries=d["n_queries"],
            candidates_per_query=d["candidates_per_query"],
            background_docs=d["background_docs"], seed=d["seed"],
        )

    def train_config(self) -> TrainConfig:
        t = self.resolved["training"]
        task = "ranking" if self.resolved["data"]["mode"] == "ranking" else "classification"
        return TrainConfig(
            regime=t["regime"], task=task, epochs_task=t["train_epochs"],
            epochs_attr=t["adv_epochs"], batch_size=t["batch_size"],
            task_lr=t["task_lr"], attr_lr=t["adv_lr"],
            weight_decay=t["weight_decay"], cosine_decay=t["cosine_decay"],
            seed=t["seed"],
        )

    def loss_config(self) -> LossConfig:
        losses = self.resolved["losses"]
        lam = losses["lambda"]
        attributes = [name for name, kind in self.resolved["encoder"]["attributes"].items()
                      if kind != "none"]
        if isinstance(lam, dict):
            lambdas = {name: float(lam.get(name, 0.0)) for name in attributes}
        else:
            lambdas = {name: float(lam) for name in attributes}
        return LossConfig(lambdas=lambdas, warmup_epochs=losses["warmup_epochs"])

    def probe_config(self) -> ProbeConfig:
        e = self.resolved["evaluation"]
        return ProbeConfig(n_probes=e["n_probes"], epochs=e["probe_epochs"],
                           lr=e["probe_lr"], batch_size=e["probe_batch_size"],
                           seed=e["probe_seed"])

    def stamp(self) -> dict:
        """Provenance block embedded in every artifact."""
        from congater import FORMAT_VERSION
        return {"config_hash": self.hash, "seed": self.resolved["training"]["seed"],
                "format_version": FORMAT_VERSION}
