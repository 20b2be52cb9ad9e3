"""Experiment configuration: YAML file, env-var overrides, strict validation.

The config is a nested key/value file; unknown keys are rejected and a
`schema_version` field guards compatibility.  Any key can be overridden from
the environment with the prefix ``FIBERAE_`` and ``__`` as the nesting
separator, e.g. ``FIBERAE_train__iterations=500``.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .dsp import LinkConfig, PulseConfig
from .errors import ConfigurationError
from .pipeline import TrainConfig
from .rp import RpModelConfig
from .ssfm import SsfmOptions

SCHEMA_VERSION = 1
ENV_PREFIX = "FIBERAE_"

DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "threads": 1,
    "out_dir": "runs",
    "link": {
        "alpha_db_km": 0.21,
        "beta2_ps2_km": -21.4,
        "gamma_w_km": 1.14,
        "span_length_km": 80.0,
        "n_spans": 30,
        "noise_figure_db": 4.0,
        "carrier_freq_hz": 193.41e12,
    },
    "pulse": {"rolloff": 0.1, "sps": 2, "filter_span": 64},
    "channel": {
        "kind": "rp",  # training channel; evaluation always uses ssfm
        "steps_per_span": 200,
        "include_ase": True,
        "rp_stages": 3,
        "rp_branches": 100,
        "rp_noise": True,
    },
    "train": {
        "launch_power_dbm": 2.0,
        "batch_symbols": 4096,
        "iterations": 20000,
        "learn_rate": 1e-3,
        "lr_decay_points": [0.6, 0.85],
        "lr_decay_factor": 0.5,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "train_encoder": True,
        "train_preemph": True,
        "train_decoder": True,
        "init_preemph": True,
    },
    "eval": {
        "n_seq": 10,
        "seq_len": 65536,
        "finetune_iters": 200,
        "finetune_frames": 8,
        "frame_symbols": 4096,
        "estimator": "nn",
    },
    "validate": {
        "powers": [-5.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 2.5],
        "n_symbols": 16384,
    },
    "sweep": {"powers": [1.0, 1.5, 2.0, 2.5, 3.0]},
}


def _merge_checked(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        here = f"{path}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigurationError(f"config key {here} must be a mapping")
            out[key] = _merge_checked(base[key], val, f"{here}.")
        else:
            out[key] = _coerce(here, base[key], val)
    return out


def _coerce(path: str, default, val):
    if isinstance(default, bool):
        if isinstance(val, bool):
            return val
        if isinstance(val, str):
            if val.lower() in ("true", "1", "yes"):
                return True
            if val.lower() in ("false", "0", "no"):
                return False
        raise ConfigurationError(f"config key {path} must be a boolean")
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            f = float(val)
        except (TypeError, ValueError):
            raise ConfigurationError(f"config key {path} must be an integer")
        if f != int(f):
            raise ConfigurationError(f"config key {path} must be an integer")
        return int(f)
    if isinstance(default, float):
        try:
            return float(val)
        except (TypeError, ValueError):
            raise ConfigurationError(f"config key {path} must be a number")
    if isinstance(default, list):
        if isinstance(val, str):
            val = [v for v in val.replace(",", " ").split() if v]
        if not isinstance(val, (list, tuple)):
            raise ConfigurationError(f"config key {path} must be a list")
        return [float(v) for v in val]
    return val


def _env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, val in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].split("__")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["out_dir"])

    def link(self) -> LinkConfig:
        return LinkConfig(**self.raw["link"])

    def pulse(self) -> PulseConfig:
        return PulseConfig(**self.raw["pulse"])

    def ssfm_options(self, include_ase: bool | None = None) -> SsfmOptions:
        ch = self.raw["channel"]
        return SsfmOptions(
            steps_per_span=ch["steps_per_span"],
            include_ase=ch["include_ase"] if include_ase is None else include_ase,
        )

    def rp_config(self, with_noise: bool | None = None) -> RpModelConfig:
        ch = self.raw["channel"]
        return RpModelConfig.default_for_link(
            self.link(), ch["rp_stages"], ch["rp_branches"],
            with_noise=ch["rp_noise"] if with_noise is None else with_noise)

    def train_config(self, **overrides) -> TrainConfig:
        t = self.raw["train"]
        ch = self.raw["channel"]
        kwargs = dict(
            link=self.link(), pulse=self.pulse(),
            launch_power_dbm=t["launch_power_dbm"],
            batch_symbols=t["batch_symbols"], iterations=t["iterations"],
            learn_rate=t["learn_rate"],
            lr_decay_points=tuple(t["lr_decay_points"]),
            lr_decay_factor=t["lr_decay_factor"],
            adam_beta1=t["adam_beta1"], adam_beta2=t["adam_beta2"],
            adam_eps=t["adam_eps"], seed=self.seed,
            train_encoder=t["train_encoder"], train_preemph=t["train_preemph"],
            train_decoder=t["train_decoder"],
            rp_stages=ch["rp_stages"], rp_branches=ch["rp_branches"],
            rp_noise=ch["rp_noise"],
        )
        kwargs.update(overrides)
        return TrainConfig(**kwargs)

    def dump(self, path: str | Path) -> None:
        """Resolved-config snapshot with all defaults materialized."""
        with open(path, "w") as f:
            yaml.safe_dump(self.raw, f, sort_keys=True)


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                environ=None) -> ExperimentConfig:
    user: dict = {}
    if path is not None:
        text = Path(path).read_text()
        user = yaml.safe_load(text) or {}
        if not isinstance(user, dict):
            raise ConfigurationError("config file must contain a mapping")
    merged = _merge_checked(DEFAULTS, user)
    env = _env_overrides(environ)
    if env:
        merged = _merge_checked(merged, env)
    if overrides:
        merged = _merge_checked(merged, overrides)
    if merged["schema_version"] != SCHEMA_VERSION:
        raise ConfigurationError(
            f"unsupported schema_version {merged['schema_version']}; expected {SCHEMA_VERSION}")
    return ExperimentConfig(merged)
