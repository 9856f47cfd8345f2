"""INI configuration with typed defaults.

Every key has a default below; its type decides how the file value is
parsed.  Tuple defaults take comma-separated lists.  Architectures are
written as ``64x64``.  Overrides use ``section.key=value``.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass

from . import __version__

DEFAULTS = {
    "market": {
        "model": "gbm",
        "s0": 100.0,
        "mu": 0.05,
        "sigma": 0.2,
        "r": 0.05,
        "sigma0": 0.2,
        "nu": 0.0,
        "rho": 0.0,
    },
    "option": {
        "strike": 100.0,
        "maturity": 1.0,
        "style": "american",
    },
    "pricing": {
        "method": "tree",
        "tree_steps": 500,
        "cheb_price_degree": 80,
        "cheb_vol_degree": 10,
        "cheb_time_steps": 100,
        "cheb_mc_per_node": 2000,
        "cheb_seed": 0,
    },
    "agent": {
        "actor_learning_rate": 5e-6,
        "critic_learning_rate": 5e-4,
        "training_episodes": 5000,
        "steps_per_training_episode": 25,
        "actor_nn_architecture": "64x64",
        "critic_nn_architecture": "64x64",
        "tc_penalty_function": "quadratic",
        "tc_penalty_multiplier": 0.005,
        "gamma": 0.99,
        "soft_tau": 0.005,
        "buffer_capacity": 100000,
        "batch_size": 64,
        "warmup": 1000,
        "noise_sigma": 0.1,
        "noise_final": 0.01,
        "optimizer": "adam",
        "early_exercise": True,
        "seed": 0,
        "training_paths": 5000,
        "training_data_seed": 1000,
    },
    "evaluation": {
        "lambdas": (0.01, 0.03),
        "test_steps": 104,
        "test_paths": 10000,
        "test_seed": 2024,
        "financing": True,
        "charge_initial": True,
        "unwind": False,
        "baselines": ("bs_delta",),
    },
    "sweep": {
        "actor_learning_rate": (),
        "critic_learning_rate": (),
        "training_episodes": (),
        "nn_architecture": (),
        "actor_nn_architecture": (),
        "critic_nn_architecture": (),
        "steps_per_training_episode": (),
        "penalty": (),
        "seeds": (0,),
    },
    "steps": {
        "train_steps": (10, 25, 50),
        "test_steps": (52, 104, 252),
        "seeds": (0,),
    },
    "penalty": {
        "linear": (0.001, 0.005, 0.01, 0.03),
        "quadratic": (0.001, 0.005, 0.01),
        "seeds": (0,),
    },
    "calibration": {
        "price_degree": 16,
        "vol_degree": 6,
        "time_steps": 12,
        "mc_per_node": 300,
        "seed": 7,
        "starts": 3,
        "max_iters": 150,
        "tolerance": 1e-4,
        "restarts": 2,
        "quotes": "",
    },
    "weekly": {
        "paths_file": "",
        "strikes_file": "",
        "quotes_dir": "",
        "symbols": (),
        "dates": ("2023-10-16", "2023-10-23", "2023-10-30", "2023-11-06", "2023-11-13"),
        "expiry": "2023-11-17",
        "rate": 0.05,
        "lambdas": (0.01, 0.03),
        "surface_price_degree": 24,
        "surface_vol_degree": 8,
        "surface_mc_per_node": 1000,
        "training_paths": 1000,
    },
    "output": {
        "dir": "results",
    },
}


def _parse(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        kind = type(default[0]) if default else None
        if kind is None:
            return tuple(_guess(s) for s in items)
        return tuple(_parse(s, default[0]) for s in items)
    return raw


def _guess(s: str):
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


def parse_arch(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    parts = str(text).lower().replace("^", "x").split("x")
    widths = tuple(int(p) for p in parts if p.strip())
    if not widths or min(widths) < 1:
        raise ValueError(f"bad architecture {text!r}")
    return widths


@dataclass
class Config:
    values: dict
    source: str = ""

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def canonical(self) -> str:
        return json.dumps(self.values, sort_keys=True, default=list)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def provenance(self) -> dict:
        return {"config_hash": self.hash, "version": __version__}

    def with_overrides(self, overrides) -> "Config":
        values = json.loads(self.canonical())
        for sec, body in DEFAULTS.items():
            for key, default in body.items():
                if isinstance(default, tuple):
                    values[sec][key] = tuple(values[sec][key])
        out = Config(values, self.source)
        for item in overrides:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ValueError(f"override must look like section.key=value, got {item!r}")
            lhs, raw = item.split("=", 1)
            sec, key = lhs.strip().split(".", 1)
            _set(out.values, sec, key, raw)
        return out

    def write(self, file) -> None:
        parser = configparser.ConfigParser()
        for sec, body in self.values.items():
            parser[sec] = {k: _format(v) for k, v in body.items()}
        with open(file, "w") as fh:
            parser.write(fh)


def _format(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    return str(v)


def _set(values: dict, sec: str, key: str, raw: str) -> None:
    if sec not in DEFAULTS:
        raise ValueError(f"unknown config section [{sec}]")
    if key not in DEFAULTS[sec]:
        raise ValueError(f"unknown key {key!r} in [{sec}]")
    try:
        values[sec][key] = _parse(raw, DEFAULTS[sec][key])
    except ValueError as exc:
        raise ValueError(f"[{sec}] {key}: {exc}") from None


def default_config() -> Config:
    return Config({sec: dict(body) for sec, body in DEFAULTS.items()})


def load_config(file=None, overrides=()) -> Config:
    cfg = default_config()
    if file:
        parser = configparser.ConfigParser()
        with open(file) as fh:
            parser.read_file(fh)
        for sec in parser.sections():
            for key, raw in parser[sec].items():
                _set(cfg.values, sec, key, raw)
        cfg.source = str(file)
    return cfg.with_overrides(overrides)
