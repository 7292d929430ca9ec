"""Flat key=value configuration with env-var overrides.

Precedence: defaults < config file < RCT_* environment variables < --set
flags. Unknown keys are rejected; every run logs the resolved config.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import UsageError

# key -> (default, type)
DEFAULTS: dict[str, tuple[object, type]] = {
    "seed": (0, int),
    "corpus.programs": (300, int),
    "corpus.stmt_min": (4, int),
    "corpus.stmt_max": (8, int),
    "corpus.max_depth": (3, int),
    "dataset.ratio_train": (2 / 3, float),
    "dataset.ratio_valid": (1 / 6, float),
    "dataset.ratio_test": (1 / 6, float),
    "dataset.dedup_threshold": (0.7, float),
    "dataset.min_tokens": (20, int),
    "dataset.max_tokens": (600, int),
    "vocab.min_count": (2, int),
    "model.embed_size": (128, int),
    "model.hidden_size": (128, int),
    "model.steps": (4, int),
    "model.dropout": (0.1, float),
    "model.batch_size": (32, int),
    "model.epochs": (12, int),
    "model.anneal_start": (-1, int),  # -1 means the ceil(epochs/4) default
    "model.anneal_len": (-1, int),  # -1 means the ceil(epochs/2) default
    "model.lr": (0.001, float),
    "attack.train_budget": (20, int),
    "attack.eval_budget": (230, int),
    "attack.max_len": (8, int),
    "attack.eps": (0.01, float),
    "pipeline.t_acc": (1.0, float),
    "pipeline.eps_acc": (0.02, float),
    "pipeline.adv_epochs": (5, int),
    "pipeline.initial_epochs": (-1, int),  # -1 means model.epochs
    "pipeline.max_rounds": (8, int),
    "pipeline.max_models": (8, int),
    "refine.t": (0.05, float),
    "refine.sample_cap": (2000, int),
    "solver.max_features_exact": (64, int),
    "solver.max_supply_exact": (10000, int),
    "solver.max_bb_nodes": (20000, int),
    "verify.cap": (4096, int),
    "threads": (1, int),
}


@dataclass
class Config:
    values: dict[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    def get_int(self, key: str) -> int:
        return int(self.values[key])

    def get_float(self, key: str) -> float:
        return float(self.values[key])

    def optional_int(self, key: str) -> int | None:
        v = int(self.values[key])
        return None if v < 0 else v

    def resolved_lines(self) -> list[str]:
        return [f"{k}={self.values[k]}" for k in sorted(self.values)]


def _parse_value(key: str, raw: str) -> object:
    if key not in DEFAULTS:
        raise UsageError(f"unknown config key {key!r}")
    _, typ = DEFAULTS[key]
    try:
        return typ(raw)
    except ValueError as exc:
        raise UsageError(f"config key {key}: {exc}") from exc


def _env_name(key: str) -> str:
    return "RCT_" + key.upper().replace(".", "_")


def load_config(path: str | None = None, overrides: list[str] | None = None,
                env: dict[str, str] | None = None) -> Config:
    values = {k: v for k, (v, _) in DEFAULTS.items()}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, raw = line.split("=", 1)
            values[key.strip()] = _parse_value(key.strip(), raw.strip())
    env = os.environ if env is None else env
    for key in DEFAULTS:
        raw = env.get(_env_name(key))
        if raw is not None:
            values[key] = _parse_value(key, raw)
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key] = _parse_value(key, raw)
    return Config(values)
