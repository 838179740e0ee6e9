"""Flat key=value run configuration.

One setting per line (`key = value`), `#` comments, no nesting, so run
configs stay diffable and hashable.  Unknown keys are rejected and a small
set of keys is required; everything else carries a default.  The sha256
hash of the canonicalized content is embedded in output headers so results
can be traced back to the exact configuration.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .lambertw import DEFAULT_REFINE_ITERATIONS
from .pipeline import MEAN_KL, MEAN_VAR, TrainConfig


class ConfigError(ValueError):
    pass


_REQUIRED = ("dataset", "layers", "parameterization")

# key -> (type, default); None default means required
_SCHEMA: dict[str, tuple] = {
    "dataset": (str, None),  # synthetic | digits | idx
    "layers": ("int_list", None),
    "parameterization": (str, None),  # mean_var | mean_kl
    "block_size": (int, 20),
    "budget_bits": (int, 20),
    "seed": (int, 0),
    "max_iters": (int, 1000),
    "batch_size": (int, 200),
    "learning_rate": (float, 0.001),
    "eps_beta0": (float, 1e-8),
    "eps_beta": (float, 5e-5),
    "finetune_steps": (int, 100),
    "init_log_std": (float, -10.0),
    "init_coding_log_std": (float, -2.0),
    "refine_iterations": (int, DEFAULT_REFINE_ITERATIONS),
    "output_dir": (str, "out"),
    "synth_points": (int, 400),
    "synth_classes": (int, 4),
    "synth_dim": (int, 8),
    "synth_seed": (int, 0),
    "data_seed": (int, 0),
    "idx_train_images": (str, ""),
    "idx_train_labels": (str, ""),
    "idx_test_images": (str, ""),
    "idx_test_labels": (str, ""),
    "downsample_factor": (int, 2),
    "train_limit": (int, 10000),
    "test_limit": (int, 2000),
    "repro_seeds": ("int_list", (0, 1, 2)),
    "block_sizes": ("int_list", ()),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)
    config_hash: str = ""

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def train_config(self, parameterization: str | None = None, seed: int | None = None, block_size: int | None = None) -> TrainConfig:
        v = self.values
        return TrainConfig(
            parameterization=parameterization or v["parameterization"],
            budget_bits=v["budget_bits"],
            block_size=block_size if block_size is not None else v["block_size"],
            learning_rate=v["learning_rate"],
            batch_size=v["batch_size"],
            max_iters=v["max_iters"],
            eps_beta0=v["eps_beta0"],
            eps_beta=v["eps_beta"],
            finetune_steps=v["finetune_steps"],
            seed=seed if seed is not None else v["seed"],
            init_log_std=v["init_log_std"],
            init_coding_log_std=v["init_coding_log_std"],
            refine_iterations=v["refine_iterations"],
        )


def _convert(key: str, raw: str):
    kind = _SCHEMA[key][0]
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "int_list":
            return tuple(int(p) for p in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from exc


def parse_config(text: str) -> RunConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        values[key] = _convert(key, raw)
    for key in _REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required config key {key!r}")
    for key, (_, default) in _SCHEMA.items():
        values.setdefault(key, default)
    if values["dataset"] not in ("synthetic", "digits", "idx"):
        raise ConfigError(f"dataset must be synthetic, digits or idx, got {values['dataset']!r}")
    if values["parameterization"] not in (MEAN_VAR, MEAN_KL):
        raise ConfigError(f"parameterization must be {MEAN_VAR} or {MEAN_KL}")
    if values["dataset"] == "idx":
        for key in ("idx_train_images", "idx_train_labels", "idx_test_images", "idx_test_labels"):
            if not values[key]:
                raise ConfigError(f"missing required config key {key!r} (dataset = idx)")
    canon = "\n".join(f"{k} = {values[k]}" for k in sorted(values))
    digest = hashlib.sha256(canon.encode()).hexdigest()[:12]
    return RunConfig(values=values, config_hash=digest)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())
