"""Run configuration loading (TOML or JSON).

One file describes a whole experiment; section names mirror the config
dataclasses. Unknown keys are rejected so typos fail fast. See the README
for the full schema.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .aggregation import AggregationStrategy
from .comms import ChannelConfig
from .data import GenConfig
from .nn import Architecture, TrainConfig
from .orchestrator import RunConfig
from .sensitivity import ThresholdPolicy
from .similarity import KernelConfig


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


def _section(raw: dict, name: str, allowed: set[str]) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: {sorted(unknown)}")
    return sec


def build_strategy(kind: str, raw: dict) -> AggregationStrategy:
    """Strategy object for a name, pulling parameters from its section."""
    try:
        if kind == "mbp":
            sec = _section(raw, "mbp", {"prune_fraction"})
            return AggregationStrategy("mbp", prune_fraction=sec.get("prune_fraction", 0.3))
        if kind == "fedlama":
            sec = _section(raw, "fedlama", {"period_schedule"})
            schedule = sec.get("period_schedule", {"default": 2, "output": 1})
            return AggregationStrategy("fedlama", period_schedule=schedule)
        return AggregationStrategy(kind)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(raw: dict) -> RunConfig:
    known_top = {
        "seed",
        "rounds",
        "strategy",
        "data",
        "train",
        "kernel",
        "channel",
        "selection",
        "clustering",
        "arch",
        "mbp",
        "fedlama",
        "compare",
        "save_checkpoints",
    }
    unknown = set(raw) - known_top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    try:
        seed = int(raw.get("seed", 0))

        strat_sec = _section(raw, "strategy", {"kind"})
        strategy = build_strategy(strat_sec.get("kind", "sigla"), raw)

        data_sec = _section(
            raw,
            "data",
            {
                "n_vehicles",
                "n_sectors",
                "samples_per_vehicle",
                "dirichlet_alpha",
                "n_planted_clusters",
                "noise_sigma",
                "cluster_spread",
                "sector_spread",
                "lidar_dim",
                "image_dim",
                "seed",
            },
        )
        gen = GenConfig(**{**data_sec, "seed": data_sec.get("seed", seed)})

        train_sec = _section(
            raw, "train", {"learning_rate", "batch_size", "local_epochs"}
        )
        train = TrainConfig(**train_sec)

        kernel = KernelConfig(**_section(raw, "kernel", {"c", "d"}))

        channel_sec = _section(
            raw,
            "channel",
            {
                "mean_rate",
                "rate_sigma",
                "contact_time_min",
                "contact_time_max",
                "per_mb_loss_prob",
                "bytes_per_param",
                "seed",
            },
        )
        channel = ChannelConfig(**{**channel_sec, "seed": channel_sec.get("seed", seed)})

        sel_sec = _section(
            raw, "selection", {"policy", "value", "epsilon", "trials", "reevaluate_per_round"}
        )
        policy_kind = sel_sec.get("policy", "budget_fraction")
        if policy_kind not in ("fixed", "top_k", "budget_fraction"):
            raise ConfigError(f"unknown selection policy {policy_kind!r}")
        policy = ThresholdPolicy(policy_kind, float(sel_sec.get("value", 0.5)))

        clu_sec = _section(
            raw,
            "clustering",
            {"k_min", "k_max", "recluster_every", "weighting", "inter_weight_reference"},
        )

        arch_sec = _section(
            raw, "arch", {"gps_hidden", "lidar_hidden", "image_hidden", "fusion_hidden"}
        )
        arch = Architecture(
            **{k: tuple(v) for k, v in arch_sec.items()},
            lidar_input=gen.lidar_dim,
            image_input=gen.image_dim,
            n_sectors=gen.n_sectors,
        )

        return RunConfig(
            strategy=strategy,
            rounds=int(raw.get("rounds", 10)),
            gen=gen,
            train=train,
            kernel=kernel,
            channel=channel,
            policy=policy,
            arch=arch,
            k_min=int(clu_sec.get("k_min", 2)),
            k_max=clu_sec.get("k_max"),
            recluster_every=int(clu_sec.get("recluster_every", 1)),
            reevaluate_selection=bool(sel_sec.get("reevaluate_per_round", False)),
            weighting=clu_sec.get("weighting", "similarity"),
            inter_weight_reference=clu_sec.get("inter_weight_reference", "primary"),
            sensitivity_epsilon=float(sel_sec.get("epsilon", 0.1)),
            sensitivity_trials=int(sel_sec.get("trials", 3)),
            save_checkpoints=bool(raw.get("save_checkpoints", False)),
            seed=seed,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_raw(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_bytes()
    try:
        if p.suffix.lower() == ".json":
            return json.loads(text.decode("utf-8"))
        return tomllib.loads(text.decode("utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    return parse_config(load_raw(path))


def compare_spec(raw: dict) -> tuple[list[str], bool]:
    """Strategy names + centralized flag from the [compare] section."""
    sec = _section(raw, "compare", {"strategies", "include_centralized"})
    names = list(sec.get("strategies", ["sigla", "fedavg", "mbp"]))
    for name in names:
        if name not in ("sigla", "fedavg", "mbp", "fedlama"):
            raise ConfigError(f"unknown strategy in [compare]: {name!r}")
    return names, bool(sec.get("include_centralized", True))


def config_with_strategy(cfg: RunConfig, raw: dict, name: str) -> RunConfig:
    return replace(cfg, strategy=build_strategy(name, raw))
