"""Session configuration: YAML loading, defaults, and validation."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .documents import DocumentError, FieldRuleSet
from .lifecycle import (
    DEFAULT_CONFIRMATIONS,
    DEFAULT_TRAVERSAL_PLAN,
    LifecycleState,
    StochasticProfile,
    validate_plan,
)
from .mocks import BugFlags, SyncStrategy
from .snapshots import DEFAULT_WAIT_WINDOW

MODES = ("traverse", "soak")
CLOCKS = ("simulated", "wall")
SOURCES = ("in_process", "http", "file")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class SessionConfig:
    mode: str = "traverse"
    seed: int = 0
    transactions: int = 10
    plan: tuple[LifecycleState, ...] = DEFAULT_TRAVERSAL_PLAN
    confirmations: int = DEFAULT_CONFIRMATIONS
    # Wait before each snapshot capture, in the session clock's unit
    # (ticks when simulated, seconds on the wall clock).
    wait_window: float = DEFAULT_WAIT_WINDOW
    clock: str = "simulated"
    strategy: SyncStrategy = SyncStrategy.PASSIVE_WAITING
    bug_flags: BugFlags = field(default_factory=BugFlags)
    field_rules: FieldRuleSet | None = None  # None -> the DApp's recommendation
    source: str = "in_process"
    source_url: str | None = None
    source_path: str | None = None
    ticks: int = 1000
    reorg_probability: float = StochasticProfile.reorg_probability_per_block
    drop_probability: float = StochasticProfile.drop_probability_per_tick
    execution_probability: float = StochasticProfile.execution_probability_per_block
    strict_pool_equality: bool = False
    record_log: bool = True
    listen_http: str = "127.0.0.1:0"
    listen_events: str = "127.0.0.1:0"

    def stochastic_profile(self) -> StochasticProfile:
        return StochasticProfile(
            reorg_probability_per_block=self.reorg_probability,
            drop_probability_per_tick=self.drop_probability,
            execution_probability_per_block=self.execution_probability,
            rng_seed=self.seed,
        )


def _parse_plan(value: Any) -> tuple[LifecycleState, ...]:
    if value is None:
        return DEFAULT_TRAVERSAL_PLAN
    if not isinstance(value, (list, tuple)):
        raise ConfigError("plan must be a list of lifecycle state names")
    try:
        plan = tuple(LifecycleState(str(item)) for item in value)
    except ValueError as exc:
        raise ConfigError(f"unknown lifecycle state in plan: {exc}") from None
    try:
        validate_plan(plan)
    except Exception as exc:
        raise ConfigError(str(exc)) from None
    return plan


def config_from_mapping(data: Mapping) -> SessionConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("configuration root must be a mapping")
    unknown = set(data) - {
        "mode", "seed", "transactions", "plan", "confirmations", "wait_window",
        "clock", "strategy", "bug_flags", "field_rules", "source", "source_url",
        "source_path", "ticks", "reorg_probability", "drop_probability",
        "execution_probability", "strict_pool_equality", "record_log",
        "listen_http", "listen_events",
    }
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")

    mode = str(data.get("mode", "traverse"))
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    clock = str(data.get("clock", "simulated"))
    if clock not in CLOCKS:
        raise ConfigError(f"clock must be one of {CLOCKS}, got {clock!r}")
    source = str(data.get("source", "in_process"))
    if source not in SOURCES:
        raise ConfigError(f"source must be one of {SOURCES}, got {source!r}")
    if source == "http" and not data.get("source_url"):
        raise ConfigError("source 'http' requires source_url")
    if source == "file" and not data.get("source_path"):
        raise ConfigError("source 'file' requires source_path")

    try:
        strategy = SyncStrategy(str(data.get("strategy", "passive_waiting")))
    except ValueError:
        raise ConfigError(
            f"unknown strategy {data.get('strategy')!r}; valid: {[s.value for s in SyncStrategy]}"
        ) from None

    try:
        bug_flags = BugFlags.from_config(data.get("bug_flags"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    rules = None
    if data.get("field_rules") is not None:
        try:
            rules = FieldRuleSet.from_config(data["field_rules"])
        except DocumentError as exc:
            raise ConfigError(str(exc)) from None

    def _int(name: str, default: int, minimum: int) -> int:
        value = data.get(name, default)
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            raise ConfigError(f"{name} must be an integer >= {minimum}")
        return value

    def _prob(name: str, default: float) -> float:
        value = data.get(name, default)
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not 0 <= value <= 1:
            raise ConfigError(f"{name} must be a probability in [0, 1]")
        return float(value)

    wait_window = data.get("wait_window", DEFAULT_WAIT_WINDOW)
    if not isinstance(wait_window, (int, float)) or isinstance(wait_window, bool) or wait_window < 0:
        raise ConfigError("wait_window must be a non-negative number")

    return SessionConfig(
        mode=mode,
        seed=_int("seed", 0, 0),
        transactions=_int("transactions", 10, 1),
        plan=_parse_plan(data.get("plan")),
        confirmations=_int("confirmations", DEFAULT_CONFIRMATIONS, 1),
        wait_window=float(wait_window),
        clock=clock,
        strategy=strategy,
        bug_flags=bug_flags,
        field_rules=rules,
        source=source,
        source_url=data.get("source_url"),
        source_path=data.get("source_path"),
        ticks=_int("ticks", 1000, 1),
        reorg_probability=_prob("reorg_probability", StochasticProfile.reorg_probability_per_block),
        drop_probability=_prob("drop_probability", StochasticProfile.drop_probability_per_tick),
        execution_probability=_prob(
            "execution_probability", StochasticProfile.execution_probability_per_block
        ),
        strict_pool_equality=bool(data.get("strict_pool_equality", False)),
        record_log=bool(data.get("record_log", True)),
        listen_http=str(data.get("listen_http", "127.0.0.1:0")),
        listen_events=str(data.get("listen_events", "127.0.0.1:0")),
    )


def load_config(path: str | Path) -> SessionConfig:
    try:
        text = Path(path).read_text("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if data is None:
        data = {}
    return config_from_mapping(data)
