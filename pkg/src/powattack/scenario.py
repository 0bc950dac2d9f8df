"""Experiment description and its JSON form."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional

from .strategies import ATTACKER_KINDS, STRATEGY_KINDS, RationalPolicy

POWER_TOLERANCE = 1e-9


class InvalidScenario(ValueError):
    pass


@dataclass(frozen=True)
class MinerSpec:
    id: int
    power: float
    strategy: str = "honest"
    policy: Optional[RationalPolicy] = None


@dataclass(frozen=True)
class Scenario:
    miners: tuple[MinerSpec, ...]
    r: float = 600.0
    e_bar: float = 0.0
    beta: float = 0.0
    defense_enabled: bool = False
    defense_window_multiplier: float = 1.0
    horizon_blocks: int = 1000
    seed: int = 0
    rational_policy: Optional[RationalPolicy] = None
    grace_inflight: bool = False
    attacker_retires_after_halt: bool = False
    max_time: Optional[float] = None
    name: str = ""

    @property
    def window(self) -> float:
        return (self.r + self.e_bar) * self.defense_window_multiplier

    @property
    def attacker(self) -> Optional[MinerSpec]:
        for m in self.miners:
            if m.strategy in ATTACKER_KINDS:
                return m
        return None

    @property
    def attack(self) -> str:
        a = self.attacker
        return a.strategy if a else "none"

    @property
    def honest_power(self) -> float:
        """Total power of every miner that is not the attacker."""
        return sum(m.power for m in self.miners if m.strategy not in ATTACKER_KINDS)

    def policy_for(self, miner: MinerSpec) -> Optional[RationalPolicy]:
        if miner.strategy != "rational":
            return None
        return miner.policy or self.rational_policy or RationalPolicy()

    def validate(self) -> "Scenario":
        if not self.miners:
            raise InvalidScenario("scenario needs at least one miner")
        for k, m in enumerate(self.miners):
            if m.id != k:
                raise InvalidScenario(f"miner ids must be dense 0..n-1; got {m.id} at position {k}")
            if m.strategy not in STRATEGY_KINDS:
                raise InvalidScenario(f"miner {k}: unknown strategy {m.strategy!r}")
            if not (m.power >= 0.0) or m.power > 1.0:
                raise InvalidScenario(f"miner {k}: power must lie in [0, 1]")
        total = sum(m.power for m in self.miners)
        if abs(total - 1.0) > POWER_TOLERANCE:
            raise InvalidScenario(f"miner powers must sum to 1 (got {total:.12g})")
        if sum(m.strategy in ATTACKER_KINDS for m in self.miners) > 1:
            raise InvalidScenario("at most one attacker (bdos or selfish) is supported")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise InvalidScenario("r must be positive")
        if not self.e_bar >= 0:
            raise InvalidScenario("e_bar must be non-negative")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidScenario("beta must lie in [0, 1]")
        if not self.defense_window_multiplier > 0:
            raise InvalidScenario("defense window_multiplier must be positive")
        if not (isinstance(self.horizon_blocks, int) and self.horizon_blocks > 0):
            raise InvalidScenario("horizon_blocks must be a positive integer")
        if self.max_time is not None and not self.max_time > 0:
            raise InvalidScenario("max_time must be positive")
        return self

    # --- JSON ---------------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Scenario":
        try:
            miners = []
            for k, m in enumerate(d["miners"]):
                pol = m.get("policy")
                miners.append(MinerSpec(
                    id=int(m.get("id", k)),
                    power=float(m["power"]),
                    strategy=str(m.get("strategy", "honest")),
                    policy=RationalPolicy.from_dict(pol) if pol is not None else None,
                ))
            defense = d.get("defense", {}) or {}
            rp = d.get("rational_policy")
            return cls(
                miners=tuple(miners),
                r=float(d.get("r", 600.0)),
                e_bar=float(d.get("e_bar", 0.0)),
                beta=float(d.get("beta", 0.0)),
                defense_enabled=bool(defense.get("enabled", False)),
                defense_window_multiplier=float(defense.get("window_multiplier", 1.0)),
                grace_inflight=bool(defense.get("grace_inflight", False)),
                horizon_blocks=int(d.get("horizon_blocks", 1000)),
                seed=int(d.get("seed", 0)),
                rational_policy=RationalPolicy.from_dict(rp) if rp is not None else None,
                attacker_retires_after_halt=bool(d.get("attacker_retires_after_halt", False)),
                max_time=None if d.get("max_time") is None else float(d["max_time"]),
                name=str(d.get("name", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidScenario(f"malformed scenario: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        miners = []
        for m in self.miners:
            entry: dict[str, Any] = {"id": m.id, "power": m.power, "strategy": m.strategy}
            if m.policy is not None:
                entry["policy"] = m.policy.to_dict()
            miners.append(entry)
        return {
            "name": self.name,
            "miners": miners,
            "r": self.r,
            "e_bar": self.e_bar,
            "beta": self.beta,
            "defense": {
                "enabled": self.defense_enabled,
                "window_multiplier": self.defense_window_multiplier,
                "grace_inflight": self.grace_inflight,
            },
            "horizon_blocks": self.horizon_blocks,
            "seed": self.seed,
            "rational_policy": self.rational_policy.to_dict() if self.rational_policy else None,
            "attacker_retires_after_halt": self.attacker_retires_after_halt,
            "max_time": self.max_time,
        }

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidScenario(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)


def make_scenario(powers, strategies=None, **kwargs) -> Scenario:
    """Shorthand used by tests and the library API: powers plus strategy names."""
    strategies = strategies or ["honest"] * len(powers)
    miners = tuple(MinerSpec(k, float(p), s) for k, (p, s) in enumerate(zip(powers, strategies)))
    return Scenario(miners=miners, **kwargs).validate()


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        low = text.strip().lower()
        if low in ("true", "false"):
            return low == "true"
        return text


def apply_override(data: dict[str, Any], key: str, value: Any) -> dict[str, Any]:
    """Set a dotted key (``defense.enabled``, ``miners.0.power``) in scenario JSON.

    The shorthand ``alpha`` sets the attacker's power and rescales every other
    miner so the powers still sum to one.
    """
    if isinstance(value, str):
        value = _parse_value(value)
    if key == "alpha":
        return _set_attacker_power(data, float(value))
    node: Any = data
    parts = key.split(".")
    for p in parts[:-1]:
        if isinstance(node, list):
            node = node[int(p)]
        else:
            node = node.setdefault(p, {})
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value
    return data


def _set_attacker_power(data: dict[str, Any], alpha: float) -> dict[str, Any]:
    miners = data["miners"]
    idx = [k for k, m in enumerate(miners) if m.get("strategy") in ATTACKER_KINDS]
    if len(idx) != 1:
        raise InvalidScenario("override 'alpha' needs exactly one attacker in the scenario")
    a = idx[0]
    others = sum(float(m["power"]) for k, m in enumerate(miners) if k != a)
    rest = 1.0 - alpha
    for k, m in enumerate(miners):
        if k == a:
            m["power"] = alpha
        elif others > 0:
            m["power"] = float(m["power"]) * rest / others
        else:
            m["power"] = rest / (len(miners) - 1)
    return data
