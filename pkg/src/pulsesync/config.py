"""System constants and the bounds derived from them.

All durations are integer ticks of real time; by convention ``d`` is 1000
ticks so that sub-``d`` jitter and slack such as ``2d + epsilon`` are exact.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

log = logging.getLogger(__name__)

RAW_FIELDS = ("n", "f", "cycle", "d", "delta", "rho_num", "rho_den", "epsilon", "seed")


class ConfigError(ValueError):
    """Raised when a configuration violates the protocol's requirements."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def agreement_duration(f: int, d: int) -> int:
    """Worst-case real time of one agreement instance, 7(2f+3)d."""
    return 7 * (2 * f + 3) * d


def cycle_lower_bound(f: int, d: int, byz_dur: int | None = None) -> int:
    if byz_dur is None:
        byz_dur = agreement_duration(f, d)
    return max((10 * f + 16) * d, byz_dur + 14 * d)


@dataclass(frozen=True)
class SimConfig:
    n: int
    f: int
    cycle: int
    d: int = 1000
    delta: int | None = None
    rho_num: int = 0
    rho_den: int = 1
    epsilon: int | None = None
    seed: int = 0
    byz_dur_override: int | None = field(default=None, compare=True)

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", self.d)
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", max(self.d // 100, 1))

    @property
    def rho(self) -> Fraction:
        return Fraction(self.rho_num, self.rho_den)

    @property
    def byz_dur(self) -> int:
        if self.byz_dur_override is not None:
            return self.byz_dur_override
        return agreement_duration(self.f, self.d)

    @property
    def sigma(self) -> int:
        return 3 * self.d

    @property
    def cycle_min(self) -> int:
        return self.cycle - 11 * self.d

    @property
    def cycle_max(self) -> int:
        return self.cycle + 9 * self.d

    @property
    def delta_node(self) -> int:
        return self.cycle + self.cycle_max

    @property
    def delta_net(self) -> int:
        return self.d

    @property
    def quorum(self) -> int:
        return self.n - self.f

    def raw(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in RAW_FIELDS}

    def derived(self) -> dict[str, int]:
        return {
            "byz_dur": self.byz_dur,
            "sigma": self.sigma,
            "cycle_min": self.cycle_min,
            "cycle_max": self.cycle_max,
            "delta_node": self.delta_node,
            "delta_net": self.delta_net,
        }

    def with_seed(self, seed: int) -> "SimConfig":
        return SimConfig(**{**self.raw(), "seed": seed}, byz_dur_override=self.byz_dur_override)


def validate_config(cfg: SimConfig) -> list[str]:
    """Return every violated requirement by name; an empty list means valid."""
    out = []
    if cfg.d <= 0:
        out.append("d must be positive")
        return out
    if cfg.f < 0:
        out.append("f must be non-negative")
    if cfg.n < 1:
        out.append("n must be positive")
    if not cfg.n > 3 * cfg.f:
        out.append("n > 3f fails")
    if not 0 < cfg.delta <= cfg.d:
        out.append("delta must satisfy 0 < delta <= d")
    if not 0 < cfg.epsilon < cfg.d:
        out.append("epsilon must satisfy 0 < epsilon < d")
    if cfg.rho_den <= 0 or not 0 <= cfg.rho < 1:
        out.append("rho must satisfy 0 <= rho < 1")
    if not cfg.seed >= 0 or cfg.seed >= 2**64:
        out.append("seed must be a 64-bit unsigned integer")
    base = (10 * cfg.f + 16) * cfg.d
    if cfg.cycle < base:
        out.append(f"Cycle below (10f+16)d={base}")
    if cfg.cycle < cfg.byz_dur + 14 * cfg.d:
        out.append(f"Cycle below BYZdur+14d={cfg.byz_dur + 14 * cfg.d}")
    return out


def derive_constants(
    n: int,
    f: int,
    cycle: int,
    d: int = 1000,
    *,
    delta: int | None = None,
    rho: Fraction | int = 0,
    epsilon: int | None = None,
    seed: int = 0,
    byz_dur: int | None = None,
) -> SimConfig:
    """Build a validated config; raises ConfigError listing every violation."""
    rho = Fraction(rho)
    cfg = SimConfig(
        n=n,
        f=f,
        cycle=cycle,
        d=d,
        delta=delta,
        rho_num=rho.numerator,
        rho_den=rho.denominator,
        epsilon=epsilon,
        seed=seed,
        byz_dur_override=byz_dur,
    )
    problems = validate_config(cfg)
    if problems:
        raise ConfigError(problems)
    if byz_dur is not None and byz_dur != agreement_duration(f, d):
        log.warning("byz_dur overridden to %d (derived value %d); timing bounds are untested for this value",
                    byz_dur, agreement_duration(f, d))
    return cfg


def config_from_dict(doc: dict[str, Any]) -> SimConfig:
    unknown = sorted(set(doc) - set(RAW_FIELDS))
    if unknown:
        raise ConfigError([f"unknown config field {k!r}" for k in unknown])
    missing = [k for k in ("n", "f", "cycle") if k not in doc]
    if missing:
        raise ConfigError([f"missing config field {k!r}" for k in missing])
    for k, v in doc.items():
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError([f"config field {k!r} must be an integer"])
    rho = Fraction(doc.get("rho_num", 0), doc.get("rho_den", 1) or 1)
    if doc.get("rho_den", 1) <= 0:
        raise ConfigError(["rho must satisfy 0 <= rho < 1"])
    return derive_constants(
        doc["n"],
        doc["f"],
        doc["cycle"],
        doc.get("d", 1000),
        delta=doc.get("delta"),
        rho=rho,
        epsilon=doc.get("epsilon"),
        seed=doc.get("seed", 0),
    )


def load_config(path: str | Path) -> SimConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a JSON object"])
    return config_from_dict(doc)


DEFAULT_CONFIG = SimConfig(n=4, f=1, cycle=50_000, d=1000)
