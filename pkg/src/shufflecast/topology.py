"""Cluster shape and link bandwidths.

A topology is ``V`` machines with ``k`` GPUs each.  Within a machine every
GPU can send to its local peers at an aggregate rate of ``bg_gbps``; each
machine has ``bn_gbps`` of unidirectional network bandwidth, statically
shared so that each GPU owns a ``bn_gbps / k`` slice.  Bandwidths are in
GB/s where 1 GB = 1e9 bytes.

Raw bandwidths are derated by an efficiency factor (default 0.8, i.e. links
achieve 80% of their theoretical peak) before any model or simulator uses
them.  Separate per-link-class overrides are available because it is not
obvious that intra-machine and network links lose the same fraction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

GB = 1e9

DEFAULT_EFFICIENCY = 0.8

_SHORTHAND = re.compile(r"^\s*(\d+)\s*x\s*(\d+)\s*$", re.IGNORECASE)


class TopologyError(ValueError):
    """Raised for invalid cluster shapes or bandwidths."""


@dataclass(frozen=True)
class Topology:
    """Cluster of ``V`` machines with ``k`` GPUs per machine."""

    k: int
    v: int
    bg_gbps: float
    bn_gbps: float
    efficiency: float = DEFAULT_EFFICIENCY
    bg_efficiency: float | None = None
    bn_efficiency: float | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise TopologyError(f"k must be >= 1, got {self.k}")
        if self.v < 1:
            raise TopologyError(f"V must be >= 1, got {self.v}")
        if self.bg_gbps <= 0 or self.bn_gbps <= 0:
            raise TopologyError(
                f"bandwidths must be positive, got bg={self.bg_gbps} bn={self.bn_gbps}"
            )
        for name, eff in (
            ("efficiency", self.efficiency),
            ("bg_efficiency", self.bg_efficiency),
            ("bn_efficiency", self.bn_efficiency),
        ):
            if eff is not None and not 0.0 < eff <= 1.0:
                raise TopologyError(f"{name} must be in (0, 1], got {eff}")

    @property
    def n(self) -> int:
        """Total GPU count, always derived as k * V."""
        return self.k * self.v

    @property
    def effective_bg_gbps(self) -> float:
        eff = self.bg_efficiency if self.bg_efficiency is not None else self.efficiency
        return self.bg_gbps * eff

    @property
    def effective_bn_gbps(self) -> float:
        eff = self.bn_efficiency if self.bn_efficiency is not None else self.efficiency
        return self.bn_gbps * eff

    def node_of(self, rank: int) -> int:
        return rank // self.k

    def local_index_of(self, rank: int) -> int:
        return rank % self.k

    def replace(self, **kwargs) -> "Topology":
        fields = {
            "k": self.k,
            "v": self.v,
            "bg_gbps": self.bg_gbps,
            "bn_gbps": self.bn_gbps,
            "efficiency": self.efficiency,
            "bg_efficiency": self.bg_efficiency,
            "bn_efficiency": self.bn_efficiency,
        }
        fields.update(kwargs)
        return Topology(**fields)

    def label(self) -> str:
        return f"{self.k}x{self.v}"


def parse_shorthand(text: str) -> tuple[int, int]:
    """Parse a ``"8x5"`` cluster label into ``(k, v)``."""
    m = _SHORTHAND.match(text)
    if not m:
        raise TopologyError(f"not a KxV topology label: {text!r}")
    return int(m.group(1)), int(m.group(2))


def parse_config(text: str, **overrides) -> Topology:
    """Build a Topology from ``key=value`` config text.

    Recognized keys (case-insensitive): k, v, bg_gbps, bn_gbps, efficiency,
    bg_efficiency, bn_efficiency.  Blank lines and ``#`` comments are
    ignored.  Keyword overrides win over file values.
    """
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TopologyError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip().lower()
        if key not in (
            "k", "v", "bg_gbps", "bn_gbps",
            "efficiency", "bg_efficiency", "bn_efficiency",
        ):
            raise TopologyError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = float(val.strip())
        except ValueError:
            raise TopologyError(f"line {lineno}: bad number {val.strip()!r}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    missing = {"k", "v", "bg_gbps", "bn_gbps"} - values.keys()
    if missing:
        raise TopologyError(f"missing topology keys: {sorted(missing)}")
    return Topology(
        k=int(values["k"]),
        v=int(values["v"]),
        bg_gbps=values["bg_gbps"],
        bn_gbps=values["bn_gbps"],
        efficiency=values.get("efficiency", DEFAULT_EFFICIENCY),
        bg_efficiency=values.get("bg_efficiency"),
        bn_efficiency=values.get("bn_efficiency"),
    )
