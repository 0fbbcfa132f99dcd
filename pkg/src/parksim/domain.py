"""Core facility types shared by the controller, simulator, and broker glue."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class ConfigError(Exception):
    """Invalid facility or scenario configuration."""


class GateState(enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


class Power(enum.Enum):
    ON = "on"
    OFF = "off"


@dataclass(frozen=True)
class FacilityConfig:
    total_slots: int = 8
    gas_threshold_ppm: float = 10.0
    gas_hysteresis_ppm: float = 2.0
    lux_max: float = 1000.0
    topic_prefix: str = "parking"
    gate_open_s: float = 5.0  # gates (and the entrance buzzer) auto-close after this long

    def validate(self) -> None:
        if not isinstance(self.total_slots, int) or self.total_slots < 1:
            raise ConfigError(f"total_slots must be a positive integer, got {self.total_slots!r}")
        if self.gas_threshold_ppm < 0:
            raise ConfigError("gas_threshold_ppm must be >= 0")
        if not 0 <= self.gas_hysteresis_ppm <= self.gas_threshold_ppm:
            raise ConfigError("gas_hysteresis_ppm must lie in [0, gas_threshold_ppm]")
        if self.lux_max <= 0:
            raise ConfigError("lux_max must be > 0")
        if not self.topic_prefix or any(c in self.topic_prefix for c in "+#"):
            raise ConfigError(f"topic_prefix must be non-empty and wildcard-free, got {self.topic_prefix!r}")
        if self.topic_prefix.startswith("/") or self.topic_prefix.endswith("/"):
            raise ConfigError("topic_prefix must not start or end with '/'")
        if self.gate_open_s <= 0:
            raise ConfigError("gate_open_s must be > 0")


@dataclass(frozen=True)
class FacilityState:
    """Snapshot of the whole facility.

    `total_vacant` is the gate-derived counter; `slots` holds the per-slot
    sensor flags (1 = occupied). The two may diverge while a car is driving
    from the gate to its slot, so consistency is only checked at quiescence.
    """

    slots: tuple[int, ...]
    total_vacant: int
    entrance_gate: GateState = GateState.CLOSED
    exit_gate: GateState = GateState.CLOSED
    buzzer: Power = Power.OFF
    fan: Power = Power.OFF
    last_temp_c: float = 0.0
    last_humidity_pct: float = 0.0
    last_gas_ppm: float = 0.0

    @property
    def total_slots(self) -> int:
        return len(self.slots)


@dataclass(frozen=True)
class DisplayFrame:
    temp_c: float
    humidity_pct: float
    total_vacant: int
    total_slots: int

    def __post_init__(self) -> None:
        if not 0 <= self.total_vacant <= self.total_slots:
            raise ValueError(f"total_vacant {self.total_vacant} outside [0, {self.total_slots}]")


# Control actions emitted by the controller. The runtime (simulator or live
# loop) is responsible for actually driving actuators and the MQTT client.

@dataclass(frozen=True)
class OpenEntranceGate:
    pass


@dataclass(frozen=True)
class CloseEntranceGate:
    pass


@dataclass(frozen=True)
class OpenExitGate:
    pass


@dataclass(frozen=True)
class CloseExitGate:
    pass


@dataclass(frozen=True)
class BuzzerOn:
    pass


@dataclass(frozen=True)
class BuzzerOff:
    pass


@dataclass(frozen=True)
class FanOn:
    pass


@dataclass(frozen=True)
class FanOff:
    pass


@dataclass(frozen=True)
class UpdateDisplay:
    frame: DisplayFrame


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes
    retained: bool = False

    def __post_init__(self) -> None:
        if not self.topic or any(c in self.topic for c in "+#"):
            raise ValueError(f"publish topic must be non-empty and wildcard-free: {self.topic!r}")


ControlAction = (
    OpenEntranceGate | CloseEntranceGate | OpenExitGate | CloseExitGate
    | BuzzerOn | BuzzerOff | FanOn | FanOff | UpdateDisplay | Publish
)


def new_facility(config: FacilityConfig) -> FacilityState:
    """All slots vacant, gates closed, buzzer and fan off."""
    config.validate()
    n = config.total_slots
    return FacilityState(slots=(0,) * n, total_vacant=n)


def derived_vacancy(state: FacilityState) -> int:
    """Vacancy recomputed from the slot sensor flags (consistency check)."""
    return len(state.slots) - sum(state.slots)
