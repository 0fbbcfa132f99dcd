"""Facility controller: sensor events in, actuator commands and publishes out.

Each handler is a pure transition (state, config, reading) -> (new state,
actions); the wrapper class below serializes events for the simulator and
keeps the anomaly log. The entrance check is check-then-decrement, so the
vacancy counter can never go transiently negative; ghost exit detections at
a fully vacant lot clamp the counter and are recorded as anomalies instead
of overflowing it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from .domain import (
    BuzzerOff,
    BuzzerOn,
    CloseEntranceGate,
    CloseExitGate,
    ControlAction,
    DisplayFrame,
    FacilityConfig,
    FacilityState,
    FanOff,
    FanOn,
    GateState,
    OpenEntranceGate,
    OpenExitGate,
    Power,
    Publish,
    UpdateDisplay,
)

log = logging.getLogger(__name__)


# Sensor-side events, timestamped in simulated seconds.

@dataclass(frozen=True)
class EntranceDetect:
    t: float


@dataclass(frozen=True)
class ExitDetect:
    t: float


@dataclass(frozen=True)
class SlotUpdate:
    t: float
    slot_id: int
    occupied: int


@dataclass(frozen=True)
class EnvReading:
    t: float
    temp_c: float
    humidity_pct: float


@dataclass(frozen=True)
class GasReading:
    t: float
    ppm: float


ControllerEvent = EntranceDetect | ExitDetect | SlotUpdate | EnvReading | GasReading


def slot_topic(cfg: FacilityConfig, slot_id: int) -> str:
    # 1-based on the wire, 0-based internally
    return f"{cfg.topic_prefix}/slot/{slot_id + 1}/status"


def summary_topic(cfg: FacilityConfig) -> str:
    return f"{cfg.topic_prefix}/summary"


def _summary_publish(state: FacilityState, cfg: FacilityConfig) -> Publish:
    payload = f"{state.total_vacant}/{state.total_slots}".encode()
    return Publish(summary_topic(cfg), payload, retained=True)


def _gate_publish(cfg: FacilityConfig, gate: str, gate_state: GateState) -> Publish:
    return Publish(f"{cfg.topic_prefix}/gate/{gate}", gate_state.value.encode(), retained=True)


def _fan_publish(cfg: FacilityConfig, fan: Power) -> Publish:
    return Publish(f"{cfg.topic_prefix}/fan/state", fan.value.encode(), retained=True)


def _check(state: FacilityState) -> FacilityState:
    assert 0 <= state.total_vacant <= state.total_slots, state
    return state


def render_display(state: FacilityState) -> DisplayFrame:
    """Pure projection of what the entrance panel shows."""
    return DisplayFrame(
        temp_c=state.last_temp_c,
        humidity_pct=state.last_humidity_pct,
        total_vacant=state.total_vacant,
        total_slots=state.total_slots,
    )


def handle_entrance(
    state: FacilityState, cfg: FacilityConfig
) -> tuple[FacilityState, list[ControlAction]]:
    """Car at the entrance: admit it if any slot is free, otherwise stay shut."""
    if state.total_vacant <= 0:
        return state, [UpdateDisplay(render_display(state))]
    state = _check(replace(
        state,
        total_vacant=state.total_vacant - 1,
        entrance_gate=GateState.OPEN,
        buzzer=Power.ON,
    ))
    actions: list[ControlAction] = [
        OpenEntranceGate(),
        BuzzerOn(),
        UpdateDisplay(render_display(state)),
        _summary_publish(state, cfg),
        _gate_publish(cfg, "entrance", GateState.OPEN),
    ]
    return state, actions


def handle_exit(
    state: FacilityState, cfg: FacilityConfig
) -> tuple[FacilityState, list[ControlAction]]:
    """Car at the exit: open the gate and bump the vacancy counter (clamped)."""
    if state.total_vacant >= state.total_slots:
        log.warning("exit detected with no cars in the lot (sensor ghost); counter clamped")
        vacant = state.total_vacant
    else:
        vacant = state.total_vacant + 1
    state = _check(replace(state, total_vacant=vacant, exit_gate=GateState.OPEN))
    actions: list[ControlAction] = [
        OpenExitGate(),
        UpdateDisplay(render_display(state)),
        _summary_publish(state, cfg),
        _gate_publish(cfg, "exit", GateState.OPEN),
    ]
    return state, actions


def handle_slot_update(
    state: FacilityState, cfg: FacilityConfig, slot_id: int, occupied: int
) -> tuple[FacilityState, list[ControlAction]]:
    """A slot sensor changed: record it and publish the retained slot status."""
    if not 0 <= slot_id < state.total_slots:
        raise ValueError(f"slot_id {slot_id} outside 0..{state.total_slots - 1}")
    occupied = 1 if occupied else 0
    slots = state.slots[:slot_id] + (occupied,) + state.slots[slot_id + 1 :]
    state = _check(replace(state, slots=slots))
    payload = b"1" if occupied else b"0"
    return state, [Publish(slot_topic(cfg, slot_id), payload, retained=True)]


def handle_env(
    state: FacilityState, cfg: FacilityConfig, temp_c: float, humidity_pct: float
) -> tuple[FacilityState, list[ControlAction]]:
    """Cache a temperature/humidity reading, refresh the display, publish both."""
    if not 0.0 <= humidity_pct <= 100.0:
        log.warning("rejecting impossible humidity reading %.1f%%", humidity_pct)
        return state, []
    state = replace(state, last_temp_c=temp_c, last_humidity_pct=humidity_pct)
    actions: list[ControlAction] = [
        UpdateDisplay(render_display(state)),
        Publish(f"{cfg.topic_prefix}/env/temperature", f"{temp_c:.1f}".encode(), retained=True),
        Publish(f"{cfg.topic_prefix}/env/humidity", f"{humidity_pct:.1f}".encode(), retained=True),
    ]
    return state, actions


def handle_gas(
    state: FacilityState, cfg: FacilityConfig, ppm: float
) -> tuple[FacilityState, list[ControlAction]]:
    """Gas reading: fan on above the threshold, off below threshold - hysteresis."""
    if ppm < 0:
        log.warning("rejecting negative gas reading %.2f ppm", ppm)
        return state, []
    actions: list[ControlAction] = [
        Publish(f"{cfg.topic_prefix}/gas/ppm", f"{ppm:.2f}".encode(), retained=True),
    ]
    fan = state.fan
    if fan is Power.OFF and ppm > cfg.gas_threshold_ppm:
        fan = Power.ON
        actions += [FanOn(), _fan_publish(cfg, fan)]
    elif fan is Power.ON and ppm <= cfg.gas_threshold_ppm - cfg.gas_hysteresis_ppm:
        fan = Power.OFF
        actions += [FanOff(), _fan_publish(cfg, fan)]
    state = replace(state, last_gas_ppm=ppm, fan=fan)
    return state, actions


def close_entrance_gate(
    state: FacilityState, cfg: FacilityConfig
) -> tuple[FacilityState, list[ControlAction]]:
    """Auto-close timer fired; buzzer stops with the gate."""
    if state.entrance_gate is GateState.CLOSED:
        return state, []
    state = replace(state, entrance_gate=GateState.CLOSED, buzzer=Power.OFF)
    return state, [
        CloseEntranceGate(),
        BuzzerOff(),
        _gate_publish(cfg, "entrance", GateState.CLOSED),
    ]


def close_exit_gate(
    state: FacilityState, cfg: FacilityConfig
) -> tuple[FacilityState, list[ControlAction]]:
    if state.exit_gate is GateState.CLOSED:
        return state, []
    state = replace(state, exit_gate=GateState.CLOSED)
    return state, [CloseExitGate(), _gate_publish(cfg, "exit", GateState.CLOSED)]


def initial_actions(state: FacilityState, cfg: FacilityConfig) -> list[ControlAction]:
    """Startup publishes so late subscribers always see every slot's state."""
    actions: list[ControlAction] = [
        Publish(slot_topic(cfg, i), b"1" if flag else b"0", retained=True)
        for i, flag in enumerate(state.slots)
    ]
    actions += [
        _summary_publish(state, cfg),
        _gate_publish(cfg, "entrance", state.entrance_gate),
        _gate_publish(cfg, "exit", state.exit_gate),
        _fan_publish(cfg, state.fan),
        UpdateDisplay(render_display(state)),
    ]
    return actions


class Controller:
    """Event-serialized wrapper around the pure handlers.

    One event in, one action list out; all mutation happens here. Rejected
    readings and ghost detections are appended to `anomalies` so the
    simulator can put them in the run log.
    """

    def __init__(self, cfg: FacilityConfig, state: FacilityState):
        cfg.validate()
        self.cfg = cfg
        self.state = state
        self.anomalies: list[tuple[float, str]] = []

    def startup(self) -> list[ControlAction]:
        return initial_actions(self.state, self.cfg)

    def handle(self, event: ControllerEvent) -> list[ControlAction]:
        if isinstance(event, EntranceDetect):
            self.state, actions = handle_entrance(self.state, self.cfg)
        elif isinstance(event, ExitDetect):
            if self.state.total_vacant >= self.state.total_slots:
                self.anomalies.append((event.t, "ghost exit detection at empty lot"))
            self.state, actions = handle_exit(self.state, self.cfg)
        elif isinstance(event, SlotUpdate):
            self.state, actions = handle_slot_update(
                self.state, self.cfg, event.slot_id, event.occupied
            )
        elif isinstance(event, EnvReading):
            if not 0.0 <= event.humidity_pct <= 100.0:
                self.anomalies.append((event.t, f"humidity reading {event.humidity_pct} rejected"))
            self.state, actions = handle_env(
                self.state, self.cfg, event.temp_c, event.humidity_pct
            )
        elif isinstance(event, GasReading):
            if event.ppm < 0:
                self.anomalies.append((event.t, f"negative gas reading {event.ppm} rejected"))
            self.state, actions = handle_gas(self.state, self.cfg, event.ppm)
        else:
            raise TypeError(f"unknown controller event: {event!r}")
        return actions

    def close_entrance(self) -> list[ControlAction]:
        self.state, actions = close_entrance_gate(self.state, self.cfg)
        return actions

    def close_exit(self) -> list[ControlAction]:
        self.state, actions = close_exit_gate(self.state, self.cfg)
        return actions
