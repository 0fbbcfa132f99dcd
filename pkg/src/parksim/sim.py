"""Deterministic discrete-event simulator wiring traffic, sensors,
controller, and broker together.

Events are processed in (time, sequence) order off a heap. Every stochastic
subsystem draws from its own PCG64 stream spawned from the scenario seed,
so adding one subsystem never perturbs another and a fixed seed reproduces
the run byte for byte. Cars admitted at the entrance drive for
gate_to_slot_travel_s, then take the lowest-numbered free slot; the slot
sensor event fires at that moment. A full lot turns arrivals away on the
spot.

Controller publishes travel through the embedded broker over a simulated
transport with configurable latency; broker-to-subscriber publish frames
can additionally be dropped with a configured probability, which the qos-1
retry machinery then has to repair.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import codec, controller as ctrl, domain, sensors, stochastic, telemetry
from .broker import BrokerCore, Close, Send
from .client import ClientEngine
from .scenario import ScenarioConfig, to_flat_dict

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy-PCG64"
# Stream order is part of the reproducibility contract; append only.
RNG_STREAMS = ("traffic", "dwell", "ir", "env", "mq2", "network")

BROKER_CONN = "broker"
CONTROLLER_CONN = "controller"
DASHBOARD_CONN = "dashboard"


# -- event payloads ----------------------------------------------------------

@dataclass(frozen=True)
class CarArrives:
    car_id: int


@dataclass(frozen=True)
class CarParks:
    car_id: int


@dataclass(frozen=True)
class CarDeparts:
    car_id: int
    slot: int


@dataclass(frozen=True)
class SensorSample:
    kind: str  # "env" or "gas"


@dataclass(frozen=True)
class PacketDelivery:
    destination: str
    source: str
    packet: codec.MqttPacket
    accept_t: float | None = None  # broker accept time, for delay measurement


@dataclass(frozen=True)
class GasInjectionEvent:
    gas: str
    ppm: float


@dataclass(frozen=True)
class GateTimer:
    gate: str  # "entrance" or "exit"


@dataclass(frozen=True)
class RedeliverCheck:
    pass


SimPayload = (
    CarArrives | CarParks | CarDeparts | SensorSample | PacketDelivery
    | GasInjectionEvent | GateTimer | RedeliverCheck
)


@dataclass(frozen=True)
class SimEvent:
    t: float
    seq: int
    payload: SimPayload


class GasField:
    """Ambient gas concentrations with fan-driven extraction.

    While the fan runs, concentrations are scaled down so the sensor-weighted
    level falls linearly at `decay_ppm_per_s`, which makes the recovery time
    excess / rate directly observable on the published readings.
    """

    def __init__(self, model: sensors.Mq2Model, decay_ppm_per_s: float):
        self.model = model
        self.decay_ppm_per_s = decay_ppm_per_s
        self.concentrations: dict[str, float] = {}
        self.fan_on = False
        self.last_t = 0.0

    def _weighted_level(self) -> float:
        return sum(
            self.model.sensitivities.get(gas, 0.0) * ppm
            for gas, ppm in sorted(self.concentrations.items())
        )

    def advance(self, t: float) -> None:
        dt = t - self.last_t
        self.last_t = t
        if dt <= 0 or not self.fan_on or not self.concentrations:
            return
        level = self._weighted_level()
        if level <= 0:
            return
        target = max(level - self.decay_ppm_per_s * dt, 0.0)
        scale = target / level
        if scale <= 0:
            self.concentrations.clear()
        else:
            for gas in self.concentrations:
                self.concentrations[gas] *= scale

    def inject(self, t: float, gas: str, ppm: float) -> None:
        self.advance(t)
        self.concentrations[gas] = self.concentrations.get(gas, 0.0) + ppm

    def set_fan(self, t: float, on: bool) -> None:
        self.advance(t)
        self.fan_on = on

    def levels(self, t: float) -> dict[str, float]:
        self.advance(t)
        return dict(self.concentrations)


@dataclass
class SimReport:
    records: list[dict[str, Any]]
    final_state: domain.FacilityState
    counters: dict[str, int]
    metrics_csv: str
    duration_s: float

    def events_jsonl(self) -> str:
        return "".join(json.dumps(r, separators=(", ", ": ")) + "\n" for r in self.records)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "events": out / "events.jsonl",
            "metrics": out / "metrics.csv",
            "report": out / "report.txt",
        }
        paths["events"].write_text(self.events_jsonl(), encoding="utf-8")
        paths["metrics"].write_text(self.metrics_csv, encoding="utf-8")
        paths["report"].write_text(render_report(self.records), encoding="utf-8")
        return paths


class Simulation:
    def __init__(self, cfg: ScenarioConfig, publish_hook=None):
        cfg.validate()
        self.cfg = cfg
        # called as publish_hook(topic, payload, retain) whenever the broker
        # accepts a publish; lets the CLI mirror a run onto a live broker
        self.publish_hook = publish_hook
        seed_seq = np.random.SeedSequence(cfg.seed)
        children = seed_seq.spawn(len(RNG_STREAMS))
        self.rng = {
            name: np.random.Generator(np.random.PCG64(child))
            for name, child in zip(RNG_STREAMS, children)
        }

        self.heap: list[tuple[float, int, SimEvent]] = []
        self.seq = 0
        self.now = 0.0

        self.controller = ctrl.Controller(cfg.facility, domain.new_facility(cfg.facility))
        self.broker = BrokerCore(
            ack_timeout_s=cfg.mqtt.ack_timeout_s,
            max_retries=cfg.mqtt.max_retries,
            event_sink=self._broker_event,
        )
        self.controller_client = ClientEngine(client_id="facility-controller")
        self.dashboard_client = ClientEngine(client_id="dashboard")
        self.gas_field = GasField(cfg.mq2, cfg.gas_decay_ppm_per_s)

        self.records: list[dict[str, Any]] = []
        self.bumps: list[sensors.Bump] = []
        self.free_slots = list(range(cfg.facility.total_slots))  # physical truth
        self.car_slot: dict[int, int] = {}
        self.next_car_id = 1
        self.anomaly_cursor = 0
        self.counters = {
            "arrivals": 0,
            "admitted": 0,
            "rejected": 0,
            "departures": 0,
            "fan_on_events": 0,
            "fan_off_events": 0,
            "drops": 0,
        }

    # -- plumbing ---------------------------------------------------------

    def _push(self, t: float, payload: SimPayload) -> None:
        event = SimEvent(t=t, seq=self.seq, payload=payload)
        self.seq += 1
        heapq.heappush(self.heap, (event.t, event.seq, event))

    def _record(self, kind: str, **fields: Any) -> None:
        record: dict[str, Any] = {"t": self.now, "kind": kind}
        record.update(fields)
        self.records.append(record)

    def _broker_event(self, kind: str, **fields: Any) -> None:
        self._record(kind, **fields)

    def _drain_anomalies(self) -> None:
        while self.anomaly_cursor < len(self.controller.anomalies):
            t, reason = self.controller.anomalies[self.anomaly_cursor]
            self.anomaly_cursor += 1
            self._record("anomaly", reason=reason)

    # -- transport --------------------------------------------------------

    def _send_to_broker(self, source: str, packet: codec.MqttPacket) -> None:
        self._push(self.now + self.cfg.network.latency_s, PacketDelivery(BROKER_CONN, source, packet))

    def _dispatch_broker_outputs(self, outputs: list[Send | Close]) -> None:
        for output in outputs:
            if isinstance(output, Close):
                self._record("conn_close", client_id=output.client_id or output.conn_id,
                             reason=output.reason)
                continue
            packet = output.packet
            if isinstance(packet, codec.Publish):
                accept_t = self._accept_time(output.conn_id, packet)
                if packet.qos == 1:
                    # whether or not the frame survives the wire, the broker
                    # will want to look again once the ack window passes
                    self._push(self.now + self.cfg.mqtt.ack_timeout_s, RedeliverCheck())
                if self.cfg.network.drop_prob > 0 and \
                        self.rng["network"].random() < self.cfg.network.drop_prob:
                    self.counters["drops"] += 1
                    self._record("drop", topic=packet.topic,
                                 bytes=len(codec.encode_packet(packet)),
                                 client_id=output.conn_id)
                    continue
                self._push(
                    self.now + self.cfg.network.latency_s,
                    PacketDelivery(output.conn_id, BROKER_CONN, packet, accept_t=accept_t),
                )
            else:
                self._push(
                    self.now + self.cfg.network.latency_s,
                    PacketDelivery(output.conn_id, BROKER_CONN, packet),
                )

    def _accept_time(self, conn_id: str, packet: codec.Publish) -> float:
        if packet.qos == 1 and packet.packet_id is not None:
            client_id = self.broker.conn_to_client.get(conn_id)
            if client_id is not None:
                entry = self.broker.sessions[client_id].inflight.get(packet.packet_id)
                if entry is not None:
                    return entry.accept_t
        return self.now

    # -- controller actions -----------------------------------------------

    def _apply_actions(self, actions: list[domain.ControlAction]) -> None:
        for action in actions:
            if isinstance(action, domain.Publish):
                packet = self.controller_client.publish_packet(
                    action.topic, action.payload,
                    qos=self.cfg.mqtt.publish_qos, retain=action.retained,
                )
                self._send_to_broker(CONTROLLER_CONN, packet)
            elif isinstance(action, domain.UpdateDisplay):
                frame = action.frame
                self._record("display", temp_c=frame.temp_c, humidity_pct=frame.humidity_pct,
                             total_vacant=frame.total_vacant, total_slots=frame.total_slots)
            elif isinstance(action, domain.OpenEntranceGate):
                self._record("gate", gate="entrance", state="open")
                self._push(self.now + self.cfg.facility.gate_open_s, GateTimer("entrance"))
            elif isinstance(action, domain.OpenExitGate):
                self._record("gate", gate="exit", state="open")
                self._push(self.now + self.cfg.facility.gate_open_s, GateTimer("exit"))
            elif isinstance(action, domain.CloseEntranceGate):
                self._record("gate", gate="entrance", state="closed")
            elif isinstance(action, domain.CloseExitGate):
                self._record("gate", gate="exit", state="closed")
            elif isinstance(action, domain.BuzzerOn):
                self._record("buzzer", state="on")
            elif isinstance(action, domain.BuzzerOff):
                self._record("buzzer", state="off")
            elif isinstance(action, domain.FanOn):
                self.counters["fan_on_events"] += 1
                self.gas_field.set_fan(self.now, True)
                self._record("fan", state="on")
            elif isinstance(action, domain.FanOff):
                self.counters["fan_off_events"] += 1
                self.gas_field.set_fan(self.now, False)
                self._record("fan", state="off")
        self._drain_anomalies()

    # -- event handlers -----------------------------------------------------

    def _on_car_arrives(self, event: CarArrives) -> None:
        self.counters["arrivals"] += 1
        vacant_before = self.controller.state.total_vacant
        self._record("car_arrives", car_id=event.car_id, vacant_before=vacant_before)
        actions = self.controller.handle(ctrl.EntranceDetect(t=self.now))
        admitted = any(isinstance(a, domain.OpenEntranceGate) for a in actions)
        self._apply_actions(actions)
        if admitted:
            self.counters["admitted"] += 1
            self._record("car_admitted", car_id=event.car_id)
            self.bumps.append(self.cfg.env.entry_bump_at(self.now))
            self._push(self.now + self.cfg.gate_to_slot_travel_s, CarParks(event.car_id))
        else:
            self.counters["rejected"] += 1
            self._record("car_rejected", car_id=event.car_id)
        next_t = stochastic.next_arrival(self.cfg.traffic, self.now, self.rng["traffic"])
        if next_t != stochastic.NO_MORE_ARRIVALS:
            self._push(next_t, CarArrives(self.next_car_id))
            self.next_car_id += 1

    def _on_car_parks(self, event: CarParks) -> None:
        # admission guarantees a physical slot is free by the time we park
        assert self.free_slots, "admitted car found no free slot"
        slot = heapq.heappop(self.free_slots)
        self.car_slot[event.car_id] = slot
        self._record("car_parks", car_id=event.car_id, slot=slot)
        self._apply_actions(self.controller.handle(ctrl.SlotUpdate(self.now, slot, 1)))
        dwell = stochastic.exponential_gap(1.0 / self.cfg.traffic.dwell_mean_s, self.rng["dwell"])
        self._push(self.now + dwell, CarDeparts(event.car_id, slot))

    def _on_car_departs(self, event: CarDeparts) -> None:
        self.counters["departures"] += 1
        del self.car_slot[event.car_id]
        heapq.heappush(self.free_slots, event.slot)
        self._record("car_departs", car_id=event.car_id, slot=event.slot)
        self._apply_actions(self.controller.handle(ctrl.SlotUpdate(self.now, event.slot, 0)))
        self.bumps.append(self.cfg.env.exit_bump_at(self.now))
        self._apply_actions(self.controller.handle(ctrl.ExitDetect(t=self.now)))

    def _on_sensor_sample(self, event: SensorSample) -> None:
        if event.kind == "env":
            self._prune_bumps()
            temp_c, humidity_pct = sensors.sample_env(
                self.cfg.env, self.now, self.bumps, self.rng["env"]
            )
            self._record("env_sample", temp_c=temp_c, humidity_pct=humidity_pct)
            self._apply_actions(self.controller.handle(ctrl.EnvReading(self.now, temp_c, humidity_pct)))
            period = self.cfg.env_sample_period_s
        else:
            reading = sensors.sample_mq2(
                self.cfg.mq2, self.gas_field.levels(self.now), self.rng["mq2"]
            )
            self._record("gas_sample", ppm=reading)
            self._apply_actions(self.controller.handle(ctrl.GasReading(self.now, reading)))
            period = self.cfg.gas_sample_period_s
        if period > 0:
            self._push(self.now + period, SensorSample(event.kind))

    def _prune_bumps(self) -> None:
        horizon = self.now - 10.0 * self.cfg.env.relax_tau_s
        self.bumps = [b for b in self.bumps if b.t >= horizon]

    def _on_packet_delivery(self, event: PacketDelivery) -> None:
        if event.destination == BROKER_CONN:
            outputs = self.broker.handle(event.source, event.packet, self.now)
            if isinstance(event.packet, codec.Publish):
                self._record("publish", topic=event.packet.topic,
                             bytes=len(codec.encode_packet(event.packet)),
                             client_id=event.source)
                if self.publish_hook is not None:
                    self.publish_hook(event.packet.topic, event.packet.payload, event.packet.retain)
            self._dispatch_broker_outputs(outputs)
            return

        engine = {
            CONTROLLER_CONN: self.controller_client,
            DASHBOARD_CONN: self.dashboard_client,
        }.get(event.destination)
        if engine is None:
            log.debug("delivery to unknown destination %s dropped", event.destination)
            return
        if isinstance(event.packet, codec.Publish):
            self._record(
                "deliver",
                topic=event.packet.topic,
                bytes=len(codec.encode_packet(event.packet)),
                client_id=event.destination,
                delay=telemetry.delay(event.accept_t if event.accept_t is not None else self.now,
                                      self.now),
            )
        for response in engine.handle_packet(event.packet):
            self._send_to_broker(event.destination, response)

    def _on_gas_injection(self, event: GasInjectionEvent) -> None:
        self.gas_field.inject(self.now, event.gas, event.ppm)
        self._record("gas_injection", gas=event.gas, ppm=event.ppm)

    def _on_gate_timer(self, event: GateTimer) -> None:
        if event.gate == "entrance":
            self._apply_actions(self.controller.close_entrance())
        else:
            self._apply_actions(self.controller.close_exit())

    # -- run ----------------------------------------------------------------

    def _bootstrap(self) -> None:
        self._record(
            "meta",
            rng=RNG_ALGORITHM,
            rng_streams=list(RNG_STREAMS),
            config=to_flat_dict(self.cfg),
        )
        # connect the controller client and, if enabled, the dashboard app
        outs = self.broker.handle(CONTROLLER_CONN, self.controller_client.connect_packet(), 0.0)
        self._dispatch_broker_outputs(outs)
        if self.cfg.dashboard.enabled:
            outs = self.broker.handle(DASHBOARD_CONN, self.dashboard_client.connect_packet(), 0.0)
            self._dispatch_broker_outputs(outs)
            subscribe = self.dashboard_client.subscribe_packet(
                [(f"{self.cfg.facility.topic_prefix}/#", self.cfg.dashboard.qos)]
            )
            outs = self.broker.handle(DASHBOARD_CONN, subscribe, 0.0)
            self._dispatch_broker_outputs(outs)

        self._apply_actions(self.controller.startup())

        first_arrival = stochastic.next_arrival(self.cfg.traffic, 0.0, self.rng["traffic"])
        if first_arrival != stochastic.NO_MORE_ARRIVALS:
            self._push(first_arrival, CarArrives(self.next_car_id))
            self.next_car_id += 1
        if self.cfg.env_sample_period_s > 0:
            self._push(0.0, SensorSample("env"))
        if self.cfg.gas_sample_period_s > 0:
            self._push(0.0, SensorSample("gas"))
        for injection in self.cfg.injections:
            self._push(injection.t, GasInjectionEvent(injection.gas, injection.ppm))

    def run(self) -> SimReport:
        self._bootstrap()
        duration = self.cfg.duration_s
        while self.heap:
            _, _, event = heapq.heappop(self.heap)
            if event.t > duration:
                break
            self.now = event.t
            payload = event.payload
            if isinstance(payload, CarArrives):
                self._on_car_arrives(payload)
            elif isinstance(payload, CarParks):
                self._on_car_parks(payload)
            elif isinstance(payload, CarDeparts):
                self._on_car_departs(payload)
            elif isinstance(payload, SensorSample):
                self._on_sensor_sample(payload)
            elif isinstance(payload, PacketDelivery):
                self._on_packet_delivery(payload)
            elif isinstance(payload, GasInjectionEvent):
                self._on_gas_injection(payload)
            elif isinstance(payload, GateTimer):
                self._on_gate_timer(payload)
            elif isinstance(payload, RedeliverCheck):
                self._dispatch_broker_outputs(self.broker.redeliver(self.now))

        state = self.controller.state
        in_lot_per_counter = state.total_slots - state.total_vacant
        assert self.counters["admitted"] == self.counters["departures"] + in_lot_per_counter, \
            "car conservation violated"

        aggregator = telemetry.Aggregator(duration_s=duration)
        aggregator.add_records(self.records)
        return SimReport(
            records=self.records,
            final_state=state,
            counters=dict(self.counters),
            metrics_csv=aggregator.to_csv(),
            duration_s=duration,
        )


def run_scenario(cfg: ScenarioConfig, publish_hook=None) -> SimReport:
    return Simulation(cfg, publish_hook=publish_hook).run()


# -- event-log analysis ------------------------------------------------------

def read_events_jsonl(path: str | Path) -> list[dict[str, Any]]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed event record: {exc}") from exc
    return records


def occupancy_timeseries(event_log: list[dict[str, Any]]) -> list[tuple[float, int]]:
    """Step function of parked-car count from park/depart records."""
    series: list[tuple[float, int]] = []
    count = 0
    for index, record in enumerate(event_log):
        if not isinstance(record, dict) or "kind" not in record or "t" not in record:
            raise ValueError(f"record {index}: missing 't'/'kind' fields: {record!r}")
        if record["kind"] == "car_parks":
            count += 1
            series.append((float(record["t"]), count))
        elif record["kind"] == "car_departs":
            count -= 1
            series.append((float(record["t"]), count))
    return series


def time_weighted_mean(series: list[tuple[float, int]], t_end: float, t_start: float = 0.0) -> float:
    """Mean of the occupancy step function over [t_start, t_end]."""
    if t_end <= t_start:
        raise ValueError("t_end must exceed t_start")
    total = 0.0
    level = 0
    prev_t = t_start
    for t, value in series:
        if t < t_start:
            level = value
            continue
        if t > t_end:
            break
        total += level * (t - prev_t)
        prev_t = t
        level = value
    total += level * (t_end - prev_t)
    return total / (t_end - t_start)


def render_report(records: list[dict[str, Any]]) -> str:
    """Human-readable run summary regenerable from the event log alone."""
    meta = records[0] if records and records[0].get("kind") == "meta" else {}
    config = meta.get("config", {})
    duration = float(config.get("duration_s", max((r["t"] for r in records), default=1.0) or 1.0))
    total_slots = config.get("facility.total_slots", "?")

    counts: dict[str, int] = {}
    for record in records:
        counts[record["kind"]] = counts.get(record["kind"], 0) + 1

    series = occupancy_timeseries(records)
    mean_occ = time_weighted_mean(series, duration) if series else 0.0

    aggregator = telemetry.Aggregator(duration_s=duration)
    aggregator.add_records(records)
    summary = aggregator.summary()

    lines = [
        "parksim run report",
        "==================",
        f"rng: {meta.get('rng', 'unknown')} seed={config.get('seed', '?')} "
        f"streams={','.join(meta.get('rng_streams', []))}",
        f"duration_s: {_g(duration)}   slots: {total_slots}",
        "",
        "traffic",
        f"  arrivals:   {counts.get('car_arrives', 0)} "
        f"(admitted {counts.get('car_admitted', 0)}, rejected {counts.get('car_rejected', 0)})",
        f"  departures: {counts.get('car_departs', 0)}",
        f"  mean occupancy (parked): {_g(mean_occ)}",
        "",
        "environment",
        f"  env samples: {counts.get('env_sample', 0)}   gas samples: {counts.get('gas_sample', 0)}",
        f"  fan on/off events: {counts.get('fan', 0)}   anomalies: {counts.get('anomaly', 0)}",
        "",
        "mqtt telemetry",
        f"  publishes accepted: {counts.get('publish', 0)}   deliveries: {counts.get('deliver', 0)}"
        f"   drops: {counts.get('drop', 0)}",
        f"  bytes total: {_g(summary['bytes_total'])}   "
        f"data rate: {_g(summary['data_rate_bytes_per_s'])} bytes/s",
    ]
    if "delay_mean_s" in summary:
        lines.append(
            f"  delay s (mean/min/max): {_g(summary['delay_mean_s'])}"
            f"/{_g(summary['delay_min_s'])}/{_g(summary['delay_max_s'])}"
        )
    lines.append(
        f"  EC (modeled): {_g(summary['ec_modeled'])} "
        f"(corrected {int(summary['errors_corrected'])},"
        f" uncorrected {int(summary['errors_uncorrected'])})"
    )
    lines.append("")
    return "\n".join(lines)


def _g(value: float) -> str:
    return format(value, ".10g")
