"""Scenario configuration: dataclasses plus the `key = value` file format.

Files are UTF-8 text, one dotted key per line, `#` comments (whole line, or
inline after whitespace). Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .domain import ConfigError, FacilityConfig
from .sensors import EnvModel, IrModel, Mq2Model
from .stochastic import TrafficProfile


@dataclass(frozen=True)
class NetworkConfig:
    latency_s: float = 0.05
    drop_prob: float = 0.0

    def validate(self) -> None:
        if self.latency_s < 0:
            raise ConfigError("network latency must be >= 0")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ConfigError("drop_prob must lie in [0, 1)")


@dataclass(frozen=True)
class MqttConfig:
    publish_qos: int = 1
    ack_timeout_s: float = 2.0
    max_retries: int = 3

    def validate(self) -> None:
        if self.publish_qos not in (0, 1):
            raise ConfigError("publish_qos must be 0 or 1")
        if self.ack_timeout_s <= 0:
            raise ConfigError("ack_timeout_s must be > 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")


@dataclass(frozen=True)
class DashboardConfig:
    enabled: bool = True
    qos: int = 1

    def validate(self) -> None:
        if self.qos not in (0, 1):
            raise ConfigError("dashboard qos must be 0 or 1")


@dataclass(frozen=True)
class GasInjection:
    t: float
    gas: str
    ppm: float


@dataclass(frozen=True)
class ScenarioConfig:
    facility: FacilityConfig = field(default_factory=FacilityConfig)
    traffic: TrafficProfile = field(default_factory=TrafficProfile)
    ir: IrModel = field(default_factory=IrModel)
    env: EnvModel = field(default_factory=EnvModel)
    mq2: Mq2Model = field(default_factory=Mq2Model)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    mqtt: MqttConfig = field(default_factory=MqttConfig)
    dashboard: DashboardConfig = field(default_factory=DashboardConfig)
    duration_s: float = 86400.0
    seed: int = 42
    gate_to_slot_travel_s: float = 30.0
    env_sample_period_s: float = 60.0   # 0 disables
    gas_sample_period_s: float = 15.0   # 0 disables
    gas_decay_ppm_per_s: float = 2.0    # measured-level reduction while the fan runs
    injections: tuple[GasInjection, ...] = ()

    def validate(self) -> None:
        self.facility.validate()
        self.traffic.validate()
        self.ir.validate()
        self.env.validate()
        self.mq2.validate()
        self.network.validate()
        self.mqtt.validate()
        self.dashboard.validate()
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be > 0")
        if self.gate_to_slot_travel_s < 0:
            raise ConfigError("gate_to_slot_travel_s must be >= 0")
        if self.env_sample_period_s < 0 or self.gas_sample_period_s < 0:
            raise ConfigError("sample periods must be >= 0 (0 disables)")
        if self.gas_decay_ppm_per_s < 0:
            raise ConfigError("gas_decay_ppm_per_s must be >= 0")
        for injection in self.injections:
            if injection.t < 0 or injection.ppm < 0:
                raise ConfigError(f"bad gas injection: {injection}")


def default_scenario() -> ScenarioConfig:
    cfg = ScenarioConfig()
    cfg.validate()
    return cfg


# -- parsing ---------------------------------------------------------------

def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_rates(raw: str) -> tuple[float, ...]:
    rates = tuple(float(part) for part in raw.split(","))
    if len(rates) != 24:
        raise ValueError(f"hourly_rates needs 24 comma-separated values, got {len(rates)}")
    return rates


def _parse_sensitivities(raw: str) -> dict[str, float]:
    table = {}
    for pair in raw.split(","):
        name, sep, value = pair.partition(":")
        if not sep:
            raise ValueError(f"sensitivity entries look like gas:coeff, got {pair!r}")
        table[name.strip()] = float(value)
    return table


def _parse_injections(raw: str) -> tuple[GasInjection, ...]:
    out = []
    for triple in raw.split(","):
        parts = triple.split(":")
        if len(parts) != 3:
            raise ValueError(f"injections look like t:gas:ppm, got {triple!r}")
        out.append(GasInjection(t=float(parts[0]), gas=parts[1].strip(), ppm=float(parts[2])))
    return tuple(out)


# key -> (section attribute or None for top level, field name, parser)
_KEYS = {
    "facility.total_slots": ("facility", "total_slots", int),
    "facility.gas_threshold_ppm": ("facility", "gas_threshold_ppm", float),
    "facility.gas_hysteresis_ppm": ("facility", "gas_hysteresis_ppm", float),
    "facility.lux_max": ("facility", "lux_max", float),
    "facility.topic_prefix": ("facility", "topic_prefix", str),
    "facility.gate_open_s": ("facility", "gate_open_s", float),
    "traffic.hourly_rates": ("traffic", "hourly_rates", _parse_rates),
    "traffic.dwell_mean_s": ("traffic", "dwell_mean_s", float),
    "sensors.ir.acc_low_lux": ("ir", "acc_low_lux", float),
    "sensors.ir.acc_high_lux": ("ir", "acc_high_lux", float),
    "sensors.ir.lux_max": ("ir", "lux_max", float),
    "sensors.env.base_temp_c": ("env", "base_temp_c", float),
    "sensors.env.base_humidity_pct": ("env", "base_humidity_pct", float),
    "sensors.env.relax_tau_s": ("env", "relax_tau_s", float),
    "sensors.env.noise_sd_temp_c": ("env", "noise_sd", "temp_sd"),
    "sensors.env.noise_sd_humidity_pct": ("env", "noise_sd", "humidity_sd"),
    "sensors.mq2.sensitivities": ("mq2", "sensitivities", _parse_sensitivities),
    "sensors.mq2.noise_sd_ppm": ("mq2", "noise_sd_ppm", float),
    "network.latency_s": ("network", "latency_s", float),
    "network.drop_prob": ("network", "drop_prob", float),
    "mqtt.publish_qos": ("mqtt", "publish_qos", int),
    "mqtt.ack_timeout_s": ("mqtt", "ack_timeout_s", float),
    "mqtt.max_retries": ("mqtt", "max_retries", int),
    "dashboard.enabled": ("dashboard", "enabled", _parse_bool),
    "dashboard.qos": ("dashboard", "qos", int),
    "duration_s": (None, "duration_s", float),
    "seed": (None, "seed", int),
    "gate_to_slot_travel_s": (None, "gate_to_slot_travel_s", float),
    "env_sample_period_s": (None, "env_sample_period_s", float),
    "gas_sample_period_s": (None, "gas_sample_period_s", float),
    "gas_decay_ppm_per_s": (None, "gas_decay_ppm_per_s", float),
    "injections": (None, "injections", _parse_injections),
}


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    # inline comments need whitespace before the '#', so topic values
    # containing '#' stay intact
    for i, ch in enumerate(line):
        if ch == "#" and i > 0 and line[i - 1] in " \t":
            return line[:i]
    return line


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    cfg = ScenarioConfig()
    seen: dict[str, int] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line).strip()
        if not line:
            continue
        key, eq, raw_value = line.partition("=")
        if not eq:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw_line!r}")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first on line {seen[key]})")
        seen[key] = lineno
        section, name, parser = _KEYS[key]
        try:
            if parser == "temp_sd":
                value = (float(raw_value), cfg.env.noise_sd[1])
                name = "noise_sd"
            elif parser == "humidity_sd":
                value = (cfg.env.noise_sd[0], float(raw_value))
                name = "noise_sd"
            else:
                value = parser(raw_value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
        if section is None:
            cfg = replace(cfg, **{name: value})
        else:
            cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{name: value})})
    cfg.validate()
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    return parse_scenario(text, source=str(path))


def to_flat_dict(cfg: ScenarioConfig) -> dict[str, object]:
    """Flatten for the run-log meta record; values are JSON-friendly."""
    return {
        "facility.total_slots": cfg.facility.total_slots,
        "facility.gas_threshold_ppm": cfg.facility.gas_threshold_ppm,
        "facility.gas_hysteresis_ppm": cfg.facility.gas_hysteresis_ppm,
        "facility.lux_max": cfg.facility.lux_max,
        "facility.topic_prefix": cfg.facility.topic_prefix,
        "facility.gate_open_s": cfg.facility.gate_open_s,
        "traffic.hourly_rates": list(cfg.traffic.hourly_rates),
        "traffic.dwell_mean_s": cfg.traffic.dwell_mean_s,
        "sensors.ir.acc_low_lux": cfg.ir.acc_low_lux,
        "sensors.ir.acc_high_lux": cfg.ir.acc_high_lux,
        "sensors.ir.lux_max": cfg.ir.lux_max,
        "sensors.env.base_temp_c": cfg.env.base_temp_c,
        "sensors.env.base_humidity_pct": cfg.env.base_humidity_pct,
        "sensors.env.relax_tau_s": cfg.env.relax_tau_s,
        "sensors.env.noise_sd_temp_c": cfg.env.noise_sd[0],
        "sensors.env.noise_sd_humidity_pct": cfg.env.noise_sd[1],
        "sensors.mq2.sensitivities": dict(cfg.mq2.sensitivities),
        "sensors.mq2.noise_sd_ppm": cfg.mq2.noise_sd_ppm,
        "network.latency_s": cfg.network.latency_s,
        "network.drop_prob": cfg.network.drop_prob,
        "mqtt.publish_qos": cfg.mqtt.publish_qos,
        "mqtt.ack_timeout_s": cfg.mqtt.ack_timeout_s,
        "mqtt.max_retries": cfg.mqtt.max_retries,
        "dashboard.enabled": cfg.dashboard.enabled,
        "dashboard.qos": cfg.dashboard.qos,
        "duration_s": cfg.duration_s,
        "seed": cfg.seed,
        "gate_to_slot_travel_s": cfg.gate_to_slot_travel_s,
        "env_sample_period_s": cfg.env_sample_period_s,
        "gas_sample_period_s": cfg.gas_sample_period_s,
        "gas_decay_ppm_per_s": cfg.gas_decay_ppm_per_s,
        "injections": [f"{i.t}:{i.gas}:{i.ppm}" for i in cfg.injections],
    }
