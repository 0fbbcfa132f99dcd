"""Communication metrics computed from run event streams.

Three primitive measures: data transfer rate (bytes moved over elapsed
time), point-to-point delay (broker accept to subscriber delivery), and the
error-correction ratio (recovered deliveries over deliveries that needed
recovery; 1.0 when nothing needed recovery). The aggregator turns an event
record stream into windowed CSV rows and is a pure function of its input,
so re-running it over the same log reproduces the file byte for byte.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class MetricKind(enum.Enum):
    BYTES_TRANSFERRED = "bytes_transferred"
    PUBLISH_DELAY = "publish_delay"
    ERROR_CORRECTED = "error_corrected"
    ERROR_UNCORRECTED = "error_uncorrected"


@dataclass(frozen=True)
class MetricSample:
    kind: MetricKind
    value: float
    t: float

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError(f"metric value must be >= 0: {self.value}")


def data_rate(bytes_total: float, duration_s: float) -> float:
    """Bytes per second over the window."""
    if duration_s <= 0:
        raise ValueError(f"duration must be > 0, got {duration_s}")
    if bytes_total < 0:
        raise ValueError("bytes_total must be >= 0")
    return bytes_total / duration_s


def delay(t_start: float, t_end: float) -> float:
    if t_end < t_start:
        raise ValueError(f"negative interval: start {t_start} after end {t_end}")
    return t_end - t_start


def error_correction_rate(corrected: int, total_errors: int) -> float:
    """Corrected over total; by convention 1.0 when nothing went wrong."""
    if corrected > total_errors:
        raise ValueError(f"corrected {corrected} exceeds total errors {total_errors}")
    if corrected < 0 or total_errors < 0:
        raise ValueError("counts must be >= 0")
    if total_errors == 0:
        return 1.0
    return corrected / total_errors


# Event-log record kinds this module consumes. "publish" is a broker accept,
# "deliver" a subscriber delivery (carrying its delay), and the error kinds
# come from qos-1 recovery bookkeeping.
_BYTE_KINDS = ("publish", "deliver")

CSV_HEADER = "metric,window_start_s,window_end_s,value"


def _fmt(value: float) -> str:
    return format(value, ".10g")


class Aggregator:
    """Windowed rollup of telemetry samples extracted from event records."""

    def __init__(self, duration_s: float, window_s: float = 3600.0):
        if duration_s <= 0:
            raise ValueError("duration_s must be > 0")
        if window_s <= 0:
            raise ValueError("window_s must be > 0")
        self.duration_s = duration_s
        self.window_s = window_s
        self.samples: list[MetricSample] = []

    def add_record(self, record: dict) -> None:
        kind = record.get("kind")
        t = float(record.get("t", 0.0))
        if kind in _BYTE_KINDS:
            self.samples.append(MetricSample(MetricKind.BYTES_TRANSFERRED, float(record["bytes"]), t))
            if kind == "deliver":
                self.samples.append(MetricSample(MetricKind.PUBLISH_DELAY, float(record["delay"]), t))
        elif kind == "error_corrected":
            self.samples.append(MetricSample(MetricKind.ERROR_CORRECTED, 1.0, t))
        elif kind == "error_uncorrected":
            self.samples.append(MetricSample(MetricKind.ERROR_UNCORRECTED, 1.0, t))

    def add_records(self, records) -> None:
        for record in records:
            self.add_record(record)

    def _window_bounds(self) -> list[tuple[float, float]]:
        bounds = []
        start = 0.0
        while start < self.duration_s:
            end = min(start + self.window_s, self.duration_s)
            bounds.append((start, end))
            start += self.window_s
        return bounds

    def rows(self) -> list[tuple[str, float, float, float]]:
        """(metric, window_start, window_end, value) rows, deterministic order."""
        per_window: list[tuple[str, float, float, float]] = []
        for start, end in self._window_bounds():
            in_window = [s for s in self.samples if start <= s.t < end or (s.t == end == self.duration_s)]
            byte_total = sum(s.value for s in in_window if s.kind is MetricKind.BYTES_TRANSFERRED)
            delays = [s.value for s in in_window if s.kind is MetricKind.PUBLISH_DELAY]
            if byte_total > 0:
                per_window.append(("data_rate_bytes_per_s", start, end, data_rate(byte_total, end - start)))
            if delays:
                per_window.append(("delay_mean_s", start, end, sum(delays) / len(delays)))

        run_start, run_end = 0.0, self.duration_s
        bytes_total = sum(s.value for s in self.samples if s.kind is MetricKind.BYTES_TRANSFERRED)
        delays = [s.value for s in self.samples if s.kind is MetricKind.PUBLISH_DELAY]
        corrected = sum(1 for s in self.samples if s.kind is MetricKind.ERROR_CORRECTED)
        uncorrected = sum(1 for s in self.samples if s.kind is MetricKind.ERROR_UNCORRECTED)
        run_rows: list[tuple[str, float, float, float]] = [
            ("bytes_total", run_start, run_end, bytes_total),
            ("data_rate_bytes_per_s", run_start, run_end, data_rate(bytes_total, self.duration_s)),
        ]
        if delays:
            run_rows.append(("delay_mean_s", run_start, run_end, sum(delays) / len(delays)))
            run_rows.append(("delay_min_s", run_start, run_end, min(delays)))
            run_rows.append(("delay_max_s", run_start, run_end, max(delays)))
        run_rows.append(("ec_modeled", run_start, run_end,
                         error_correction_rate(corrected, corrected + uncorrected)))
        return sorted(per_window, key=lambda r: (r[1], r[2], r[0])) + run_rows

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for metric, start, end, value in self.rows():
            lines.append(f"{metric},{_fmt(start)},{_fmt(end)},{_fmt(value)}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict[str, float]:
        """Run-level numbers for the text report."""
        bytes_total = sum(s.value for s in self.samples if s.kind is MetricKind.BYTES_TRANSFERRED)
        delays = [s.value for s in self.samples if s.kind is MetricKind.PUBLISH_DELAY]
        corrected = sum(1 for s in self.samples if s.kind is MetricKind.ERROR_CORRECTED)
        uncorrected = sum(1 for s in self.samples if s.kind is MetricKind.ERROR_UNCORRECTED)
        out = {
            "bytes_total": bytes_total,
            "data_rate_bytes_per_s": data_rate(bytes_total, self.duration_s),
            "errors_corrected": float(corrected),
            "errors_uncorrected": float(uncorrected),
            "ec_modeled": error_correction_rate(corrected, corrected + uncorrected),
        }
        if delays:
            out["delay_mean_s"] = sum(delays) / len(delays)
            out["delay_min_s"] = min(delays)
            out["delay_max_s"] = max(delays)
        return out
