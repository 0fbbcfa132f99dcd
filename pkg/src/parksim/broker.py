"""Transport-agnostic MQTT broker core.

The core never touches sockets or the event queue: callers feed it decoded
packets with a timestamp and get back a list of Send/Close commands. The
simulator drives it from the discrete-event loop with simulated time; the
TCP server drives it from connection threads with the monotonic clock. All
state transitions happen inside whichever single logical loop owns the
instance, so they serialize naturally.

QoS-1 bookkeeping doubles as the error-recovery model: an outbound publish
whose first transmission times out unacknowledged counts as an error, a
later acknowledged retry marks it corrected, and exhausting max_retries
marks it uncorrected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

from . import codec
from .codec import (
    ConnAck,
    Connect,
    Disconnect,
    MqttPacket,
    PingReq,
    PingResp,
    PubAck,
    Publish,
    SubAck,
    Subscribe,
    UnsubAck,
    Unsubscribe,
)

log = logging.getLogger(__name__)

RETURN_ACCEPTED = 0x00
RETURN_UNSUPPORTED = 0x01
RETURN_ID_REJECTED = 0x02


@dataclass(frozen=True)
class Send:
    conn_id: str
    packet: MqttPacket


@dataclass(frozen=True)
class Close:
    conn_id: str
    client_id: str | None = None
    reason: str = ""


BrokerOutput = Send | Close


@dataclass
class Inflight:
    publish: Publish          # qos-1 frame as first sent (dup clear)
    accept_t: float           # when the broker accepted the originating message
    send_t: float             # last transmission time
    retries: int = 0
    errored: bool = False


@dataclass
class Session:
    client_id: str
    conn_id: str
    keep_alive_s: int
    subscriptions: list[tuple[str, int]] = field(default_factory=list)
    inflight: dict[int, Inflight] = field(default_factory=dict)
    last_seen_t: float = 0.0
    next_packet_id: int = 1

    def take_packet_id(self) -> int:
        pid = self.next_packet_id
        self.next_packet_id = pid % 0xFFFF + 1
        return pid

    def best_qos_for(self, topic: str) -> int | None:
        """Highest granted qos among matching subscriptions, None if no match."""
        best: int | None = None
        for topic_filter, qos in self.subscriptions:
            if codec.topic_matches(topic_filter, topic):
                best = qos if best is None else max(best, qos)
        return best


class BrokerCore:
    def __init__(
        self,
        ack_timeout_s: float = 2.0,
        max_retries: int = 3,
        event_sink: Callable[..., None] | None = None,
    ):
        self.ack_timeout_s = ack_timeout_s
        self.max_retries = max_retries
        self.event_sink = event_sink
        self.sessions: dict[str, Session] = {}
        self.conn_to_client: dict[str, str] = {}
        self.retained: dict[str, tuple[bytes, int]] = {}
        self.corrected_errors = 0
        self.uncorrected_errors = 0

    # -- inbound ---------------------------------------------------------

    def handle(self, conn_id: str, packet: MqttPacket, now: float) -> list[BrokerOutput]:
        if isinstance(packet, Connect):
            return self._handle_connect(conn_id, packet, now)
        client_id = self.conn_to_client.get(conn_id)
        if client_id is None:
            return [Close(conn_id, reason="packet before CONNECT")]
        session = self.sessions[client_id]
        session.last_seen_t = now

        if isinstance(packet, Publish):
            return self._handle_publish(session, packet, now)
        if isinstance(packet, Subscribe):
            return self._handle_subscribe(session, packet, now)
        if isinstance(packet, Unsubscribe):
            for topic_filter in packet.filters:
                session.subscriptions = [
                    (f, q) for f, q in session.subscriptions if f != topic_filter
                ]
            return [Send(conn_id, UnsubAck(packet_id=packet.packet_id))]
        if isinstance(packet, PubAck):
            self._handle_puback(session, packet)
            return []
        if isinstance(packet, PingReq):
            return [Send(conn_id, PingResp())]
        if isinstance(packet, Disconnect):
            self._drop_session(client_id)
            return [Close(conn_id, client_id=client_id, reason="client disconnect")]
        return [Close(conn_id, client_id=client_id, reason=f"unexpected {type(packet).__name__}")]

    def _handle_connect(self, conn_id: str, packet: Connect, now: float) -> list[BrokerOutput]:
        if conn_id in self.conn_to_client:
            old = self.conn_to_client[conn_id]
            self._drop_session(old)
            return [Close(conn_id, client_id=old, reason="second CONNECT on connection")]
        if packet.requests_unsupported:
            return [
                Send(conn_id, ConnAck(return_code=RETURN_UNSUPPORTED)),
                Close(conn_id, reason="unsupported CONNECT features"),
            ]
        if not packet.client_id:
            return [
                Send(conn_id, ConnAck(return_code=RETURN_ID_REJECTED)),
                Close(conn_id, reason="empty client_id"),
            ]
        outputs: list[BrokerOutput] = []
        existing = self.sessions.get(packet.client_id)
        if existing is not None:
            # session takeover: the newer connection wins
            self._drop_session(packet.client_id)
            outputs.append(Close(existing.conn_id, client_id=packet.client_id, reason="takeover"))
        session = Session(
            client_id=packet.client_id,
            conn_id=conn_id,
            keep_alive_s=packet.keep_alive_s,
            last_seen_t=now,
        )
        self.sessions[packet.client_id] = session
        self.conn_to_client[conn_id] = packet.client_id
        outputs.append(Send(conn_id, ConnAck(return_code=RETURN_ACCEPTED)))
        return outputs

    def _handle_publish(self, sender: Session, packet: Publish, now: float) -> list[BrokerOutput]:
        outputs: list[BrokerOutput] = []
        if packet.qos == 1:
            outputs.append(Send(sender.conn_id, PubAck(packet_id=packet.packet_id)))
        if packet.retain:
            if packet.payload:
                self.retained[packet.topic] = (packet.payload, packet.qos)
            else:
                self.retained.pop(packet.topic, None)
        for session in self.sessions.values():
            sub_qos = session.best_qos_for(packet.topic)
            if sub_qos is None:
                continue
            outputs.append(self._outbound_publish(
                session,
                topic=packet.topic,
                payload=packet.payload,
                qos=min(packet.qos, sub_qos),
                retain=False,
                now=now,
            ))
        return outputs

    def _handle_subscribe(self, session: Session, packet: Subscribe, now: float) -> list[BrokerOutput]:
        granted: list[int] = []
        for topic_filter, qos in packet.filters:
            # re-subscribing to the same filter replaces the old qos
            session.subscriptions = [
                (f, q) for f, q in session.subscriptions if f != topic_filter
            ]
            session.subscriptions.append((topic_filter, qos))
            granted.append(qos)
        outputs: list[BrokerOutput] = [
            Send(session.conn_id, SubAck(packet_id=packet.packet_id, granted=tuple(granted)))
        ]
        for topic_filter, qos in packet.filters:
            for topic, (payload, retained_qos) in self.retained.items():
                if codec.topic_matches(topic_filter, topic):
                    outputs.append(self._outbound_publish(
                        session,
                        topic=topic,
                        payload=payload,
                        qos=min(retained_qos, qos),
                        retain=True,
                        now=now,
                    ))
        return outputs

    def _handle_puback(self, session: Session, packet: PubAck) -> None:
        entry = session.inflight.pop(packet.packet_id, None)
        if entry is None:
            log.debug("stray PUBACK %d from %s", packet.packet_id, session.client_id)
            return
        if entry.errored:
            self.corrected_errors += 1
            self._emit("error_corrected", client_id=session.client_id, topic=entry.publish.topic)

    def _outbound_publish(
        self, session: Session, topic: str, payload: bytes, qos: int, retain: bool, now: float
    ) -> Send:
        packet_id = None
        if qos == 1:
            packet_id = session.take_packet_id()
        publish = Publish(
            topic=topic, payload=payload, qos=qos, retain=retain, dup=False, packet_id=packet_id
        )
        if qos == 1:
            session.inflight[packet_id] = Inflight(publish=publish, accept_t=now, send_t=now)
        return Send(session.conn_id, publish)

    # -- timers ----------------------------------------------------------

    def redeliver(self, now: float) -> list[BrokerOutput]:
        """Re-send timed-out qos-1 messages; drop the ones out of retries."""
        outputs: list[BrokerOutput] = []
        for session in self.sessions.values():
            expired: list[int] = []
            for packet_id, entry in session.inflight.items():
                if now - entry.send_t < self.ack_timeout_s:
                    continue
                if entry.retries >= self.max_retries:
                    expired.append(packet_id)
                    continue
                entry.retries += 1
                entry.send_t = now
                if not entry.errored:
                    entry.errored = True
                outputs.append(Send(
                    session.conn_id,
                    Publish(
                        topic=entry.publish.topic,
                        payload=entry.publish.payload,
                        qos=1,
                        retain=entry.publish.retain,
                        dup=True,
                        packet_id=packet_id,
                    ),
                ))
            for packet_id in expired:
                entry = session.inflight.pop(packet_id)
                self.uncorrected_errors += 1
                self._emit("error_uncorrected", client_id=session.client_id, topic=entry.publish.topic)
        return outputs

    def keepalive_sweep(self, now: float) -> list[BrokerOutput]:
        """Close sessions silent for more than 1.5x their keep-alive."""
        outputs: list[BrokerOutput] = []
        for client_id in list(self.sessions):
            session = self.sessions[client_id]
            if session.keep_alive_s <= 0:
                continue
            if now - session.last_seen_t > 1.5 * session.keep_alive_s:
                self._drop_session(client_id)
                outputs.append(Close(session.conn_id, client_id=client_id, reason="keepalive timeout"))
        return outputs

    # -- transport notifications -----------------------------------------

    def connection_closed(self, conn_id: str) -> None:
        client_id = self.conn_to_client.get(conn_id)
        if client_id is not None:
            self._drop_session(client_id)

    def _drop_session(self, client_id: str) -> None:
        session = self.sessions.pop(client_id, None)
        if session is not None:
            self.conn_to_client.pop(session.conn_id, None)

    def _emit(self, kind: str, **fields) -> None:
        if self.event_sink is not None:
            self.event_sink(kind, **fields)

    @property
    def total_errors(self) -> int:
        return self.corrected_errors + self.uncorrected_errors
