
from parksim.broker import BrokerCore, Close, Send
from parksim.codec import (
    ConnAck,
    Connect,
    Disconnect,
    PingReq,
    PingResp,
    PubAck,
    Publish,
    SubAck,
    Subscribe,
)


def connect(core, conn_id, client_id, keep_alive=0, now=0.0):
    outputs = core.handle(conn_id, Connect(client_id=client_id, keep_alive_s=keep_alive), now)
    assert any(isinstance(o, Send) and o.packet == ConnAck(0) for o in outputs)
    return outputs


def sends_of(outputs, packet_type):
    return [o for o in outputs if isinstance(o, Send) and isinstance(o.packet, packet_type)]


class TestHandshake:
    def test_connect_then_ping(self):
        core = BrokerCore()
        connect(core, "c1", "alpha")
        outputs = core.handle("c1", PingReq(), 1.0)
        assert outputs == [Send("c1", PingResp())]

    def test_packet_before_connect_closes(self):
        core = BrokerCore()
        outputs = core.handle("c1", PingReq(), 0.0)
        assert outputs == [Close("c1", reason="packet before CONNECT")]

    def test_unsupported_features_refused_with_code_1(self):
        core = BrokerCore()
        outputs = core.handle("c1", Connect(client_id="x", requests_unsupported=True), 0.0)
        assert sends_of(outputs, ConnAck)[0].packet.return_code == 1
        assert any(isinstance(o, Close) for o in outputs)
        assert "x" not in core.sessions

    def test_empty_client_id_refused_with_code_2(self):
        core = BrokerCore()
        outputs = core.handle("c1", Connect(client_id=""), 0.0)
        assert sends_of(outputs, ConnAck)[0].packet.return_code == 2

    def test_takeover_closes_previous_session(self):
        core = BrokerCore()
        connect(core, "c1", "same-id")
        outputs = core.handle("c2", Connect(client_id="same-id"), 1.0)
        closes = [o for o in outputs if isinstance(o, Close)]
        assert closes and closes[0].conn_id == "c1"
        assert core.sessions["same-id"].conn_id == "c2"
        assert len(core.sessions) == 1

    def test_disconnect_tears_down(self):
        core = BrokerCore()
        connect(core, "c1", "alpha")
        outputs = core.handle("c1", Disconnect(), 1.0)
        assert any(isinstance(o, Close) for o in outputs)
        assert "alpha" not in core.sessions


class TestRouting:
    def test_qos0_fanout_to_matching_subscribers(self):
        core = BrokerCore()
        connect(core, "pub", "publisher")
        connect(core, "s1", "subscriber-1")
        connect(core, "s2", "subscriber-2")
        core.handle("s1", Subscribe(packet_id=1, filters=(("parking/slot/+/status", 0),)), 0.0)
        core.handle("s2", Subscribe(packet_id=1, filters=(("parking/#", 0),)), 0.0)
        outputs = core.handle(
            "pub", Publish(topic="parking/slot/2/status", payload=b"1", qos=0), 1.0
        )
        publishes = sends_of(outputs, Publish)
        assert {p.conn_id for p in publishes} == {"s1", "s2"}
        assert all(p.packet.payload == b"1" for p in publishes)

    def test_qos1_publish_acked_and_fanned_out(self):
        core = BrokerCore()
        connect(core, "pub", "publisher")
        connect(core, "s1", "sub-1")
        connect(core, "s2", "sub-2")
        core.handle("s1", Subscribe(packet_id=1, filters=(("parking/#", 1),)), 0.0)
        core.handle("s2", Subscribe(packet_id=1, filters=(("parking/#", 1),)), 0.0)
        outputs = core.handle(
            "pub", Publish(topic="parking/slot/2/status", payload=b"1", qos=1, packet_id=7), 1.0
        )
        acks = sends_of(outputs, PubAck)
        assert len(acks) == 1 and acks[0].conn_id == "pub" and acks[0].packet.packet_id == 7
        publishes = sends_of(outputs, Publish)
        assert len(publishes) == 2
        assert all(p.packet.qos == 1 and p.packet.packet_id is not None for p in publishes)

    def test_effective_qos_is_min_of_pub_and_sub(self):
        core = BrokerCore()
        connect(core, "pub", "publisher")
        connect(core, "s1", "sub-qos0")
        core.handle("s1", Subscribe(packet_id=1, filters=(("parking/#", 0),)), 0.0)
        outputs = core.handle(
            "pub", Publish(topic="parking/gas/ppm", payload=b"3", qos=1, packet_id=9), 1.0
        )
        delivered = sends_of(outputs, Publish)[0].packet
        assert delivered.qos == 0 and delivered.packet_id is None

    def test_no_subscribers_no_fanout(self):
        core = BrokerCore()
        connect(core, "pub", "publisher")
        outputs = core.handle("pub", Publish(topic="parking/summary", payload=b"4/4", qos=0), 1.0)
        assert sends_of(outputs, Publish) == []


class TestRetained:
    def setup_method(self):
        self.core = BrokerCore()
        connect(self.core, "pub", "publisher")
        for slot, flag in enumerate((b"1", b"0", b"0", b"0"), start=1):
            self.core.handle(
                "pub",
                Publish(topic=f"parking/slot/{slot}/status", payload=flag, qos=0, retain=True),
                0.0,
            )

    def test_subscribe_replays_retained_states(self):
        connect(self.core, "late", "latecomer")
        outputs = self.core.handle(
            "late", Subscribe(packet_id=1, filters=(("parking/slot/+/status", 0),)), 5.0
        )
        assert sends_of(outputs, SubAck)[0].packet.granted == (0,)
        publishes = [o.packet for o in sends_of(outputs, Publish)]
        assert len(publishes) == 4
        assert all(p.retain for p in publishes)
        by_topic = {p.topic: p.payload for p in publishes}
        assert by_topic["parking/slot/1/status"] == b"1"
        assert by_topic["parking/slot/2/status"] == b"0"

    def test_retained_overwrite_keeps_latest(self):
        self.core.handle(
            "pub", Publish(topic="parking/slot/2/status", payload=b"1", qos=0, retain=True), 1.0
        )
        connect(self.core, "late", "latecomer")
        outputs = self.core.handle(
            "late", Subscribe(packet_id=1, filters=(("parking/slot/2/status", 0),)), 5.0
        )
        assert sends_of(outputs, Publish)[0].packet.payload == b"1"

    def test_zero_length_retained_deletes(self):
        self.core.handle(
            "pub", Publish(topic="parking/slot/1/status", payload=b"", qos=0, retain=True), 1.0
        )
        connect(self.core, "late", "latecomer")
        outputs = self.core.handle(
            "late", Subscribe(packet_id=1, filters=(("parking/slot/+/status", 0),)), 5.0
        )
        assert len(sends_of(outputs, Publish)) == 3

    def test_live_fanout_clears_retain_flag(self):
        connect(self.core, "live", "lively")
        self.core.handle("live", Subscribe(packet_id=1, filters=(("parking/#", 0),)), 1.0)
        outputs = self.core.handle(
            "pub", Publish(topic="parking/slot/3/status", payload=b"1", qos=0, retain=True), 2.0
        )
        assert sends_of(outputs, Publish)[0].packet.retain is False


class TestRedelivery:
    def _setup_inflight(self, drop_first=True):
        core = BrokerCore(ack_timeout_s=2.0, max_retries=3)
        connect(core, "pub", "publisher")
        connect(core, "sub", "subscriber")
        core.handle("sub", Subscribe(packet_id=1, filters=(("t/#", 1),)), 0.0)
        outputs = core.handle("pub", Publish(topic="t/x", payload=b"p", qos=1, packet_id=1), 0.0)
        publish = sends_of(outputs, Publish)[0].packet
        return core, publish

    def test_aged_inflight_redelivered_with_dup(self):
        core, publish = self._setup_inflight()
        resends = core.redeliver(2.0)
        assert len(resends) == 1
        resent = resends[0].packet
        assert resent.dup is True and resent.packet_id == publish.packet_id
        session = core.sessions["subscriber"]
        assert session.inflight[publish.packet_id].retries == 1

    def test_fresh_inflight_not_resent(self):
        core, _ = self._setup_inflight()
        assert core.redeliver(1.0) == []

    def test_no_inflight_no_resends(self):
        core = BrokerCore()
        connect(core, "c", "x")
        assert core.redeliver(100.0) == []

    def test_retry_cap_drops_and_counts_uncorrected(self):
        events = []
        core = BrokerCore(ack_timeout_s=2.0, max_retries=3,
                          event_sink=lambda kind, **f: events.append(kind))
        connect(core, "pub", "publisher")
        connect(core, "sub", "subscriber")
        core.handle("sub", Subscribe(packet_id=1, filters=(("t/#", 1),)), 0.0)
        core.handle("pub", Publish(topic="t/x", payload=b"p", qos=1, packet_id=1), 0.0)
        for sweep_t in (2.0, 4.0, 6.0):
            assert len(core.redeliver(sweep_t)) == 1
        assert core.redeliver(8.0) == []
        assert core.uncorrected_errors == 1
        assert core.sessions["subscriber"].inflight == {}
        assert events == ["error_uncorrected"]

    def test_late_ack_after_retry_counts_corrected(self):
        events = []
        core = BrokerCore(ack_timeout_s=2.0, max_retries=3,
                          event_sink=lambda kind, **f: events.append(kind))
        connect(core, "pub", "publisher")
        connect(core, "sub", "subscriber")
        core.handle("sub", Subscribe(packet_id=1, filters=(("t/#", 1),)), 0.0)
        outputs = core.handle("pub", Publish(topic="t/x", payload=b"p", qos=1, packet_id=1), 0.0)
        pid = sends_of(outputs, Publish)[0].packet.packet_id
        core.redeliver(2.0)
        core.handle("sub", PubAck(packet_id=pid), 2.5)
        assert core.corrected_errors == 1
        assert events == ["error_corrected"]

    def test_prompt_ack_is_not_an_error(self):
        core, publish = self._setup_inflight()
        core.handle("sub", PubAck(packet_id=publish.packet_id), 0.5)
        assert core.total_errors == 0
        assert core.redeliver(10.0) == []


class TestKeepalive:
    def test_silent_past_grace_closes(self):
        core = BrokerCore()
        connect(core, "c1", "sleepy", keep_alive=10, now=0.0)
        outputs = core.keepalive_sweep(16.0)
        assert [o.client_id for o in outputs] == ["sleepy"]
        assert core.sessions == {}

    def test_silent_within_grace_kept(self):
        core = BrokerCore()
        connect(core, "c1", "sleepy", keep_alive=10, now=0.0)
        assert core.keepalive_sweep(14.0) == []
        assert "sleepy" in core.sessions

    def test_zero_keepalive_never_expires(self):
        core = BrokerCore()
        connect(core, "c1", "forever", keep_alive=0, now=0.0)
        assert core.keepalive_sweep(1e9) == []

    def test_any_packet_refreshes_deadline(self):
        core = BrokerCore()
        connect(core, "c1", "chatty", keep_alive=10, now=0.0)
        core.handle("c1", PingReq(), 12.0)
        assert core.keepalive_sweep(16.0) == []
        assert core.keepalive_sweep(27.1) != []


def test_retained_consistency_after_many_flips():
    import random

    rng = random.Random(2024)
    core = BrokerCore()
    connect(core, "pub", "publisher")
    n = 6
    current = [0] * n
    for slot in range(n):
        core.handle("pub", Publish(topic=f"parking/slot/{slot + 1}/status",
                                   payload=b"0", qos=0, retain=True), 0.0)
    for _ in range(100):
        slot = rng.randrange(n)
        current[slot] ^= 1
        core.handle(
            "pub",
            Publish(topic=f"parking/slot/{slot + 1}/status",
                    payload=str(current[slot]).encode(), qos=0, retain=True),
            1.0,
        )
    connect(core, "fresh", "fresh-subscriber")
    outputs = core.handle(
        "fresh", Subscribe(packet_id=1, filters=(("parking/slot/+/status", 0),)), 2.0
    )
    publishes = [o.packet for o in outputs if isinstance(o, Send) and isinstance(o.packet, Publish)]
    assert len(publishes) == n
    seen = {}
    for p in publishes:
        slot = int(p.topic.split("/")[2])
        seen[slot - 1] = int(p.payload)
    assert [seen[i] for i in range(n)] == current
