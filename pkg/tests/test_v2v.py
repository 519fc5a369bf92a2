import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from convoysim.errors import BsmDecodeError, ContractError
from convoysim.v2v import (
    Bsm,
    Channel,
    ChannelConfig,
    Delivery,
    decode,
    encode,
    read_bsm_log,
    read_delivery_log,
    write_bsm_log,
    write_delivery_log,
)


def channel(p=0.0, n=3, seed=0, latency=0.02, record=False):
    ch = Channel(ChannelConfig(drop_prob=p, latency=latency, seed=seed), record=record)
    for vid in range(n):
        ch.register(vid)
    return ch


def msg(sender=0, seq=0, t=0.0):
    return Bsm(sender, seq, t, 1.0, 2.0, 1.5, 0.25)


class TestChannel:
    def test_lossless_delivers_everything_after_latency(self):
        ch = channel(0.0)
        for k in range(100):
            ch.broadcast(msg(0, k, 0.1 * k), 0.1 * k)
        got = ch.poll(1, 100.0)
        assert [m.seq for m in got] == list(range(100))
        assert ch.stats.link(0, 1).dropped == 0

    def test_total_loss(self):
        ch = channel(1.0)
        for k in range(100):
            ch.broadcast(msg(0, k, 0.1 * k), 0.1 * k)
        assert ch.poll(1, 100.0) == [] and ch.poll(2, 100.0) == []
        assert ch.stats.totals().dropped == 200

    def test_drop_rate_statistics(self):
        ch = channel(0.2, n=2, seed=3)
        n = 100_000
        for k in range(n):
            ch.broadcast(msg(0, k, 0.0), 0.0)
        delivered = len(ch.poll(1, 1.0))
        assert 0.796 <= delivered / n <= 0.804

    def test_deadline_inclusive(self):
        ch = channel(0.0, latency=0.05)
        ch.broadcast(msg(0, 0, 1.0), 1.0)
        assert ch.poll(1, 1.04) == []
        assert len(ch.poll(1, 1.05)) == 1

    def test_never_delivered_to_sender(self):
        ch = channel(0.0)
        ch.broadcast(msg(0), 0.0)
        assert ch.poll(0, 1.0) == []

    def test_order_by_time_then_sender(self):
        ch = channel(0.0, n=4)
        ch.broadcast(msg(2, 0, 0.0), 0.0)
        ch.broadcast(msg(0, 0, 0.0), 0.0)
        ch.broadcast(msg(1, 0, 0.0), 0.0)
        assert [m.sender for m in ch.poll(3, 1.0)] == [0, 1, 2]

    def test_fifo_per_link(self):
        ch = channel(0.3, seed=9)
        for k in range(500):
            ch.broadcast(msg(0, k, 0.01 * k), 0.01 * k)
        seqs = [m.seq for m in ch.poll(1, 10.0)]
        assert seqs == sorted(seqs)

    def test_conservation(self):
        ch = channel(0.4, n=4, seed=1)
        for k in range(300):
            ch.broadcast(msg(k % 4, k, 0.01 * k), 0.01 * k)
            for r in range(4):
                ch.poll(r, 0.01 * k)
        for s in ch.stats.links.values():
            assert s.sent == s.delivered + s.dropped + s.in_flight
            assert s.in_flight >= 0

    def test_receivers_independent(self):
        ch = channel(0.5, seed=4)
        for k in range(2000):
            ch.broadcast(msg(0, k, 0.0), 0.0)
        a = {m.seq for m in ch.poll(1, 1.0)}
        b = {m.seq for m in ch.poll(2, 1.0)}
        assert a != b
        # joint delivery close to 0.25 if independent
        assert abs(len(a & b) / 2000 - 0.25) < 0.04

    def test_links_do_not_depend_on_fleet_size(self):
        def seqs(n):
            ch = channel(0.5, n=n, seed=12)
            for k in range(200):
                ch.broadcast(msg(0, k, 0.0), 0.0)
            return [m.seq for m in ch.poll(1, 1.0)]
        assert seqs(2) == seqs(5)

    def test_deterministic(self):
        def trace():
            ch = channel(0.5, seed=8)
            for k in range(200):
                ch.broadcast(msg(0, k, 0.0), 0.0)
            return [m.seq for m in ch.poll(2, 1.0)]
        assert trace() == trace()

    def test_contract_errors(self):
        ch = channel()
        with pytest.raises(ContractError):
            ch.register(0)
        with pytest.raises(ContractError):
            ch.broadcast(msg(7), 0.0)
        ch.poll(1, 5.0)
        with pytest.raises(ContractError):
            ch.poll(1, 4.0)
        with pytest.raises(ContractError):
            ChannelConfig(drop_prob=1.5)

    def test_record(self):
        ch = channel(0.0, record=True)
        ch.broadcast(msg(0, 0, 0.0), 0.0)
        ch.poll(1, 0.02)
        assert ch.sent_log == [msg(0, 0, 0.0)]
        assert ch.delivery_log == [Delivery(msg(0, 0, 0.0), 1, 0.02)]


class TestCodec:
    def test_golden(self):
        assert encode(Bsm(1, 0, 0.0, 0.0, 0.0, 0.0, 0.0)) == \
            "1,0,0.000000,0.000000,0.000000,0.000000,0.000000"
        assert encode(Bsm(2, 17, 1.25, -3.5, 0.125, 1.999999, -3.141593)) == \
            "2,17,1.250000,-3.500000,0.125000,1.999999,-3.141593"

    def test_decode_reports_field(self):
        with pytest.raises(BsmDecodeError) as exc:
            decode("1,0,x,0,0,0,0")
        assert exc.value.field == 2
        with pytest.raises(BsmDecodeError) as exc:
            decode("1,0,0,0")
        assert exc.value.field == 4
        with pytest.raises(BsmDecodeError) as exc:
            decode("1,0,0,0,0,0,0,9")
        assert exc.value.field == 7
        with pytest.raises(BsmDecodeError):
            decode("1,0,nan,0,0,0,0")

    @given(st.integers(0, 2**31), st.integers(0, 2**31),
           *[st.floats(-1e6, 1e6, allow_nan=False) for _ in range(5)])
    def test_round_trip_within_quantum(self, sender, seq, t, x, y, v, h):
        m = Bsm(sender, seq, t, x, y, v, h)
        back = decode(encode(m))
        assert (back.sender, back.seq) == (sender, seq)
        for a, b in zip((t, x, y, v, h), (back.timestamp, back.x, back.y, back.speed, back.heading)):
            assert abs(a - b) <= 5e-7 + 1e-12 * abs(a)
        assert encode(back) == encode(m)

    def test_random_records(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            vals = rng.uniform(-100, 100, size=5)
            m = Bsm(int(rng.integers(0, 10)), int(rng.integers(0, 10**6)), *map(float, vals))
            assert encode(decode(encode(m))) == encode(m)


class TestLogs:
    def test_bsm_log_golden(self):
        text = write_bsm_log([Bsm(0, 0, 0.0, 1.0, 2.0, 0.5, 0.0), Bsm(1, 0, 0.0, 0.0, 0.0, 0.0, 1.0)])
        assert text == ("# bsm-log v1\n"
                        "0,0,0.000000,1.000000,2.000000,0.500000,0.000000\n"
                        "1,0,0.000000,0.000000,0.000000,0.000000,1.000000\n")
        assert read_bsm_log(text) == [Bsm(0, 0, 0.0, 1.0, 2.0, 0.5, 0.0), Bsm(1, 0, 0.0, 0.0, 0.0, 0.0, 1.0)]

    def test_delivery_log_golden(self):
        d = Delivery(Bsm(0, 3, 0.3, 1.0, 2.0, 0.5, 0.0), 2, 0.32)
        text = write_delivery_log([d])
        assert text == "# bsm-delivery-log v1\n0,3,0.300000,1.000000,2.000000,0.500000,0.000000,2,0.320000\n"
        assert read_delivery_log(text) == [d]

    def test_missing_header(self):
        with pytest.raises(BsmDecodeError):
            read_bsm_log("0,0,0,0,0,0,0\n")
        with pytest.raises(BsmDecodeError):
            read_delivery_log("# bsm-log v1\n")

    def test_empty_logs(self):
        assert read_bsm_log(write_bsm_log([])) == []
        assert read_delivery_log(write_delivery_log([])) == []

    def test_delivery_field_errors(self):
        with pytest.raises(BsmDecodeError) as exc:
            Delivery.decode("0,3,0.3,1,2,0.5,0,x,0.32")
        assert exc.value.field == 7
        assert math.isclose(Delivery.decode("0,3,0.3,1,2,0.5,0,2,0.32").deliver_t, 0.32)
