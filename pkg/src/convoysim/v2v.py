"""Basic Safety Messages and a seeded lossy broadcast channel."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import BsmDecodeError, ContractError

BSM_LOG_HEADER = "# bsm-log v1"
DELIVERY_LOG_HEADER = "# bsm-delivery-log v1"

# spawn-key tag separating channel substreams from other uses of a run seed
CHANNEL_STREAM = 1

_TIME_EPS = 1e-9


@dataclass(frozen=True)
class Bsm:
    sender: int
    seq: int
    timestamp: float
    x: float
    y: float
    speed: float
    heading: float


def encode(msg: Bsm) -> str:
    return (f"{msg.sender:d},{msg.seq:d},{msg.timestamp:.6f},{msg.x:.6f},{msg.y:.6f},"
            f"{msg.speed:.6f},{msg.heading:.6f}")


_FIELDS = ("sender", "seq", "timestamp", "x", "y", "speed", "heading")


def _decode_fields(parts: list[str], start: int, count: int):
    out = []
    for i in range(start, start + count):
        if i >= len(parts):
            raise BsmDecodeError(i, "missing field")
        token = parts[i].strip()
        try:
            value = int(token) if i < 2 else float(token)
        except ValueError:
            raise BsmDecodeError(i, f"cannot parse {token!r}") from None
        if isinstance(value, float) and not math.isfinite(value):
            raise BsmDecodeError(i, f"non-finite value {token!r}")
        out.append(value)
    return out


def decode(line: str) -> Bsm:
    parts = line.strip().split(",")
    values = _decode_fields(parts, 0, len(_FIELDS))
    if len(parts) > len(_FIELDS):
        raise BsmDecodeError(len(_FIELDS), "unexpected extra field")
    return Bsm(*values)


@dataclass(frozen=True)
class Delivery:
    msg: Bsm
    receiver: int
    deliver_t: float

    def encode(self) -> str:
        return f"{encode(self.msg)},{self.receiver:d},{self.deliver_t:.6f}"

    @classmethod
    def decode(cls, line: str) -> "Delivery":
        parts = line.strip().split(",")
        if len(parts) != 9:
            raise BsmDecodeError(min(len(parts), 9), "delivery records have 9 fields")
        msg = decode(",".join(parts[:7]))
        try:
            receiver = int(parts[7])
        except ValueError:
            raise BsmDecodeError(7, f"cannot parse {parts[7]!r}") from None
        try:
            deliver_t = float(parts[8])
        except ValueError:
            raise BsmDecodeError(8, f"cannot parse {parts[8]!r}") from None
        return cls(msg, receiver, deliver_t)


def write_bsm_log(messages: Iterable[Bsm]) -> str:
    return "\n".join([BSM_LOG_HEADER, *(encode(m) for m in messages)]) + "\n"


def read_bsm_log(text: str) -> list[Bsm]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != BSM_LOG_HEADER:
        raise BsmDecodeError(0, f"missing header {BSM_LOG_HEADER!r}")
    return [decode(line) for line in lines[1:] if line.strip()]


def write_delivery_log(deliveries: Iterable[Delivery]) -> str:
    return "\n".join([DELIVERY_LOG_HEADER, *(d.encode() for d in deliveries)]) + "\n"


def read_delivery_log(text: str) -> list[Delivery]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != DELIVERY_LOG_HEADER:
        raise BsmDecodeError(0, f"missing header {DELIVERY_LOG_HEADER!r}")
    return [Delivery.decode(line) for line in lines[1:] if line.strip()]


@dataclass(frozen=True)
class ChannelConfig:
    drop_prob: float = 0.0
    latency: float = 0.02
    cadence: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ContractError(f"drop probability {self.drop_prob} outside [0, 1]")
        if self.latency < 0:
            raise ContractError("latency must be >= 0")
        if not self.cadence > 0:
            raise ContractError("cadence must be > 0")


@dataclass
class LinkStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0

    @property
    def in_flight(self) -> int:
        return self.sent - self.delivered - self.dropped


@dataclass
class DeliveryStats:
    links: dict = field(default_factory=dict)   # (sender, receiver) -> LinkStats

    def link(self, sender: int, receiver: int) -> LinkStats:
        key = (sender, receiver)
        if key not in self.links:
            self.links[key] = LinkStats()
        return self.links[key]

    def totals(self) -> LinkStats:
        out = LinkStats()
        for s in self.links.values():
            out.sent += s.sent
            out.delivered += s.delivered
            out.dropped += s.dropped
        return out

    def as_dict(self) -> dict:
        rows = []
        for (snd, rcv), s in sorted(self.links.items()):
            rows.append({"sender": snd, "receiver": rcv, "sent": s.sent, "delivered": s.delivered,
                         "dropped": s.dropped, "in_flight": s.in_flight})
        t = self.totals()
        return {"links": rows, "sent": t.sent, "delivered": t.delivered, "dropped": t.dropped,
                "in_flight": t.in_flight}


class Channel:
    """Broadcast medium with independent Bernoulli drops per (message, receiver).

    Each directed link draws from its own generator, derived from the channel
    seed and the (sender, receiver) pair, so adding a vehicle never changes the
    draws seen on existing links.
    """

    def __init__(self, config: ChannelConfig, record: bool = False):
        self.config = config
        self.clock = -math.inf
        self.stats = DeliveryStats()
        self._receivers: list[int] = []
        self._queues: dict[int, list] = {}
        self._rngs: dict[tuple[int, int], np.random.Generator] = {}
        self.record = record
        self.sent_log: list[Bsm] = []
        self.delivery_log: list[Delivery] = []

    def register(self, vid: int):
        if vid in self._queues:
            raise ContractError(f"vehicle {vid} already registered")
        self._receivers.append(vid)
        self._queues[vid] = []

    @property
    def registered(self) -> tuple[int, ...]:
        return tuple(self._receivers)

    def _rng(self, sender: int, receiver: int) -> np.random.Generator:
        key = (sender, receiver)
        rng = self._rngs.get(key)
        if rng is None:
            seq = np.random.SeedSequence(self.config.seed, spawn_key=(CHANNEL_STREAM, sender, receiver))
            rng = self._rngs[key] = np.random.default_rng(seq)
        return rng

    def _advance(self, now: float):
        if now < self.clock - _TIME_EPS:
            raise ContractError(f"time went backwards: {now} < {self.clock}")
        self.clock = max(self.clock, now)

    def broadcast(self, msg: Bsm, now: float):
        if msg.sender not in self._queues:
            raise ContractError(f"sender {msg.sender} is not registered")
        self._advance(now)
        if self.record:
            self.sent_log.append(msg)
        deliver_t = now + self.config.latency
        for rcv in self._receivers:
            if rcv == msg.sender:
                continue
            link = self.stats.link(msg.sender, rcv)
            link.sent += 1
            if self._rng(msg.sender, rcv).random() < self.config.drop_prob:
                link.dropped += 1
            else:
                heapq.heappush(self._queues[rcv], (deliver_t, msg.sender, msg.seq, msg))

    def poll(self, receiver: int, now: float) -> list[Bsm]:
        queue = self._queues.get(receiver)
        if queue is None:
            raise ContractError(f"receiver {receiver} is not registered")
        self._advance(now)
        out = []
        while queue and queue[0][0] <= now + _TIME_EPS:
            deliver_t, sender, _, msg = heapq.heappop(queue)
            self.stats.link(sender, receiver).delivered += 1
            if self.record:
                self.delivery_log.append(Delivery(msg, receiver, deliver_t))
            out.append(msg)
        return out

    def pending(self, receiver: int) -> int:
        return len(self._queues[receiver])
