"""Message schema, simulated transport, and communication accounting.

The server and the n client state machines exchange only the messages below;
no variant can carry a client's dataset, raw constraint values, or client
multiplier vectors, so privacy holds by construction of the schema.

Wire layout (stable; documented for future transports; the in-process
simulation never serializes on the hot path): every real is a little-endian
IEEE-754 double (8 bytes), every vector is a u32 little-endian length prefix
followed by its doubles, client/round ids are u32. Fields are encoded in the
dataclass declaration order after a 1-byte variant tag (order of the
MESSAGE_TYPES tuple).

Scalar volume accounting counts payload doubles only: a weight broadcast is
d scalars, an inner report d + 1, a multiplier-delta report 1, a termination
notice d + 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields

import numpy as np

__all__ = [
    "BroadcastWeights",
    "ClientInnerReport",
    "ClientMultiplierDelta",
    "ServerTerminate",
    "Message",
    "MESSAGE_TYPES",
    "RoundKind",
    "CommLedger",
    "SimulatedTransport",
    "TransportError",
    "encode_message",
    "decode_message",
]


@dataclass(frozen=True)
class BroadcastWeights:
    """Server -> all clients: current global weights for a protocol round."""

    weights: np.ndarray
    round_id: int
    kind: str  # one of RoundKind

    def scalar_volume(self) -> int:
        return int(np.asarray(self.weights).size)


@dataclass(frozen=True)
class ClientInnerReport:
    """Client -> server: shifted weights and the local stationarity measure."""

    client: int
    u_tilde: np.ndarray
    eps_tilde: float

    def scalar_volume(self) -> int:
        return int(np.asarray(self.u_tilde).size) + 1


@dataclass(frozen=True)
class ClientMultiplierDelta:
    """Client -> server: sup-norm change of the local multiplier block."""

    client: int
    delta_inf: float

    def scalar_volume(self) -> int:
        return 1


@dataclass(frozen=True)
class ServerTerminate:
    """Server -> all clients: final weights plus a server-multiplier digest."""

    weights: np.ndarray
    mu0_digest: float  # sup-norm of the server multiplier block

    def scalar_volume(self) -> int:
        return int(np.asarray(self.weights).size) + 1


MESSAGE_TYPES = (BroadcastWeights, ClientInnerReport, ClientMultiplierDelta, ServerTerminate)
Message = BroadcastWeights | ClientInnerReport | ClientMultiplierDelta | ServerTerminate


class RoundKind:
    """Labels for broadcast rounds; the ledger buckets counters by these."""

    INNER_INIT = "inner-init"  # delivers the inner start point, collects u_tilde^0
    INNER = "inner"
    OUTER = "outer"
    TERMINATE = "terminate"


def _pack_vector(v: np.ndarray) -> bytes:
    v = np.asarray(v, dtype="<f8").ravel()
    return struct.pack("<I", v.size) + v.tobytes()


def _unpack_vector(buf: bytes, off: int) -> tuple[np.ndarray, int]:
    (size,) = struct.unpack_from("<I", buf, off)
    off += 4
    vec = np.frombuffer(buf, dtype="<f8", count=size, offset=off).copy()
    return vec, off + 8 * size


def encode_message(msg: Message) -> bytes:
    """Serialize per the documented wire layout."""
    tag = MESSAGE_TYPES.index(type(msg))
    out = [struct.pack("<B", tag)]
    for f in fields(msg):
        val = getattr(msg, f.name)
        if isinstance(val, np.ndarray):
            out.append(_pack_vector(val))
        elif isinstance(val, str):
            raw = val.encode("utf-8")
            out.append(struct.pack("<I", len(raw)) + raw)
        elif isinstance(val, float):
            out.append(struct.pack("<d", val))
        else:
            out.append(struct.pack("<I", int(val)))
    return b"".join(out)


def decode_message(buf: bytes) -> Message:
    (tag,) = struct.unpack_from("<B", buf, 0)
    cls = MESSAGE_TYPES[tag]
    off = 1
    kwargs = {}
    for f in fields(cls):
        if f.type in ("np.ndarray", np.ndarray):
            kwargs[f.name], off = _unpack_vector(buf, off)
        elif f.type in ("str", str):
            (size,) = struct.unpack_from("<I", buf, off)
            off += 4
            kwargs[f.name] = buf[off:off + size].decode("utf-8")
            off += size
        elif f.type in ("float", float):
            (kwargs[f.name],) = struct.unpack_from("<d", buf, off)
            off += 8
        else:
            (kwargs[f.name],) = struct.unpack_from("<I", buf, off)
            off += 4
    return cls(**kwargs)


@dataclass
class CommLedger:
    """Monotone counters of protocol traffic, bucketed by round kind.

    Proper inner rounds carry exactly one broadcast plus n inner reports and
    outer rounds one broadcast plus n delta reports; the per-solve
    initialization round (which re-delivers the start point and collects the
    initial shifted weights) is tracked separately because the protocol's
    per-iteration accounting excludes setup traffic.
    """

    broadcasts: dict = field(default_factory=lambda: {
        RoundKind.INNER_INIT: 0, RoundKind.INNER: 0, RoundKind.OUTER: 0, RoundKind.TERMINATE: 0,
    })
    reports: dict = field(default_factory=lambda: {
        RoundKind.INNER_INIT: 0, RoundKind.INNER: 0, RoundKind.OUTER: 0, RoundKind.TERMINATE: 0,
    })
    scalar_volume: int = 0
    rounds: int = 0

    def record_round(self, kind: str, broadcast: Message, replies: list) -> None:
        live = [r for r in replies if r is not None]
        self.broadcasts[kind] += 1
        self.reports[kind] += len(live)
        self.scalar_volume += broadcast.scalar_volume() + sum(r.scalar_volume() for r in live)
        self.rounds += 1

    def snapshot(self) -> dict:
        return {
            "inner_rounds": self.broadcasts[RoundKind.INNER],
            "inner_reports": self.reports[RoundKind.INNER],
            "outer_rounds": self.broadcasts[RoundKind.OUTER],
            "outer_reports": self.reports[RoundKind.OUTER],
            "init_rounds": self.broadcasts[RoundKind.INNER_INIT],
            "init_reports": self.reports[RoundKind.INNER_INIT],
            "scalar_volume": self.scalar_volume,
            "total_rounds": self.rounds,
        }


class TransportError(RuntimeError):
    """A client handler failed; the round is aborted, ledger kept intact."""


class SimulatedTransport:
    """In-process synchronous round-trip transport over registered clients.

    Handlers may execute concurrently (``max_workers``), but replies are
    always collected in client-index order so reductions are deterministic
    regardless of scheduling. The transport is the only shared-state piece;
    ledger writes happen once per round on the calling thread.
    """

    def __init__(self, max_workers: int | None = None):
        self._handlers: list = []
        self.ledger = CommLedger()
        self.max_workers = max_workers
        self._last_round_ids: list[int] = []

    def register(self, handler) -> int:
        """Add a client handler (callable message -> reply); returns its index."""
        self._handlers.append(handler)
        self._last_round_ids.append(-1)
        return len(self._handlers) - 1

    @property
    def n_clients(self) -> int:
        return len(self._handlers)

    def roundtrip(self, message: Message, kind: str) -> list:
        """Broadcast to every client and collect replies in index order."""
        if not self._handlers:
            raise TransportError("no clients registered")
        try:
            if self.max_workers and self.max_workers > 1:
                from concurrent.futures import ThreadPoolExecutor

                with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                    replies = list(pool.map(lambda h: h(message), self._handlers))
            else:
                replies = [h(message) for h in self._handlers]
        except Exception as exc:
            raise TransportError(f"client handler failed during a {kind} round: {exc}") from exc
        if isinstance(message, BroadcastWeights):
            self._last_round_ids = [message.round_id] * len(self._handlers)
        self.ledger.record_round(kind, message, replies)
        return replies

    def handler(self, index: int):
        return self._handlers[index]

    def last_round_ids(self) -> list[int]:
        return list(self._last_round_ids)
