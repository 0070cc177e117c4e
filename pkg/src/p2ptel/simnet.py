"""Deterministic discrete-event core: clock, links, NAT/firewall rules, trace.

Everything in the simulator runs on one event loop.  Timestamps are integer
milliseconds; ties are broken by insertion order, so a scenario replayed with
the same seed produces a byte-identical trace.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

MS = int

# Blocked / refused reasons used in traces.
NO_LISTENER = "no-listener"
UDP_FILTERED = "udp-filtered"
NO_BINDING = "no-binding"
INBOUND_BLOCKED = "inbound-blocked"
OUTBOUND_PORT_BLOCKED = "outbound-port-blocked"
PEER_GONE = "peer-gone"
UPLINK_CAPPED = "uplink-capped"
DOWNLINK_CAPPED = "downlink-capped"

DEFAULT_BINDING_TTL = 30_000


class Transport(str, Enum):
    UDP = "udp"
    TCP = "tcp"


class NatKind(str, Enum):
    PUBLIC = "Public"
    PORT_RESTRICTED_NAT = "PortRestrictedNat"
    NAT_UDP_BLOCKED_FIREWALL = "NatUdpBlockedFirewall"


@dataclass(frozen=True)
class Endpoint:
    node_id: str
    addr: str
    port: int
    transport: Transport


@dataclass
class NatProfile:
    kind: NatKind
    # None means any destination port (only consulted for firewalled nodes).
    allowed_outbound_tcp_ports: Optional[frozenset] = None

    def admits_outbound_tcp(self, port: int) -> bool:
        if self.kind is not NatKind.NAT_UDP_BLOCKED_FIREWALL:
            return True
        if self.allowed_outbound_tcp_ports is None:
            return True
        return port in self.allowed_outbound_tcp_ports


@dataclass
class NatBinding:
    internal_addr: str
    internal_port: int
    external_addr: str
    external_port: int
    peer_addr: str
    peer_port: int
    last_use: MS
    ttl: MS

    def alive(self, now: MS) -> bool:
        return now - self.last_use <= self.ttl


class SimError(Exception):
    pass


class Timer:
    __slots__ = ("time", "seq", "fn", "cancelled")

    def __init__(self, time: MS, seq: int, fn: Callable[[], None]):
        self.time = time
        self.seq = seq
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __lt__(self, other: "Timer") -> bool:
        return (self.time, self.seq) < (other.time, other.seq)


class EventLoop:
    """Priority queue of timed callbacks ordered by (time, insertion seq)."""

    def __init__(self) -> None:
        self.now: MS = 0
        self._heap: list[Timer] = []
        self._seq = itertools.count()
        self.processed = 0

    def schedule(self, at: MS, fn: Callable[[], None]) -> Timer:
        if at < self.now:
            raise SimError(f"cannot schedule event at t={at} before now={self.now}")
        timer = Timer(at, next(self._seq), fn)
        heapq.heappush(self._heap, timer)
        return timer

    def call_later(self, delay: MS, fn: Callable[[], None]) -> Timer:
        return self.schedule(self.now + delay, fn)

    def advance_until(self, t: MS) -> int:
        """Process every event with time <= t, then set now = t.

        Returns the number of events processed by this call.
        """
        if t < self.now:
            raise SimError(f"cannot advance to t={t} before now={self.now}")
        count = 0
        while self._heap and self._heap[0].time <= t:
            timer = heapq.heappop(self._heap)
            if timer.cancelled:
                continue
            self.now = timer.time
            timer.fn()
            count += 1
            self.processed += 1
        self.now = t
        return count


@dataclass
class LinkModel:
    """Per-pair one-way latency plus optional per-node bandwidth caps."""

    default_latency_ms: MS = 20
    pair_latency: dict = field(default_factory=dict)  # (src_id, dst_id) -> ms
    uplink_cap: dict = field(default_factory=dict)    # node_id -> bytes/second
    downlink_cap: dict = field(default_factory=dict)  # node_id -> bytes/second

    def latency(self, src_id: str, dst_id: str) -> MS:
        return self.pair_latency.get((src_id, dst_id), self.default_latency_ms)


@dataclass
class TraceEvent:
    time: MS
    status: str  # DELIVERED | BLOCKED | CONN | CONN_REFUSED
    kind: str
    src_node: str
    src_port: int
    dst_node: str
    dst_port: int
    transport: Transport
    nbytes: int
    reason: Optional[str] = None

    def render(self) -> str:
        tr = self.transport.value
        line = (
            f"t={self.time} {self.status} {self.kind} "
            f"{self.src_node}:{self.src_port}/{tr} -> "
            f"{self.dst_node}:{self.dst_port}/{tr} bytes={self.nbytes}"
        )
        if self.reason:
            line += f" reason={self.reason}"
        return line


class _Bucket:
    """Round-to-nearest per-second byte budget for one link direction."""

    __slots__ = ("cap", "window", "used")

    def __init__(self, cap: int):
        self.cap = cap
        self.window = -1
        self.used = 0

    def admit(self, now: MS, nbytes: int) -> bool:
        w = now // 1000
        if w != self.window:
            self.window = w
            self.used = 0
        if 2 * self.used + nbytes <= 2 * self.cap:
            self.used += nbytes
            return True
        return False

    def next_window(self, now: MS) -> MS:
        return (now // 1000 + 1) * 1000


class NodeState:
    def __init__(self, node_id: str, profile: NatProfile, internal_addr: str,
                 external_addr: str, agent=None):
        self.node_id = node_id
        self.profile = profile
        self.internal_addr = internal_addr
        self.external_addr = external_addr
        self.agent = agent
        self.active = True
        self.listeners: set = set()  # (port, Transport)
        self.bindings: dict = {}     # (internal_port, peer_addr, peer_port) -> NatBinding
        self.bytes_sent = 0
        self.bytes_received = 0

    @property
    def natted(self) -> bool:
        return self.profile.kind is not NatKind.PUBLIC


class Connection:
    """Reliable ordered bidirectional message channel between two nodes."""

    _ids = itertools.count(1)

    def __init__(self, network: "Network", a_id: str, a_port: int, b_id: str, b_port: int):
        self.conn_id = f"c{next(Connection._ids)}"
        self.network = network
        self.a_id = a_id
        self.a_port = a_port
        self.b_id = b_id
        self.b_port = b_port
        self.open = True

    def peer_of(self, node_id: str) -> str:
        return self.b_id if node_id == self.a_id else self.a_id

    def port_of(self, node_id: str) -> int:
        return self.a_port if node_id == self.a_id else self.b_port

    def endpoint_of(self, node_id: str) -> Endpoint:
        node = self.network.nodes[node_id]
        return Endpoint(node_id, node.internal_addr, self.port_of(node_id), Transport.TCP)

    def send(self, msg) -> None:
        self.network._tcp_send(self, msg)

    def close(self, by: Optional[str] = None) -> None:
        self.network._tcp_close(self, by)


class Network:
    """Applies NAT/firewall and bandwidth rules to every message and records the trace."""

    def __init__(self, loop: EventLoop, link: LinkModel, binding_ttl: MS = DEFAULT_BINDING_TTL):
        self.loop = loop
        self.link = link
        self.binding_ttl = binding_ttl
        self.nodes: dict[str, NodeState] = {}
        self.trace: list[TraceEvent] = []
        self._by_internal_addr: dict[str, str] = {}
        self._by_external_addr: dict[str, str] = {}
        self._up_buckets: dict[str, _Bucket] = {}
        self._down_buckets: dict[str, _Bucket] = {}
        self.expired_binding_hits = 0

    # -- topology ---------------------------------------------------------

    def add_node(self, node_id: str, profile: NatProfile, internal_addr: str,
                 external_addr: Optional[str] = None, agent=None) -> NodeState:
        if node_id in self.nodes:
            raise SimError(f"duplicate node id {node_id!r}")
        ext = external_addr or internal_addr
        node = NodeState(node_id, profile, internal_addr, ext, agent)
        self.nodes[node_id] = node
        self._by_internal_addr[internal_addr] = node_id
        self._by_external_addr[ext] = node_id
        up = self.link.uplink_cap.get(node_id)
        down = self.link.downlink_cap.get(node_id)
        if up:
            self._up_buckets[node_id] = _Bucket(up)
        if down:
            self._down_buckets[node_id] = _Bucket(down)
        return node

    def listen(self, node_id: str, port: int, transport: Transport) -> None:
        self.nodes[node_id].listeners.add((port, transport))

    def unlisten_all(self, node_id: str) -> None:
        self.nodes[node_id].listeners.clear()

    def set_active(self, node_id: str, active: bool) -> None:
        self.nodes[node_id].active = active
        if not active:
            self.unlisten_all(node_id)

    def node_of_addr(self, addr: str) -> Optional[NodeState]:
        node_id = self._by_internal_addr.get(addr) or self._by_external_addr.get(addr)
        return self.nodes.get(node_id) if node_id else None

    def udp_endpoint(self, node_id: str, port: int) -> Endpoint:
        node = self.nodes[node_id]
        return Endpoint(node_id, node.internal_addr, port, Transport.UDP)

    # -- trace ------------------------------------------------------------

    def _emit(self, status: str, kind: str, src_node: str, src_port: int,
              dst_node: str, dst_port: int, transport: Transport, nbytes: int,
              reason: Optional[str] = None) -> None:
        self.trace.append(TraceEvent(self.loop.now, status, kind, src_node, src_port,
                                     dst_node, dst_port, transport, nbytes, reason))

    def trace_text(self) -> str:
        return "".join(ev.render() + "\n" for ev in self.trace)

    # -- UDP --------------------------------------------------------------

    def send_udp(self, msg) -> None:
        src = self.nodes.get(msg.src.node_id)
        if src is None:
            raise SimError(f"unknown source node {msg.src.node_id!r}")
        if not src.active:
            return
        kind = str(msg.kind.value)
        if src.node_id in self._up_buckets:
            if not self._up_buckets[src.node_id].admit(self.loop.now, msg.payload_bytes):
                self._emit("BLOCKED", kind, src.node_id, msg.src.port,
                           msg.dst.node_id or msg.dst.addr, msg.dst.port,
                           Transport.UDP, msg.payload_bytes, UPLINK_CAPPED)
                return
        if (src.profile.kind is NatKind.PORT_RESTRICTED_NAT
                and kind != "IcmpMarker"):
            key = (msg.src.port, msg.dst.addr, msg.dst.port)
            binding = src.bindings.get(key)
            if binding is None:
                src.bindings[key] = NatBinding(
                    src.internal_addr, msg.src.port, src.external_addr, msg.src.port,
                    msg.dst.addr, msg.dst.port, self.loop.now, self.binding_ttl)
            else:
                binding.last_use = self.loop.now
        lat = self.link.latency(src.node_id, msg.dst.node_id or msg.dst.addr)
        self.loop.call_later(lat, lambda: self._udp_arrive(msg, src))

    def _udp_arrive(self, msg, src: NodeState) -> None:
        kind = str(msg.kind.value)
        dst = self.node_of_addr(msg.dst.addr)
        dst_name = dst.node_id if dst else msg.dst.addr
        src_port = msg.src.port

        def blocked(reason: str) -> None:
            self._emit("BLOCKED", kind, src.node_id, src_port, dst_name,
                       msg.dst.port, Transport.UDP, msg.payload_bytes, reason)

        if dst is None or not dst.active or (msg.dst.port, Transport.UDP) not in dst.listeners:
            blocked(NO_LISTENER)
            return
        observed = (src.external_addr, src_port)
        if kind != "IcmpMarker":  # ICMP markers are trace-only, exempt from UDP rules
            if dst.profile.kind is NatKind.NAT_UDP_BLOCKED_FIREWALL:
                blocked(UDP_FILTERED)
                return
            if dst.profile.kind is NatKind.PORT_RESTRICTED_NAT:
                binding = dst.bindings.get((msg.dst.port, observed[0], observed[1]))
                if binding is None:
                    blocked(NO_BINDING)
                    return
                if not binding.alive(self.loop.now):
                    self.expired_binding_hits += 1
                    blocked(NO_BINDING)
                    return
        if dst.node_id in self._down_buckets:
            if not self._down_buckets[dst.node_id].admit(self.loop.now, msg.payload_bytes):
                blocked(DOWNLINK_CAPPED)
                return
        msg.observed_src = observed
        self._emit("DELIVERED", kind, src.node_id, src_port, dst.node_id,
                   msg.dst.port, Transport.UDP, msg.payload_bytes)
        src.bytes_sent += msg.payload_bytes
        dst.bytes_received += msg.payload_bytes
        if dst.agent is not None:
            dst.agent.on_udp(msg)

    # -- TCP --------------------------------------------------------------

    def tcp_connect(self, src_id: str, src_port: int, dst_addr: str, dst_port: int,
                    callback: Callable[[Optional[Connection], Optional[str]], None]) -> None:
        src = self.nodes[src_id]
        if not src.active:
            return
        if not src.profile.admits_outbound_tcp(dst_port):
            # Refused locally: the packet never leaves the host.
            dst = self.node_of_addr(dst_addr)
            self._emit("CONN_REFUSED", "syn", src_id, src_port,
                       dst.node_id if dst else dst_addr, dst_port,
                       Transport.TCP, 0, OUTBOUND_PORT_BLOCKED)
            self.loop.call_later(0, lambda: callback(None, OUTBOUND_PORT_BLOCKED))
            return
        lat = self.link.latency(src_id, dst_addr)
        self.loop.call_later(lat, lambda: self._tcp_syn(src, src_port, dst_addr, dst_port,
                                                        callback, lat))

    def _tcp_syn(self, src: NodeState, src_port: int, dst_addr: str, dst_port: int,
                 callback, lat: MS) -> None:
        dst = self.node_of_addr(dst_addr)
        dst_name = dst.node_id if dst else dst_addr

        def refuse(reason: str) -> None:
            self._emit("CONN_REFUSED", "syn", src.node_id, src_port, dst_name,
                       dst_port, Transport.TCP, 0, reason)
            self.loop.call_later(lat, lambda: callback(None, reason))

        if dst is None or not dst.active or (dst_port, Transport.TCP) not in dst.listeners:
            refuse(NO_LISTENER)
            return
        if dst.profile.kind is not NatKind.PUBLIC:
            refuse(INBOUND_BLOCKED)
            return
        self._emit("CONN", "syn", src.node_id, src_port, dst.node_id, dst_port,
                   Transport.TCP, 0)
        conn = Connection(self, src.node_id, src_port, dst.node_id, dst_port)
        if dst.agent is not None:
            dst.agent.on_conn_open(conn)

        def acked() -> None:
            self._emit("CONN", "ack", dst.node_id, dst_port, src.node_id, src_port,
                       Transport.TCP, 0)
            callback(conn, None)

        self.loop.call_later(lat, acked)

    def _tcp_send(self, conn: Connection, msg) -> None:
        if not conn.open:
            return
        src = self.nodes[msg.src.node_id]
        if not src.active:
            return
        if src.node_id in self._up_buckets:
            bucket = self._up_buckets[src.node_id]
            if not bucket.admit(self.loop.now, msg.payload_bytes):
                # TCP queues rather than drops: retry at the next window.
                delay = bucket.next_window(self.loop.now) - self.loop.now
                self.loop.call_later(delay, lambda: self._tcp_send(conn, msg))
                return
        lat = self.link.latency(msg.src.node_id, conn.peer_of(msg.src.node_id))
        self.loop.call_later(lat, lambda: self._tcp_arrive(conn, msg))

    def _tcp_arrive(self, conn: Connection, msg) -> None:
        if not conn.open:
            return
        kind = str(msg.kind.value)
        src_id = msg.src.node_id
        dst_id = conn.peer_of(src_id)
        src = self.nodes[src_id]
        dst = self.nodes[dst_id]
        if not dst.active:
            self._emit("BLOCKED", kind, src_id, conn.port_of(src_id), dst_id,
                       conn.port_of(dst_id), Transport.TCP, msg.payload_bytes, PEER_GONE)
            conn.open = False
            if src.agent is not None:
                lat = self.link.latency(dst_id, src_id)
                self.loop.call_later(lat, lambda: src.agent.on_conn_closed(conn))
            return
        if dst_id in self._down_buckets:
            bucket = self._down_buckets[dst_id]
            if not bucket.admit(self.loop.now, msg.payload_bytes):
                delay = bucket.next_window(self.loop.now) - self.loop.now
                self.loop.call_later(delay, lambda: self._tcp_arrive(conn, msg))
                return
        self._emit("DELIVERED", kind, src_id, conn.port_of(src_id), dst_id,
                   conn.port_of(dst_id), Transport.TCP, msg.payload_bytes)
        src.bytes_sent += msg.payload_bytes
        dst.bytes_received += msg.payload_bytes
        if dst.agent is not None:
            dst.agent.on_conn_message(conn, msg)

    def _tcp_close(self, conn: Connection, by: Optional[str] = None) -> None:
        if not conn.open:
            return
        conn.open = False
        for node_id in (conn.a_id, conn.b_id):
            if node_id == by:
                continue
            node = self.nodes[node_id]
            if node.active and node.agent is not None:
                peer = conn.peer_of(node_id)
                lat = self.link.latency(peer, node_id)
                agent = node.agent
                self.loop.call_later(lat, lambda a=agent: a.on_conn_closed(conn))

    # -- accounting -------------------------------------------------------

    def delivered_byte_sums(self) -> dict[str, tuple[int, int]]:
        """Per-node (sent, received) payload sums recomputed from the trace."""
        sums: dict[str, list[int]] = {node_id: [0, 0] for node_id in self.nodes}
        for ev in self.trace:
            if ev.status != "DELIVERED":
                continue
            if ev.src_node in sums:
                sums[ev.src_node][0] += ev.nbytes
            if ev.dst_node in sums:
                sums[ev.dst_node][1] += ev.nbytes
        return {k: (v[0], v[1]) for k, v in sums.items()}
