"""Protocol message catalog and payload size table.

Payload sizes are what the traffic accounting sums; the defaults below are
calibrated so that a public first login exchanges 9000 bytes in total, a
firewalled one 8507 and a NAT'd one 9770 (the NAT case adds a 22-node
confirmation probe round).  The calibrated table is pinned by a golden test.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .simnet import Endpoint, Transport

MEDIA_FRAME_UDP = 67
MEDIA_FRAME_TCP = 69


class MessageKind(str, Enum):
    UDP_PROBE = "UdpProbe"
    UDP_PROBE_REPLY = "UdpProbeReply"
    PRESENCE_ADVERT = "PresenceAdvert"
    HANDSHAKE_CHALLENGE = "HandshakeChallenge"
    HANDSHAKE_RESPONSE = "HandshakeResponse"
    AUTH_REQUEST = "AuthRequest"
    AUTH_OK = "AuthOk"
    AUTH_FAIL = "AuthFail"
    SEARCH_QUERY = "SearchQuery"
    SEARCH_CANDIDATES = "SearchCandidates"
    SEARCH_RESULT = "SearchResult"
    SEARCH_MISS = "SearchMiss"
    CALL_INVITE = "CallInvite"
    CALL_ACCEPT = "CallAccept"
    CALL_REJECT = "CallReject"
    CALL_CANCEL = "CallCancel"
    CALL_TEARDOWN = "CallTeardown"
    RELAY_BIND = "RelayBind"
    RELAY_DATA = "RelayData"
    MEDIA_FRAME = "MediaFrame"
    KEEP_ALIVE = "KeepAlive"
    HOLD_PING = "HoldPing"
    VERSION_CHECK_REQUEST = "VersionCheckRequest"
    VERSION_CHECK_RESPONSE = "VersionCheckResponse"
    ICMP_MARKER = "IcmpMarker"


DEFAULT_SIZES: dict[MessageKind, int] = {
    MessageKind.UDP_PROBE: 18,
    MessageKind.UDP_PROBE_REPLY: 17,
    MessageKind.PRESENCE_ADVERT: 32,
    MessageKind.HANDSHAKE_CHALLENGE: 14,
    MessageKind.HANDSHAKE_RESPONSE: 2904,
    MessageKind.AUTH_REQUEST: 321,
    MessageKind.AUTH_OK: 1408,
    MessageKind.AUTH_FAIL: 16,
    MessageKind.SEARCH_QUERY: 42,
    MessageKind.SEARCH_CANDIDATES: 60,
    MessageKind.SEARCH_RESULT: 60,
    MessageKind.SEARCH_MISS: 12,
    MessageKind.CALL_INVITE: 64,
    MessageKind.CALL_ACCEPT: 32,
    MessageKind.CALL_REJECT: 32,
    MessageKind.CALL_CANCEL: 32,
    MessageKind.CALL_TEARDOWN: 24,
    MessageKind.RELAY_BIND: 28,
    MessageKind.RELAY_DATA: 11,
    MessageKind.MEDIA_FRAME: MEDIA_FRAME_UDP,
    MessageKind.KEEP_ALIVE: 8,
    MessageKind.HOLD_PING: 6,
    MessageKind.VERSION_CHECK_REQUEST: 64,
    MessageKind.VERSION_CHECK_RESPONSE: 128,
    MessageKind.ICMP_MARKER: 28,
}


class SizeTableError(ValueError):
    pass


@dataclass
class SizeTable:
    """Scenario-overridable map of message kind to default payload bytes."""

    overrides: dict = field(default_factory=dict)

    def set(self, kind: MessageKind, nbytes: int) -> None:
        if nbytes < 1:
            raise SizeTableError(f"payload for {kind.value} must be >= 1, got {nbytes}")
        self.overrides[kind] = nbytes

    def sized(self, kind: MessageKind, transport: Transport = Transport.UDP) -> int:
        if kind in self.overrides:
            return self.overrides[kind]
        if kind is MessageKind.MEDIA_FRAME:
            return MEDIA_FRAME_UDP if transport is Transport.UDP else MEDIA_FRAME_TCP
        return DEFAULT_SIZES[kind]

    def serialize(self) -> str:
        lines = [f"kind={k.value} bytes={v}" for k, v in sorted(
            self.overrides.items(), key=lambda kv: kv[0].value)]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def parse(cls, text: str) -> "SizeTable":
        table = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                kind_part, bytes_part = line.split()
                kind = MessageKind(kind_part.removeprefix("kind="))
                nbytes = int(bytes_part.removeprefix("bytes="))
            except (ValueError, KeyError) as exc:
                raise SizeTableError(f"line {lineno}: bad size entry {raw!r}") from exc
            table.set(kind, nbytes)
        return table


@dataclass
class Message:
    kind: MessageKind
    src: Endpoint
    dst: Endpoint
    payload_bytes: int
    correlation: str = ""
    body: dict = field(default_factory=dict)
    # Filled in at delivery: the (addr, port) the receiver saw, i.e. the
    # sender's NAT-translated address when it sits behind one.
    observed_src: Optional[tuple] = None


def make_message(kind: MessageKind, src: Endpoint, dst: Endpoint, sizes: SizeTable,
                 body: Optional[dict] = None, correlation: str = "",
                 payload_bytes: Optional[int] = None) -> Message:
    nbytes = payload_bytes if payload_bytes is not None else sizes.sized(kind, src.transport)
    return Message(kind, src, dst, nbytes, correlation, body or {})


def probe_reply_body(observed_src: tuple) -> dict:
    """Report back the (addr, port) a probe appeared to come from.

    Comparing the report with the prober's own local address is how a client
    classifies its network posture (the simulator's stand-in for STUN).
    """
    addr, port = observed_src
    return {"observed_addr": addr, "observed_port": port}
