"""Decode Ethernet frames into antigen: fixed-length, feature-ordered tuples.

Every packet becomes one value per catalog feature. Features whose layer is
absent from the packet hold the ``WILDCARD`` marker; a transport layer with no
data carries an empty payload, not a wildcard.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Iterator, Union

LINKTYPE_ETHERNET = 1

ETHERTYPE_IPV4 = 0x0800
IPPROTO_ICMP = 1
IPPROTO_TCP = 6
IPPROTO_UDP = 17


class DecodeError(ValueError):
    pass


class TruncatedPacket(DecodeError):
    pass


class UnsupportedLinkType(DecodeError):
    pass


class Wildcard(enum.Enum):
    WILDCARD = "*"

    def __repr__(self) -> str:
        return "WILDCARD"


WILDCARD = Wildcard.WILDCARD

FeatureValue = Union[int, bytes, Wildcard]


@dataclass(frozen=True)
class FeatureId:
    id: int
    name: str

    @property
    def layer(self) -> str:
        return self.name.split(".", 1)[0]


# Layer order, then field byte offset within the header. Payloads come last
# within their layer since they follow the header on the wire.
_CATALOG_NAMES = (
    "eth.dst",        # 0
    "eth.src",        # 6
    "eth.type",       # 12
    "ip.tos",         # 1
    "ip.len",         # 2
    "ip.id",          # 4
    "ip.frag",        # 6
    "ip.ttl",         # 8
    "ip.proto",       # 9
    "ip.csum",        # 10
    "ip.src",         # 12
    "ip.dst",         # 16
    "tcp.srcport",    # 0
    "tcp.dstport",    # 2
    "tcp.seq",        # 4
    "tcp.ack",        # 8
    "tcp.flags",      # 13
    "tcp.window",     # 14
    "tcp.csum",       # 16
    "tcp.payload",
    "udp.srcport",    # 0
    "udp.dstport",    # 2
    "udp.len",        # 4
    "udp.csum",       # 6
    "udp.payload",
    "icmp.type",      # 0
    "icmp.code",      # 1
    "icmp.csum",      # 2
)

CATALOG: tuple[FeatureId, ...] = tuple(
    FeatureId(i, name) for i, name in enumerate(_CATALOG_NAMES)
)
FEATURES: dict[str, FeatureId] = {f.name: f for f in CATALOG}

# Flag bits of the TCP flags octet.
TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10
TCP_URG = 0x20
TCP_ECE = 0x40
TCP_CWR = 0x80


def feature_catalog() -> list[FeatureId]:
    return list(CATALOG)


def feature(name: str) -> FeatureId:
    """Look up a catalog feature by dotted name; raises KeyError if unknown."""
    return FEATURES[name]


@dataclass(frozen=True)
class PacketRef:
    index: int
    ts_sec: int
    ts_usec: int

    @property
    def ts(self) -> float:
        return self.ts_sec + self.ts_usec / 1e6


@dataclass(frozen=True)
class PacketRecord:
    index: int
    ts_sec: int
    ts_usec: int
    link_type: int
    data: bytes
    orig_len: int | None = None

    @property
    def ts(self) -> float:
        return self.ts_sec + self.ts_usec / 1e6

    @property
    def ts_micros(self) -> int:
        return self.ts_sec * 1_000_000 + self.ts_usec

    @property
    def ref(self) -> PacketRef:
        return PacketRef(self.index, self.ts_sec, self.ts_usec)


@dataclass(frozen=True)
class Antigen:
    values: tuple[FeatureValue, ...]
    source: PacketRef

    def __post_init__(self) -> None:
        if len(self.values) != len(CATALOG):
            raise ValueError(
                f"antigen needs {len(CATALOG)} values, got {len(self.values)}"
            )

    @property
    def tuples(self) -> tuple[tuple[FeatureId, FeatureValue], ...]:
        return tuple(zip(CATALOG, self.values))

    def __iter__(self) -> Iterator[tuple[FeatureId, FeatureValue]]:
        return iter(self.tuples)

    def __getitem__(self, name: str) -> FeatureValue:
        return self.values[FEATURES[name].id]


def antigen_get(a: Antigen, f: FeatureId | str) -> FeatureValue:
    if isinstance(f, str):
        f = FEATURES[f]
    return a.values[f.id]


_ETH = struct.Struct("!6s6sH")
_IPV4 = struct.Struct("!BBHHHBBH4s4s")
_TCP = struct.Struct("!HHIIBBHHH")
_UDP = struct.Struct("!HHHH")
_ICMP = struct.Struct("!BBH")


def _need(data: bytes, end: int, what: str) -> None:
    if len(data) < end:
        raise TruncatedPacket(f"{what}: need {end} bytes, have {len(data)}")


def decode_packet(rec: PacketRecord) -> Antigen:
    """Decode one captured frame.

    Header lengths are validated against the captured octets; a header that
    does not fit raises ``TruncatedPacket``. Payloads are clipped to what was
    captured and to the IP total length (Ethernet padding is dropped).
    Checksums are extracted verbatim and never verified.
    """
    if rec.link_type != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {rec.link_type}")
    data = rec.data
    v: list[FeatureValue] = [WILDCARD] * len(CATALOG)

    _need(data, _ETH.size, "ethernet header")
    dst_mac, src_mac, ethertype = _ETH.unpack_from(data, 0)
    v[0], v[1], v[2] = dst_mac, src_mac, ethertype
    if ethertype != ETHERTYPE_IPV4:
        return Antigen(tuple(v), rec.ref)

    off = _ETH.size
    _need(data, off + _IPV4.size, "ipv4 header")
    (ver_ihl, tos, total_len, ident, frag, ttl, proto, csum, src, dst) = (
        _IPV4.unpack_from(data, off)
    )
    if ver_ihl >> 4 != 4:
        raise TruncatedPacket(f"ip version {ver_ihl >> 4} in ipv4 ethertype")
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < _IPV4.size:
        raise TruncatedPacket(f"ip header length {ihl} below minimum")
    _need(data, off + ihl, "ipv4 options")
    if total_len < ihl:
        raise TruncatedPacket(f"ip total length {total_len} < header {ihl}")
    v[3:12] = [
        tos, total_len, ident, frag, ttl, proto, csum,
        int.from_bytes(src, "big"), int.from_bytes(dst, "big"),
    ]
    l4 = off + ihl
    end = min(len(data), off + total_len)
    if frag & 0x1FFF:
        # non-first fragment: no transport header to decode
        return Antigen(tuple(v), rec.ref)

    if proto == IPPROTO_TCP:
        _need(data, l4 + _TCP.size, "tcp header")
        sport, dport, seq, ack, doff, flags, win, tcsum, _urg = _TCP.unpack_from(data, l4)
        thl = (doff >> 4) * 4
        if thl < _TCP.size:
            raise TruncatedPacket(f"tcp data offset {thl} below minimum")
        _need(data, l4 + thl, "tcp options")
        payload = data[l4 + thl:end]
        v[12:20] = [sport, dport, seq, ack, flags, win, tcsum,
                    payload]
    elif proto == IPPROTO_UDP:
        _need(data, l4 + _UDP.size, "udp header")
        sport, dport, ulen, ucsum = _UDP.unpack_from(data, l4)
        payload = data[l4 + _UDP.size:end]
        v[20:25] = [sport, dport, ulen, ucsum, payload]
    elif proto == IPPROTO_ICMP:
        _need(data, l4 + _ICMP.size, "icmp header")
        itype, icode, icsum = _ICMP.unpack_from(data, l4)
        v[25:28] = [itype, icode, icsum]
    return Antigen(tuple(v), rec.ref)
