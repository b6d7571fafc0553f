"""Build Ethernet/IPv4 frames with valid checksums."""

from __future__ import annotations

import ipaddress
import struct

from .packet_codec import ETHERTYPE_IPV4, IPPROTO_ICMP, IPPROTO_TCP, IPPROTO_UDP

DEFAULT_SRC_MAC = bytes.fromhex("020000000001")
DEFAULT_DST_MAC = bytes.fromhex("020000000002")


def inet_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _addr(a) -> bytes:
    return ipaddress.IPv4Address(a).packed


def _ipv4(src, dst, proto: int, body: bytes, ttl: int, ident: int) -> bytes:
    header = struct.pack(
        "!BBHHHBBH4s4s", 0x45, 0, 20 + len(body), ident & 0xFFFF, 0x4000,
        ttl, proto, 0, _addr(src), _addr(dst),
    )
    csum = inet_checksum(header)
    return header[:10] + struct.pack("!H", csum) + header[12:] + body


def _l4_checksum(src, dst, proto: int, segment: bytes) -> int:
    pseudo = _addr(src) + _addr(dst) + struct.pack("!BBH", 0, proto, len(segment))
    return inet_checksum(pseudo + segment)


def ethernet(payload: bytes, *, src_mac: bytes = DEFAULT_SRC_MAC,
             dst_mac: bytes = DEFAULT_DST_MAC, ethertype: int = ETHERTYPE_IPV4) -> bytes:
    return dst_mac + src_mac + struct.pack("!H", ethertype) + payload


def tcp_frame(src, dst, sport: int, dport: int, *, flags: int,
              seq: int = 0, ack: int = 0, payload: bytes = b"", window: int = 65535,
              ttl: int = 64, ident: int = 0, src_mac: bytes = DEFAULT_SRC_MAC,
              dst_mac: bytes = DEFAULT_DST_MAC) -> bytes:
    header = struct.pack("!HHIIBBHHH", sport, dport, seq & 0xFFFFFFFF,
                         ack & 0xFFFFFFFF, 5 << 4, flags, window, 0, 0)
    csum = _l4_checksum(src, dst, IPPROTO_TCP, header + payload)
    segment = header[:16] + struct.pack("!H", csum) + header[18:] + payload
    return ethernet(_ipv4(src, dst, IPPROTO_TCP, segment, ttl, ident),
                    src_mac=src_mac, dst_mac=dst_mac)


def udp_frame(src, dst, sport: int, dport: int, *, payload: bytes = b"",
              ttl: int = 64, ident: int = 0) -> bytes:
    header = struct.pack("!HHHH", sport, dport, 8 + len(payload), 0)
    csum = _l4_checksum(src, dst, IPPROTO_UDP, header + payload) or 0xFFFF
    segment = header[:6] + struct.pack("!H", csum) + payload
    return ethernet(_ipv4(src, dst, IPPROTO_UDP, segment, ttl, ident))


def icmp_frame(src, dst, *, icmp_type: int = 8, code: int = 0,
               payload: bytes = b"", ttl: int = 64, ident: int = 0) -> bytes:
    body = struct.pack("!BBH", icmp_type, code, 0) + payload
    csum = inet_checksum(body)
    body = body[:2] + struct.pack("!H", csum) + body[4:]
    return ethernet(_ipv4(src, dst, IPPROTO_ICMP, body, ttl, ident))
