"""Classic pcap reading/writing and time-delta trace merging."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .packet_codec import LINKTYPE_ETHERNET, PacketRecord

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
DEFAULT_SNAPLEN = 65535

_GLOBAL = "IHHiIII"
_RECORD = "IIII"


class PcapError(ValueError):
    pass


class BadMagic(PcapError):
    pass


class TruncatedFile(PcapError):
    pass


class EmptyTrace(ValueError):
    pass


@dataclass
class Trace:
    link_type: int = LINKTYPE_ETHERNET
    records: list[PacketRecord] = field(default_factory=list)
    snaplen: int = DEFAULT_SNAPLEN

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def is_ordered(self) -> bool:
        ts = [r.ts_micros for r in self.records]
        return all(a <= b for a, b in zip(ts, ts[1:]))


def parse_pcap(data: bytes) -> Trace:
    if len(data) < 24:
        raise TruncatedFile(f"global header needs 24 bytes, have {len(data)}")
    (magic,) = struct.unpack_from("<I", data, 0)
    if magic == PCAP_MAGIC:
        endian = "<"
    elif magic == PCAP_MAGIC_SWAPPED:
        endian = ">"
    else:
        raise BadMagic(f"magic 0x{magic:08x}")
    _, _vmaj, _vmin, _zone, _sigfigs, snaplen, linktype = struct.unpack_from(
        endian + _GLOBAL, data, 0)
    rec_fmt = struct.Struct(endian + _RECORD)
    records = []
    off = 24
    n = len(data)
    while off < n:
        if off + 16 > n:
            raise TruncatedFile(f"record {len(records)}: header cut short")
        sec, usec, incl, orig = rec_fmt.unpack_from(data, off)
        off += 16
        if off + incl > n:
            raise TruncatedFile(f"record {len(records)}: need {incl} bytes, have {n - off}")
        records.append(PacketRecord(len(records), sec, usec, linktype,
                                    bytes(data[off:off + incl]), orig))
        off += incl
    return Trace(linktype, records, snaplen)


def read_pcap(path: str | Path) -> Trace:
    return parse_pcap(Path(path).read_bytes())


def pcap_bytes(t: Trace) -> bytes:
    out = [struct.pack("<" + _GLOBAL, PCAP_MAGIC, 2, 4, 0, 0, t.snaplen, t.link_type)]
    for r in t.records:
        orig = r.orig_len if r.orig_len is not None else len(r.data)
        out.append(struct.pack("<" + _RECORD, r.ts_sec, r.ts_usec, len(r.data), orig))
        out.append(r.data)
    return b"".join(out)


def write_pcap(path: str | Path, t: Trace) -> None:
    Path(path).write_bytes(pcap_bytes(t))


def _shift(r: PacketRecord, delta_us: int, index: int) -> PacketRecord:
    t = r.ts_micros + delta_us
    if t < 0:
        raise ValueError("shift moves a packet before the epoch")
    return replace(r, index=index, ts_sec=t // 1_000_000, ts_usec=t % 1_000_000)


def merge_with_origin(base: Trace, attack: Trace) -> tuple[Trace, list[tuple[int, int]]]:
    """Merge two traces with their first packets aligned.

    Returns the merged trace and, for each output record, ``(source, index)``
    where source is 0 for ``base`` and 1 for ``attack``.
    """
    if not base.records or not attack.records:
        raise EmptyTrace("both traces need at least one packet")
    if base.link_type != attack.link_type:
        raise ValueError(f"link types differ: {base.link_type} vs {attack.link_type}")
    delta = base.records[0].ts_micros - attack.records[0].ts_micros
    keyed = [(r.ts_micros, 0, r.index, r) for r in base.records]
    keyed += [(r.ts_micros + delta, 1, r.index, r) for r in attack.records]
    keyed.sort(key=lambda k: k[:3])
    records, origin = [], []
    for i, (_, src, idx, r) in enumerate(keyed):
        records.append(_shift(r, delta if src else 0, i))
        origin.append((src, idx))
    return Trace(base.link_type, records, max(base.snaplen, attack.snaplen)), origin


def merge_traces(base: Trace, attack: Trace) -> Trace:
    return merge_with_origin(base, attack)[0]


def remap_labels(labels: Iterable[int], origin: list[tuple[int, int]],
                 source: int = 1) -> list[int]:
    """Translate packet indices of one input trace into merged-trace indices."""
    where = {idx: i for i, (src, idx) in enumerate(origin) if src == source}
    return sorted(where[l] for l in labels)


def read_labels(path: str | Path) -> list[int]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(int(line))
    return out


def write_labels(path: str | Path, labels: Iterable[int]) -> None:
    Path(path).write_text("".join(f"{i}\n" for i in labels), encoding="utf-8")
