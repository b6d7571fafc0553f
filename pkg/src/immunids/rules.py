"""Snort-subset signatures split into independently evaluable criteria.

A signature is a list of criteria. Header constraints (protocol, addresses,
ports) contribute one criterion each unless they are ``any``; each body option
group (``flow``, ``content`` with its ``depth``/``offset``/``nocase``
modifiers, ``dsize``, ``flags``) contributes one more. Partial matching simply
counts how many criteria hold for a packet.
"""

from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import TYPE_CHECKING, ClassVar, Iterable, Mapping

from .packet_codec import (
    IPPROTO_ICMP,
    IPPROTO_TCP,
    IPPROTO_UDP,
    TCP_ACK,
    WILDCARD,
    Antigen,
    FEATURES,
)

if TYPE_CHECKING:
    from .attack_graph import GraphDef


class RuleError(ValueError):
    pass


class RuleSyntaxError(RuleError):
    def __init__(self, msg: str, line: int | None = None, column: int | None = None):
        self.msg = msg
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + msg)


class UnknownOption(RuleSyntaxError):
    pass


class UnknownVariable(RuleError):
    pass


class AmbiguousMapping(RuleError):
    pass


# --------------------------------------------------------------------------
# address and port sets

_ANY = ("any",)


class NetVars:
    """Named address/port variables with compiled-matcher caching.

    ``HOME_NET`` and ``EXTERNAL_NET`` default to ``any`` when undefined.
    """

    DEFAULTS = {"HOME_NET": "any", "EXTERNAL_NET": "any"}

    def __init__(self, values: Mapping[str, str] | None = None):
        self._values = dict(values or {})
        self._addr_cache: dict[str, tuple] = {}
        self._port_cache: dict[str, tuple] = {}

    def __getitem__(self, name: str) -> str:
        if name in self._values:
            return self._values[name]
        if name in self.DEFAULTS:
            return self.DEFAULTS[name]
        raise UnknownVariable(f"undefined variable ${name}")

    def __contains__(self, name: str) -> bool:
        return name in self._values or name in self.DEFAULTS

    def items(self):
        return self._values.items()

    def __eq__(self, other) -> bool:
        return isinstance(other, NetVars) and self._values == other._values

    def __repr__(self) -> str:
        return f"NetVars({self._values!r})"

    def addresses(self, spec: str) -> tuple:
        m = self._addr_cache.get(spec)
        if m is None:
            m = _compile(spec, self, _addr_atom, set())
            self._addr_cache[spec] = m
        return m

    def ports(self, spec: str) -> tuple:
        m = self._port_cache.get(spec)
        if m is None:
            m = _compile(spec, self, _port_atom, set())
            self._port_cache[spec] = m
        return m


def _as_netvars(nv) -> NetVars:
    if isinstance(nv, NetVars):
        return nv
    return NetVars(nv)


def _split_list(body: str) -> list[str]:
    items, depth, cur = [], 0, []
    for ch in body:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            items.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    items.append("".join(cur).strip())
    return [i for i in items if i]


def _compile(spec: str, nv: NetVars, atom, seen: set) -> tuple:
    spec = spec.strip()
    if not spec:
        raise RuleError("empty address or port value")
    if spec == "any":
        return _ANY
    if spec.startswith("!"):
        return ("not", _compile(spec[1:], nv, atom, seen))
    if spec.startswith("$"):
        name = spec[1:]
        if name in seen:
            raise RuleError(f"recursive variable ${name}")
        return _compile(nv[name], nv, atom, seen | {name})
    if spec.startswith("["):
        if not spec.endswith("]"):
            raise RuleError(f"unbalanced list {spec!r}")
        pos, neg = [], []
        for item in _split_list(spec[1:-1]):
            m = _compile(item, nv, atom, seen)
            (neg if m[0] == "not" else pos).append(m)
        return ("list", tuple(pos), tuple(n[1] for n in neg))
    return atom(spec)


def _addr_atom(spec: str) -> tuple:
    try:
        net = ipaddress.IPv4Network(spec, strict=False)
    except ValueError as exc:
        raise RuleError(f"bad address {spec!r}") from exc
    return ("net", int(net.network_address), int(net.netmask))


def _port_atom(spec: str) -> tuple:
    try:
        if ":" in spec:
            lo_s, hi_s = spec.split(":", 1)
            lo = int(lo_s) if lo_s else 0
            hi = int(hi_s) if hi_s else 65535
        else:
            lo = hi = int(spec)
    except ValueError as exc:
        raise RuleError(f"bad port {spec!r}") from exc
    if not (0 <= lo <= hi <= 65535):
        raise RuleError(f"bad port range {spec!r}")
    return ("range", lo, hi)


def _member(m: tuple, x: int) -> bool:
    tag = m[0]
    if tag == "any":
        return True
    if tag == "net":
        return x & m[2] == m[1]
    if tag == "range":
        return m[1] <= x <= m[2]
    if tag == "not":
        return not _member(m[1], x)
    # list: any positive (or no positives at all), and no negative
    _, pos, neg = m
    if pos and not any(_member(p, x) for p in pos):
        return False
    return not any(_member(n, x) for n in neg)


# --------------------------------------------------------------------------
# criteria


def _payload(a: Antigen):
    v = a.values
    p = v[_TCP_PAYLOAD]
    if p is WILDCARD:
        p = v[_UDP_PAYLOAD]
    return p


_IP_PROTO = FEATURES["ip.proto"].id
_IP_SRC = FEATURES["ip.src"].id
_IP_DST = FEATURES["ip.dst"].id
_TCP_SPORT = FEATURES["tcp.srcport"].id
_TCP_DPORT = FEATURES["tcp.dstport"].id
_TCP_FLAGS = FEATURES["tcp.flags"].id
_TCP_PAYLOAD = FEATURES["tcp.payload"].id
_UDP_SPORT = FEATURES["udp.srcport"].id
_UDP_DPORT = FEATURES["udp.dstport"].id
_UDP_PAYLOAD = FEATURES["udp.payload"].id

PROTOCOLS = {"tcp": IPPROTO_TCP, "udp": IPPROTO_UDP, "icmp": IPPROTO_ICMP}


@dataclass(frozen=True)
class Criterion:
    kind: ClassVar[str] = "?"
    header: ClassVar[bool] = False

    def evaluate(self, a: Antigen, nv: NetVars) -> bool:
        raise NotImplementedError


@dataclass(frozen=True)
class Proto(Criterion):
    proto: str
    kind: ClassVar[str] = "Proto"
    header: ClassVar[bool] = True

    def evaluate(self, a, nv):
        return a.values[_IP_PROTO] == PROTOCOLS[self.proto]


@dataclass(frozen=True)
class SrcNet(Criterion):
    spec: str
    kind: ClassVar[str] = "SrcNet"
    header: ClassVar[bool] = True

    def evaluate(self, a, nv):
        ip = a.values[_IP_SRC]
        return ip is not WILDCARD and _member(nv.addresses(self.spec), ip)


@dataclass(frozen=True)
class DstNet(Criterion):
    spec: str
    kind: ClassVar[str] = "DstNet"
    header: ClassVar[bool] = True

    def evaluate(self, a, nv):
        ip = a.values[_IP_DST]
        return ip is not WILDCARD and _member(nv.addresses(self.spec), ip)


def _port(a: Antigen, tcp_idx: int, udp_idx: int):
    p = a.values[tcp_idx]
    if p is WILDCARD:
        p = a.values[udp_idx]
    return p


@dataclass(frozen=True)
class SrcPort(Criterion):
    spec: str
    kind: ClassVar[str] = "SrcPort"
    header: ClassVar[bool] = True

    def evaluate(self, a, nv):
        p = _port(a, _TCP_SPORT, _UDP_SPORT)
        return p is not WILDCARD and _member(nv.ports(self.spec), p)


@dataclass(frozen=True)
class DstPort(Criterion):
    spec: str
    kind: ClassVar[str] = "DstPort"
    header: ClassVar[bool] = True

    def evaluate(self, a, nv):
        p = _port(a, _TCP_DPORT, _UDP_DPORT)
        return p is not WILDCARD and _member(nv.ports(self.spec), p)


FLOW_DIRECTIONS = {"to_server": True, "from_client": True,
                   "to_client": False, "from_server": False}
FLOW_STATES = {"established", "not_established", "stateless"}


@dataclass(frozen=True)
class Flow(Criterion):
    """Direction and state approximated from single TCP segments.

    ``to_server`` checks the destination port against the rule's destination
    port side (``to_client`` the source port against the source side);
    ``established`` requires ACK. ``server_ports`` is copied from the header.
    """

    options: tuple[str, ...]
    server_ports: str = "any"
    kind: ClassVar[str] = "Flow"

    def evaluate(self, a, nv):
        v = a.values
        flags = v[_TCP_FLAGS]
        if flags is WILDCARD:
            return False
        for opt in self.options:
            if opt in FLOW_DIRECTIONS:
                port = v[_TCP_DPORT] if FLOW_DIRECTIONS[opt] else v[_TCP_SPORT]
                if not _member(nv.ports(self.server_ports), port):
                    return False
            elif opt == "established":
                if not flags & TCP_ACK:
                    return False
            elif opt == "not_established":
                if flags & TCP_ACK:
                    return False
        return True


@dataclass(frozen=True)
class Content(Criterion):
    pattern: bytes
    depth: int | None = None
    offset: int | None = None
    nocase: bool = False
    negated: bool = False
    kind: ClassVar[str] = "Content"

    def __post_init__(self):
        if not self.pattern:
            raise RuleError("content pattern is empty")
        if self.depth is not None and self.depth < len(self.pattern):
            raise RuleError(
                f"depth {self.depth} shorter than pattern ({len(self.pattern)} bytes)"
            )
        if self.nocase:
            object.__setattr__(self, "_needle", self.pattern.lower())
        else:
            object.__setattr__(self, "_needle", self.pattern)

    def evaluate(self, a, nv):
        payload = _payload(a)
        if payload is WILDCARD:
            return False
        start = self.offset or 0
        window = payload[start:start + self.depth] if self.depth else payload[start:]
        if self.nocase:
            window = window.lower()
        return (self._needle in window) != self.negated


@dataclass(frozen=True)
class Dsize(Criterion):
    op: str  # one of "=", "<", ">", "<>"
    lo: int
    hi: int | None = None
    kind: ClassVar[str] = "Dsize"

    def evaluate(self, a, nv):
        payload = _payload(a)
        if payload is WILDCARD:
            return False
        n = len(payload)
        if self.op == "<":
            return n < self.lo
        if self.op == ">":
            return n > self.lo
        if self.op == "<>":
            return self.lo <= n <= self.hi
        return n == self.lo


FLAG_BITS = {"F": 0x01, "S": 0x02, "R": 0x04, "P": 0x08, "A": 0x10,
             "U": 0x20, "E": 0x40, "2": 0x40, "C": 0x80, "1": 0x80, "0": 0}


@dataclass(frozen=True)
class Flags(Criterion):
    want: int
    modifier: str = ""  # "", "+", "*" or "!"
    ignore: int = 0
    kind: ClassVar[str] = "Flags"

    def evaluate(self, a, nv):
        flags = a.values[_TCP_FLAGS]
        if flags is WILDCARD:
            return False
        flags &= ~self.ignore & 0xFF
        if self.modifier == "+":
            return flags & self.want == self.want
        if self.modifier == "*":
            return bool(flags & self.want)
        if self.modifier == "!":
            return not flags & self.want
        return flags == self.want


def eval_criterion(c: Criterion, a: Antigen, net_vars=None) -> bool:
    return c.evaluate(a, _as_netvars(net_vars))


# --------------------------------------------------------------------------
# signatures


@dataclass(frozen=True)
class Signature:
    sid: int
    msg: str
    criteria: tuple[Criterion, ...]
    refs: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.criteria:
            raise RuleError(f"sid {self.sid} has no criteria")

    @property
    def proto(self) -> str:
        for c in self.criteria:
            if isinstance(c, Proto):
                return c.proto
        return "ip"

    def header_spec(self, cls) -> str:
        for c in self.criteria:
            if isinstance(c, cls):
                return c.spec
        return "any"


def match_full(s: Signature, a: Antigen, net_vars=None) -> bool:
    nv = _as_netvars(net_vars)
    return all(c.evaluate(a, nv) for c in s.criteria)


def matched_criteria(s: Signature, a: Antigen, net_vars=None) -> int:
    nv = _as_netvars(net_vars)
    return sum(1 for c in s.criteria if c.evaluate(a, nv))


def partial_score(s: Signature, a: Antigen, net_vars=None) -> Fraction:
    """Fraction of the signature's criteria that hold for ``a``."""
    return Fraction(matched_criteria(s, a, net_vars), len(s.criteria))


# --------------------------------------------------------------------------
# parsing

IGNORED_OPTIONS = {"rev", "classtype", "priority", "metadata", "gid"}
_HEX_PAIR = re.compile(r"[0-9A-Fa-f]{2}")


def _split_options(body: str, base_col: int, line: int | None):
    """Yield (key, value, column) for each ';'-terminated option in ``body``."""
    start = 0
    i = 0
    in_quote = False
    n = len(body)
    while i < n:
        ch = body[i]
        if ch == "\\" and in_quote:
            i += 2
            continue
        if ch == '"':
            in_quote = not in_quote
        elif ch == ";" and not in_quote:
            yield _option(body[start:i], base_col + start, line)
            start = i + 1
        i += 1
    if in_quote:
        raise RuleSyntaxError("unterminated quoted string", line, base_col + start)
    if body[start:].strip():
        yield _option(body[start:], base_col + start, line)


def _option(text: str, col: int, line: int | None):
    lead = len(text) - len(text.lstrip())
    text = text.strip()
    if ":" in text:
        key, value = text.split(":", 1)
        return key.strip().lower(), value.strip(), col + lead
    return text.lower(), None, col + lead


def _unquote(value: str | None, what: str, line, col) -> str:
    if value is None or len(value) < 2 or value[0] != '"' or value[-1] != '"':
        raise RuleSyntaxError(f"{what} needs a quoted string", line, col)
    return value[1:-1]


def parse_content(text: str) -> bytes:
    """Decode a content string with ``|hex|`` blocks and backslash escapes."""
    out = bytearray()
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "|":
            j = text.find("|", i + 1)
            if j < 0:
                raise RuleError("unterminated hex block in content")
            digits = text[i + 1:j].replace(" ", "")
            if len(digits) % 2 or not all(_HEX_PAIR.fullmatch(digits[k:k + 2])
                                          for k in range(0, len(digits), 2)):
                raise RuleError(f"bad hex block |{text[i + 1:j]}|")
            out += bytes.fromhex(digits)
            i = j + 1
        elif ch == "\\":
            if i + 1 >= n:
                raise RuleError("dangling escape in content")
            out += text[i + 1].encode("latin-1")
            i += 2
        else:
            out += ch.encode("latin-1")
            i += 1
    return bytes(out)


def _int_value(key, value, line, col) -> int:
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise RuleSyntaxError(f"{key} needs an integer", line, col) from None
    if n < 0:
        raise RuleSyntaxError(f"{key} must be non-negative", line, col)
    return n


def _parse_dsize(value: str, line, col) -> Dsize:
    v = (value or "").replace(" ", "")
    try:
        if "<>" in v:
            lo, hi = v.split("<>")
            return Dsize("<>", int(lo), int(hi))
        if v.startswith("<"):
            return Dsize("<", int(v[1:]))
        if v.startswith(">"):
            return Dsize(">", int(v[1:]))
        return Dsize("=", int(v))
    except ValueError:
        raise RuleSyntaxError(f"bad dsize {value!r}", line, col) from None


def _parse_flags(value: str, line, col) -> Flags:
    v = (value or "").replace(" ", "")
    spec, _, mask = v.partition(",")
    modifier = ""
    for m in "+*!":
        if spec.startswith(m) or spec.endswith(m):
            modifier = m
            spec = spec.strip(m)
            break
    if not spec:
        raise RuleSyntaxError("flags needs at least one flag", line, col)
    want = ignore = 0
    try:
        for ch in spec.upper():
            want |= FLAG_BITS[ch]
        for ch in mask.upper():
            ignore |= FLAG_BITS[ch]
    except KeyError as exc:
        raise RuleSyntaxError(f"unknown tcp flag {exc.args[0]!r}", line, col) from None
    return Flags(want, modifier, ignore)


def _norm_ref(value: str) -> str:
    scheme, _, ident = value.partition(",")
    return f"{scheme.strip().upper()}-{ident.strip().upper()}"


def parse_rule(text: str, line: int | None = None) -> Signature:
    """Parse one rule line into a :class:`Signature`.

    Raises ``RuleSyntaxError`` (with line and 1-based column) for malformed
    rules and its subclass ``UnknownOption`` for unsupported keywords.
    """
    raw = text.rstrip("\n")
    lead = len(raw) - len(raw.lstrip())
    stripped = raw.strip()
    open_at = stripped.find("(")
    if open_at < 0 or not stripped.endswith(")"):
        raise RuleSyntaxError("rule needs a parenthesised option list", line, lead + 1)
    header = stripped[:open_at].split()
    if len(header) != 7:
        raise RuleSyntaxError(
            f"header needs 7 fields, found {len(header)}", line, lead + 1)
    action, proto, src, sport, direction, dst, dport = header

    def col_of(i):
        return lead + 1 + _token_col(stripped, i)

    if action != "alert":
        raise RuleSyntaxError(f"unsupported action {action!r}", line, col_of(0))
    if proto not in PROTOCOLS:
        raise RuleSyntaxError(f"unsupported protocol {proto!r}", line, col_of(1))
    if direction != "->":
        raise RuleSyntaxError(f"unsupported direction {direction!r}", line, col_of(4))

    criteria: list[Criterion] = [Proto(proto)]
    if src != "any":
        criteria.append(SrcNet(src))
    if dst != "any":
        criteria.append(DstNet(dst))
    if sport != "any":
        criteria.append(SrcPort(sport))
    if dport != "any":
        criteria.append(DstPort(dport))

    sid = None
    msg = ""
    refs: list[str] = []
    body_col = lead + open_at + 2
    last_content: dict | None = None
    body: list = []

    for key, value, col in _split_options(stripped[open_at + 1:-1], body_col, line):
        if key == "msg":
            msg = _unquote(value, "msg", line, col)
        elif key == "sid":
            sid = _int_value(key, value, line, col)
        elif key == "reference":
            if not value:
                raise RuleSyntaxError("reference needs a value", line, col)
            refs.append(_norm_ref(value))
        elif key in IGNORED_OPTIONS:
            pass
        elif key == "content":
            v = value or ""
            negated = v.startswith("!")
            try:
                pattern = parse_content(_unquote(v.lstrip("!").strip(), "content", line, col))
            except RuleError as exc:
                if isinstance(exc, RuleSyntaxError):
                    raise
                raise RuleSyntaxError(str(exc), line, col) from None
            if not pattern:
                raise RuleSyntaxError("content pattern is empty", line, col)
            last_content = {"pattern": pattern, "negated": negated}
            body.append(last_content)
        elif key in ("depth", "offset", "nocase"):
            if last_content is None:
                raise RuleSyntaxError(f"{key} without preceding content", line, col)
            if key == "nocase":
                last_content["nocase"] = True
            else:
                last_content[key] = _int_value(key, value, line, col)
        elif key == "flow":
            opts = tuple(o.strip().lower() for o in (value or "").split(",") if o.strip())
            if not opts:
                raise RuleSyntaxError("flow needs options", line, col)
            for o in opts:
                if o not in FLOW_DIRECTIONS and o not in FLOW_STATES:
                    raise UnknownOption(f"unsupported flow option {o!r}", line, col)
            if proto != "tcp":
                raise RuleSyntaxError("flow is only supported for tcp rules", line, col)
            server = "any"
            for o in opts:
                if o in FLOW_DIRECTIONS:
                    server = dport if FLOW_DIRECTIONS[o] else sport
            body.append(Flow(opts, server))
        elif key == "dsize":
            body.append(_parse_dsize(value, line, col))
        elif key == "flags":
            if proto != "tcp":
                raise RuleSyntaxError("flags is only supported for tcp rules", line, col)
            body.append(_parse_flags(value, line, col))
        else:
            raise UnknownOption(f"unsupported option {key!r}", line, col)

    if sid is None:
        raise RuleSyntaxError("rule has no sid", line, body_col)

    for item in body:
        if isinstance(item, dict):
            try:
                criteria.append(Content(**item))
            except RuleError as exc:
                raise RuleSyntaxError(str(exc), line, body_col) from None
        else:
            criteria.append(item)
    return Signature(sid, msg, tuple(criteria), tuple(refs))


def _token_col(s: str, index: int) -> int:
    pos = 0
    for _ in range(index + 1):
        while pos < len(s) and s[pos].isspace():
            pos += 1
        start = pos
        while pos < len(s) and not s[pos].isspace():
            pos += 1
    return start


def _render_content(pattern: bytes) -> str:
    out = []
    hexrun: list[str] = []
    for b in pattern:
        ch = chr(b)
        if 0x20 <= b < 0x7F and ch not in '"\\;|':
            if hexrun:
                out.append("|" + " ".join(hexrun) + "|")
                hexrun = []
            out.append(ch)
        else:
            hexrun.append(f"{b:02X}")
    if hexrun:
        out.append("|" + " ".join(hexrun) + "|")
    return "".join(out)


def serialize_rule(s: Signature) -> str:
    header = {SrcNet: "any", SrcPort: "any", DstNet: "any", DstPort: "any"}
    opts = [f'msg:"{s.msg}"']
    for c in s.criteria:
        if type(c) in header:
            header[type(c)] = c.spec
        elif isinstance(c, Flow):
            opts.append("flow:" + ",".join(c.options))
        elif isinstance(c, Content):
            neg = "!" if c.negated else ""
            opts.append(f'content:{neg}"{_render_content(c.pattern)}"')
            if c.depth is not None:
                opts.append(f"depth:{c.depth}")
            if c.offset is not None:
                opts.append(f"offset:{c.offset}")
            if c.nocase:
                opts.append("nocase")
        elif isinstance(c, Dsize):
            opts.append("dsize:" + {"<": f"<{c.lo}", ">": f">{c.lo}",
                                    "<>": f"{c.lo}<>{c.hi}"}.get(c.op, str(c.lo)))
        elif isinstance(c, Flags):
            letters = "".join(k for k, bit in FLAG_BITS.items()
                              if k in "FSRPAUEC" and c.want & bit) or "0"
            ign = "".join(k for k, bit in FLAG_BITS.items()
                          if k in "FSRPAUEC" and c.ignore & bit)
            opts.append(f"flags:{c.modifier}{letters}" + (f",{ign}" if ign else ""))
    for r in s.refs:
        scheme, _, ident = r.partition("-")
        opts.append(f"reference:{scheme.lower()},{ident}")
    opts.append(f"sid:{s.sid}")
    return (f"alert {s.proto} {header[SrcNet]} {header[SrcPort]} -> "
            f"{header[DstNet]} {header[DstPort]} ({'; '.join(opts)};)")


@dataclass
class RuleSet:
    signatures: tuple[Signature, ...]
    net_vars: NetVars = field(default_factory=NetVars)
    rejected: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        self.by_sid: dict[int, Signature] = {}
        for s in self.signatures:
            if s.sid in self.by_sid:
                raise RuleError(f"duplicate sid {s.sid}")
            self.by_sid[s.sid] = s
        self.in_sid_order = tuple(sorted(self.signatures, key=lambda s: s.sid))

    def __len__(self) -> int:
        return len(self.signatures)

    def __iter__(self):
        return iter(self.signatures)


_VAR_LINE = re.compile(r"^(?:var|ipvar|portvar)\s+([A-Za-z_][A-Za-z0-9_]*)\s+(\S.*?)\s*$")


def load_rules(text: str) -> RuleSet:
    """Parse a rule file.

    Syntax errors abort the load. Rules using unsupported options are
    rejected (recorded in ``RuleSet.rejected``) and parsing continues.
    """
    sigs: list[Signature] = []
    rejected: list[tuple[int, str]] = []
    variables: dict[str, str] = {}
    lines: dict[int, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        m = _VAR_LINE.match(s)
        if m:
            variables[m.group(1)] = m.group(2)
            continue
        if s.split(None, 1)[0] in ("var", "ipvar", "portvar"):
            raise RuleSyntaxError("malformed variable definition", lineno, 1)
        try:
            sig = parse_rule(line, lineno)
        except UnknownOption as exc:
            rejected.append((lineno, str(exc)))
            continue
        if sig.sid in lines:
            raise RuleSyntaxError(
                f"duplicate sid {sig.sid} (first on line {lines[sig.sid]})", lineno, 1)
        lines[sig.sid] = lineno
        sigs.append(sig)

    nv = NetVars(variables)
    for sig in sigs:
        for c in sig.criteria:
            try:
                if isinstance(c, (SrcNet, DstNet)):
                    nv.addresses(c.spec)
                elif isinstance(c, (SrcPort, DstPort)):
                    nv.ports(c.spec)
                elif isinstance(c, Flow):
                    nv.ports(c.server_ports)
            except RuleError as exc:
                raise RuleSyntaxError(f"sid {sig.sid}: {exc}", lines[sig.sid], 1) from None
    return RuleSet(tuple(sigs), nv, rejected)


def read_rules(path: str | Path) -> RuleSet:
    return load_rules(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# alert -> exploit mapping


@dataclass(frozen=True)
class ExploitMap:
    sig_to_exploit: Mapping[int, str]
    exploit_to_sigs: Mapping[str, frozenset[int]]

    def exploit_of(self, sid: int) -> str | None:
        return self.sig_to_exploit.get(sid)

    def signatures_for(self, exploit: str) -> frozenset[int]:
        return self.exploit_to_sigs.get(exploit, frozenset())

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, str]]) -> "ExploitMap":
        fwd: dict[int, str] = {}
        for sid, ex in pairs:
            if sid in fwd and fwd[sid] != ex:
                raise AmbiguousMapping(f"sid {sid} maps to {fwd[sid]} and {ex}")
            fwd[sid] = ex
        inv: dict[str, set[int]] = {}
        for sid, ex in fwd.items():
            inv.setdefault(ex, set()).add(sid)
        return cls(dict(sorted(fwd.items())),
                   {k: frozenset(v) for k, v in sorted(inv.items())})


def build_exploit_map(rs: RuleSet, gd: "GraphDef") -> ExploitMap:
    """Map signatures to exploits by shared vulnerability references.

    Explicit ``sigmap`` pins in the graph definition take precedence. A
    signature whose references hit more than one exploit, with no pin,
    raises ``AmbiguousMapping``.
    """
    by_ref: dict[str, list[str]] = {}
    for ex in gd.exploits.values():
        for r in ex.refs:
            by_ref.setdefault(r.upper(), []).append(ex.id)
    pairs = []
    for sid, ex_id in gd.sigmap.items():
        pairs.append((sid, ex_id))
    for sig in rs.signatures:
        if sig.sid in gd.sigmap:
            continue
        hits = sorted({e for r in sig.refs for e in by_ref.get(r.upper(), ())})
        if len(hits) > 1:
            raise AmbiguousMapping(
                f"sid {sig.sid} references match exploits {', '.join(hits)}")
        if hits:
            pairs.append((sig.sid, hits[0]))
    return ExploitMap.from_pairs(pairs)
