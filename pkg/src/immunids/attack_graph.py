"""Attack-graph alert correlation.

A :class:`GraphDef` is the expert-written template: exploits, host
conditions, and the prerequisite/consequence edges between them. A
:class:`CorrelationGraph` instantiates it per target host as alerts arrive.

Conditions live on the exploit's destination host. An exploit is enabled when
all of its prerequisite conditions hold; a condition holds once any exploit
supplying it is REAL or HYP (or it is initially true).
"""

from __future__ import annotations

import enum
import graphlib
import ipaddress
import shlex
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:
    from .rules import ExploitMap


class GraphError(ValueError):
    pass


class ParseError(GraphError):
    pass


class CycleError(GraphError):
    pass


class DanglingEdge(GraphError):
    pass


class OutOfOrderAlert(GraphError):
    pass


class UnknownVertex(KeyError):
    pass


class VertexState(enum.Enum):
    HYP = "HYP"
    REAL = "REAL"
    PRED = "PRED"


class Retirement(enum.Enum):
    REDUNDANT = "REDUNDANT"


REDUNDANT = Retirement.REDUNDANT

# (old, new) pairs ingest_alert may emit; None means "no vertex before".
ALLOWED_TRANSITIONS = frozenset({
    (None, VertexState.REAL),
    (None, VertexState.PRED),
    (None, VertexState.HYP),
    (VertexState.PRED, VertexState.REAL),
    (VertexState.PRED, VertexState.HYP),
    (VertexState.PRED, REDUNDANT),
    (VertexState.HYP, VertexState.REAL),
})


# --------------------------------------------------------------------------
# template


@dataclass(frozen=True)
class ExploitDef:
    id: str
    vuln: str
    port: int
    refs: tuple[str, ...] = ()


@dataclass(frozen=True)
class ConditionDef:
    id: str
    label: str = ""
    initially_true: bool = False


@dataclass
class GraphDef:
    exploits: dict[str, ExploitDef] = field(default_factory=dict)
    conditions: dict[str, ConditionDef] = field(default_factory=dict)
    pre_edges: list[tuple[str, str]] = field(default_factory=list)
    post_edges: list[tuple[str, str]] = field(default_factory=list)
    sigmap: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.reindex()

    def reindex(self) -> None:
        self.pre: dict[str, list[str]] = {e: [] for e in self.exploits}
        self.post: dict[str, list[str]] = {e: [] for e in self.exploits}
        self.suppliers: dict[str, list[str]] = {c: [] for c in self.conditions}
        for c, e in self.pre_edges:
            if c in self.conditions and e in self.pre:
                self.pre[e].append(c)
        for e, c in self.post_edges:
            if e in self.post and c in self.suppliers:
                self.post[e].append(c)
                self.suppliers[c].append(e)

    def validate(self) -> None:
        for c, e in self.pre_edges:
            if c not in self.conditions:
                raise DanglingEdge(f"pre edge {c} -> {e}: {c} is not a condition")
            if e not in self.exploits:
                raise DanglingEdge(f"pre edge {c} -> {e}: {e} is not an exploit")
        for e, c in self.post_edges:
            if e not in self.exploits:
                raise DanglingEdge(f"post edge {e} -> {c}: {e} is not an exploit")
            if c not in self.conditions:
                raise DanglingEdge(f"post edge {e} -> {c}: {c} is not a condition")
        for sid, e in self.sigmap.items():
            if e not in self.exploits:
                raise DanglingEdge(f"sigmap {sid} -> {e}: unknown exploit")
        ts = graphlib.TopologicalSorter()
        for c, e in self.pre_edges:
            ts.add(("e", e), ("c", c))
        for e, c in self.post_edges:
            ts.add(("c", c), ("e", e))
        try:
            ts.prepare()
        except graphlib.CycleError as exc:
            cycle = " -> ".join(n for _, n in exc.args[1])
            raise CycleError(f"cycle: {cycle}") from None
        self.reindex()


def _kv(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for t in tokens:
        if "=" not in t:
            raise ParseError(f"line {lineno}: expected key=value, got {t!r}")
        k, v = t.split("=", 1)
        out[k] = v
    return out


def _arrow(tokens: list[str], lineno: int) -> tuple[str, str]:
    if len(tokens) != 3 or tokens[1] != "->":
        raise ParseError(f"line {lineno}: expected '<a> -> <b>'")
    return tokens[0], tokens[2]


def load_graph_def(text: str) -> GraphDef:
    gd = GraphDef()
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        try:
            tokens = shlex.split(s)
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        kw, rest = tokens[0], tokens[1:]
        if kw == "exploit":
            if not rest:
                raise ParseError(f"line {lineno}: exploit needs an id")
            eid, attrs = rest[0], _kv(rest[1:], lineno)
            if eid in gd.exploits or eid in gd.conditions:
                raise ParseError(f"line {lineno}: duplicate id {eid!r}")
            try:
                port = int(attrs.get("port", "0"))
            except ValueError:
                raise ParseError(f"line {lineno}: bad port") from None
            refs = tuple(r.strip().upper() for r in attrs.get("refs", "").split(",") if r.strip())
            gd.exploits[eid] = ExploitDef(eid, attrs.get("vuln", eid), port, refs)
        elif kw == "condition":
            if not rest:
                raise ParseError(f"line {lineno}: condition needs an id")
            cid, attrs = rest[0], _kv(rest[1:], lineno)
            if cid in gd.exploits or cid in gd.conditions:
                raise ParseError(f"line {lineno}: duplicate id {cid!r}")
            initial = attrs.get("initial", "false").lower()
            if initial not in ("true", "false"):
                raise ParseError(f"line {lineno}: initial must be true or false")
            gd.conditions[cid] = ConditionDef(cid, attrs.get("label", ""), initial == "true")
        elif kw == "pre":
            gd.pre_edges.append(_arrow(rest, lineno))
        elif kw == "post":
            gd.post_edges.append(_arrow(rest, lineno))
        elif kw == "sigmap":
            a, b = _arrow(rest, lineno)
            try:
                gd.sigmap[int(a)] = b
            except ValueError:
                raise ParseError(f"line {lineno}: sigmap needs an integer sid") from None
        else:
            raise ParseError(f"line {lineno}: unknown directive {kw!r}")
    gd.validate()
    return gd


def read_graph_def(path: str | Path) -> GraphDef:
    return load_graph_def(Path(path).read_text(encoding="utf-8"))


def dump_graph_def(gd: GraphDef) -> str:
    lines = []
    for e in gd.exploits.values():
        refs = f" refs={','.join(e.refs)}" if e.refs else ""
        lines.append(f"exploit {e.id} vuln={shlex.quote(e.vuln)} port={e.port}{refs}")
    for c in gd.conditions.values():
        init = " initial=true" if c.initially_true else ""
        lines.append(f'condition {c.id} label="{c.label}"{init}')
    lines += [f"pre {c} -> {e}" for c, e in gd.pre_edges]
    lines += [f"post {e} -> {c}" for e, c in gd.post_edges]
    lines += [f"sigmap {sid} -> {e}" for sid, e in gd.sigmap.items()]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# runtime graph

Host = ipaddress.IPv4Address


@dataclass(frozen=True)
class Alert:
    sid: int
    ts_sec: int
    ts_usec: int
    src: Host
    dst: Host
    srcport: int
    dstport: int

    @property
    def ts_micros(self) -> int:
        return self.ts_sec * 1_000_000 + self.ts_usec

    def format(self) -> str:
        return (f"{self.ts_sec}.{self.ts_usec:06d} {self.sid} "
                f"{self.src}:{self.srcport} -> {self.dst}:{self.dstport}")

    @classmethod
    def parse(cls, line: str) -> "Alert":
        parts = line.split()
        if len(parts) != 5 or parts[3] != "->":
            raise ParseError(f"bad alert line {line!r}")
        ts, sid, src, _, dst = parts
        sec, _, usec = ts.partition(".")
        try:
            s_host, s_port = src.rsplit(":", 1)
            d_host, d_port = dst.rsplit(":", 1)
            return cls(int(sid), int(sec), int(usec.ljust(6, "0")[:6] or 0),
                       Host(s_host), Host(d_host), int(s_port), int(d_port))
        except ValueError as exc:
            raise ParseError(f"bad alert line {line!r}: {exc}") from None


@dataclass(frozen=True)
class ExploitVertex:
    """Immutable snapshot of one exploit instance; replaced on state change."""

    vid: int
    exploit: str
    src: Host | None
    dst: Host
    srcport: int | None
    dstport: int
    state: VertexState
    created_ts: int  # microseconds

    @property
    def key(self) -> tuple:
        return ("e", self.vid)


@dataclass
class ConditionVertex:
    cond: str
    host: Host
    val: bool

    @property
    def key(self) -> tuple:
        return ("c", self.cond, self.host)


@dataclass(frozen=True)
class StateChange:
    vertex: ExploitVertex
    old: VertexState | None
    new: VertexState | Retirement
    cause: Alert


@dataclass(frozen=True)
class Scenario:
    id: int
    exploit_vids: tuple[int, ...]
    conditions: tuple[tuple[str, Host], ...]


class CorrelationGraph:
    """Runtime correlation graph built from a template and an alert stream."""

    def __init__(self, gd: GraphDef, exploit_map: "ExploitMap | None" = None):
        self.gd = gd
        self.exploit_map = exploit_map
        self.vertices: dict[int, ExploitVertex] = {}
        self.conditions: dict[tuple[str, Host], ConditionVertex] = {}
        self.edges: set[tuple[tuple, tuple]] = set()
        self._next_vid = 0
        self._last_ts: int | None = None

    # accessors -----------------------------------------------------------

    def vertex(self, vid: int) -> ExploitVertex:
        try:
            return self.vertices[vid]
        except KeyError:
            raise UnknownVertex(vid) from None

    def vertex_state(self, v: ExploitVertex | int) -> VertexState:
        vid = v if isinstance(v, int) else v.vid
        return self.vertex(vid).state

    def condition_val(self, cond: str, host) -> bool:
        key = (cond, Host(host))
        if key not in self.conditions:
            raise UnknownVertex(key)
        return self.conditions[key].val

    def find(self, exploit: str, dst, state: VertexState | None = None) -> list[ExploitVertex]:
        dst = Host(dst)
        return [v for v in self.vertices.values()
                if v.exploit == exploit and v.dst == dst
                and (state is None or v.state == state)]

    def _cond(self, c: str, h: Host) -> bool:
        cv = self.conditions.get((c, h))
        return cv.val if cv else self.gd.conditions[c].initially_true

    # mutation helpers ----------------------------------------------------

    def _touch_condition(self, c: str, h: Host) -> ConditionVertex:
        key = (c, h)
        cv = self.conditions.get(key)
        if cv is None:
            cv = ConditionVertex(c, h, self.gd.conditions[c].initially_true)
            self.conditions[key] = cv
        return cv

    def _set_true(self, c: str, h: Host) -> None:
        self._touch_condition(c, h).val = True

    def _create(self, exploit: str, src, dst: Host, srcport, dstport: int,
                state: VertexState, ts: int) -> ExploitVertex:
        v = ExploitVertex(self._next_vid, exploit, src, dst, srcport, dstport, state, ts)
        self._next_vid += 1
        self.vertices[v.vid] = v
        for c in self.gd.pre[exploit]:
            self.edges.add((self._touch_condition(c, dst).key, v.key))
        for c in self.gd.post[exploit]:
            self.edges.add((v.key, self._touch_condition(c, dst).key))
        return v

    def _retire(self, v: ExploitVertex) -> None:
        del self.vertices[v.vid]
        self.edges = {e for e in self.edges if v.key not in e}

    # ingestion -----------------------------------------------------------

    def ingest_alert(self, a: Alert, m: "ExploitMap | None" = None) -> list[StateChange]:
        """Apply one alert and return the exploit-vertex state changes it caused.

        Order of effects: the alerted exploit becomes REAL (upgrading a PRED
        or HYP instance if present); missing prerequisites are explained by
        hypothesised predecessor exploits; consequences become true; PRED
        instances whose consequences are now all true retire as redundant;
        newly enabled exploits on the host are predicted.
        """
        m = m or self.exploit_map
        if m is None:
            raise GraphError("no exploit map supplied")
        ts = a.ts_micros
        if self._last_ts is not None and ts < self._last_ts:
            raise OutOfOrderAlert(f"alert at {a.format()} precedes {self._last_ts}us")
        self._last_ts = ts
        e = m.sig_to_exploit.get(a.sid)
        if e is None or e not in self.gd.exploits:
            return []
        h = Host(a.dst)
        changes: list[StateChange] = []

        # observed exploit
        existing = self.find(e, h)
        target = next((v for v in existing if v.state is VertexState.PRED), None)
        if target is None:
            target = next((v for v in existing if v.state is VertexState.HYP), None)
        if target is not None:
            new = replace(target, src=Host(a.src), srcport=a.srcport, state=VertexState.REAL)
            self.vertices[new.vid] = new
            changes.append(StateChange(new, target.state, VertexState.REAL, a))
        elif not any(v.state is VertexState.REAL and v.src == Host(a.src) for v in existing):
            new = self._create(e, Host(a.src), h, a.srcport, a.dstport, VertexState.REAL, ts)
            changes.append(StateChange(new, None, VertexState.REAL, a))
        else:
            # repeat of an already-observed exploit instance
            return []

        # missing prerequisites
        self._explain(e, h, a, ts, changes, set())
        for c in self.gd.post[e]:
            self._set_true(c, h)

        # redundancy
        for v in sorted(self.vertices.values(), key=lambda v: v.vid):
            if v.dst != h or v.state is not VertexState.PRED:
                continue
            post = self.gd.post[v.exploit]
            if post and all(self._cond(c, h) for c in post):
                self._retire(v)
                changes.append(StateChange(v, VertexState.PRED, REDUNDANT, a))

        # prediction
        for ex in self.gd.exploits.values():
            if self.find(ex.id, h):
                continue
            if not all(self._cond(c, h) for c in self.gd.pre[ex.id]):
                continue
            post = self.gd.post[ex.id]
            if post and all(self._cond(c, h) for c in post):
                continue
            v = self._create(ex.id, None, h, None, ex.port, VertexState.PRED, ts)
            changes.append(StateChange(v, None, VertexState.PRED, a))
        return changes

    def _explain(self, e: str, h: Host, a: Alert, ts: int,
                 changes: list[StateChange], visiting: set[str]) -> None:
        """Make every prerequisite of ``e`` at ``h`` true, hypothesising suppliers."""
        visiting = visiting | {e}
        for c in self.gd.pre[e]:
            if self._cond(c, h):
                self._touch_condition(c, h)
                continue
            suppliers = [p for p in self.gd.suppliers[c] if p not in visiting]
            chosen = None
            for p in suppliers:
                pred = self.find(p, h, VertexState.PRED)
                if pred:
                    chosen = pred[0]
                    hyp = replace(chosen, state=VertexState.HYP)
                    self.vertices[hyp.vid] = hyp
                    changes.append(StateChange(hyp, VertexState.PRED, VertexState.HYP, a))
                    break
            if chosen is None and suppliers:
                p = suppliers[0]
                chosen = self._create(p, None, h, None, self.gd.exploits[p].port,
                                      VertexState.HYP, ts)
                changes.append(StateChange(chosen, None, VertexState.HYP, a))
            if chosen is not None:
                self._explain(chosen.exploit, h, a, ts, changes, visiting)
                for pc in self.gd.post[chosen.exploit]:
                    self._set_true(pc, h)
            self._set_true(c, h)

    # structure -----------------------------------------------------------

    def instance_nodes(self) -> list[tuple]:
        return ([v.key for v in self.vertices.values()]
                + [cv.key for cv in self.conditions.values()])

    def scenarios(self) -> list[Scenario]:
        """Weakly-connected components, each labelled by its oldest exploit vertex."""
        adj: dict[tuple, list[tuple]] = {n: [] for n in self.instance_nodes()}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        seen: set[tuple] = set()
        out = []
        for start in sorted((k for k in adj if k[0] == "e"), key=lambda k: k[1]):
            if start in seen:
                continue
            comp, stack = [], [start]
            seen.add(start)
            while stack:
                n = stack.pop()
                comp.append(n)
                for nb in adj[n]:
                    if nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
            vids = tuple(sorted(k[1] for k in comp if k[0] == "e"))
            conds = tuple(sorted(((k[1], k[2]) for k in comp if k[0] == "c"),
                                 key=lambda t: (t[0], int(t[1]))))
            out.append(Scenario(vids[0], vids, conds))
        return out

    def scenario_of(self, vid: int) -> int:
        self.vertex(vid)
        for s in self.scenarios():
            if vid in s.exploit_vids:
                return s.id
        raise UnknownVertex(vid)


def ingest_alert(g: CorrelationGraph, a: Alert, m: "ExploitMap",
                 d: GraphDef | None = None) -> list[StateChange]:
    if d is not None and d is not g.gd:
        raise GraphError("graph was instantiated from a different GraphDef")
    return g.ingest_alert(a, m)


def scenarios(g: CorrelationGraph) -> list[Scenario]:
    return g.scenarios()


def vertex_state(g: CorrelationGraph, v) -> VertexState:
    return g.vertex_state(v)


def condition_val(g: CorrelationGraph, cond: str, host) -> bool:
    return g.condition_val(cond, host)


def read_alerts(lines: Iterable[str]) -> list[Alert]:
    return [Alert.parse(l) for l in lines if l.strip() and not l.lstrip().startswith("#")]
