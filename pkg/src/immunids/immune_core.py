"""Dendritic cells bound to predicted exploits, and the T-cell selection step.

Each PRED vertex gets one dendritic cell (DC) that collects packets aimed at
the predicted target service. When the vertex changes state the DC receives a
signal, matures and migrates. Only PAMP-activated DCs (prediction turned into
hypothesis) present their antigen for T-cell scoring; the rest are discarded.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from .attack_graph import REDUNDANT, ExploitVertex, StateChange, VertexState
from .packet_codec import FEATURES, WILDCARD, Antigen, PacketRef
from .rules import ExploitMap, RuleSet, partial_score

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 65536
DEFAULT_TAU = Fraction(1, 2)


class ImmuneError(ValueError):
    pass


class NotPredicted(ImmuneError):
    pass


class NotDcRelevant(ImmuneError):
    pass


class AlreadyMigrated(ImmuneError):
    pass


class NotPamp(ImmuneError):
    pass


class Signal(enum.Enum):
    PAMP = "PAMP"
    DANGER = "DANGER"
    SAFE = "SAFE"


class DCState(enum.Enum):
    IMMATURE = "immature"
    MIGRATED = "migrated"


_IP_DST = FEATURES["ip.dst"].id
_TCP_DPORT = FEATURES["tcp.dstport"].id
_UDP_DPORT = FEATURES["udp.dstport"].id


@dataclass
class DendriticCell:
    vertex: ExploitVertex
    capacity: int = DEFAULT_CAPACITY
    antigen: list[Antigen] = field(default_factory=list)
    state: DCState = DCState.IMMATURE
    signal: Signal | None = None
    overflow_count: int = 0

    def __post_init__(self):
        self._dst = int(self.vertex.dst)
        self._port = self.vertex.dstport

    @property
    def capture_filter(self) -> tuple[int, int]:
        return self._dst, self._port

    @property
    def offered(self) -> int:
        return len(self.antigen) + self.overflow_count

    def accepts(self, a: Antigen) -> bool:
        v = a.values
        if v[_IP_DST] != self._dst:
            return False
        port = v[_TCP_DPORT]
        if port is WILDCARD:
            port = v[_UDP_DPORT]
        return port == self._port


@dataclass(frozen=True)
class Presentation:
    exploit: str
    signal: Signal
    antigen: tuple[Antigen, ...]
    vertex: ExploitVertex
    scenario: int | None = None
    overflow_count: int = 0


@dataclass(frozen=True)
class Discard:
    exploit: str
    signal: Signal
    antigen_count: int
    vertex: ExploitVertex


@dataclass(frozen=True)
class Candidate:
    packet: PacketRef
    sid: int
    score: Fraction


@dataclass(frozen=True)
class CandidateReport:
    exploit: str
    cluster: int | None
    candidates: tuple[Candidate, ...]
    tau: Fraction
    presented: int = 0
    no_candidate_signatures: bool = False


def spawn_dc(v: ExploitVertex, capacity: int = DEFAULT_CAPACITY) -> DendriticCell:
    if v.state is not VertexState.PRED:
        raise NotPredicted(f"vertex {v.vid} ({v.exploit}) is {v.state.value}, not PRED")
    if capacity < 0:
        raise ValueError("capacity must be non-negative")
    return DendriticCell(v, capacity)


def dc_capture(dc: DendriticCell, a: Antigen) -> bool:
    if dc.state is not DCState.IMMATURE:
        raise AlreadyMigrated(f"DC for vertex {dc.vertex.vid} has migrated")
    if not dc.accepts(a):
        return False
    if len(dc.antigen) >= dc.capacity:
        dc.overflow_count += 1
        return False
    dc.antigen.append(a)
    return True


_SIGNALS = {
    VertexState.HYP: Signal.PAMP,
    VertexState.REAL: Signal.DANGER,
    REDUNDANT: Signal.SAFE,
}


def dc_signal(sc: StateChange) -> Signal:
    """Translate a PRED-origin state change into the DC's maturation signal."""
    if sc.old is not VertexState.PRED or sc.new not in _SIGNALS:
        old = sc.old.value if sc.old else "none"
        raise NotDcRelevant(f"{old}->{sc.new.value} does not start at a prediction")
    return _SIGNALS[sc.new]


def migrate(dc: DendriticCell, s: Signal,
            scenario: int | None = None) -> Union[Presentation, Discard]:
    if dc.state is not DCState.IMMATURE:
        raise AlreadyMigrated(f"DC for vertex {dc.vertex.vid} has migrated")
    dc.state = DCState.MIGRATED
    dc.signal = s
    if s is Signal.PAMP:
        return Presentation(dc.vertex.exploit, s, tuple(dc.antigen), dc.vertex,
                            scenario, dc.overflow_count)
    log.info("DC %d (%s) migrated with %s carrying %d antigen; not presented",
             dc.vertex.vid, dc.vertex.exploit, s.value, len(dc.antigen))
    return Discard(dc.vertex.exploit, s, len(dc.antigen), dc.vertex)


def tcell_select(p: Presentation, rs: RuleSet, m: ExploitMap,
                 tau=DEFAULT_TAU) -> CandidateReport:
    """Keep antigen whose best score over the exploit's signatures is in [tau, 1).

    Full matches are excluded: they are known attacks, not variants. Ties on
    the best score go to the lowest sid.
    """
    if p.signal is not Signal.PAMP:
        raise NotPamp(f"presentation carries {p.signal.value}, not PAMP")
    tau = Fraction(tau)
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie strictly between 0 and 1, got {tau}")
    sids = sorted(s for s in m.signatures_for(p.exploit) if s in rs.by_sid)
    if not sids:
        log.warning("no candidate signatures for exploit %s", p.exploit)
        return CandidateReport(p.exploit, p.scenario, (), tau, len(p.antigen), True)
    sigs = [rs.by_sid[s] for s in sids]
    kept = []
    for a in p.antigen:
        best_sid, best = sids[0], Fraction(-1)
        for sig in sigs:
            score = partial_score(sig, a, rs.net_vars)
            if score > best:
                best_sid, best = sig.sid, score
        if tau <= best < 1:
            kept.append(Candidate(a.source, best_sid, best))
    return CandidateReport(p.exploit, p.scenario, tuple(kept), tau, len(p.antigen))
