"""Single-pass detection pipeline and Table-1 style accounting."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .attack_graph import (
    Alert,
    CorrelationGraph,
    GraphDef,
    Host,
    UnknownVertex,
    VertexState,
    read_alerts,
    read_graph_def,
)
from .immune_core import (
    DEFAULT_CAPACITY,
    DEFAULT_TAU,
    CandidateReport,
    DCState,
    DendriticCell,
    Discard,
    dc_capture,
    dc_signal,
    migrate,
    spawn_dc,
    tcell_select,
)
from .packet_codec import (
    FEATURES,
    WILDCARD,
    Antigen,
    DecodeError,
    PacketRecord,
    decode_packet,
)
from .rules import ExploitMap, RuleSet, build_exploit_map, match_full, read_rules
from .trace_tools import Trace, pcap_bytes, read_labels, read_pcap

log = logging.getLogger(__name__)


@dataclass
class Metrics:
    run_id: str = "run"
    total_packets: int = 0
    ag_packets: int = 0
    output_packets: int = 0
    fp_rate: Fraction | None = None
    fn_rate: Fraction | None = None
    decode_errors: int = 0
    alerts: int = 0
    per_scenario: dict[int, dict[str, int]] = field(default_factory=dict)

    def to_json(self) -> dict:
        def rate(r):
            return None if r is None else f"{r.numerator}/{r.denominator}"
        return {
            "run_id": self.run_id,
            "total_packets": self.total_packets,
            "ag_packets": self.ag_packets,
            "output_packets": self.output_packets,
            "fp_rate": rate(self.fp_rate),
            "fn_rate": rate(self.fn_rate),
            "decode_errors": self.decode_errors,
            "alerts": self.alerts,
            "per_scenario": {str(k): v for k, v in sorted(self.per_scenario.items())},
        }

    @classmethod
    def from_json(cls, d: dict) -> "Metrics":
        def rate(r):
            return None if r is None else Fraction(r)
        return cls(d["run_id"], d["total_packets"], d["ag_packets"], d["output_packets"],
                   rate(d["fp_rate"]), rate(d["fn_rate"]), d.get("decode_errors", 0),
                   d.get("alerts", 0),
                   {int(k): v for k, v in d.get("per_scenario", {}).items()})


@dataclass
class DCRecord:
    dc: DendriticCell
    scenario: int
    outcome: str = "unresolved"


@dataclass
class DetectResult:
    total_packets: int = 0
    decode_errors: int = 0
    alerts: list[Alert] = field(default_factory=list)
    reports: list[CandidateReport] = field(default_factory=list)
    dcs: list[DCRecord] = field(default_factory=list)
    discards: list[Discard] = field(default_factory=list)
    graph: CorrelationGraph | None = None

    @property
    def ag_packets(self) -> int:
        return sum(r.dc.offered for r in self.dcs)

    def output_indices(self) -> list[int]:
        return sorted({c.packet.index for r in self.reports for c in r.candidates})

    def metrics(self, labels: Sequence[int] | None = None, run_id: str = "run") -> Metrics:
        out = self.output_indices()
        per: dict[int, dict[str, int]] = {}
        for r in self.dcs:
            s = per.setdefault(r.scenario, {"dcs": 0, "ag_packets": 0, "output_packets": 0})
            s["dcs"] += 1
            s["ag_packets"] += r.dc.offered
        for rep in self.reports:
            s = per.setdefault(rep.cluster, {"dcs": 0, "ag_packets": 0, "output_packets": 0})
            s["output_packets"] += len(rep.candidates)
        fp = fn = None
        if labels:
            fp, fn = evaluate(out, labels)
        return Metrics(run_id, self.total_packets, self.ag_packets, len(out), fp, fn,
                       self.decode_errors, len(self.alerts), per)


_IP_SRC = FEATURES["ip.src"].id
_IP_DST = FEATURES["ip.dst"].id
_PORTS = [(FEATURES["tcp.srcport"].id, FEATURES["tcp.dstport"].id),
          (FEATURES["udp.srcport"].id, FEATURES["udp.dstport"].id)]


def _alert_for(sid: int, a: Antigen) -> Alert:
    v = a.values
    sport = dport = 0
    for s_i, d_i in _PORTS:
        if v[s_i] is not WILDCARD:
            sport, dport = v[s_i], v[d_i]
            break
    return Alert(sid, a.source.ts_sec, a.source.ts_usec, Host(v[_IP_SRC]), Host(v[_IP_DST]),
                 sport, dport)


class Detector:
    """Feeds packets through detection, correlation and the immune phases."""

    def __init__(self, rules: RuleSet, gd: GraphDef, *, tau=DEFAULT_TAU,
                 dc_capacity: int = DEFAULT_CAPACITY, exploit_map: ExploitMap | None = None):
        self.rules = rules
        self.gd = gd
        self.tau = Fraction(tau)
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must lie strictly between 0 and 1, got {tau}")
        self.capacity = dc_capacity
        self.map = exploit_map or build_exploit_map(rules, gd)
        self.graph = CorrelationGraph(gd, self.map)
        self.live: dict[int, DCRecord] = {}
        self.result = DetectResult(graph=self.graph)

    def _scenario(self, vid: int, fallback: int) -> int:
        try:
            return self.graph.scenario_of(vid)
        except UnknownVertex:
            return fallback

    def ingest(self, alert: Alert) -> None:
        self.result.alerts.append(alert)
        for sc in self.graph.ingest_alert(alert):
            if sc.old is None and sc.new is VertexState.PRED:
                dc = spawn_dc(sc.vertex, self.capacity)
                rec = DCRecord(dc, self.graph.scenario_of(sc.vertex.vid))
                self.live[sc.vertex.vid] = rec
                self.result.dcs.append(rec)
            elif sc.old is VertexState.PRED:
                rec = self.live.pop(sc.vertex.vid)
                signal = dc_signal(sc)
                rec.scenario = self._scenario(sc.vertex.vid, rec.scenario)
                outcome = migrate(rec.dc, signal, rec.scenario)
                rec.outcome = signal.value
                if isinstance(outcome, Discard):
                    self.result.discards.append(outcome)
                else:
                    self.result.reports.append(
                        tcell_select(outcome, self.rules, self.map, self.tau))

    def packet(self, rec: PacketRecord, external_alerts: bool = False) -> None:
        self.result.total_packets += 1
        try:
            a = decode_packet(rec)
        except DecodeError as exc:
            self.result.decode_errors += 1
            log.debug("packet %d skipped: %s", rec.index, exc)
            return
        if not external_alerts:
            for sig in self.rules.in_sid_order:
                if match_full(sig, a, self.rules.net_vars):
                    self.ingest(_alert_for(sig.sid, a))
        for dc_rec in list(self.live.values()):
            if dc_rec.dc.state is DCState.IMMATURE:
                dc_capture(dc_rec.dc, a)


def detect(trace: Trace | Iterable[PacketRecord], rules: RuleSet, gd: GraphDef, *,
           tau=DEFAULT_TAU, dc_capacity: int = DEFAULT_CAPACITY,
           alerts: Sequence[Alert] | None = None,
           exploit_map: ExploitMap | None = None) -> DetectResult:
    """Run the whole pipeline in memory over records in timestamp order.

    With ``alerts`` given, those replace inline signature matching; each is
    ingested before the first packet whose timestamp is not earlier.
    """
    records = sorted(trace, key=lambda r: (r.ts_micros, r.index))
    d = Detector(rules, gd, tau=tau, dc_capacity=dc_capacity, exploit_map=exploit_map)
    pending = sorted(alerts, key=lambda a: a.ts_micros) if alerts is not None else None
    k = 0
    for rec in records:
        if pending is not None:
            while k < len(pending) and pending[k].ts_micros <= rec.ts_micros:
                d.ingest(pending[k])
                k += 1
        d.packet(rec, external_alerts=pending is not None)
    if pending is not None:
        for a in pending[k:]:
            d.ingest(a)
    return d.result


def evaluate(output, labels: Iterable[int]) -> tuple[Fraction | None, Fraction]:
    """False-positive and false-negative rates of an output packet set.

    ``output`` is a list of packet indices or of ``CandidateReport``. The
    false-positive rate is ``None`` when nothing was output.
    """
    labels = set(labels)
    if not labels:
        raise ValueError("at least one labelled true positive is required")
    out: set[int] = set()
    for item in output:
        if isinstance(item, CandidateReport):
            out.update(c.packet.index for c in item.candidates)
        else:
            out.add(int(item))
    found = len(out & labels)
    fn = Fraction(len(labels) - found, len(labels))
    fp = Fraction(len(out) - found, len(out)) if out else None
    return fp, fn


def format_rate(r: Fraction | None) -> str:
    # truncated, as in the published accuracy table (29/30 -> 0.96)
    if r is None:
        return "n/a"
    return f"{math.floor(r * 100) / 100:.2f}"


REPORT_HEADER = ("run", "total_packets", "ag_packets", "output_packets", "fp_rate", "fn_rate")


def emit_report(metrics: Metrics | Sequence[Metrics]) -> str:
    if isinstance(metrics, Metrics):
        metrics = [metrics]
    rows = ["\t".join(REPORT_HEADER)]
    for m in metrics:
        rows.append("\t".join([m.run_id, str(m.total_packets), str(m.ag_packets),
                               str(m.output_packets), format_rate(m.fp_rate),
                               format_rate(m.fn_rate)]))
    return "\n".join(rows) + "\n"


def _ts(sec: int, usec: int) -> str:
    return f"{sec}.{usec:06d}"


def candidates_tsv(reports: Sequence[CandidateReport]) -> str:
    rows = ["scenario\texploit\tpacket\tts\tsid\tscore"]
    for rep in reports:
        for c in rep.candidates:
            rows.append(f"{rep.cluster}\t{rep.exploit}\t{c.packet.index}\t"
                        f"{_ts(c.packet.ts_sec, c.packet.ts_usec)}\t{c.sid}\t{float(c.score):.6f}")
    return "\n".join(rows) + "\n"


def read_candidates_tsv(path: str | Path) -> list[int]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return sorted({int(l.split("\t")[2]) for l in lines[1:] if l.strip()})


def dcs_tsv(dcs: Sequence[DCRecord]) -> str:
    rows = ["vertex\texploit\tdst\tdstport\tscenario\toutcome\tantigen\toverflow"]
    for r in dcs:
        v = r.dc.vertex
        rows.append(f"{v.vid}\t{v.exploit}\t{v.dst}\t{v.dstport}\t{r.scenario}\t"
                    f"{r.outcome}\t{len(r.dc.antigen)}\t{r.dc.overflow_count}")
    return "\n".join(rows) + "\n"


def run_detect(rules_path, graph_path, pcap_path, tau=DEFAULT_TAU, out_dir=None, *,
               dc_capacity: int = DEFAULT_CAPACITY, alerts_path=None, labels_path=None,
               run_id: str = "run") -> tuple[Metrics, DetectResult]:
    """File-level driver. Inputs are all parsed before anything is written."""
    rules = read_rules(rules_path)
    gd = read_graph_def(graph_path)
    emap = build_exploit_map(rules, gd)
    trace = read_pcap(pcap_path)
    alerts = None
    if alerts_path is not None:
        alerts = read_alerts(Path(alerts_path).read_text(encoding="utf-8").splitlines())
    labels = read_labels(labels_path) if labels_path is not None else None

    result = detect(trace, rules, gd, tau=tau, dc_capacity=dc_capacity, alerts=alerts,
                    exploit_map=emap)
    metrics = result.metrics(labels, run_id)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        keep = set(result.output_indices())
        extract = Trace(trace.link_type, [r for r in trace.records if r.index in keep],
                        trace.snaplen)
        (out / "candidates.tsv").write_text(candidates_tsv(result.reports), encoding="utf-8")
        (out / "candidates.pcap").write_bytes(pcap_bytes(extract))
        (out / "alerts.log").write_text("".join(a.format() + "\n" for a in result.alerts),
                                        encoding="utf-8")
        (out / "dcs.tsv").write_text(dcs_tsv(result.dcs), encoding="utf-8")
        (out / "metrics.tsv").write_text(emit_report(metrics), encoding="utf-8")
        (out / "metrics.json").write_text(json.dumps(metrics.to_json(), indent=2) + "\n",
                                          encoding="utf-8")
    return metrics, result
