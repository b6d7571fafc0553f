"""Acceptance criteria, one test per criterion.

The terminal summary lists PASS/FAIL per criterion (see conftest.py).
"""

import ipaddress
import random
import struct
import time
from fractions import Fraction

import pytest

from _gen import acyclic, cond_snapshot, cond_true, edges_project, identity_map, random_alerts, random_graph
from immunids.attack_graph import ALLOWED_TRANSITIONS, REDUNDANT, CorrelationGraph, StateChange, VertexState
from immunids.cli import main
from immunids.frames import tcp_frame, udp_frame
from immunids import immune_core, pipeline
from immunids.immune_core import NotDcRelevant, NotPamp, Presentation, Signal, dc_signal, tcell_select
from immunids.packet_codec import PacketRecord, decode_packet
from immunids.pipeline import evaluate, format_rate, run_detect
from immunids.rules import (
    Content,
    DstNet,
    DstPort,
    Dsize,
    Flags,
    Flow,
    Proto,
    Signature,
    SrcNet,
    SrcPort,
    match_full,
    parse_rule,
    partial_score,
)
from immunids.scenario import FIG2_RULE, GRAPH_TEXT, RULES_TEXT, ScenarioConfig, synth_attack, synth_scenario
from immunids.trace_tools import pcap_bytes, write_labels, write_pcap

VICTIM = "10.1.1.5"


def crit(n, title):
    return pytest.mark.criterion(n, title)


def report(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")


# --- 1 -----------------------------------------------------------------------


@crit(1, "fp-rate formula fidelity")
def test_c1_fp_rate_formula():
    t0 = time.perf_counter()
    fp18, fn18 = evaluate(list(range(18)), [7])
    fp30, fn30 = evaluate(list(range(100, 130)), [111])
    elapsed = time.perf_counter() - t0
    ok = (fp18 == Fraction(17, 18) and fp30 == Fraction(29, 30) and fn18 == fn30 == 0
          and format_rate(fp18) == "0.94" and format_rate(fp30) == "0.96")
    report(1, ok and elapsed < 1, f"fp={fp18},{fp30} shown {format_rate(fp18)},"
           f"{format_rate(fp30)} in {elapsed:.3f}s")
    assert fp18 == Fraction(17, 18) and fp30 == Fraction(29, 30)
    assert fn18 == 0 and fn30 == 0
    assert (format_rate(fp18), format_rate(fp30)) == ("0.94", "0.96")
    assert elapsed < 1


# --- 2 and 3 -------------------------------------------------------------------


def replay(tmp, trace, labels, run_id):
    tmp.mkdir(parents=True, exist_ok=True)
    (tmp / "rules.txt").write_text(RULES_TEXT)
    (tmp / "graph.txt").write_text(GRAPH_TEXT)
    write_pcap(tmp / "s.pcap", trace)
    write_labels(tmp / "labels.txt", labels)
    t0 = time.perf_counter()
    m, _ = run_detect(tmp / "rules.txt", tmp / "graph.txt", tmp / "s.pcap", Fraction(1, 2),
                      tmp / "out", labels_path=tmp / "labels.txt", run_id=run_id)
    return m, time.perf_counter() - t0


@pytest.fixture(scope="module")
def run1(tmp_path_factory):
    t0 = time.perf_counter()
    trace, labels = synth_scenario(ScenarioConfig())
    synth_s = time.perf_counter() - t0
    m, detect_s = replay(tmp_path_factory.mktemp("run1"), trace, labels, "1")
    return trace, m, synth_s + detect_s


def to_victim_ftp(trace):
    n = 0
    for r in trace:
        a = decode_packet(r)
        n += a["ip.dst"] == int(ipaddress.IPv4Address(VICTIM)) and a["tcp.dstport"] == 21
    return n


@crit(2, "quiescent scenario replay")
def test_c2_quiescent_replay(run1):
    trace, m, elapsed = run1
    share = to_victim_ftp(trace) / len(trace)
    ok = m.fn_rate == 0 and m.output_packets <= Fraction(2, 100) * m.ag_packets and elapsed < 10
    report(2, ok, f"total={m.total_packets} ag={m.ag_packets} out={m.output_packets} "
           f"fp={format_rate(m.fp_rate)} fn={format_rate(m.fn_rate)} "
           f"victim:21 share={share:.2f} in {elapsed:.2f}s")
    assert 2700 <= m.total_packets <= 3300
    assert 0.25 <= share <= 0.35
    assert elapsed < 10
    assert m.fn_rate == 0
    assert m.output_packets <= Fraction(2, 100) * m.ag_packets


@crit(3, "background traffic replay")
def test_c3_background_replay(run1, tmp_path):
    _, m1, _ = run1
    t0 = time.perf_counter()
    trace, labels = synth_scenario(ScenarioConfig(), background_ratio=5)
    attack_len = m1.total_packets
    m, detect_s = replay(tmp_path, trace, labels, "2")
    elapsed = time.perf_counter() - t0
    growth = Fraction(m.output_packets, max(m1.output_packets, 1))
    ok = m.fn_rate == 0 and growth < 2 and elapsed < 30
    report(3, ok, f"total={m.total_packets} ({m.total_packets / attack_len:.1f}x) "
           f"ag={m.ag_packets} out={m.output_packets} growth={float(growth):.2f}x "
           f"fp={format_rate(m.fp_rate)} fn={format_rate(m.fn_rate)} in {elapsed:.2f}s")
    assert 5.5 <= m.total_packets / attack_len <= 6.5
    assert elapsed < 30
    assert m.fn_rate == 0
    assert growth < 2


# --- 4 -----------------------------------------------------------------------

HOME = ipaddress.IPv4Network("10.1.1.0/24")
NV = {"HOME_NET": "10.1.1.0/24", "EXTERNAL_NET": "!$HOME_NET"}


def raw_fields(frame: bytes) -> dict:
    """Independent header parse straight from the frame bytes."""
    ihl = (frame[14] & 0x0F) * 4
    total = struct.unpack("!H", frame[16:18])[0]
    proto = frame[23]
    f = {"proto": proto, "src": ipaddress.IPv4Address(frame[26:30]),
         "dst": ipaddress.IPv4Address(frame[30:34])}
    l4 = 14 + ihl
    end = 14 + total
    f["sport"], f["dport"] = struct.unpack("!HH", frame[l4:l4 + 4])
    if proto == 6:
        doff = (frame[l4 + 12] >> 4) * 4
        f["flags"] = frame[l4 + 13]
        f["payload"] = frame[l4 + doff:end]
    else:
        f["flags"] = None
        f["payload"] = frame[l4 + 8:end]
    return f


def addr_in(spec, ip):
    spec = spec.replace("$EXTERNAL_NET", "!10.1.1.0/24").replace("$HOME_NET", "10.1.1.0/24")
    if spec.startswith("!"):
        return not addr_in(spec[1:], ip)
    if spec.startswith("["):
        return any(addr_in(s, ip) for s in spec[1:-1].split(","))
    return ip in ipaddress.IPv4Network(spec, strict=False)


def port_in(spec, p):
    if spec == "any":
        return True
    if spec.startswith("!"):
        return not port_in(spec[1:], p)
    if spec.startswith("["):
        return any(port_in(s, p) for s in spec[1:-1].split(","))
    if ":" in spec:
        lo, hi = spec.split(":")
        return int(lo or 0) <= p <= int(hi or 65535)
    return p == int(spec)


def oracle_criterion(c, f) -> bool:
    if isinstance(c, Proto):
        return f["proto"] == {"tcp": 6, "udp": 17, "icmp": 1}[c.proto]
    if isinstance(c, SrcNet):
        return addr_in(c.spec, f["src"])
    if isinstance(c, DstNet):
        return addr_in(c.spec, f["dst"])
    if isinstance(c, SrcPort):
        return port_in(c.spec, f["sport"])
    if isinstance(c, DstPort):
        return port_in(c.spec, f["dport"])
    if isinstance(c, Flow):
        if f["flags"] is None:
            return False
        if "to_server" in c.options and not port_in(c.server_ports, f["dport"]):
            return False
        if "established" in c.options and not f["flags"] & 0x10:
            return False
        return True
    if isinstance(c, Content):
        start = c.offset or 0
        win = f["payload"][start:]
        if c.depth is not None:
            win = win[:c.depth]
        pat = c.pattern
        if c.nocase:
            win, pat = win.lower(), pat.lower()
        hit = any(win[i:i + len(pat)] == pat for i in range(len(win) - len(pat) + 1))
        return hit != c.negated
    if isinstance(c, Dsize):
        n = len(f["payload"])
        return {"<": n < c.lo, ">": n > c.lo, "=": n == c.lo}[c.op]
    if isinstance(c, Flags):
        if f["flags"] is None:
            return False
        fl = f["flags"] & ~c.ignore & 0xFF
        return {"": fl == c.want, "+": fl & c.want == c.want,
                "*": fl & c.want != 0, "!": fl & c.want == 0}[c.modifier]
    raise AssertionError(c)


ADDRS = ["10.1.1.0/24", "$HOME_NET", "$EXTERNAL_NET", "10.0.0.2", "!10.0.0.0/8",
         "[10.0.0.0/8,192.168.0.0/16]"]
PORTS = ["21", "!21", "1:1024", "3000:", "[21,22,80]", "4000"]
PAYLOADS = [b"", b"SITE EXEC %p%p%p\n", b"SITE EXEC %020d|%.f%.f|\n", b"USER ftp\r\n",
            b"site exec x", b"RETR /etc/passwd\r\n", b"t0rn.tgz"]
NEEDLES = [b"SITE EXEC", b"%p", b"passwd", b"USER", b"t0rn", b"exec", b"\r\n"]


def random_signature(rng, sid):
    proto = rng.choice(["tcp", "udp"])
    cs = [Proto(proto)]
    pool = [lambda: SrcNet(rng.choice(ADDRS)), lambda: DstNet(rng.choice(ADDRS)),
            lambda: SrcPort(rng.choice(PORTS)), lambda: DstPort(rng.choice(PORTS)),
            lambda: Dsize(rng.choice("<>="), rng.randint(0, 30))]
    for _ in range(rng.randint(0, 4)):
        needle = rng.choice(NEEDLES)
        depth = rng.choice([None, len(needle) + rng.randint(0, 20)])
        pool.append(lambda n=needle, d=depth: Content(n, d, rng.choice([None, 0, 2, 10]),
                                                      rng.random() < 0.5, rng.random() < 0.1))
    if proto == "tcp":
        pool.append(lambda: Flow(rng.choice([("to_server", "established"), ("established",)]),
                                 rng.choice(["21", "any"])))
        pool.append(lambda: Flags(rng.choice([0x02, 0x10, 0x18, 0x29]),
                                  rng.choice(["", "+", "*", "!"]), rng.choice([0, 0xC0])))
    rng.shuffle(pool)
    cs += [make() for make in pool[:rng.randint(0, 9)]]
    return Signature(sid, "random", tuple(cs[:10]))


def random_frame(rng):
    src = rng.choice(["10.0.0.2", "10.1.1.9", "192.168.3.4", "8.8.8.8"])
    dst = rng.choice(["10.1.1.5", "10.0.0.7"])
    sport, dport = rng.choice([4000, 21, 80, 1023]), rng.choice([21, 22, 80, 4000])
    payload = rng.choice(PAYLOADS)
    if rng.random() < 0.25:
        return udp_frame(src, dst, sport, dport, payload=payload)
    return tcp_frame(src, dst, sport, dport, flags=rng.choice([0x02, 0x10, 0x18, 0x29, 0x12]),
                     payload=payload)


@crit(4, "partial-score oracle")
def test_c4_partial_score_oracle():
    rng = random.Random(4)
    mismatches = iff_violations = full = 0
    for i in range(1000):
        sig = random_signature(rng, i + 1)
        frame = random_frame(rng)
        a = decode_packet(PacketRecord(i, 1, 0, 1, frame))
        f = raw_fields(frame)
        expected = Fraction(sum(oracle_criterion(c, f) for c in sig.criteria), len(sig.criteria))
        got = partial_score(sig, a, NV)
        mismatches += got != expected
        iff_violations += (got == 1) != match_full(sig, a, NV)
        full += got == 1
    report(4, mismatches == iff_violations == 0,
           f"1000 pairs, {mismatches} score mismatches, {iff_violations} iff violations, "
           f"{full} full matches")
    assert 0 < full < 1000
    assert mismatches == 0
    assert iff_violations == 0


# --- 5 -----------------------------------------------------------------------


@crit(5, "correlation state machine")
def test_c5_state_machine():
    rng = random.Random(5)
    seen, bad = set(), []
    for trial in range(500):
        gd = random_graph(rng, rng.randint(3, 8))
        m = identity_map(gd)
        g = CorrelationGraph(gd, m)
        for a in random_alerts(rng, gd, rng.randint(1, 20)):
            before = cond_snapshot(g)
            for sc in g.ingest_alert(a):
                seen.add((sc.old, sc.new))
                if (sc.old, sc.new) not in ALLOWED_TRANSITIONS:
                    bad.append((trial, "transition", sc.old, sc.new))
                if sc.new is VertexState.PRED and not all(
                        cond_true(g, c, sc.vertex.dst) for c in gd.pre[sc.vertex.exploit]):
                    bad.append((trial, "unsound prediction", sc.vertex))
            after = cond_snapshot(g)
            if any(v and not after[k] for k, v in before.items()):
                bad.append((trial, "condition reverted"))
            if not (acyclic(g) and edges_project(g)):
                bad.append((trial, "instance graph"))
    report(5, not bad, f"500 sequences, {len(seen)}/7 transition kinds seen, "
           f"{len(bad)} violations")
    assert not bad, bad[:5]
    assert seen <= ALLOWED_TRANSITIONS
    assert {(None, VertexState.PRED), (VertexState.PRED, VertexState.HYP),
            (VertexState.PRED, VertexState.REAL)} <= seen


# --- 6 -----------------------------------------------------------------------


@crit(6, "signal mapping")
def test_c6_signal_mapping(monkeypatch, ruleset, graph_def):
    from immunids.attack_graph import Alert, ExploitVertex, Host
    v = ExploitVertex(0, "ftp-fmt", None, Host(VICTIM), None, 21, VertexState.PRED, 0)
    cause = Alert(1, 0, 0, Host("10.0.0.2"), Host(VICTIM), 1, 21)
    expected = {(VertexState.PRED, VertexState.HYP): Signal.PAMP,
                (VertexState.PRED, VertexState.REAL): Signal.DANGER,
                (VertexState.PRED, REDUNDANT): Signal.SAFE}
    olds = [None, *VertexState]
    news = [*VertexState, REDUNDANT]
    wrong = 0
    for old in olds:
        for new in news:
            sc = StateChange(v, old, new, cause)
            try:
                got = dc_signal(sc)
            except NotDcRelevant:
                got = None
            wrong += got != expected.get((old, new))
    for s in (Signal.DANGER, Signal.SAFE):
        with pytest.raises(NotPamp):
            tcell_select(Presentation("ftp-fmt", s, (), v), ruleset,
                         identity_map(graph_def))

    presented = []
    real = immune_core.tcell_select

    def spy(p, *args, **kw):
        presented.append(p.signal)
        return real(p, *args, **kw)

    monkeypatch.setattr(pipeline, "tcell_select", spy)
    outcomes = []
    for known in (False, True):
        trace, _ = synth_attack(ScenarioConfig(scan_ports=30, shell_output_segments=20,
                                               known_exploit=known))
        res = pipeline.detect(trace, ruleset, graph_def)
        outcomes += [r.outcome for r in res.dcs]
    only_pamp = presented and all(s is Signal.PAMP for s in presented)
    report(6, wrong == 0 and only_pamp,
           f"{len(olds) * len(news)} transitions enumerated, {wrong} wrong; "
           f"presented={[s.value for s in presented]} dc outcomes={outcomes}")
    assert wrong == 0
    assert only_pamp
    assert "DANGER" in outcomes and "PAMP" in outcomes


# --- 7 -----------------------------------------------------------------------


@crit(7, "determinism")
def test_c7_determinism(tmp_path):
    args = ["--scan-ports", "60", "--shell-segments", "40", "--background-sessions", "3"]
    assert main(["synth", "--seed", "7", *args, "--out", str(tmp_path / "s1")]) == 0
    assert main(["synth", "--seed", "7", *args, "--out", str(tmp_path / "s2")]) == 0
    synth_same = all((tmp_path / "s1" / n).read_bytes() == (tmp_path / "s2" / n).read_bytes()
                     for n in ("attack.pcap", "background.pcap", "scenario.pcap", "labels.txt"))
    s = tmp_path / "s1"
    outs = []
    for k in ("d1", "d2"):
        assert main(["detect", "--rules", str(s / "rules.txt"), "--graph", str(s / "graph.txt"),
                     "--pcap", str(s / "scenario.pcap"), "--labels", str(s / "labels.txt"),
                     "--out", str(tmp_path / k)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / k).iterdir())})
    detect_same = outs[0] == outs[1] and len(outs[0]) == 6
    in_memory = pcap_bytes(synth_attack(ScenarioConfig(seed=3))[0]) == \
        pcap_bytes(synth_attack(ScenarioConfig(seed=3))[0])
    report(7, synth_same and detect_same and in_memory,
           f"synth identical={synth_same} detect identical={detect_same} ({len(outs[0])} files)")
    assert synth_same and in_memory
    assert detect_same


# --- 8 -----------------------------------------------------------------------


@crit(8, "published signature fixture")
def test_c8_fig2_fixture(attack, ruleset):
    s = parse_rule(FIG2_RULE)
    content = s.criteria[-1]
    tail = bytes.fromhex("25 30 32 30 64 7C 25 2E 66 25 2E 66 7C 0A")
    trace, labels = attack
    variant = decode_packet(trace.records[labels[0]])
    score = partial_score(s, variant, ruleset.net_vars)
    matched = [sig.sid for sig in ruleset if match_full(sig, variant, ruleset.net_vars)]
    ok = (len(s.criteria) == 6 and len(content.pattern) == 24
          and content.pattern.endswith(tail) and score == Fraction(5, 6) and not matched)
    report(8, ok, f"{len(s.criteria)} criteria, content {len(content.pattern)} bytes "
           f"{content.pattern!r}, variant score {score}, full matches {matched}")
    assert len(s.criteria) == 6
    assert isinstance(content, Content) and len(content.pattern) == 24
    assert content.pattern[-14:] == tail == b"%020d|%.f%.f|\n"
    assert score == Fraction(5, 6)
    assert matched == []
