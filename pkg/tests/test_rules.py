from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from immunids.attack_graph import load_graph_def
from immunids.frames import tcp_frame, udp_frame
from immunids.packet_codec import TCP_ACK, TCP_PSH, TCP_SYN, PacketRecord, decode_packet
from immunids.rules import (
    AmbiguousMapping,
    Content,
    DstNet,
    DstPort,
    Dsize,
    Flags,
    Flow,
    Proto,
    RuleSyntaxError,
    Signature,
    SrcNet,
    SrcPort,
    UnknownOption,
    UnknownVariable,
    build_exploit_map,
    eval_criterion,
    load_rules,
    match_full,
    parse_content,
    parse_rule,
    partial_score,
    serialize_rule,
)
from immunids.scenario import FIG2_RULE, KNOWN_PAYLOAD

NV = {"HOME_NET": "10.1.1.0/24", "EXTERNAL_NET": "!$HOME_NET"}
FIG2_HEX = "25 30 32 30 64 7C 25 2E 66 25 2E 66 7C 0A"


def antigen(frame):
    return decode_packet(PacketRecord(0, 1, 0, 1, frame))


def ftp_packet(payload, flags=TCP_ACK | TCP_PSH, src="10.0.0.2", dport=21):
    return antigen(tcp_frame(src, "10.1.1.5", 3432, dport, flags=flags, payload=payload))


# --- parsing ---------------------------------------------------------------


def test_fig2_criteria():
    s = parse_rule(FIG2_RULE)
    assert s.sid == 1971
    assert [c.kind for c in s.criteria] == ["Proto", "SrcNet", "DstNet", "DstPort", "Flow", "Content"]
    content = s.criteria[-1]
    # hand decode of the hex block
    tail = bytes(int(h, 16) for h in FIG2_HEX.split())
    assert tail == b"%020d|%.f%.f|\n"
    assert content.pattern == b"SITE EXEC " + tail
    assert len(content.pattern) == 24
    assert content.depth == 32 and content.nocase
    assert s.criteria[4].options == ("to_server", "established")
    assert set(s.refs) == {"CVE-2000-0573", "BUGTRAQ-1387"}


def test_any_elision():
    s = parse_rule('alert tcp any any -> any any (msg:"x"; sid:1; content:"A";)')
    assert [c.kind for c in s.criteria] == ["Proto", "Content"]


def test_missing_sid_is_syntax_error():
    with pytest.raises(RuleSyntaxError):
        parse_rule('alert tcp any any -> any 21 (msg:"x")')


def test_syntax_error_carries_position():
    with pytest.raises(RuleSyntaxError) as exc:
        parse_rule('alert tcp any any => any 21 (msg:"x"; sid:1;)', line=7)
    assert exc.value.line == 7
    assert exc.value.column is not None


def test_unknown_option_rejected_and_loading_continues():
    rs = load_rules(
        'alert tcp any any -> any any (msg:"a"; sid:1; pcre:"/x/";)\n'
        'alert tcp any any -> any any (msg:"b"; sid:2; content:"B";)\n'
    )
    assert [s.sid for s in rs] == [2]
    assert rs.rejected and rs.rejected[0][0] == 1
    with pytest.raises(UnknownOption):
        parse_rule('alert tcp any any -> any any (msg:"a"; sid:1; pcre:"/x/";)')


def test_undefined_variable():
    with pytest.raises(RuleSyntaxError):
        load_rules('alert tcp $NOPE any -> any any (msg:"a"; sid:1; content:"x";)\n')
    s = parse_rule('alert tcp $NOPE any -> any any (msg:"a"; sid:1; content:"x";)')
    with pytest.raises(UnknownVariable):
        eval_criterion(s.criteria[1], ftp_packet(b"x"), {})


def test_content_escapes():
    assert parse_content('a|41 42|b') == b"aABb"
    assert parse_content(r'\"q\;') == b'"q;'


def test_depth_shorter_than_pattern_rejected():
    with pytest.raises(Exception):
        parse_rule('alert tcp any any -> any any (msg:"a"; sid:1; content:"abcdef"; depth:3;)')


def test_var_lines_and_by_sid(ruleset):
    assert set(ruleset.by_sid) == {s.sid for s in ruleset}
    assert len(ruleset.by_sid) == len(ruleset.signatures)
    assert ruleset.net_vars["HOME_NET"] == "10.1.1.0/24"


# --- evaluation --------------------------------------------------------------


def test_dstport_examples():
    assert eval_criterion(DstPort("21"), ftp_packet(b""))
    assert eval_criterion(DstPort("21"), ftp_packet(b"", dport=80)) is False


def test_dstport_on_udp_is_false_for_tcp_port_feature():
    udp = antigen(udp_frame("10.0.0.2", "10.1.1.5", 1000, 69, payload=b"x"))
    assert not eval_criterion(Proto("tcp"), udp)
    assert not eval_criterion(DstPort("21"), udp)


def naive_find(needle: bytes, hay: bytes) -> bool:
    for i in range(len(hay) - len(needle) + 1):
        if all(hay[i + j] == needle[j] for j in range(len(needle))):
            return True
    return not needle


def test_nocase_content_against_naive_scan():
    a = ftp_packet(b"site exec %p")
    c = Content(b"SITE EXEC", nocase=True)
    assert eval_criterion(c, a) == naive_find(b"site exec", bytes(b | 0x20 if 65 <= b <= 90 else b
                                                                  for b in b"site exec %p"))
    assert eval_criterion(c, a)
    assert not eval_criterion(Content(b"SITE EXEC"), a)


@given(st.binary(min_size=1, max_size=4), st.binary(max_size=40),
       st.one_of(st.none(), st.integers(0, 10)), st.one_of(st.none(), st.integers(0, 30)))
def test_content_window_against_naive_scan(pattern, payload, offset, extra):
    depth = None if extra is None else len(pattern) + extra
    c = Content(pattern, depth=depth, offset=offset)
    start = offset or 0
    window = payload[start:start + depth] if depth is not None else payload[start:]
    assert eval_criterion(c, ftp_packet(payload)) == naive_find(pattern, window)


def test_fig2_full_match_on_published_payload():
    s = parse_rule(FIG2_RULE)
    assert match_full(s, ftp_packet(KNOWN_PAYLOAD), NV)
    assert partial_score(s, ftp_packet(KNOWN_PAYLOAD), NV) == 1


def test_fig2_variant_scores_five_sixths():
    s = parse_rule(FIG2_RULE)
    a = ftp_packet(b"SITE EXEC " + b"%p" * 12 + b"\n")
    truth = [eval_criterion(c, a, NV) for c in s.criteria]
    assert truth == [True, True, True, True, True, False]
    assert not match_full(s, a, NV)
    assert partial_score(s, a, NV) == Fraction(5, 6)


def test_zero_score():
    s = parse_rule(FIG2_RULE)
    a = antigen(udp_frame("10.1.1.9", "10.0.0.2", 53, 53, payload=b"zz"))
    assert partial_score(s, a, NV) == 0
    assert not match_full(s, a, NV)


def test_flow_established_needs_ack():
    f = Flow(("to_server", "established"), "21")
    assert eval_criterion(f, ftp_packet(b"", flags=TCP_ACK))
    assert not eval_criterion(f, ftp_packet(b"", flags=TCP_SYN))
    assert not eval_criterion(f, ftp_packet(b"", flags=TCP_ACK, dport=22))


def test_flags_and_dsize():
    xmas = ftp_packet(b"", flags=0x29)
    assert eval_criterion(Flags(0x29, "", 0xC0), xmas)
    assert not eval_criterion(Flags(0x29), ftp_packet(b"", flags=0x10))
    assert eval_criterion(Dsize(">", 3), ftp_packet(b"abcd"))
    assert eval_criterion(Dsize("<>", 2, 4), ftp_packet(b"abc"))
    assert not eval_criterion(Dsize("=", 2), ftp_packet(b"abc"))


def test_negated_net():
    c = SrcNet("$EXTERNAL_NET")
    assert eval_criterion(c, ftp_packet(b"", src="10.0.0.2"), NV)
    assert not eval_criterion(c, ftp_packet(b"", src="10.1.1.77"), NV)


def test_port_ranges_and_lists():
    assert eval_criterion(SrcPort("3000:4000"), ftp_packet(b""))
    assert eval_criterion(DstPort("[20,21]"), ftp_packet(b""))
    assert not eval_criterion(DstPort("!21"), ftp_packet(b""))


# --- exploit map -------------------------------------------------------------


def gd(extra=""):
    return load_graph_def(
        "exploit ftp-fmt vuln=fmt port=21 refs=CVE-2000-0573\n"
        "exploit other vuln=x port=80 refs=CVE-1999-0001\n" + extra)


def test_exploit_map_cases():
    rs = load_rules(FIG2_RULE + "\n"
                    'alert tcp any any -> any any (msg:"n"; sid:5; content:"x";)\n')
    m = build_exploit_map(rs, gd())
    assert m.sig_to_exploit == {1971: "ftp-fmt"}
    assert m.exploit_to_sigs["ftp-fmt"] == {1971}
    assert m.exploit_of(5) is None


def test_ambiguous_mapping_and_pin():
    rs = load_rules('alert tcp any any -> any any (msg:"a"; sid:9; content:"x"; '
                    'reference:cve,2000-0573; reference:cve,1999-0001;)\n')
    with pytest.raises(AmbiguousMapping):
        build_exploit_map(rs, gd())
    m = build_exploit_map(rs, gd("sigmap 9 -> other\n"))
    assert m.exploit_of(9) == "other"


def test_scenario_map(exploit_map):
    assert exploit_map.exploit_of(1971) == "ftp-fmt"
    assert exploit_map.exploit_of(1228) == "nmap-scan"
    assert exploit_map.exploit_of(1000001) == "rootkit-download"
    assert exploit_map.exploit_of(336) is None


# --- properties --------------------------------------------------------------

spec_addr = st.sampled_from(["10.1.1.0/24", "!10.1.1.0/24", "10.0.0.2", "[10.0.0.0/8,192.168.0.1]"])
spec_port = st.sampled_from(["21", "!21", "1:1024", "[21,23]", "3432"])
content_pat = st.binary(min_size=1, max_size=6).filter(lambda b: b"\n" not in b)


@st.composite
def criteria(draw):
    out = [Proto(draw(st.sampled_from(["tcp", "udp"])))]
    if draw(st.booleans()):
        out.append(SrcNet(draw(spec_addr)))
    if draw(st.booleans()):
        out.append(DstNet(draw(spec_addr)))
    if draw(st.booleans()):
        out.append(SrcPort(draw(spec_port)))
    if draw(st.booleans()):
        out.append(DstPort(draw(spec_port)))
    tcp = out[0].proto == "tcp"
    if tcp and draw(st.booleans()):
        opts = draw(st.sampled_from([("to_server", "established"), ("established",),
                                     ("stateless",)]))
        dport = next((c.spec for c in out if isinstance(c, DstPort)), "any")
        out.append(Flow(opts, dport if "to_server" in opts else "any"))
    for _ in range(draw(st.integers(0, 2))):
        pat = draw(content_pat)
        depth = draw(st.one_of(st.none(), st.integers(len(pat), len(pat) + 8)))
        out.append(Content(pat, depth, draw(st.one_of(st.none(), st.integers(0, 4))),
                           draw(st.booleans())))
    if draw(st.booleans()):
        out.append(Dsize(draw(st.sampled_from(["<", ">", "="])), draw(st.integers(0, 30))))
    if tcp and draw(st.booleans()):
        out.append(Flags(draw(st.sampled_from([0x02, 0x10, 0x18, 0x29])),
                         draw(st.sampled_from(["", "+", "*", "!"]))))
    return tuple(out)


signatures = st.builds(lambda cs, sid: Signature(sid, "gen", cs), criteria(),
                       st.integers(1, 10**6))


@st.composite
def antigens(draw):
    payload = draw(st.one_of(st.binary(max_size=24),
                             st.sampled_from([b"SITE EXEC %p%p\n", KNOWN_PAYLOAD])))
    src = draw(st.sampled_from(["10.0.0.2", "10.1.1.9", "192.168.0.1"]))
    sport, dport = draw(st.sampled_from([3432, 21, 80])), draw(st.sampled_from([21, 23, 80]))
    if draw(st.integers(0, 4)) == 0:
        return antigen(udp_frame(src, "10.1.1.5", sport, dport, payload=payload))
    return antigen(tcp_frame(src, "10.1.1.5", sport, dport,
                             flags=draw(st.sampled_from([0x02, 0x10, 0x18, 0x29, 0x12])),
                             payload=payload))


@settings(max_examples=200)
@given(signatures)
def test_round_trip(sig):
    text = serialize_rule(sig)
    again = parse_rule(text)
    assert again.criteria == sig.criteria
    assert again.sid == sig.sid


@settings(max_examples=300)
@given(signatures, antigens())
def test_score_one_iff_full_match(sig, a):
    assert (partial_score(sig, a, NV) == 1) == match_full(sig, a, NV)


@settings(max_examples=200)
@given(signatures, antigens(), st.data())
def test_removing_criterion_never_raises_numerator_loss(sig, a, data):
    if len(sig.criteria) < 2:
        return
    i = data.draw(st.integers(0, len(sig.criteria) - 1))
    smaller = Signature(sig.sid, sig.msg, sig.criteria[:i] + sig.criteria[i + 1:])
    full = sum(eval_criterion(c, a, NV) for c in sig.criteria)
    less = sum(eval_criterion(c, a, NV) for c in smaller.criteria)
    # the numerator can only shrink by the dropped criterion's own contribution
    assert less == full - eval_criterion(sig.criteria[i], a, NV)
    assert less <= full


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(1, 50), st.sampled_from(["a", "b", "c", "d"])),
                max_size=30))
def test_map_well_formed(pairs):
    from immunids.rules import ExploitMap
    seen = {}
    clean = [(s, e) for s, e in pairs if seen.setdefault(s, e) == e]
    m = ExploitMap.from_pairs(clean)
    for e, sids in m.exploit_to_sigs.items():
        for sid in sids:
            assert m.sig_to_exploit[sid] == e
    assert set(m.sig_to_exploit) == set().union(set(), *m.exploit_to_sigs.values())
