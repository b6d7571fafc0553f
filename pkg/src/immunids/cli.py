"""Command-line driver: detect, merge, synth, eval, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from . import pipeline, scenario
from .attack_graph import GraphError
from .packet_codec import DecodeError
from .rules import RuleError
from .trace_tools import (
    EmptyTrace,
    PcapError,
    merge_with_origin,
    read_labels,
    read_pcap,
    remap_labels,
    write_labels,
    write_pcap,
)

log = logging.getLogger("immunids")

INPUT_ERRORS = (RuleError, GraphError, PcapError, DecodeError, EmptyTrace, OSError, ValueError)


def _tau(text: str) -> Fraction:
    try:
        tau = Fraction(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < tau < 1:
        raise argparse.ArgumentTypeError("tau must lie strictly between 0 and 1")
    return tau


def cmd_detect(args) -> int:
    metrics, result = pipeline.run_detect(
        args.rules, args.graph, args.pcap, args.tau, args.out,
        dc_capacity=args.dc_capacity, alerts_path=args.alerts,
        labels_path=args.labels, run_id=args.run_id)
    sys.stdout.write(pipeline.emit_report(metrics))
    unresolved = [r for r in result.dcs if r.outcome == "unresolved"]
    if unresolved:
        print(f"# {len(unresolved)} dendritic cell(s) unresolved at end of trace")
    if metrics.decode_errors:
        print(f"# {metrics.decode_errors} packet(s) skipped as undecodable")
    return 0


def cmd_merge(args) -> int:
    base = read_pcap(args.base)
    attack = read_pcap(args.attack)
    merged, origin = merge_with_origin(base, attack)
    labels = read_labels(args.labels) if args.labels else None
    write_pcap(args.out, merged)
    if labels is not None:
        out_labels = args.out_labels or str(Path(args.out).with_suffix(".labels"))
        write_labels(out_labels, remap_labels(labels, origin))
    print(f"merged {len(base)} + {len(attack)} -> {len(merged)} packets")
    return 0


def cmd_synth(args) -> int:
    cfg = scenario.ScenarioConfig(seed=args.seed, scan_ports=args.scan_ports,
                                  shell_output_segments=args.shell_segments,
                                  background_sessions=args.background_sessions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    attack, labels = scenario.synth_attack(cfg)
    write_pcap(out / "attack.pcap", attack)
    write_labels(out / "attack.labels", labels)
    trace, final_labels = attack, labels
    if args.background_sessions or args.background_ratio:
        span = attack.records[-1].ts_micros - attack.records[0].ts_micros
        target = (int(args.background_ratio * len(attack))
                  if args.background_ratio else None)
        bg = scenario.synth_background(cfg, span, attack.records[0].ts_micros, target)
        write_pcap(out / "background.pcap", bg)
        trace, origin = merge_with_origin(bg, attack)
        final_labels = remap_labels(labels, origin)
    write_pcap(out / "scenario.pcap", trace)
    write_labels(out / "labels.txt", final_labels)
    (out / "rules.txt").write_text(scenario.RULES_TEXT, encoding="utf-8")
    (out / "graph.txt").write_text(scenario.GRAPH_TEXT, encoding="utf-8")
    print(f"wrote {len(trace)} packets ({len(final_labels)} labelled) to {out}")
    return 0


def cmd_eval(args) -> int:
    output = pipeline.read_candidates_tsv(args.candidates)
    labels = read_labels(args.labels)
    fp, fn = pipeline.evaluate(output, labels)
    print(f"output_packets\t{len(output)}")
    print(f"fp_rate\t{pipeline.format_rate(fp)}\t{fp if fp is not None else 'n/a'}")
    print(f"fn_rate\t{pipeline.format_rate(fn)}\t{fn}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for p in args.metrics:
        p = Path(p)
        if p.is_dir():
            p = p / "metrics.json"
        rows.append(pipeline.Metrics.from_json(json.loads(p.read_text(encoding="utf-8"))))
    sys.stdout.write(pipeline.emit_report(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="immunids", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run the detection pipeline over a pcap")
    p.add_argument("--rules", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--pcap", required=True)
    p.add_argument("--tau", type=_tau, default=Fraction(1, 2))
    p.add_argument("--dc-capacity", type=int, default=65536)
    p.add_argument("--alerts", help="alert log to use instead of inline matching")
    p.add_argument("--labels", help="ground-truth packet indices, one per line")
    p.add_argument("--run-id", default="run")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("merge", help="merge an attack trace into a background trace")
    p.add_argument("--base", required=True)
    p.add_argument("--attack", required=True)
    p.add_argument("--labels", help="attack-trace labels to carry over")
    p.add_argument("--out-labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("synth", help="synthesise the FTP format-string scenario")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--scan-ports", type=int, default=scenario.ScenarioConfig.scan_ports)
    p.add_argument("--shell-segments", type=int,
                   default=scenario.ScenarioConfig.shell_output_segments)
    p.add_argument("--background-sessions", type=int, default=0)
    p.add_argument("--background-ratio", type=float, default=None,
                   help="background size as a multiple of the attack trace")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score a candidate TSV against labels")
    p.add_argument("--candidates", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="combine metrics from detect runs into one table")
    p.add_argument("metrics", nargs="+", help="metrics.json files or detect output dirs")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"immunids {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
