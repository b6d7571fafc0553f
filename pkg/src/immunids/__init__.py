"""Immune-inspired detection of novel attack variants on top of alert correlation."""

from .attack_graph import (
    Alert,
    CorrelationGraph,
    GraphDef,
    StateChange,
    VertexState,
    load_graph_def,
)
from .immune_core import (
    CandidateReport,
    DendriticCell,
    Presentation,
    Signal,
    dc_capture,
    dc_signal,
    migrate,
    spawn_dc,
    tcell_select,
)
from .packet_codec import Antigen, PacketRecord, decode_packet, feature_catalog
from .pipeline import Metrics, detect, emit_report, evaluate, run_detect
from .rules import (
    ExploitMap,
    RuleSet,
    Signature,
    build_exploit_map,
    load_rules,
    match_full,
    parse_rule,
    partial_score,
)
from .trace_tools import Trace, merge_traces, read_pcap, write_pcap

__version__ = "0.1.0"
