"""txforge: a controllable transaction-lifecycle harness.

Drives transactions through a simulated chain — including silent drops and
reorg reversals — captures DApp state snapshots at each lifecycle stage, and
checks two assertions that catch premature updates (type-1) and missing
rollbacks (type-2) in off-chain state synchronization.
"""
from .chain import (
    Address,
    Block,
    Chain,
    ChainError,
    OpKind,
    ReorgReport,
    StateOp,
    SubmitOutcome,
    SubmitStatus,
    Transaction,
    apply_payload,
    recompute_canonical_head,
)
from .clock import Clock, SimulatedClock, WallClock
from .config import ConfigError, SessionConfig, config_from_mapping, load_config
from .documents import (
    DocumentError,
    FieldRule,
    FieldRuleSet,
    canonical_json,
    canonicalize,
    diff_documents,
    documents_equal,
    filter_document,
    parse_json_document,
)
from .events import ChainEvent, EventFilter, EventHub, EventKind, Subscription
from .lifecycle import (
    DEFAULT_CONFIRMATIONS,
    DEFAULT_TRAVERSAL_PLAN,
    LifecycleController,
    LifecycleError,
    LifecycleState,
    LifecycleTrace,
    StageHooks,
    StochasticProfile,
    validate_plan,
)
from .mocks import BugFlags, MockDApp, SyncStrategy
from .node import NodeError, NodeGateway, parse_wire_transaction
from .oracle import (
    BugReport,
    BugType,
    TraceAnalysis,
    TransactionSnapshotTrace,
    Verdict,
    VerdictKind,
    analyze,
    check_assertion_1,
    check_assertion_2,
    evaluate,
    group_reports,
)
from .orchestrator import OrchestratorError, ReplayError, Session, replay_session, run_session
from .reporting import SessionReport, TxOutcome, render_text, report_to_mapping
from .snapshots import (
    CaptureError,
    IncomparableSnapshots,
    Snapshot,
    SnapshotCollector,
    SnapshotStage,
)

__version__ = "0.1.0"

__all__ = [
    "Address",
    "Block",
    "BugFlags",
    "BugReport",
    "BugType",
    "CaptureError",
    "Chain",
    "ChainError",
    "ChainEvent",
    "Clock",
    "ConfigError",
    "DEFAULT_CONFIRMATIONS",
    "DEFAULT_TRAVERSAL_PLAN",
    "DocumentError",
    "EventFilter",
    "EventHub",
    "EventKind",
    "FieldRule",
    "FieldRuleSet",
    "IncomparableSnapshots",
    "LifecycleController",
    "LifecycleError",
    "LifecycleState",
    "LifecycleTrace",
    "MockDApp",
    "NodeError",
    "NodeGateway",
    "OpKind",
    "OrchestratorError",
    "ReorgReport",
    "ReplayError",
    "Session",
    "SessionConfig",
    "SessionReport",
    "SimulatedClock",
    "Snapshot",
    "SnapshotCollector",
    "SnapshotStage",
    "StageHooks",
    "StateOp",
    "StochasticProfile",
    "SubmitOutcome",
    "SubmitStatus",
    "Subscription",
    "SyncStrategy",
    "TraceAnalysis",
    "Transaction",
    "TransactionSnapshotTrace",
    "TxOutcome",
    "Verdict",
    "VerdictKind",
    "WallClock",
    "analyze",
    "apply_payload",
    "canonical_json",
    "canonicalize",
    "check_assertion_1",
    "check_assertion_2",
    "config_from_mapping",
    "diff_documents",
    "documents_equal",
    "evaluate",
    "filter_document",
    "group_reports",
    "load_config",
    "parse_json_document",
    "parse_wire_transaction",
    "recompute_canonical_head",
    "replay_session",
    "run_session",
    "render_text",
    "report_to_mapping",
    "validate_plan",
]
