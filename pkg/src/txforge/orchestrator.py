"""Session orchestration: drives transactions through lifecycle plans,
captures snapshots at every stage, runs the oracles, and writes reports.

Two batch modes exist. ``traverse`` walks one transaction at a time through
the configured plan (submissions are serialized; a new tx waits at created
until the active traversal ends). ``soak`` submits everything up front and
lets the stochastic stepper mine/reorg/drop under seeded probabilities,
capturing snapshots on every observed transition.

Sessions optionally record a JSONL log (format ``txforge-log/1``) from which
``replay_session`` rebuilds traces, re-executes traversal transitions, and
re-runs the analysis without refetching any snapshot.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

from . import encoding
from .chain import Chain, Transaction
from .clock import Clock, SimulatedClock, WallClock
from .config import SessionConfig
from .documents import FieldRuleSet, canonical_json, parse_json_document
from .events import EventHub
from .lifecycle import (
    LifecycleController,
    LifecycleError,
    LifecycleState,
    StageHooks,
    TERMINAL_STATES,
    VALID_EDGES,
)
from .mocks import FUNCTIONALITY_TAGS, MockDApp
from .node import NodeGateway, parse_wire_transaction
from .oracle import TransactionSnapshotTrace, evaluate
from .reporting import SessionReport, TxOutcome, render_text, report_to_json_bytes, report_to_mapping
from .snapshots import (
    CaptureError,
    FileDumpSource,
    HttpEndpointSource,
    InProcessSource,
    Snapshot,
    SnapshotCollector,
    SnapshotSource,
    SnapshotStage,
)

LOG_FORMAT = "txforge-log/1"


class OrchestratorError(Exception):
    pass


class ReplayError(OrchestratorError):
    pass


class SessionRecorder:
    """Append-only JSONL log of everything a replay needs."""

    def __init__(self, stream: TextIO, session_meta: dict):
        self._stream = stream
        self._write({"format": LOG_FORMAT, "session": session_meta})

    def _write(self, record: dict) -> None:
        self._stream.write(json.dumps(record, sort_keys=True) + "\n")

    def record_tx(self, index: int, tx: Transaction) -> None:
        self._write(
            {
                "type": "tx",
                "index": index,
                "tx_hash": tx.hash_hex,
                "tag": tx.tag,
                "sender": tx.sender.hex(),
                "nonce": tx.nonce,
                "target": tx.target.hex(),
                "payload": [op.to_wire() for op in tx.payload],
            }
        )

    def record_snapshot(self, snapshot: Snapshot) -> None:
        self._write(
            {
                "type": "snapshot",
                "tx_hash": encoding.to_hex(snapshot.tx_hash),
                "stage": snapshot.stage.label,
                "captured_at": snapshot.captured_at,
                "source_id": snapshot.source_id,
                "rules_fingerprint": snapshot.rules_fingerprint,
                "document_json": canonical_json(snapshot.document),
            }
        )

    def record_trace_end(self, tx_hash: bytes, steps: list, complete: bool) -> None:
        self._write(
            {
                "type": "trace_end",
                "tx_hash": encoding.to_hex(tx_hash),
                "steps": steps,
                "complete": complete,
            }
        )

    def finish(self, transactions: int) -> None:
        self._write({"type": "end", "transactions": transactions})
        self._stream.flush()


class _CaptureHooks(StageHooks):
    """Stage hook that polls (if applicable) and captures one snapshot."""

    def __init__(
        self,
        session: "Session",
        trace: TransactionSnapshotTrace,
    ) -> None:
        self._session = session
        self._trace = trace

    def on_stage(self, state: LifecycleState, visit_index: int) -> None:
        self._session.capture_stage(self._trace, SnapshotStage(state, visit_index))


@dataclass
class _DriverState:
    cycle_position: int = 0


class Session:
    """One configured run: components wired, ready to traverse or soak."""

    def __init__(
        self,
        config: SessionConfig,
        dapp: MockDApp | None = None,
        source: SnapshotSource | None = None,
        log_stream: TextIO | None = None,
    ) -> None:
        self.config = config
        self.clock: Clock = SimulatedClock() if config.clock == "simulated" else WallClock()
        self.chain = Chain()
        self.hub = EventHub()
        self.lock = threading.RLock()
        self.controller = LifecycleController(
            self.chain, self.hub, self.clock, confirmations_required=config.confirmations
        )
        self.dapp = dapp
        if self.dapp is None and config.source == "in_process":
            self.dapp = MockDApp(
                strategy=config.strategy,
                flags=config.bug_flags,
                clock=self.clock,
                confirmations_required=config.confirmations,
            )
        if self.dapp is not None:
            self.hub.add_listener(self.dapp.on_event)
        self.gateway = NodeGateway(self.chain, self.controller, self.hub, lock=self.lock)
        self.rules = config.field_rules
        if self.rules is None:
            self.rules = self.dapp.recommended_rules() if self.dapp else FieldRuleSet()
        self.source = source or self._build_source()
        self.collector = SnapshotCollector(self.source, self.rules, self.clock, config.wait_window)
        self.traces: dict[bytes, TransactionSnapshotTrace] = {}
        self._driver = _DriverState()
        self._recorder: SessionRecorder | None = None
        if log_stream is not None:
            self._recorder = SessionRecorder(log_stream, self.session_meta())

    def _build_source(self) -> SnapshotSource:
        config = self.config
        if config.source == "http":
            return HttpEndpointSource(config.source_url or "")
        if config.source == "file":
            return FileDumpSource(config.source_path or "")
        if self.dapp is None:
            raise OrchestratorError("in_process source requires a mock DApp")
        return InProcessSource("mock:" + self.dapp.name, self.dapp.snapshot_document)

    def session_meta(self) -> dict:
        config = self.config
        meta = {
            "mode": config.mode,
            "seed": config.seed,
            "transactions": config.transactions,
            "plan": [state.value for state in config.plan],
            "confirmations": config.confirmations,
            "wait_window": config.wait_window,
            "clock": config.clock,
            "strategy": config.strategy.value,
            "bug_flags": {
                "type1_premature_update": config.bug_flags.type1_premature_update,
                "type2_no_rollback": config.bug_flags.type2_no_rollback,
                "rollback_cleared_on_restart": config.bug_flags.rollback_cleared_on_restart,
                "laggy_update": config.bug_flags.laggy_update,
            },
            "source": config.source,
            "strict_pool_equality": config.strict_pool_equality,
            "rules_fingerprint": self.rules.fingerprint if hasattr(self, "rules") else None,
        }
        if config.mode == "soak":
            meta["ticks"] = config.ticks
            meta["reorg_probability"] = config.reorg_probability
            meta["drop_probability"] = config.drop_probability
            meta["execution_probability"] = config.execution_probability
        return meta

    # -------------------------------------------------------------- capturing

    def capture_stage(self, trace: TransactionSnapshotTrace, stage: SnapshotStage) -> None:
        if self.dapp is not None:
            self.dapp.poll_tick(self.gateway)
        snapshot = self.collector.capture(trace.tx_hash, stage)
        trace.add(snapshot)
        if self._recorder is not None:
            self._recorder.record_snapshot(snapshot)

    # ----------------------------------------------------------------- driving

    def next_transaction(self) -> Transaction:
        """Pick the next functionality in rotation and build its transaction."""
        if self.dapp is None:
            raise OrchestratorError("driving transactions requires a mock DApp")
        tag = FUNCTIONALITY_TAGS[self._driver.cycle_position % len(FUNCTIONALITY_TAGS)]
        self._driver.cycle_position += 1
        if not self.dapp.can(tag):
            tag = "create"
        nonce = self.gateway.next_nonce(self.dapp.sender)
        return self.dapp.invoke(tag, nonce)

    def run(self) -> SessionReport:
        if self.config.mode == "soak":
            report = self._run_soak()
        else:
            report = self._run_traverse()
        if self._recorder is not None:
            for tx_hash, trace in self.traces.items():
                lifecycle_trace = self.controller.trace(tx_hash)
                self._recorder.record_trace_end(
                    tx_hash,
                    [
                        {
                            "state": step.state.value,
                            "visit": step.visit_index,
                        }
                        for step in lifecycle_trace.steps
                    ],
                    lifecycle_trace.complete,
                )
            self._recorder.finish(len(self.traces))
        return report

    def _register(self, index: int, tx: Transaction) -> TransactionSnapshotTrace:
        self.controller.register(tx)
        trace = TransactionSnapshotTrace(tx_hash=tx.hash, tag=tx.tag)
        self.traces[tx.hash] = trace
        if self._recorder is not None:
            self._recorder.record_tx(index, tx)
        return trace

    def _run_traverse(self) -> SessionReport:
        outcomes: list[TxOutcome] = []
        for index in range(self.config.transactions):
            tx = self.next_transaction()
            trace = self._register(index, tx)
            lifecycle_trace = self.controller.run_traversal(
                tx.hash, self.config.plan, _CaptureHooks(self, trace)
            )
            trace.complete = lifecycle_trace.complete
            if not lifecycle_trace.complete:
                self._force_terminate(tx.hash)
            outcomes.append(self._outcome(index, tx, trace))
        return self._report(outcomes)

    def _run_soak(self) -> SessionReport:
        profile = self.config.stochastic_profile()
        order: list[Transaction] = []
        for index in range(self.config.transactions):
            tx = self.next_transaction()
            trace = self._register(index, tx)
            order.append(tx)
            self.capture_stage(trace, SnapshotStage(LifecycleState.CREATED, 1))
            self.controller.advance(tx.hash, LifecycleState.PENDING)
            self.capture_stage(trace, SnapshotStage(LifecycleState.PENDING, 1))
        for _ in range(self.config.ticks):
            records = self.controller.stochastic_step(profile)
            for record in records:
                trace = self.traces.get(record.tx_hash)
                if trace is not None:
                    self.capture_stage(
                        trace, SnapshotStage(record.target, record.visit_index)
                    )
            self.clock.sleep(1)
            if all(
                self.controller.current_state(tx.hash) in TERMINAL_STATES for tx in order
            ):
                break
        outcomes = [
            self._outcome(index, tx, self.traces[tx.hash]) for index, tx in enumerate(order)
        ]
        return self._report(outcomes)

    def _force_terminate(self, tx_hash: bytes) -> None:
        """After an aborted traversal, push the orphan tx to a terminal state
        so the next traversal starts from a quiet system."""
        state = self.controller.current_state(tx_hash)
        try:
            if state in (LifecycleState.PENDING, LifecycleState.REVERSED):
                self.controller.advance(tx_hash, LifecycleState.DROPPED)
            elif state is LifecycleState.EXECUTED:
                self.controller.advance(tx_hash, LifecycleState.FINALIZED)
        except LifecycleError:  # pragma: no cover - defensive
            pass

    def _outcome(self, index: int, tx: Transaction, trace: TransactionSnapshotTrace) -> TxOutcome:
        lifecycle_trace = self.controller.trace(tx.hash)
        return TxOutcome(
            index=index,
            tx_hash=tx.hash,
            tag=tx.tag,
            lifecycle=[step.state.value for step in lifecycle_trace.steps],
            complete=lifecycle_trace.complete,
            analysis=evaluate(trace, self.config.strict_pool_equality),
        )

    def _report(self, outcomes: list[TxOutcome]) -> SessionReport:
        return SessionReport(session=self.session_meta(), outcomes=outcomes)


def run_session(config: SessionConfig, out_dir: str | Path | None = None) -> SessionReport:
    """Run a batch session, writing report.json/report.txt/session.log.jsonl."""
    out_path = Path(out_dir) if out_dir is not None else None
    log_stream = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        if config.record_log:
            log_stream = (out_path / "session.log.jsonl").open("w", encoding="utf-8")
    try:
        session = Session(config, log_stream=log_stream)
        report = session.run()
    finally:
        if log_stream is not None:
            log_stream.close()
    if out_path is not None:
        declared = session.dapp.functionalities() if session.dapp else ()
        (out_path / "report.json").write_bytes(report_to_json_bytes(report, declared))
        mapping = report_to_mapping(report, declared)
        (out_path / "report.txt").write_text(render_text(mapping), encoding="utf-8")
    return report


# ---------------------------------------------------------------------- replay


def _read_log(log_path: str | Path) -> tuple[dict, list[dict]]:
    try:
        lines = Path(log_path).read_text("utf-8").splitlines()
    except OSError as exc:
        raise ReplayError(f"cannot read log {log_path}: {exc}") from exc
    if not lines:
        raise ReplayError("log is empty")
    records = []
    for i, line in enumerate(lines):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ReplayError(f"log line {i + 1} is not valid JSON: {exc}") from exc
    header = records[0]
    if header.get("format") != LOG_FORMAT:
        raise ReplayError(
            f"unsupported log format {header.get('format')!r}, expected {LOG_FORMAT}"
        )
    if not records[1:] or records[-1].get("type") != "end":
        raise ReplayError("log is truncated: missing end record")
    return header, records[1:]


def replay_session(log_path: str | Path) -> SessionReport:
    """Rebuild a recorded session from its log and re-run the analysis.

    Snapshots are read from the log instead of refetched. For traversal
    sessions the lifecycle transitions are re-executed against a fresh chain
    (validating that the logged walk is actually performable); soak logs are
    validated as legal lifecycle walks without chain re-execution, since
    interleaved block contents cannot be reconstructed from per-tx records.
    """
    header, records = _read_log(log_path)
    meta = header.get("session", {})
    mode = meta.get("mode", "traverse")
    strict = bool(meta.get("strict_pool_equality", False))

    txs: list[dict] = [r for r in records if r.get("type") == "tx"]
    snapshots = [r for r in records if r.get("type") == "snapshot"]
    trace_ends = {r["tx_hash"]: r for r in records if r.get("type") == "trace_end"}
    end = records[-1]
    if end.get("transactions") != len(txs):
        raise ReplayError(
            f"log is inconsistent: end record says {end.get('transactions')} txs, found {len(txs)}"
        )

    chain = Chain()
    hub = EventHub()
    clock = SimulatedClock()
    controller = LifecycleController(
        chain, hub, clock, confirmations_required=int(meta.get("confirmations", 6))
    )

    parsed: dict[str, Transaction] = {}
    straces: dict[str, TransactionSnapshotTrace] = {}
    for record in txs:
        tx = parse_wire_transaction(
            {
                "sender": record["sender"],
                "nonce": record["nonce"],
                "target": record["target"],
                "payload": record["payload"],
                "tag": record.get("tag"),
            }
        )
        if tx.hash_hex != record["tx_hash"]:
            raise ReplayError(f"log is inconsistent: recomputed hash differs for {record['tx_hash']}")
        parsed[record["tx_hash"]] = tx
        controller.register(tx)
        straces[record["tx_hash"]] = TransactionSnapshotTrace(tx_hash=tx.hash, tag=tx.tag)

    for record in snapshots:
        key = record["tx_hash"]
        if key not in straces:
            raise ReplayError(f"log is inconsistent: snapshot for unknown tx {key}")
        try:
            document = parse_json_document(record["document_json"])
        except Exception as exc:
            raise ReplayError(f"log snapshot for {key} is corrupt: {exc}") from exc
        stage = SnapshotStage.parse(record["stage"])
        straces[key].add(
            Snapshot(
                tx_hash=parsed[key].hash,
                stage=stage,
                captured_at=record.get("captured_at", 0),
                source_id=record.get("source_id", "log"),
                document=document,
                rules_fingerprint=record.get("rules_fingerprint", ""),
            )
        )

    for record in txs:
        key = record["tx_hash"]
        end_record = trace_ends.get(key)
        if end_record is None:
            raise ReplayError(f"log is truncated: no trace end for {key}")
        steps = end_record.get("steps", [])
        if not steps or steps[0].get("state") != LifecycleState.CREATED.value:
            raise ReplayError(f"log is inconsistent: trace for {key} does not start at created")
        states = [LifecycleState(step["state"]) for step in steps]
        if mode == "traverse":
            tx = parsed[key]
            for state, step in zip(states[1:], steps[1:]):
                trace = controller.trace(tx.hash)
                done = any(
                    s.state is state and s.visit_index == step.get("visit") for s in trace.steps
                )
                if done:
                    continue
                try:
                    controller.advance(tx.hash, state)
                except Exception as exc:
                    raise ReplayError(f"log transitions are not performable for {key}: {exc}") from exc
        else:
            for source, target in zip(states, states[1:]):
                if (source, target) not in VALID_EDGES:
                    raise ReplayError(
                        f"log is inconsistent: illegal transition {source.value} -> {target.value} for {key}"
                    )

    outcomes = []
    for index, record in enumerate(txs):
        key = record["tx_hash"]
        end_record = trace_ends[key]
        strace = straces[key]
        strace.complete = bool(end_record.get("complete", False))
        outcomes.append(
            TxOutcome(
                index=index,
                tx_hash=parsed[key].hash,
                tag=record.get("tag"),
                lifecycle=[step["state"] for step in end_record.get("steps", [])],
                complete=strace.complete,
                analysis=evaluate(strace, strict),
            )
        )
    return SessionReport(session=meta, outcomes=outcomes)
