"""Synchronization oracles over per-transaction snapshot traces.

Writing σ(s) for the off-chain snapshot taken at lifecycle state s:

* Assertion 1 (premature update): if σ(created) differs from σ(finalized),
  then σ(pending) must also differ from σ(finalized). A violation means the
  DApp already showed the final effect while the tx was merely pending —
  a Type-I bug. Partial interim updates at pending are fine as long as they
  differ from the final state.
* Assertion 2 (missing rollback): σ(pending) must equal σ(reversed). A
  violation means effects applied at execution survived the reversal —
  a Type-II bug.

Missing or incomparable snapshots make a check inconclusive, never a
violation. Assertion 1 reads only created/pending/finalized; assertion 2
reads only pending/reversed (all at visit 1; strict mode additionally
requires every pool-entry snapshot — each pending and reversed visit — to
be pairwise equal).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from . import encoding
from .documents import DiffEntry
from .lifecycle import LifecycleState
from .snapshots import IncomparableSnapshots, Snapshot, SnapshotStage, snapshot_diff, snapshot_equal

STAGE_CREATED = SnapshotStage(LifecycleState.CREATED, 1)
STAGE_PENDING = SnapshotStage(LifecycleState.PENDING, 1)
STAGE_REVERSED = SnapshotStage(LifecycleState.REVERSED, 1)
STAGE_FINALIZED = SnapshotStage(LifecycleState.FINALIZED, 1)


class BugType(Enum):
    TYPE_I = "type-1"
    TYPE_II = "type-2"


class VerdictKind(Enum):
    PASS = "pass"
    VIOLATION = "violation"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class Evidence:
    """The snapshot pair a verdict rests on, with their document diff."""

    stage_a: SnapshotStage
    stage_b: SnapshotStage
    diff: tuple[DiffEntry, ...]


@dataclass(frozen=True)
class Verdict:
    assertion: int
    kind: VerdictKind
    evidence: Evidence | None = None
    reason: str | None = None


@dataclass
class TransactionSnapshotTrace:
    """All snapshots captured for one transaction, keyed by stage."""

    tx_hash: bytes
    tag: str | None = None
    snapshots: dict[SnapshotStage, Snapshot] = field(default_factory=dict)
    complete: bool = True

    def add(self, snapshot: Snapshot) -> None:
        self.snapshots[snapshot.stage] = snapshot

    def get(self, stage: SnapshotStage) -> Snapshot | None:
        return self.snapshots.get(stage)


@dataclass(frozen=True)
class BugReport:
    bug_type: BugType
    tx_hash: bytes
    tag: str | None
    violated_assertion: int
    evidence: Evidence
    narrative: str


@dataclass(frozen=True)
class TraceAnalysis:
    assertion_1: Verdict
    assertion_2: Verdict
    reports: tuple[BugReport, ...]


def _missing(trace: TransactionSnapshotTrace, stages: Iterable[SnapshotStage]) -> list[str]:
    return [stage.label for stage in stages if trace.get(stage) is None]


def check_assertion_1(trace: TransactionSnapshotTrace) -> Verdict:
    """σ(created) ≠ σ(finalized) ⇒ σ(pending) ≠ σ(finalized)."""
    missing = _missing(trace, (STAGE_CREATED, STAGE_PENDING, STAGE_FINALIZED))
    if missing:
        return Verdict(
            1,
            VerdictKind.INCONCLUSIVE,
            reason=f"missing snapshots: {', '.join(missing)}",
        )
    created = trace.snapshots[STAGE_CREATED]
    pending = trace.snapshots[STAGE_PENDING]
    finalized = trace.snapshots[STAGE_FINALIZED]
    try:
        if snapshot_equal(created, finalized):
            # The tx changed nothing observable; the implication is vacuous.
            return Verdict(1, VerdictKind.PASS, reason="no observable effect between created and finalized")
        if snapshot_equal(pending, finalized):
            evidence = Evidence(
                STAGE_CREATED,
                STAGE_FINALIZED,
                tuple(snapshot_diff(created, finalized)),
            )
            return Verdict(1, VerdictKind.VIOLATION, evidence=evidence)
    except IncomparableSnapshots as exc:
        return Verdict(1, VerdictKind.INCONCLUSIVE, reason=str(exc))
    evidence = Evidence(STAGE_PENDING, STAGE_FINALIZED, tuple(snapshot_diff(pending, finalized)))
    return Verdict(1, VerdictKind.PASS, evidence=evidence)


def check_assertion_2(trace: TransactionSnapshotTrace, strict: bool = False) -> Verdict:
    """σ(pending) = σ(reversed); strict mode compares every pool-entry visit."""
    missing = _missing(trace, (STAGE_PENDING, STAGE_REVERSED))
    if missing:
        return Verdict(
            2,
            VerdictKind.INCONCLUSIVE,
            reason=f"missing snapshots: {', '.join(missing)}",
        )
    stages = [STAGE_PENDING, STAGE_REVERSED]
    if strict:
        extra = [
            stage
            for stage in trace.snapshots
            if stage.state in (LifecycleState.PENDING, LifecycleState.REVERSED)
            and stage not in stages
        ]
        stages.extend(sorted(extra, key=lambda s: (s.state.value, s.visit_index)))
    baseline = trace.snapshots[stages[0]]
    try:
        for stage in stages[1:]:
            other = trace.snapshots[stage]
            if not snapshot_equal(baseline, other):
                evidence = Evidence(stages[0], stage, tuple(snapshot_diff(baseline, other)))
                return Verdict(2, VerdictKind.VIOLATION, evidence=evidence)
    except IncomparableSnapshots as exc:
        return Verdict(2, VerdictKind.INCONCLUSIVE, reason=str(exc))
    return Verdict(2, VerdictKind.PASS)


def _narrative(trace: TransactionSnapshotTrace, bug_type: BugType, evidence: Evidence) -> str:
    tx = encoding.to_hex(trace.tx_hash)[:12]
    paths = [".".join(entry.path) or "(root)" for entry in evidence.diff[:3]]
    shown = ", ".join(paths) if paths else "(document identical)"
    suffix = ", ..." if len(evidence.diff) > 3 else ""
    if bug_type is BugType.TYPE_I:
        return (
            f"tx {tx}: off-chain state at {STAGE_PENDING.label} already matched the finalized "
            f"state although the transaction was not confirmed yet; the update visible between "
            f"{evidence.stage_a.label} and {evidence.stage_b.label} ({shown}{suffix}) was applied prematurely."
        )
    return (
        f"tx {tx}: off-chain state at {evidence.stage_b.label} still differs from "
        f"{evidence.stage_a.label} ({shown}{suffix}); effects applied at execution were not "
        f"rolled back when the chain reorganization reversed the transaction."
    )


def evaluate(trace: TransactionSnapshotTrace, strict_pool_equality: bool = False) -> TraceAnalysis:
    """Run both assertions and materialize bug reports for the violations."""
    verdict_1 = check_assertion_1(trace)
    verdict_2 = check_assertion_2(trace, strict=strict_pool_equality)
    reports: list[BugReport] = []
    if verdict_1.kind is VerdictKind.VIOLATION and verdict_1.evidence is not None:
        reports.append(
            BugReport(
                bug_type=BugType.TYPE_I,
                tx_hash=trace.tx_hash,
                tag=trace.tag,
                violated_assertion=1,
                evidence=verdict_1.evidence,
                narrative=_narrative(trace, BugType.TYPE_I, verdict_1.evidence),
            )
        )
    if verdict_2.kind is VerdictKind.VIOLATION and verdict_2.evidence is not None:
        reports.append(
            BugReport(
                bug_type=BugType.TYPE_II,
                tx_hash=trace.tx_hash,
                tag=trace.tag,
                violated_assertion=2,
                evidence=verdict_2.evidence,
                narrative=_narrative(trace, BugType.TYPE_II, verdict_2.evidence),
            )
        )
    return TraceAnalysis(assertion_1=verdict_1, assertion_2=verdict_2, reports=tuple(reports))


def analyze(trace: TransactionSnapshotTrace, strict_pool_equality: bool = False) -> list[BugReport]:
    return list(evaluate(trace, strict_pool_equality).reports)


@dataclass(frozen=True)
class IssueGroup:
    """Reports sharing a functionality tag and bug type, deduplicated."""

    group_id: str
    tag: str
    bug_type: BugType
    count: int
    tx_hashes: tuple[bytes, ...]
    representative: BugReport


def group_reports(reports: Iterable[BugReport]) -> list[IssueGroup]:
    buckets: dict[tuple[str, BugType], list[BugReport]] = {}
    for report in reports:
        key = (report.tag or "untagged", report.bug_type)
        buckets.setdefault(key, []).append(report)
    groups = []
    for (tag, bug_type), bucket in sorted(buckets.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        groups.append(
            IssueGroup(
                group_id=f"{tag}:{bug_type.value}",
                tag=tag,
                bug_type=bug_type,
                count=len(bucket),
                tx_hashes=tuple(r.tx_hash for r in bucket),
                representative=bucket[0],
            )
        )
    return groups
