"""Session reports: aggregation, JSON rendering, and the text summary."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Mapping, Sequence

from . import encoding
from .oracle import (
    BugReport,
    Evidence,
    IssueGroup,
    TraceAnalysis,
    TransactionSnapshotTrace,
    Verdict,
    VerdictKind,
    group_reports,
)

REPORT_FORMAT = "txforge-report/1"


@dataclass
class TxOutcome:
    """Everything the report needs about one driven transaction."""

    index: int
    tx_hash: bytes
    tag: str | None
    lifecycle: list[str]
    complete: bool
    analysis: TraceAnalysis


@dataclass
class SessionReport:
    session: dict
    outcomes: list[TxOutcome] = field(default_factory=list)

    @property
    def reports(self) -> list[BugReport]:
        out: list[BugReport] = []
        for outcome in self.outcomes:
            out.extend(outcome.analysis.reports)
        return out

    @property
    def groups(self) -> list[IssueGroup]:
        return group_reports(self.reports)

    def counts(self) -> dict:
        def bucket(picker) -> dict:
            totals = {kind.value: 0 for kind in VerdictKind}
            for outcome in self.outcomes:
                totals[picker(outcome).kind.value] += 1
            return totals

        assertion_1 = bucket(lambda o: o.analysis.assertion_1)
        assertion_2 = bucket(lambda o: o.analysis.assertion_2)
        return {
            "transactions": len(self.outcomes),
            "assertion_1": assertion_1,
            "assertion_2": assertion_2,
            "violations_total": assertion_1["violation"] + assertion_2["violation"],
            "inconclusive_total": sum(
                1
                for o in self.outcomes
                if VerdictKind.INCONCLUSIVE
                in (o.analysis.assertion_1.kind, o.analysis.assertion_2.kind)
            ),
        }

    @property
    def has_violations(self) -> bool:
        return self.counts()["violations_total"] > 0


def _plain(value: Any) -> Any:
    """Make evidence values JSON-native; decimals render as plain strings."""
    if isinstance(value, Decimal):
        return format(value, "f")
    if isinstance(value, Mapping):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _evidence_to_wire(evidence: Evidence | None) -> dict | None:
    if evidence is None:
        return None
    return {
        "stage_a": evidence.stage_a.label,
        "stage_b": evidence.stage_b.label,
        "diff": [_plain(entry.to_wire()) for entry in evidence.diff],
    }


def _verdict_to_wire(verdict: Verdict) -> dict:
    out: dict = {"verdict": verdict.kind.value}
    if verdict.reason:
        out["reason"] = verdict.reason
    if verdict.kind is VerdictKind.VIOLATION:
        out["evidence"] = _evidence_to_wire(verdict.evidence)
    return out


def report_to_mapping(report: SessionReport, declared_tags: Sequence[str] = ()) -> dict:
    exercised = sorted({o.tag for o in report.outcomes if o.tag})
    declared = sorted(declared_tags) or exercised
    coverage_ratio = (
        round(len([t for t in declared if t in exercised]) / len(declared), 4) if declared else 1.0
    )
    return {
        "format": REPORT_FORMAT,
        "session": report.session,
        "counts": report.counts(),
        "coverage": {
            "declared": declared,
            "exercised": exercised,
            "ratio": coverage_ratio,
        },
        "transactions": [
            {
                "index": o.index,
                "tx_hash": encoding.to_hex(o.tx_hash),
                "tag": o.tag,
                "lifecycle": o.lifecycle,
                "complete": o.complete,
                "assertion_1": _verdict_to_wire(o.analysis.assertion_1),
                "assertion_2": _verdict_to_wire(o.analysis.assertion_2),
            }
            for o in report.outcomes
        ],
        "issue_groups": [
            {
                "group_id": g.group_id,
                "tag": g.tag,
                "bug_type": g.bug_type.value,
                "count": g.count,
                "tx_hashes": [encoding.to_hex(h) for h in g.tx_hashes],
                "narrative": g.representative.narrative,
                "evidence": _evidence_to_wire(g.representative.evidence),
            }
            for g in report.groups
        ],
    }


def report_to_json_bytes(report: SessionReport, declared_tags: Sequence[str] = ()) -> bytes:
    mapping = report_to_mapping(report, declared_tags)
    return (json.dumps(mapping, sort_keys=True, indent=2) + "\n").encode("utf-8")


def render_text(mapping: Mapping) -> str:
    """Human-readable summary of a report mapping (as parsed from JSON)."""
    counts = mapping["counts"]
    session = mapping["session"]
    lines = [
        f"session mode={session.get('mode')} seed={session.get('seed')} "
        f"strategy={session.get('strategy')} transactions={counts['transactions']}",
        "",
        f"{'assertion':<12}{'pass':>8}{'violation':>12}{'inconclusive':>14}",
    ]
    for name in ("assertion_1", "assertion_2"):
        bucket = counts[name]
        lines.append(
            f"{name:<12}{bucket['pass']:>8}{bucket['violation']:>12}{bucket['inconclusive']:>14}"
        )
    lines.append("")
    coverage = mapping["coverage"]
    lines.append(
        f"coverage: {len(coverage['exercised'])}/{len(coverage['declared'])} "
        f"functionalities exercised (ratio {coverage['ratio']})"
    )
    groups = mapping.get("issue_groups", [])
    if groups:
        lines.append("")
        lines.append(f"{'group':<28}{'type':<10}{'count':>6}  narrative")
        for group in groups:
            narrative = group["narrative"]
            if len(narrative) > 76:
                narrative = narrative[:73] + "..."
            lines.append(
                f"{group['group_id']:<28}{group['bug_type']:<10}{group['count']:>6}  {narrative}"
            )
    else:
        lines.append("")
        lines.append("no synchronization violations detected")
    return "\n".join(lines) + "\n"
