"""Off-chain state snapshots: capture, filtering, and comparison.

A capture waits out the configured wait window (giving the DApp time to
settle after a lifecycle stage), fetches the DApp's state document from its
source, applies the session's field rules, and stores the canonical result
keyed by (lifecycle state, visit index).
"""
from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Any, Callable, Protocol, runtime_checkable

from .clock import Clock
from .documents import (
    DiffEntry,
    DocumentError,
    FieldRuleSet,
    diff_documents,
    documents_equal,
    filter_document,
    parse_json_document,
)
from .lifecycle import LifecycleState

DEFAULT_WAIT_WINDOW = 15.0


class CaptureError(Exception):
    """A snapshot could not be taken; ``kind`` is "fetch" or "parse"."""

    def __init__(self, message: str, kind: str):
        super().__init__(message)
        self.kind = kind


class IncomparableSnapshots(Exception):
    """Snapshots filtered under different rule sets cannot be compared."""


@dataclass(frozen=True)
class SnapshotStage:
    state: LifecycleState
    visit_index: int

    @property
    def label(self) -> str:
        return f"{self.state.value}:{self.visit_index}"

    @classmethod
    def parse(cls, label: str) -> "SnapshotStage":
        state_part, _, visit_part = label.partition(":")
        return cls(LifecycleState(state_part), int(visit_part or "1"))


@dataclass(frozen=True)
class Snapshot:
    tx_hash: bytes
    stage: SnapshotStage
    captured_at: float
    source_id: str
    document: Any
    rules_fingerprint: str


@runtime_checkable
class SnapshotSource(Protocol):
    source_id: str

    def fetch(self) -> Any: ...


class InProcessSource:
    """Snapshot source backed by a callback returning the raw document."""

    def __init__(self, source_id: str, callback: Callable[[], Any]):
        self.source_id = source_id
        self._callback = callback

    def fetch(self) -> Any:
        try:
            return self._callback()
        except Exception as exc:
            raise CaptureError(f"in-process fetch failed: {exc}", kind="fetch") from exc


class HttpEndpointSource:
    """Snapshot source that GETs a JSON document from a URL."""

    def __init__(self, url: str, timeout: float = 5.0):
        self.source_id = url
        self.url = url
        self.timeout = timeout

    def fetch(self) -> Any:
        try:
            with urllib.request.urlopen(self.url, timeout=self.timeout) as response:
                content_type = response.headers.get("Content-Type", "")
                body = response.read()
        except (urllib.error.URLError, OSError) as exc:
            raise CaptureError(f"fetch failed for {self.url}: {exc}", kind="fetch") from exc
        if "json" not in content_type:
            raise CaptureError(
                f"{self.url} returned Content-Type {content_type!r}, expected JSON",
                kind="parse",
            )
        try:
            return parse_json_document(body.decode("utf-8"))
        except (UnicodeDecodeError, DocumentError) as exc:
            raise CaptureError(f"malformed document from {self.url}: {exc}", kind="parse") from exc


class FileDumpSource:
    """Snapshot source reading a JSON file the DApp dumps its state into."""

    def __init__(self, path: str | FsPath):
        self.path = FsPath(path)
        self.source_id = str(path)

    def fetch(self) -> Any:
        try:
            text = self.path.read_text("utf-8")
        except OSError as exc:
            raise CaptureError(f"cannot read {self.path}: {exc}", kind="fetch") from exc
        try:
            return parse_json_document(text)
        except DocumentError as exc:
            raise CaptureError(f"malformed document in {self.path}: {exc}", kind="parse") from exc


class SnapshotCollector:
    """Captures filtered snapshots after the configured wait window."""

    def __init__(
        self,
        source: SnapshotSource,
        rules: FieldRuleSet,
        clock: Clock,
        wait_window: float = DEFAULT_WAIT_WINDOW,
    ):
        if wait_window < 0:
            raise ValueError("wait_window must be non-negative")
        self.source = source
        self.rules = rules
        self.clock = clock
        self.wait_window = wait_window

    def capture(self, tx_hash: bytes, stage: SnapshotStage) -> Snapshot:
        if self.wait_window:
            self.clock.sleep(self.wait_window)
        raw = self.source.fetch()
        try:
            document = filter_document(raw, self.rules)
        except DocumentError as exc:
            raise CaptureError(f"document rejected by canonicalizer: {exc}", kind="parse") from exc
        return Snapshot(
            tx_hash=tx_hash,
            stage=stage,
            captured_at=self.clock.now(),
            source_id=self.source.source_id,
            document=document,
            rules_fingerprint=self.rules.fingerprint,
        )


def _check_comparable(a: Snapshot, b: Snapshot) -> None:
    if a.rules_fingerprint != b.rules_fingerprint:
        raise IncomparableSnapshots(
            "snapshots were filtered under different field rule sets"
        )


def snapshot_equal(a: Snapshot, b: Snapshot) -> bool:
    """Document equality; capture times and stages are irrelevant."""
    _check_comparable(a, b)
    return documents_equal(a.document, b.document)


def snapshot_diff(a: Snapshot, b: Snapshot) -> list[DiffEntry]:
    _check_comparable(a, b)
    return diff_documents(a.document, b.document)
