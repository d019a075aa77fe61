"""Mock DApps with pluggable synchronization strategies and plantable bugs.

Each mock keeps an off-chain document for one contract and reacts to chain
events according to its strategy:

* periodic polling — ignores per-tx events, rebuilds its mirror from
  ``rpc_get_state`` whenever its poll task runs;
* passive waiting — marks the tx as in-flight when its hash appears, applies
  the real update (and clears the marker) only at the confirmation threshold;
* aggressive updating — applies the update at execution, keeping an undo
  journal it replays when the tx is reversed.

Bug flags plant the failure modes the oracles are meant to catch:
``type1_premature_update`` applies the full effect as soon as the tx hash is
known, ``type2_no_rollback`` ignores reversals, and
``rollback_cleared_on_restart`` wipes the undo journal after every applied
update, as a page refresh would for journal state kept in volatile memory.
``laggy_update`` delays data mutations by a fixed interval (the in-flight
marker set is deliberately prompt: only the heavyweight processing lags).
"""
from __future__ import annotations

import copy
import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Protocol

from . import encoding
from .chain import Address, StateOp, Transaction
from .clock import Clock
from .documents import FieldRuleSet
from .events import ChainEvent, EventKind
from .lifecycle import DEFAULT_CONFIRMATIONS

FUNCTIONALITY_TAGS = ("create", "update", "withdraw")

RECORD_KEY_PREFIX = "record:"


class SyncStrategy(Enum):
    PERIODIC_POLLING = "periodic_polling"
    PASSIVE_WAITING = "passive_waiting"
    AGGRESSIVE_UPDATING = "aggressive_updating"


@dataclass(frozen=True)
class BugFlags:
    type1_premature_update: bool = False
    type2_no_rollback: bool = False
    rollback_cleared_on_restart: bool = False
    laggy_update: float = 0.0

    @classmethod
    def from_config(cls, entries: Mapping | None) -> "BugFlags":
        if not entries:
            return cls()
        known = {f: entries.get(f) for f in entries}
        unknown = set(known) - {
            "type1_premature_update",
            "type2_no_rollback",
            "rollback_cleared_on_restart",
            "laggy_update",
        }
        if unknown:
            raise ValueError(f"unknown bug flags: {sorted(unknown)}")
        return cls(
            type1_premature_update=bool(entries.get("type1_premature_update", False)),
            type2_no_rollback=bool(entries.get("type2_no_rollback", False)),
            rollback_cleared_on_restart=bool(entries.get("rollback_cleared_on_restart", False)),
            laggy_update=float(entries.get("laggy_update", 0.0)),
        )


class NodeStateView(Protocol):
    """The slice of the node API a polling DApp needs."""

    def state_of(self, contract: Address) -> dict: ...


# (kind, record id, record payload) — "set" stores the payload, "del" removes.
_DataMutation = tuple[str, str, dict | None]


class MockDApp:
    """In-process DApp double driven entirely by chain events and poll calls."""

    def __init__(
        self,
        strategy: SyncStrategy,
        flags: BugFlags,
        clock: Clock,
        confirmations_required: int = DEFAULT_CONFIRMATIONS,
        name: str = "mock",
        address_seed: int = 1,
    ) -> None:
        self.strategy = strategy
        self.flags = flags
        self.clock = clock
        self.confirmations_required = confirmations_required
        self.name = name
        self.sender = Address.from_int(address_seed)
        self.contract = Address.from_int(address_seed + 1000)
        if strategy is SyncStrategy.PERIODIC_POLLING:
            self._doc: dict = {"records": {}, "meta": {"index": [], "source": "poll"}}
        else:
            self._doc = {
                "records": {},
                "meta": {"index": [], "op_count": 0, "last_tx": ""},
                "pending": {},
            }
        self._intents: dict[bytes, list[_DataMutation]] = {}
        self._journal: dict[bytes, list[tuple[str, str, bool, Any]]] = {}
        self._due: list[tuple[float, int, Callable[[], None]]] = []
        self._op_seq = itertools.count()
        self._serial = 0
        # Records as they will exist once every invoked tx finalizes; used
        # only to plan the next invocation, never read by event handling.
        self._planned: dict[str, str] = {}

    # ------------------------------------------------------------ invocations

    def functionalities(self) -> tuple[str, ...]:
        return FUNCTIONALITY_TAGS

    def recommended_rules(self) -> FieldRuleSet:
        """Comparison rules for this DApp's documents.

        ``meta.op_count`` counts every applied update, so it differs between
        any two applications of the same data and must be excluded for
        snapshot comparison to see through to the actual records.
        """
        return FieldRuleSet.from_config([{"path": "meta.op_count", "action": "exclude"}])

    def can(self, tag: str) -> bool:
        if tag == "create":
            return True
        return bool(self._planned)

    def invoke(self, tag: str, nonce: int) -> Transaction:
        """Build the transaction for one functionality and remember its intent."""
        if tag not in FUNCTIONALITY_TAGS:
            raise ValueError(f"unknown functionality {tag!r}")
        if not self.can(tag):
            raise ValueError(f"functionality {tag!r} needs an existing record")
        self._serial += 1
        value = f"v{self._serial}"
        if tag == "create":
            record_id = f"r{self._serial}"
            ops = [StateOp.set(RECORD_KEY_PREFIX + record_id, value)]
            mutations: list[_DataMutation] = [
                ("set", record_id, {"value": value, "status": "active"})
            ]
            self._planned[record_id] = value
        elif tag == "update":
            record_id = next(reversed(self._planned))
            ops = [StateOp.set(RECORD_KEY_PREFIX + record_id, value)]
            mutations = [("set", record_id, {"value": value, "status": "active"})]
            self._planned[record_id] = value
        else:  # withdraw
            record_id = next(iter(self._planned))
            ops = [StateOp.delete(RECORD_KEY_PREFIX + record_id)]
            mutations = [("del", record_id, None)]
            del self._planned[record_id]
        tx = Transaction(sender=self.sender, nonce=nonce, target=self.contract, payload=tuple(ops), tag=tag)
        self._intents[tx.hash] = mutations
        return tx

    # -------------------------------------------------------------- documents

    def snapshot_document(self) -> dict:
        """Current off-chain document, after landing any due mutations."""
        self.flush_due()
        return self._doc

    def restart(self) -> None:
        """Simulate a process restart / page refresh: volatile memory is gone."""
        self._journal.clear()

    def flush_due(self, now: float | None = None) -> None:
        if now is None:
            now = self.clock.now()
        while self._due and self._due[0][0] <= now:
            _, _, action = heapq.heappop(self._due)
            action()

    def _schedule(self, action: Callable[[], None]) -> None:
        if self.flags.laggy_update <= 0:
            action()
            return
        heapq.heappush(
            self._due,
            (self.clock.now() + self.flags.laggy_update, next(self._op_seq), action),
        )

    # ----------------------------------------------------------------- events

    def on_event(self, event: ChainEvent) -> None:
        self.flush_due()
        tx_hash = event.tx_hash
        if tx_hash is None or tx_hash not in self._intents:
            return
        if event.kind is EventKind.TRANSACTION_HASH:
            if self.flags.type1_premature_update:
                # The whole effect goes in as soon as the hash is known, with
                # none of the in-flight bookkeeping a careful DApp would do.
                self._schedule(lambda: self._apply_data(tx_hash, journal=False))
            elif self.strategy is SyncStrategy.PASSIVE_WAITING:
                self._set_marker(tx_hash)
        elif event.kind is EventKind.RECEIPT:
            if self.strategy is SyncStrategy.AGGRESSIVE_UPDATING and event.status == "success":
                self._schedule(lambda: self._apply_data(tx_hash, journal=True))
        elif event.kind is EventKind.CHANGED:
            if self.strategy is SyncStrategy.AGGRESSIVE_UPDATING and not self.flags.type2_no_rollback:
                self._schedule(lambda: self._rollback(tx_hash))
        elif event.kind is EventKind.CONFIRMATION:
            if (
                self.strategy is SyncStrategy.PASSIVE_WAITING
                and event.count == self.confirmations_required
            ):
                self._schedule(lambda: self._apply_data(tx_hash, journal=False, clear_marker=True))

    def poll_tick(self, node_view: NodeStateView) -> None:
        """One run of the polling daemon; a no-op for event-driven strategies."""
        if self.strategy is not SyncStrategy.PERIODIC_POLLING:
            return
        state = dict(node_view.state_of(self.contract))
        self._schedule(lambda: self._rebuild_from_state(state))

    # ------------------------------------------------------------- mutations

    def _set_marker(self, tx_hash: bytes) -> None:
        # Prompt by design: the marker is a cheap flag written synchronously,
        # unlike the data processing that laggy_update delays.
        self._doc["pending"][encoding.to_hex(tx_hash)] = True

    def _apply_data(self, tx_hash: bytes, journal: bool, clear_marker: bool = False) -> None:
        mutations = self._intents.get(tx_hash)
        if mutations is None:  # pragma: no cover - intents outlive the session
            return
        records = self._doc["records"]
        meta = self._doc["meta"]
        entries: list[tuple[str, str, bool, Any]] = []
        for kind, record_id, payload in mutations:
            entries.append(("record", record_id, record_id in records, copy.deepcopy(records.get(record_id))))
            if kind == "set":
                records[record_id] = dict(payload or {})
            else:
                records.pop(record_id, None)
        entries.append(("meta", "index", True, list(meta["index"])))
        entries.append(("meta", "op_count", True, meta["op_count"]))
        entries.append(("meta", "last_tx", True, meta["last_tx"]))
        meta["index"] = sorted(records)
        meta["op_count"] += 1
        meta["last_tx"] = encoding.to_hex(tx_hash)
        if clear_marker:
            self._doc["pending"].pop(encoding.to_hex(tx_hash), None)
        if journal:
            self._journal[tx_hash] = entries
            if self.flags.rollback_cleared_on_restart:
                self.restart()

    def _rollback(self, tx_hash: bytes) -> None:
        entries = self._journal.pop(tx_hash, None)
        if entries is None:
            # Nothing recorded for this tx (journal wiped or never written);
            # the update, if any, stays — which is exactly the bug.
            return
        records = self._doc["records"]
        meta = self._doc["meta"]
        for domain, key, had, old in reversed(entries):
            target = records if domain == "record" else meta
            if had:
                target[key] = old
            else:
                target.pop(key, None)

    def _rebuild_from_state(self, state: Mapping[str, Any]) -> None:
        records = {}
        for key, value in state.items():
            if not key.startswith(RECORD_KEY_PREFIX):
                continue
            record_id = key[len(RECORD_KEY_PREFIX):]
            records[record_id] = {"value": str(value), "status": "active"}
        self._doc["records"] = records
        self._doc["meta"]["index"] = sorted(records)
