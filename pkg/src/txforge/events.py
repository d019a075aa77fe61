"""DApp-facing event stream: emission, ordering, and fan-out subscriptions.

Event kinds mirror what an Ethereum client library exposes to applications:
``transaction_hash`` once when a tx enters the pool, a ``receipt`` per
execution, ``confirmation`` counts as blocks pile on top, ``changed`` when a
reorg reverses the tx, and ``new_block`` per appended block. Dropped
transactions are silent — no event ever says so.

Subscriptions have a bounded queue; on overflow the subscriber keeps every
event it already had and receives a ``lagged`` notice with the number of
events it missed, never a silent gap.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from . import encoding
from .chain import Block

DEFAULT_SUBSCRIPTION_CAPACITY = 1024


class EventKind(Enum):
    TRANSACTION_HASH = "transaction_hash"
    RECEIPT = "receipt"
    CONFIRMATION = "confirmation"
    CHANGED = "changed"
    NEW_BLOCK = "new_block"
    LAGGED = "lagged"


TX_SCOPED_KINDS = frozenset(
    {EventKind.TRANSACTION_HASH, EventKind.RECEIPT, EventKind.CONFIRMATION, EventKind.CHANGED}
)


@dataclass(frozen=True)
class ChainEvent:
    seq: int
    kind: EventKind
    tx_hash: bytes | None = None
    block_hash: bytes | None = None
    height: int | None = None
    count: int | None = None
    status: str | None = None
    missed: int | None = None

    def to_wire(self) -> dict:
        out: dict = {"seq": self.seq, "event": self.kind.value}
        if self.kind is EventKind.TRANSACTION_HASH:
            out["tx_hash"] = encoding.to_hex(self.tx_hash or b"")
        elif self.kind is EventKind.RECEIPT:
            out["tx_hash"] = encoding.to_hex(self.tx_hash or b"")
            out["block_hash"] = encoding.to_hex(self.block_hash or b"")
            out["status"] = self.status
        elif self.kind is EventKind.CONFIRMATION:
            out["tx_hash"] = encoding.to_hex(self.tx_hash or b"")
            out["count"] = self.count
        elif self.kind is EventKind.CHANGED:
            out["tx_hash"] = encoding.to_hex(self.tx_hash or b"")
            out["orphaned_block_hash"] = encoding.to_hex(self.block_hash or b"")
        elif self.kind is EventKind.NEW_BLOCK:
            out["block_hash"] = encoding.to_hex(self.block_hash or b"")
            out["height"] = self.height
        elif self.kind is EventKind.LAGGED:
            out["missed"] = self.missed
        return out


@dataclass(frozen=True)
class EventFilter:
    """Match by transaction hash and/or event kinds; empty filter matches all."""

    tx_hash: bytes | None = None
    kinds: frozenset[EventKind] | None = None

    def matches(self, event: ChainEvent) -> bool:
        if self.tx_hash is not None and event.tx_hash != self.tx_hash:
            return False
        if self.kinds is not None and event.kind not in self.kinds:
            return False
        return True


class _Gap:
    __slots__ = ("count",)

    def __init__(self) -> None:
        self.count = 0


class Subscription:
    def __init__(self, hub: "EventHub", sub_id: int, flt: EventFilter, capacity: int):
        self._hub = hub
        self.id = sub_id
        self.filter = flt
        self.capacity = capacity
        self._items: list[object] = []
        self._queued_events = 0
        self._cond = threading.Condition()
        self.closed = False

    def _push(self, event: ChainEvent) -> None:
        with self._cond:
            if self.closed:
                return
            if self._queued_events >= self.capacity:
                # The gap marker is exempt from capacity so ordering around
                # the overflow stays exact.
                if self._items and isinstance(self._items[-1], _Gap):
                    self._items[-1].count += 1
                else:
                    gap = _Gap()
                    gap.count = 1
                    self._items.append(gap)
            else:
                self._items.append(event)
                self._queued_events += 1
            self._cond.notify_all()

    def next_event(self, timeout: float | None = None) -> ChainEvent | None:
        """Pop the next event, blocking up to ``timeout``; None on timeout/close."""
        with self._cond:
            if not self._items and not self.closed:
                self._cond.wait(timeout)
            if not self._items:
                return None
            item = self._items.pop(0)
            if isinstance(item, _Gap):
                return ChainEvent(seq=-1, kind=EventKind.LAGGED, missed=item.count)
            self._queued_events -= 1
            return item  # type: ignore[return-value]

    def pending(self) -> int:
        with self._cond:
            return len(self._items)

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()


class EventHub:
    """Orders events globally and fans them out to listeners and subscriptions.

    Inline listeners run synchronously inside ``emit`` (in-process mock DApps
    attach this way so event handling is deterministic); subscriptions are
    queue-based and safe to drain from other threads.
    """

    def __init__(self, default_capacity: int = DEFAULT_SUBSCRIPTION_CAPACITY):
        self._lock = threading.Lock()
        self._seq = 0
        self._log: list[ChainEvent] = []
        self._subs: list[Subscription] = []
        self._listeners: list[Callable[[ChainEvent], None]] = []
        self._default_capacity = default_capacity
        self._next_sub_id = 1

    # ---------------------------------------------------------------- emitters

    def emit_transaction_hash(self, tx_hash: bytes) -> ChainEvent:
        return self._emit(ChainEvent(self._take_seq(), EventKind.TRANSACTION_HASH, tx_hash=tx_hash))

    def emit_receipt(self, tx_hash: bytes, block_hash: bytes, failed: bool) -> ChainEvent:
        return self._emit(
            ChainEvent(
                self._take_seq(),
                EventKind.RECEIPT,
                tx_hash=tx_hash,
                block_hash=block_hash,
                status="failed" if failed else "success",
            )
        )

    def emit_confirmation(self, tx_hash: bytes, count: int) -> ChainEvent:
        return self._emit(ChainEvent(self._take_seq(), EventKind.CONFIRMATION, tx_hash=tx_hash, count=count))

    def emit_changed(self, tx_hash: bytes, orphaned_block_hash: bytes) -> ChainEvent:
        return self._emit(
            ChainEvent(self._take_seq(), EventKind.CHANGED, tx_hash=tx_hash, block_hash=orphaned_block_hash)
        )

    def emit_new_block(self, block: Block) -> ChainEvent:
        return self._emit(
            ChainEvent(self._take_seq(), EventKind.NEW_BLOCK, block_hash=block.hash, height=block.height)
        )

    def _take_seq(self) -> int:
        with self._lock:
            self._seq += 1
            return self._seq

    def _emit(self, event: ChainEvent) -> ChainEvent:
        with self._lock:
            self._log.append(event)
            subs = list(self._subs)
            listeners = list(self._listeners)
        for listener in listeners:
            listener(event)
        for sub in subs:
            if sub.filter.matches(event):
                sub._push(event)
        return event

    # ------------------------------------------------------------- consumption

    def add_listener(self, listener: Callable[[ChainEvent], None]) -> None:
        with self._lock:
            self._listeners.append(listener)

    def subscribe(self, flt: EventFilter | None = None, capacity: int | None = None) -> Subscription:
        with self._lock:
            sub = Subscription(
                self,
                self._next_sub_id,
                flt or EventFilter(),
                capacity or self._default_capacity,
            )
            self._next_sub_id += 1
            self._subs.append(sub)
            return sub

    def unsubscribe(self, sub: Subscription) -> None:
        sub.close()
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def events(
        self,
        tx_hash: bytes | None = None,
        kinds: Iterable[EventKind] | None = None,
    ) -> list[ChainEvent]:
        """Snapshot of the full emission log, optionally filtered."""
        flt = EventFilter(tx_hash=tx_hash, kinds=frozenset(kinds) if kinds is not None else None)
        with self._lock:
            return [e for e in self._log if flt.matches(e)]
