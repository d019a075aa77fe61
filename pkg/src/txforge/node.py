"""Client-facing node API: submission, status, state reads, subscriptions.

This is the surface a DApp sees — everything else (mining, reorgs, lifecycle
control) stays behind the harness. Wire-shaped inputs (hex strings, op
dicts) are parsed here; errors surface as NodeError with a reason usable in
an HTTP 400 body.
"""
from __future__ import annotations

import threading
from typing import Any, Callable, Iterable, Mapping

from . import encoding
from .chain import Address, Chain, StateOp, Transaction
from .events import EventFilter, EventHub, EventKind, Subscription
from .lifecycle import LifecycleController, LifecycleState

PROTOCOL_VERSION = "txforge/1"


class NodeError(Exception):
    """Invalid request at the node API boundary."""


def parse_wire_transaction(fields: Mapping) -> Transaction:
    if not isinstance(fields, Mapping):
        raise NodeError("transaction body must be a JSON object")
    try:
        sender = Address.from_hex(fields["sender"])
        target = Address.from_hex(fields["target"])
    except KeyError as exc:
        raise NodeError(f"missing field: {exc.args[0]}") from None
    except ValueError as exc:
        raise NodeError(str(exc)) from None
    nonce = fields.get("nonce")
    if not isinstance(nonce, int) or isinstance(nonce, bool) or nonce < 0:
        raise NodeError("nonce must be a non-negative integer")
    payload_raw = fields.get("payload")
    if not isinstance(payload_raw, (list, tuple)) or not payload_raw:
        raise NodeError("payload must be a non-empty list of state ops")
    try:
        payload = tuple(StateOp.from_wire(op) for op in payload_raw)
    except ValueError as exc:
        raise NodeError(str(exc)) from None
    tag = fields.get("tag")
    if tag is not None and not isinstance(tag, str):
        raise NodeError("tag must be a string when present")
    return Transaction(sender=sender, nonce=nonce, target=target, payload=payload, tag=tag)


class NodeGateway:
    """The RPC surface; submission hands the tx to the orchestrator's queue.

    ``rpc_submit_transaction`` only registers the transaction (lifecycle
    state created) and enqueues it; the orchestrator decides when it enters
    pending, keeping the one-traversal-at-a-time discipline.
    """

    def __init__(
        self,
        chain: Chain,
        controller: LifecycleController,
        hub: EventHub,
        submit_sink: Callable[[Transaction], None] | None = None,
        lock: threading.RLock | None = None,
    ) -> None:
        self.chain = chain
        self.controller = controller
        self.hub = hub
        self._submit_sink = submit_sink
        self._lock = lock or threading.RLock()

    # ----------------------------------------------------------------- writes

    def rpc_submit_transaction(self, fields: Mapping | Transaction) -> str:
        tx = fields if isinstance(fields, Transaction) else parse_wire_transaction(fields)
        with self._lock:
            if self.controller.known(tx.hash):
                raise NodeError(f"duplicate transaction {tx.hash_hex}")
            self.controller.register(tx)
        if self._submit_sink is not None:
            self._submit_sink(tx)
        return tx.hash_hex

    # ------------------------------------------------------------------ reads

    def rpc_get_transaction_status(self, tx_hash: bytes | str) -> dict:
        raw = encoding.from_hex(tx_hash, expected_length=32) if isinstance(tx_hash, str) else tx_hash
        with self._lock:
            if not self.controller.known(raw):
                return {"status": "unknown", "confirmations": 0, "block_hash": None}
            state = self.controller.current_state(raw)
            if state is LifecycleState.DROPPED:
                # A dropped tx is indistinguishable from one the node never
                # saw; silence is the contract.
                return {"status": "unknown", "confirmations": 0, "block_hash": None}
            block_hash = self.chain.tx_block_hash(raw)
            confirmations = self.chain.confirmations(raw) or 0
            return {
                "status": state.value,
                "confirmations": confirmations,
                "block_hash": encoding.to_hex(block_hash) if block_hash else None,
            }

    def rpc_get_state(self, contract: Address | str, key: str | None = None) -> Any:
        address = Address.from_hex(contract) if isinstance(contract, str) else contract
        with self._lock:
            if key is not None:
                return self.chain.state_value(address, key)
            return self.chain.state_of(address)

    def state_of(self, contract: Address) -> dict:
        """Alias used by polling DApps (NodeStateView protocol)."""
        return self.rpc_get_state(contract)

    def next_nonce(self, sender: Address | str) -> int:
        address = Address.from_hex(sender) if isinstance(sender, str) else sender
        with self._lock:
            base = self.chain.next_expected_nonce(address)
            if base is None:
                base = 0
            pooled = sum(1 for tx in self.chain.pool_transactions() if tx.sender == address)
            return base + pooled

    def info(self) -> dict:
        with self._lock:
            return {
                "protocol": PROTOCOL_VERSION,
                "head_height": self.chain.head_height,
                "head_hash": encoding.to_hex(self.chain.head_hash),
                "pool_size": len(self.chain.pool_transactions()),
            }

    # ------------------------------------------------------------------ events

    def subscribe(
        self,
        tx_hash: bytes | str | None = None,
        kinds: Iterable[EventKind] | None = None,
        capacity: int | None = None,
    ) -> Subscription:
        raw = None
        if tx_hash is not None:
            raw = encoding.from_hex(tx_hash, expected_length=32) if isinstance(tx_hash, str) else tx_hash
        flt = EventFilter(tx_hash=raw, kinds=frozenset(kinds) if kinds is not None else None)
        return self.hub.subscribe(flt, capacity=capacity)

    def next_event(self, subscription: Subscription, timeout: float | None = None):
        return subscription.next_event(timeout)
