"""Simulated blockchain core: transaction pool with nonce replacement, an
append-only block tree with longest-chain fork choice, and deterministic
key-value contract state.

The canonical chain is tracked incrementally (per-block undo records, a
canonical tx index, per-sender nonce positions) so reorganizations touch only
the blocks actually switched; ``compute_state`` stays a pure fold from genesis
and doubles as the reference oracle for the incremental state.
"""
from __future__ import annotations

import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

from . import encoding
from .encoding import ZERO_DIGEST

logger = logging.getLogger(__name__)

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

ADDRESS_SIZE = 20


class ChainError(Exception):
    """Raised for invalid chain operations (bad parent, nonce conflicts, ...)."""


@dataclass(frozen=True)
class Address:
    value: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.value, bytes) or len(self.value) != ADDRESS_SIZE:
            raise ValueError("address must be exactly 20 bytes")

    @classmethod
    def from_hex(cls, text: str) -> "Address":
        return cls(encoding.from_hex(text, expected_length=ADDRESS_SIZE))

    @classmethod
    def from_int(cls, seed: int) -> "Address":
        """Deterministic test/demo address derived from a small integer."""
        return cls(encoding.digest(b"ADDR", encoding.u64(seed))[:ADDRESS_SIZE])

    def hex(self) -> str:
        return encoding.to_hex(self.value)

    def __str__(self) -> str:
        return self.hex()


class OpKind(Enum):
    SET = "set"
    DELETE = "delete"
    INCREMENT = "increment"
    FAIL = "fail"


@dataclass(frozen=True)
class StateOp:
    """One key-value operation inside a transaction payload.

    ``set`` stores a string, ``delete`` removes a key (absent keys are fine),
    ``increment`` adds a signed amount to an integer-valued key (missing keys
    count as 0, string values are accepted when ``int()`` parses them), and
    ``fail`` makes the whole transaction execute as failed with no state
    effect. An increment on a non-integer value or one that leaves the signed
    64-bit range also fails the transaction.
    """

    kind: OpKind
    key: str = ""
    value: str = ""
    amount: int = 0

    @classmethod
    def set(cls, key: str, value: str) -> "StateOp":
        return cls(OpKind.SET, key=key, value=value)

    @classmethod
    def delete(cls, key: str) -> "StateOp":
        return cls(OpKind.DELETE, key=key)

    @classmethod
    def increment(cls, key: str, amount: int) -> "StateOp":
        return cls(OpKind.INCREMENT, key=key, amount=amount)

    @classmethod
    def fail(cls) -> "StateOp":
        return cls(OpKind.FAIL)

    def encode(self) -> bytes:
        return b"".join(
            (
                b"OP",
                encoding.text(self.kind.value),
                encoding.text(self.key),
                encoding.text(self.value),
                encoding.i64(self.amount),
            )
        )

    def to_wire(self) -> dict:
        out: dict = {"op": self.kind.value}
        if self.kind is not OpKind.FAIL:
            out["key"] = self.key
        if self.kind is OpKind.SET:
            out["value"] = self.value
        elif self.kind is OpKind.INCREMENT:
            out["amount"] = self.amount
        return out

    @classmethod
    def from_wire(cls, fields: Mapping) -> "StateOp":
        try:
            kind = OpKind(fields["op"])
        except (KeyError, ValueError):
            raise ValueError(f"unknown state op: {fields.get('op')!r}") from None
        if kind is OpKind.FAIL:
            return cls.fail()
        key = fields.get("key")
        if not isinstance(key, str) or not key:
            raise ValueError(f"state op {kind.value!r} requires a non-empty key")
        if kind is OpKind.SET:
            value = fields.get("value")
            if not isinstance(value, str):
                raise ValueError("set op requires a string value")
            return cls.set(key, value)
        if kind is OpKind.INCREMENT:
            amount = fields.get("amount")
            if not isinstance(amount, int) or isinstance(amount, bool):
                raise ValueError("increment op requires an integer amount")
            if not INT64_MIN <= amount <= INT64_MAX:
                raise ValueError("increment amount outside signed 64-bit range")
            return cls.increment(key, amount)
        return cls.delete(key)


@dataclass(frozen=True)
class Transaction:
    sender: Address
    nonce: int
    target: Address
    payload: tuple[StateOp, ...]
    # The tag labels which DApp functionality produced the tx; it is metadata
    # and takes no part in the hash or equality.
    tag: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.nonce < 0:
            raise ValueError("nonce must be non-negative")
        object.__setattr__(self, "payload", tuple(self.payload))

    @cached_property
    def hash(self) -> bytes:
        return encoding.digest(
            b"TX1",
            self.sender.value,
            encoding.u64(self.nonce),
            self.target.value,
            encoding.u32(len(self.payload)),
            *(op.encode() for op in self.payload),
        )

    @property
    def hash_hex(self) -> str:
        return encoding.to_hex(self.hash)


@dataclass(frozen=True)
class Block:
    parent_hash: bytes
    height: int
    transactions: tuple[Transaction, ...]
    logical_timestamp: int

    @cached_property
    def hash(self) -> bytes:
        return encoding.digest(
            b"BK1",
            self.parent_hash,
            encoding.u64(self.height),
            encoding.u64(self.logical_timestamp),
            encoding.u32(len(self.transactions)),
            *(tx.hash for tx in self.transactions),
        )

    @property
    def hash_hex(self) -> str:
        return encoding.to_hex(self.hash)


class SubmitStatus(Enum):
    ACCEPTED = "accepted"
    REPLACED = "replaced"
    REJECTED = "rejected"


@dataclass(frozen=True)
class SubmitOutcome:
    status: SubmitStatus
    replaced_hash: bytes | None = None
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.status is not SubmitStatus.REJECTED


@dataclass
class ReorgReport:
    fork_height: int
    invalidated_blocks: list[bytes]
    new_blocks: list[bytes]
    reversed_txs: list[bytes]
    # tx hash -> hash of the orphaned block it was reversed out of
    reversed_from: dict[bytes, bytes]
    # reversed txs that could not re-enter the pool because a newer
    # submission already occupies their (sender, nonce) slot
    superseded_txs: list[bytes]


StateValue = str | int
ContractState = dict[str, StateValue]
OnChainState = dict[Address, ContractState]


def apply_payload(contract: Mapping[str, StateValue], payload: Sequence[StateOp]) -> ContractState | None:
    """Apply a payload to one contract's state, all-or-nothing.

    Returns the updated mapping, or None when the transaction fails (explicit
    fail op, increment of a non-integer value, or a result outside the signed
    64-bit range). The input mapping is never mutated.
    """
    scratch: ContractState = dict(contract)
    for op in payload:
        if op.kind is OpKind.FAIL:
            return None
        if op.kind is OpKind.SET:
            scratch[op.key] = op.value
        elif op.kind is OpKind.DELETE:
            scratch.pop(op.key, None)
        elif op.kind is OpKind.INCREMENT:
            current = scratch.get(op.key, 0)
            if isinstance(current, int):
                base = current
            else:
                try:
                    base = int(current)
                except ValueError:
                    return None
            result = base + op.amount
            if not INT64_MIN <= result <= INT64_MAX:
                return None
            scratch[op.key] = result
    return scratch


@dataclass
class _NoncePositions:
    """Canonical-chain nonce bookkeeping for one sender.

    Nonces on a chain are consecutive per sender, so it suffices to remember
    the first nonce and, for each subsequent one, the height of the block
    holding it. ``heights`` is non-decreasing, which makes "next nonce as of
    ancestor height H" a binary search.
    """

    first_nonce: int
    heights: list[int]

    def next_at(self, max_height: int) -> int | None:
        count = bisect_right(self.heights, max_height)
        if count == 0:
            return None
        return self.first_nonce + count


class _ChainContext:
    """Validation context for building a block on top of an arbitrary parent."""

    def __init__(self, chain: "Chain", parent_hash: bytes):
        side: list[Block] = []
        cursor = parent_hash
        while cursor not in chain._canonical_set:
            block = chain._blocks.get(cursor)
            if block is None:
                raise ChainError(f"unknown parent block {encoding.to_hex(cursor)}")
            side.append(block)
            cursor = block.parent_hash
        self._chain = chain
        self._ancestor_height = chain._blocks[cursor].height
        self._side_tx_hashes: set[bytes] = set()
        self._next_nonce: dict[bytes, int] = {}
        for block in reversed(side):
            self.consume_block(block)

    def has_tx(self, tx_hash: bytes) -> bool:
        if tx_hash in self._side_tx_hashes:
            return True
        block_hash = self._chain._tx_block.get(tx_hash)
        if block_hash is None:
            return False
        return self._chain._blocks[block_hash].height <= self._ancestor_height

    def next_nonce(self, sender: Address) -> int | None:
        key = sender.value
        if key in self._next_nonce:
            return self._next_nonce[key]
        positions = self._chain._nonce_positions.get(key)
        if positions is None:
            return None
        return positions.next_at(self._ancestor_height)

    def consume(self, tx: Transaction) -> None:
        self._side_tx_hashes.add(tx.hash)
        self._next_nonce[tx.sender.value] = tx.nonce + 1

    def consume_block(self, block: Block) -> None:
        for tx in block.transactions:
            self.consume(tx)


class Chain:
    """A single simulated chain instance with its transaction pool."""

    def __init__(self) -> None:
        genesis = Block(parent_hash=ZERO_DIGEST, height=0, transactions=(), logical_timestamp=0)
        self.genesis_hash = genesis.hash
        self._blocks: dict[bytes, Block] = {genesis.hash: genesis}
        self._canonical: list[bytes] = [genesis.hash]
        self._canonical_set: set[bytes] = {genesis.hash}
        self._tx_block: dict[bytes, bytes] = {}
        self._nonce_positions: dict[bytes, _NoncePositions] = {}
        self._state: OnChainState = {}
        self._undo: dict[bytes, list[tuple[Address, str, bool, StateValue | None]]] = {}
        self._failed: dict[bytes, frozenset[bytes]] = {}
        # Pool: (sender bytes, nonce) -> Transaction, insertion-ordered; the
        # hash index is kept in lockstep.
        self._pool: dict[tuple[bytes, int], Transaction] = {}
        self._pool_hashes: dict[bytes, Transaction] = {}
        self._tick = 0
        self.reorg_count = 0
        self._block_listeners: list[Callable[[Block], None]] = []

    # ------------------------------------------------------------------ views

    @property
    def head_hash(self) -> bytes:
        return self._canonical[-1]

    @property
    def head_height(self) -> int:
        return len(self._canonical) - 1

    @property
    def head_block(self) -> Block:
        return self._blocks[self.head_hash]

    def block(self, block_hash: bytes) -> Block:
        block = self._blocks.get(block_hash)
        if block is None:
            raise ChainError(f"unknown block {encoding.to_hex(block_hash)}")
        return block

    def has_block(self, block_hash: bytes) -> bool:
        return block_hash in self._blocks

    def canonical_hashes(self) -> list[bytes]:
        return list(self._canonical)

    def is_canonical(self, block_hash: bytes) -> bool:
        return block_hash in self._canonical_set

    def tx_block_hash(self, tx_hash: bytes) -> bytes | None:
        """Hash of the canonical block containing the tx, if any."""
        return self._tx_block.get(tx_hash)

    def tx_failed(self, block_hash: bytes, tx_hash: bytes) -> bool:
        return tx_hash in self._failed.get(block_hash, frozenset())

    def confirmations(self, tx_hash: bytes) -> int | None:
        """Number of canonical blocks mined on top of the tx's block."""
        block_hash = self._tx_block.get(tx_hash)
        if block_hash is None:
            return None
        return self.head_height - self._blocks[block_hash].height

    def pool_transactions(self) -> list[Transaction]:
        return list(self._pool.values())

    def in_pool(self, tx_hash: bytes) -> bool:
        return tx_hash in self._pool_hashes

    def pool_transaction(self, tx_hash: bytes) -> Transaction | None:
        return self._pool_hashes.get(tx_hash)

    def next_expected_nonce(self, sender: Address) -> int | None:
        """Next nonce for the sender as of the canonical head, None if unseen."""
        positions = self._nonce_positions.get(sender.value)
        if positions is None:
            return None
        return positions.first_nonce + len(positions.heights)

    def state_value(self, contract: Address, key: str) -> StateValue | None:
        return self._state.get(contract, {}).get(key)

    def state_of(self, contract: Address) -> ContractState:
        return dict(self._state.get(contract, {}))

    def state_snapshot(self) -> OnChainState:
        return {addr: dict(mapping) for addr, mapping in self._state.items() if mapping}

    def add_block_listener(self, listener: Callable[[Block], None]) -> None:
        """Listener fires for every appended block, canonical or not."""
        self._block_listeners.append(listener)

    # ------------------------------------------------------------------- pool

    def submit(self, tx: Transaction) -> SubmitOutcome:
        """Add a transaction to the pool.

        A tx with the same (sender, nonce) as a pooled one replaces it; a tx
        whose hash is already pooled or already on the canonical chain is
        rejected.
        """
        if tx.hash in self._tx_block:
            return SubmitOutcome(SubmitStatus.REJECTED, reason="transaction already on the canonical chain")
        if tx.hash in self._pool_hashes:
            return SubmitOutcome(SubmitStatus.REJECTED, reason="duplicate of a pooled transaction")
        key = (tx.sender.value, tx.nonce)
        previous = self._pool.get(key)
        if previous is not None:
            del self._pool[key]
            del self._pool_hashes[previous.hash]
        self._pool[key] = tx
        self._pool_hashes[tx.hash] = tx
        if previous is not None:
            return SubmitOutcome(SubmitStatus.REPLACED, replaced_hash=previous.hash)
        return SubmitOutcome(SubmitStatus.ACCEPTED)

    def drop(self, tx_hash: bytes) -> Transaction:
        """Silently remove a pooled transaction, as a miner would."""
        tx = self._pool_hashes.pop(tx_hash, None)
        if tx is None:
            raise ChainError(f"transaction not in pool: {encoding.to_hex(tx_hash)}")
        del self._pool[(tx.sender.value, tx.nonce)]
        return tx

    # ----------------------------------------------------------------- mining

    def mine_block(self, parent_hash: bytes, tx_hashes: Sequence[bytes] = ()) -> Block:
        """Mine a block of pooled transactions as a child of ``parent_hash``.

        The head moves only if the new block makes its branch strictly longer
        than the canonical chain (longest-chain rule; ties keep the
        incumbent). Pool entries are consumed when their block becomes
        canonical, so mining onto a losing side branch leaves them pooled.
        """
        parent = self.block(parent_hash)
        txs: list[Transaction] = []
        for tx_hash in tx_hashes:
            tx = self._pool_hashes.get(tx_hash)
            if tx is None:
                raise ChainError(f"transaction not in pool: {encoding.to_hex(tx_hash)}")
            txs.append(tx)
        self._validate_block_txs(parent_hash, txs)
        self._tick += 1
        block = Block(
            parent_hash=parent_hash,
            height=parent.height + 1,
            transactions=tuple(txs),
            logical_timestamp=self._tick,
        )
        self._append_block(block)
        return block

    def reorganize(
        self,
        fork_height: int,
        competing_txs_per_block: Sequence[Sequence[Transaction | bytes]] = (),
    ) -> ReorgReport:
        """Replace the canonical chain from ``fork_height`` with a longer branch.

        A competing branch is built from the block at ``fork_height - 1``,
        one block longer than the segment it orphans (or longer, if more
        per-block tx lists are given). Competing txs may come from the pool
        or from the orphaned segment; txs on both branches stay executed,
        txs only on the old branch return to the pool (reversed).
        """
        if fork_height < 1:
            raise ChainError("cannot orphan the genesis block")
        if fork_height > self.head_height:
            raise ChainError(
                f"fork height {fork_height} exceeds canonical height {self.head_height}"
            )
        fork_parent = self._canonical[fork_height - 1]
        old_segment = self._canonical[fork_height:]
        old_txs: dict[bytes, Transaction] = {}
        for block_hash in old_segment:
            for tx in self._blocks[block_hash].transactions:
                old_txs[tx.hash] = tx

        branch_length = max(len(competing_txs_per_block), len(old_segment) + 1)
        plans: list[Sequence[Transaction | bytes]] = list(competing_txs_per_block)
        plans.extend(() for _ in range(branch_length - len(plans)))

        def resolve(item: Transaction | bytes) -> Transaction:
            if isinstance(item, Transaction):
                return item
            tx = self._pool_hashes.get(item) or old_txs.get(item)
            if tx is None:
                raise ChainError(
                    f"competing transaction not found in pool or orphaned branch: {encoding.to_hex(item)}"
                )
            return tx

        parent_hash = fork_parent
        new_blocks: list[Block] = []
        switched = False
        reversed_txs: list[bytes] = []
        reversed_from: dict[bytes, bytes] = {}
        superseded: list[bytes] = []
        for plan in plans:
            txs = [resolve(item) for item in plan]
            self._validate_block_txs(parent_hash, txs)
            self._tick += 1
            block = Block(
                parent_hash=parent_hash,
                height=self._blocks[parent_hash].height + 1,
                transactions=tuple(txs),
                logical_timestamp=self._tick,
            )
            result = self._append_block(block)
            if result is not None:
                switched = True
                reversed_txs.extend(result.reversed_txs)
                reversed_from.update(result.reversed_from)
                superseded.extend(result.superseded_txs)
            new_blocks.append(block)
            parent_hash = block.hash

        if not switched:  # pragma: no cover - branch length forces a switch
            raise ChainError("reorganization did not overtake the canonical chain")
        # A tx reversed mid-reorg may have been re-included by a later
        # competing block; only genuinely off-chain txs count as reversed.
        still_reversed = [h for h in reversed_txs if h not in self._tx_block]
        return ReorgReport(
            fork_height=fork_height,
            invalidated_blocks=list(old_segment),
            new_blocks=[b.hash for b in new_blocks],
            reversed_txs=still_reversed,
            reversed_from={h: reversed_from[h] for h in still_reversed},
            superseded_txs=[h for h in superseded if h not in self._tx_block],
        )

    # ----------------------------------------------------------------- oracle

    def compute_state(self, head_hash: bytes) -> OnChainState:
        """Pure fold of every transaction from genesis to ``head_hash``.

        Reference implementation of state: no incremental bookkeeping, just a
        replay. The incremental state must match this exactly.
        """
        chain: list[Block] = []
        cursor = head_hash
        while cursor != ZERO_DIGEST:
            block = self.block(cursor)
            chain.append(block)
            cursor = block.parent_hash
        state: OnChainState = {}
        for block in reversed(chain):
            for tx in block.transactions:
                updated = apply_payload(state.get(tx.target, {}), tx.payload)
                if updated is not None:
                    state[tx.target] = updated
        return {addr: mapping for addr, mapping in state.items() if mapping}

    # -------------------------------------------------------------- internals

    def _validate_block_txs(self, parent_hash: bytes, txs: Sequence[Transaction]) -> None:
        context = _ChainContext(self, parent_hash)
        seen: set[bytes] = set()
        for tx in txs:
            if tx.hash in seen:
                raise ChainError(f"duplicate transaction in block: {tx.hash_hex}")
            if context.has_tx(tx.hash):
                raise ChainError(f"transaction already on this chain: {tx.hash_hex}")
            expected = context.next_nonce(tx.sender)
            if expected is not None:
                if tx.nonce < expected:
                    raise ChainError(
                        f"nonce {tx.nonce} for {tx.sender} already consumed on this chain"
                    )
                if tx.nonce > expected:
                    raise ChainError(
                        f"nonce gap for {tx.sender}: expected {expected}, got {tx.nonce}"
                    )
            seen.add(tx.hash)
            context.consume(tx)

    def _append_block(self, block: Block) -> "_HeadSwitch | None":
        if block.hash in self._blocks:
            raise ChainError(f"block already known: {block.hash_hex}")
        if block.parent_hash not in self._blocks:
            raise ChainError(f"unknown parent block {encoding.to_hex(block.parent_hash)}")
        self._blocks[block.hash] = block
        for listener in self._block_listeners:
            listener(block)
        if block.height > self.head_height:
            return self._switch_head(block)
        return None

    def _switch_head(self, new_head: Block) -> "_HeadSwitch":
        path: list[Block] = []
        cursor: Block = new_head
        while cursor.hash not in self._canonical_set:
            path.append(cursor)
            cursor = self._blocks[cursor.parent_hash]
        ancestor_hash = cursor.hash

        disconnected: list[Block] = []
        while self._canonical[-1] != ancestor_hash:
            disconnected.append(self._disconnect_tip())
        for block in reversed(path):
            self._connect_block(block)

        new_branch_txs = {tx.hash for b in path for tx in b.transactions}
        reversed_txs: list[bytes] = []
        reversed_from: dict[bytes, bytes] = {}
        superseded: list[bytes] = []
        # Walk old blocks lowest-first so reversed txs re-enter the pool in
        # nonce order per sender.
        for block in reversed(disconnected):
            for tx in block.transactions:
                if tx.hash in new_branch_txs:
                    continue
                reversed_txs.append(tx.hash)
                reversed_from[tx.hash] = block.hash
                key = (tx.sender.value, tx.nonce)
                if key in self._pool:
                    # A newer submission already holds this slot; it wins.
                    superseded.append(tx.hash)
                else:
                    self._pool[key] = tx
                    self._pool_hashes[tx.hash] = tx
        if disconnected:
            self.reorg_count += 1
            logger.debug(
                "reorg: %d block(s) orphaned, %d tx(s) reversed",
                len(disconnected),
                len(reversed_txs),
            )
        return _HeadSwitch(
            disconnected=disconnected,
            connected=list(reversed(path)),
            reversed_txs=reversed_txs,
            reversed_from=reversed_from,
            superseded_txs=superseded,
        )

    def _connect_block(self, block: Block) -> None:
        undo: list[tuple[Address, str, bool, StateValue | None]] = []
        failed: set[bytes] = set()
        for tx in block.transactions:
            current = self._state.get(tx.target, {})
            updated = apply_payload(current, tx.payload)
            if updated is None:
                failed.add(tx.hash)
            else:
                for op in tx.payload:
                    if op.kind is OpKind.FAIL:
                        continue
                    key = op.key
                    had = key in current
                    old = current.get(key)
                    new_has = key in updated
                    if had != new_has or (had and old != updated[key]):
                        undo.append((tx.target, key, had, old))
                self._state[tx.target] = updated
            self._tx_block[tx.hash] = block.hash
            positions = self._nonce_positions.get(tx.sender.value)
            if positions is None:
                self._nonce_positions[tx.sender.value] = _NoncePositions(tx.nonce, [block.height])
            else:
                positions.heights.append(block.height)
            # Consume the pool entry only if it is this exact tx; a newer
            # replacement occupying the slot stays pooled.
            pooled = self._pool_hashes.pop(tx.hash, None)
            if pooled is not None:
                del self._pool[(tx.sender.value, tx.nonce)]
        self._undo[block.hash] = undo
        self._failed[block.hash] = frozenset(failed)
        self._canonical.append(block.hash)
        self._canonical_set.add(block.hash)

    def _disconnect_tip(self) -> Block:
        block_hash = self._canonical.pop()
        self._canonical_set.discard(block_hash)
        block = self._blocks[block_hash]
        for target, key, had, old in reversed(self._undo.pop(block_hash, [])):
            mapping = self._state.setdefault(target, {})
            if had:
                mapping[key] = old  # type: ignore[assignment]
            else:
                mapping.pop(key, None)
        self._failed.pop(block_hash, None)
        for tx in block.transactions:
            del self._tx_block[tx.hash]
            positions = self._nonce_positions[tx.sender.value]
            positions.heights.pop()
            if not positions.heights:
                del self._nonce_positions[tx.sender.value]
        return block


@dataclass
class _HeadSwitch:
    disconnected: list[Block]
    connected: list[Block]
    reversed_txs: list[bytes]
    reversed_from: dict[bytes, bytes]
    superseded_txs: list[bytes]


def recompute_canonical_head(chain: Chain) -> bytes:
    """Reference fork-choice: max height, incumbent wins ties, then smaller hash.

    Used by tests to check that the incrementally tracked head always agrees
    with a from-scratch evaluation of the rule.
    """
    max_height = max(block.height for block in chain._blocks.values())
    if chain.head_height == max_height:
        return chain.head_hash
    return min(h for h, block in chain._blocks.items() if block.height == max_height)
