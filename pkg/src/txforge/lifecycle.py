"""Per-transaction lifecycle state machine and the traversal engine that
realizes each edge as concrete chain actions.

States: created, pending, executed, dropped, reversed, finalized; dropped and
finalized are terminal. The default traversal walks the full loop
created → pending → executed → reversed → executed → finalized, the path
that exercises both a reversal and a finalization in one transaction's life.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .chain import Chain, ChainError, ReorgReport, SubmitStatus, Transaction
from .clock import Clock
from .events import EventHub

logger = logging.getLogger(__name__)

DEFAULT_CONFIRMATIONS = 6


class LifecycleState(Enum):
    CREATED = "created"
    PENDING = "pending"
    EXECUTED = "executed"
    DROPPED = "dropped"
    REVERSED = "reversed"
    FINALIZED = "finalized"


TERMINAL_STATES = frozenset({LifecycleState.DROPPED, LifecycleState.FINALIZED})

VALID_EDGES = frozenset(
    {
        (LifecycleState.CREATED, LifecycleState.PENDING),
        (LifecycleState.PENDING, LifecycleState.EXECUTED),
        (LifecycleState.PENDING, LifecycleState.DROPPED),
        (LifecycleState.EXECUTED, LifecycleState.REVERSED),
        (LifecycleState.EXECUTED, LifecycleState.FINALIZED),
        (LifecycleState.REVERSED, LifecycleState.EXECUTED),
        (LifecycleState.REVERSED, LifecycleState.DROPPED),
    }
)

DEFAULT_TRAVERSAL_PLAN: tuple[LifecycleState, ...] = (
    LifecycleState.CREATED,
    LifecycleState.PENDING,
    LifecycleState.EXECUTED,
    LifecycleState.REVERSED,
    LifecycleState.EXECUTED,
    LifecycleState.FINALIZED,
)


class LifecycleError(Exception):
    """Raised for invalid transitions, unknown txs, or plan violations."""


@dataclass(frozen=True)
class TraceStep:
    state: LifecycleState
    visit_index: int
    logical_timestamp: float
    block_context: bytes | None = None


@dataclass
class LifecycleTrace:
    tx_hash: bytes
    steps: list[TraceStep] = field(default_factory=list)
    complete: bool = False
    abort_reason: str | None = None

    @property
    def current_state(self) -> LifecycleState:
        return self.steps[-1].state

    def visits(self, state: LifecycleState) -> int:
        return sum(1 for step in self.steps if step.state is state)

    def states(self) -> list[LifecycleState]:
        return [step.state for step in self.steps]


@dataclass(frozen=True)
class StochasticProfile:
    """Per-tick probabilities for the randomized lifecycle driver.

    Defaults reflect mainnet-calibrated behaviour: roughly one reorg every
    24.43 blocks, and about half of submitted transactions executing per
    block interval (submission outpaces execution ~2:1).
    """

    reorg_probability_per_block: float = 1 / 24.43
    drop_probability_per_tick: float = 0.0
    execution_probability_per_block: float = 0.5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for name in (
            "reorg_probability_per_block",
            "drop_probability_per_tick",
            "execution_probability_per_block",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be within [0, 1], got {value}")


@dataclass(frozen=True)
class TransitionRecord:
    tx_hash: bytes
    source: LifecycleState
    target: LifecycleState
    visit_index: int
    logical_timestamp: float
    block_context: bytes | None = None


class StageHooks:
    """Callback surface for traversal instrumentation; default is a no-op."""

    def on_stage(self, state: LifecycleState, visit_index: int) -> None:  # pragma: no cover
        pass


@dataclass
class _Tracked:
    tx: Transaction
    trace: LifecycleTrace
    confirmations_emitted: int = 0


class LifecycleController:
    """Drives registered transactions through lifecycle states on a chain.

    Each edge maps to a concrete chain action: entering pending submits to
    the pool, entering executed mines the tx into a block, entering reversed
    orphans the tx's block with a minimal competing branch, entering
    finalized mines empty blocks until the confirmation threshold, and
    entering dropped removes the tx from the pool with no event.
    """

    def __init__(
        self,
        chain: Chain,
        hub: EventHub,
        clock: Clock,
        confirmations_required: int = DEFAULT_CONFIRMATIONS,
    ) -> None:
        if confirmations_required < 1:
            raise ValueError("confirmations_required must be at least 1")
        self.chain = chain
        self.hub = hub
        self.clock = clock
        self.confirmations_required = confirmations_required
        self._txs: dict[bytes, _Tracked] = {}
        self._active_traversal: bytes | None = None
        self._rng: random.Random | None = None
        self._rng_seed: int | None = None
        chain.add_block_listener(hub.emit_new_block)

    # ------------------------------------------------------------------ state

    def register(self, tx: Transaction) -> None:
        """Start tracking a transaction at created; does not touch the chain."""
        if tx.hash in self._txs:
            raise LifecycleError(f"transaction already registered: {tx.hash_hex}")
        trace = LifecycleTrace(tx_hash=tx.hash)
        trace.steps.append(TraceStep(LifecycleState.CREATED, 1, self.clock.now()))
        self._txs[tx.hash] = _Tracked(tx=tx, trace=trace)

    def known(self, tx_hash: bytes) -> bool:
        return tx_hash in self._txs

    def transaction(self, tx_hash: bytes) -> Transaction:
        return self._require(tx_hash).tx

    def current_state(self, tx_hash: bytes) -> LifecycleState:
        return self._require(tx_hash).trace.current_state

    def trace(self, tx_hash: bytes) -> LifecycleTrace:
        return self._require(tx_hash).trace

    def tracked_hashes(self) -> list[bytes]:
        return list(self._txs)

    def _require(self, tx_hash: bytes) -> _Tracked:
        tracked = self._txs.get(tx_hash)
        if tracked is None:
            raise LifecycleError(f"unknown transaction {tx_hash.hex()}")
        return tracked

    # ------------------------------------------------------------- transitions

    def advance(self, tx_hash: bytes, target: LifecycleState) -> TransitionRecord:
        """Perform one lifecycle edge, returning a record of the transition."""
        tracked = self._require(tx_hash)
        source = tracked.trace.current_state
        if source in TERMINAL_STATES:
            raise LifecycleError(f"{source.value} is a terminal state")
        if (source, target) not in VALID_EDGES:
            raise LifecycleError(f"invalid transition {source.value} -> {target.value}")

        if target is LifecycleState.PENDING:
            return self._enter_pending(tracked)
        if target is LifecycleState.EXECUTED:
            return self._enter_executed(tracked)
        if target is LifecycleState.REVERSED:
            return self._enter_reversed(tracked)
        if target is LifecycleState.FINALIZED:
            return self._enter_finalized(tracked)
        return self._enter_dropped(tracked)

    def _record_step(self, tracked: _Tracked, state: LifecycleState, block_context: bytes | None = None) -> TransitionRecord:
        source = tracked.trace.current_state
        visit = tracked.trace.visits(state) + 1
        step = TraceStep(state, visit, self.clock.now(), block_context)
        tracked.trace.steps.append(step)
        return TransitionRecord(
            tx_hash=tracked.tx.hash,
            source=source,
            target=state,
            visit_index=visit,
            logical_timestamp=step.logical_timestamp,
            block_context=block_context,
        )

    def _enter_pending(self, tracked: _Tracked) -> TransitionRecord:
        outcome = self.chain.submit(tracked.tx)
        if outcome.status is SubmitStatus.REJECTED:
            raise LifecycleError(f"submission rejected: {outcome.reason}")
        if outcome.status is SubmitStatus.REPLACED and outcome.replaced_hash in self._txs:
            # The evicted tx dies silently: no event, straight to dropped.
            evicted = self._txs[outcome.replaced_hash]
            if evicted.trace.current_state not in TERMINAL_STATES:
                self._record_step(evicted, LifecycleState.DROPPED)
        record = self._record_step(tracked, LifecycleState.PENDING)
        self.hub.emit_transaction_hash(tracked.tx.hash)
        return record

    def _enter_executed(self, tracked: _Tracked) -> TransitionRecord:
        block = self.chain.mine_block(self.chain.head_hash, [tracked.tx.hash])
        tracked.confirmations_emitted = 0
        record = self._record_step(tracked, LifecycleState.EXECUTED, block.hash)
        failed = self.chain.tx_failed(block.hash, tracked.tx.hash)
        self.hub.emit_receipt(tracked.tx.hash, block.hash, failed)
        return record

    def _enter_reversed(self, tracked: _Tracked) -> TransitionRecord:
        block_hash = self.chain.tx_block_hash(tracked.tx.hash)
        if block_hash is None:  # pragma: no cover - guarded by the edge check
            raise LifecycleError("transaction is not on the canonical chain")
        fork_height = self.chain.block(block_hash).height
        report = self.chain.reorganize(fork_height, ())
        records = self._apply_reorg_effects(report)
        for record in records:
            if record.tx_hash == tracked.tx.hash and record.target is LifecycleState.REVERSED:
                return record
        raise LifecycleError(  # pragma: no cover - the fork covers the tx's block
            f"reorganization did not reverse {tracked.tx.hash_hex}"
        )

    def _enter_finalized(self, tracked: _Tracked) -> TransitionRecord:
        confirmations = self.chain.confirmations(tracked.tx.hash)
        if confirmations is None:  # pragma: no cover - guarded by the edge check
            raise LifecycleError("transaction is not on the canonical chain")
        while confirmations < self.confirmations_required:
            self.chain.mine_block(self.chain.head_hash, ())
            confirmations += 1
            self._emit_confirmations(tracked, confirmations)
        return self._record_step(tracked, LifecycleState.FINALIZED)

    def _enter_dropped(self, tracked: _Tracked) -> TransitionRecord:
        self.chain.drop(tracked.tx.hash)
        return self._record_step(tracked, LifecycleState.DROPPED)

    def _emit_confirmations(self, tracked: _Tracked, count: int) -> None:
        while tracked.confirmations_emitted < min(count, self.confirmations_required):
            tracked.confirmations_emitted += 1
            self.hub.emit_confirmation(tracked.tx.hash, tracked.confirmations_emitted)

    def _apply_reorg_effects(self, report: ReorgReport) -> list[TransitionRecord]:
        """Translate a chain reorg into lifecycle transitions for tracked txs."""
        records: list[TransitionRecord] = []
        for tx_hash in report.reversed_txs:
            tracked = self._txs.get(tx_hash)
            if tracked is None or tracked.trace.current_state is not LifecycleState.EXECUTED:
                continue
            orphaned = report.reversed_from.get(tx_hash)
            tracked.confirmations_emitted = 0
            records.append(self._record_step(tracked, LifecycleState.REVERSED, orphaned))
            self.hub.emit_changed(tx_hash, orphaned or b"")
            if tx_hash in report.superseded_txs:
                # Its nonce slot is held by a newer pool entry, so it cannot
                # return to the pool: it is effectively dropped, silently.
                records.append(self._record_step(tracked, LifecycleState.DROPPED))
        return records

    # -------------------------------------------------------------- traversals

    def run_traversal(
        self,
        tx_hash: bytes,
        plan: Sequence[LifecycleState] = DEFAULT_TRAVERSAL_PLAN,
        hooks: StageHooks | None = None,
    ) -> LifecycleTrace:
        """Walk a transaction through ``plan``, one edge at a time.

        ``hooks.on_stage`` fires after each stage settles, including the
        initial created stage. A hook exception aborts the traversal and
        marks the trace incomplete; chain-level errors propagate.
        """
        validate_plan(plan)
        tracked = self._require(tx_hash)
        if tracked.trace.states() != [LifecycleState.CREATED]:
            raise LifecycleError("transaction has already advanced past created")
        if self._active_traversal is not None:
            raise LifecycleError("another traversal is already active")
        self._active_traversal = tx_hash
        try:
            if hooks is not None:
                try:
                    hooks.on_stage(LifecycleState.CREATED, 1)
                except Exception as exc:
                    tracked.trace.abort_reason = f"stage hook failed at created:1: {exc}"
                    return tracked.trace
            for target in plan[1:]:
                record = self.advance(tx_hash, target)
                if hooks is not None:
                    try:
                        hooks.on_stage(target, record.visit_index)
                    except Exception as exc:
                        tracked.trace.abort_reason = (
                            f"stage hook failed at {target.value}:{record.visit_index}: {exc}"
                        )
                        return tracked.trace
            tracked.trace.complete = True
        finally:
            self._active_traversal = None
        return tracked.trace

    # --------------------------------------------------------------- stochastic

    def stochastic_step(self, profile: StochasticProfile) -> list[TransitionRecord]:
        """Advance the whole system one tick under the given probabilities.

        Draw order is fixed for determinism: execution draws over the pool in
        insertion order, then one reorg draw against the freshly mined block,
        then drop draws over the remaining pool, then confirmation accounting
        (which finalizes txs reaching the threshold).
        """
        rng = self._stochastic_rng(profile)
        records: list[TransitionRecord] = []

        included: list[Transaction] = []
        expected: dict[bytes, int | None] = {}
        for tx in self.chain.pool_transactions():
            take = rng.random() < profile.execution_probability_per_block
            if not take:
                continue
            sender = tx.sender.value
            nonce = expected.get(sender, self.chain.next_expected_nonce(tx.sender))
            if nonce is not None and tx.nonce != nonce:
                continue  # would leave a gap this tick; retry later
            included.append(tx)
            expected[sender] = tx.nonce + 1

        block = self.chain.mine_block(self.chain.head_hash, [tx.hash for tx in included])
        for tx in included:
            tracked = self._txs.get(tx.hash)
            if tracked is None:
                continue
            tracked.confirmations_emitted = 0
            records.append(self._record_step(tracked, LifecycleState.EXECUTED, block.hash))
            self.hub.emit_receipt(tx.hash, block.hash, self.chain.tx_failed(block.hash, tx.hash))

        if rng.random() < profile.reorg_probability_per_block:
            report = self.chain.reorganize(block.height, ())
            records.extend(self._apply_reorg_effects(report))

        for tx in self.chain.pool_transactions():
            if rng.random() < profile.drop_probability_per_tick:
                self.chain.drop(tx.hash)
                tracked = self._txs.get(tx.hash)
                if tracked is not None and tracked.trace.current_state not in TERMINAL_STATES:
                    records.append(self._record_step(tracked, LifecycleState.DROPPED))

        for tracked in self._txs.values():
            if tracked.trace.current_state is not LifecycleState.EXECUTED:
                continue
            confirmations = self.chain.confirmations(tracked.tx.hash)
            if confirmations is None:
                continue
            self._emit_confirmations(tracked, confirmations)
            if confirmations >= self.confirmations_required:
                records.append(self._record_step(tracked, LifecycleState.FINALIZED))
        return records

    def _stochastic_rng(self, profile: StochasticProfile) -> random.Random:
        if self._rng is None or self._rng_seed != profile.rng_seed:
            self._rng = random.Random(profile.rng_seed)
            self._rng_seed = profile.rng_seed
        return self._rng


def validate_plan(plan: Sequence[LifecycleState]) -> None:
    """A valid plan is a walk over the lifecycle edges starting at created."""
    if not plan:
        raise LifecycleError("traversal plan is empty")
    if plan[0] is not LifecycleState.CREATED:
        raise LifecycleError("traversal plan must start at created")
    for source, target in zip(plan, plan[1:]):
        if (source, target) not in VALID_EDGES:
            raise LifecycleError(f"invalid transition {source.value} -> {target.value} in plan")
