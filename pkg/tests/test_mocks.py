"""Mock DApp strategies and planted bugs, driven by hand-injected events."""
from __future__ import annotations

import copy
import itertools

import pytest

from txforge import encoding
from txforge.clock import SimulatedClock
from txforge.documents import documents_equal, filter_document
from txforge.events import ChainEvent, EventKind
from txforge.mocks import BugFlags, MockDApp, SyncStrategy

_seq = itertools.count(1)

CLEAN_DOC = {
    "records": {},
    "meta": {"index": [], "op_count": 0, "last_tx": ""},
    "pending": {},
}


def make_dapp(strategy, clock=None, confirmations=6, **flag_kwargs):
    return MockDApp(
        strategy=strategy,
        flags=BugFlags(**flag_kwargs),
        clock=clock or SimulatedClock(),
        confirmations_required=confirmations,
    )


def hash_event(tx):
    return ChainEvent(seq=next(_seq), kind=EventKind.TRANSACTION_HASH, tx_hash=tx.hash)


def receipt_event(tx, status="success"):
    return ChainEvent(
        seq=next(_seq), kind=EventKind.RECEIPT, tx_hash=tx.hash,
        block_hash=b"\xaa" * 8, status=status,
    )


def changed_event(tx):
    return ChainEvent(
        seq=next(_seq), kind=EventKind.CHANGED, tx_hash=tx.hash, block_hash=b"\xbb" * 8,
    )


def confirmation_event(tx, count):
    return ChainEvent(seq=next(_seq), kind=EventKind.CONFIRMATION, tx_hash=tx.hash, count=count)


class _StubNodeView:
    def __init__(self, state):
        self._state = state

    def state_of(self, contract):
        return self._state


class TestBugFlags:
    def test_defaults_are_all_off(self):
        flags = BugFlags.from_config(None)
        assert flags == BugFlags()
        assert flags.laggy_update == 0.0
        assert BugFlags.from_config({}) == BugFlags()

    def test_from_config_reads_every_flag(self):
        flags = BugFlags.from_config(
            {
                "type1_premature_update": True,
                "type2_no_rollback": True,
                "rollback_cleared_on_restart": True,
                "laggy_update": 2,
            }
        )
        assert flags.type1_premature_update
        assert flags.type2_no_rollback
        assert flags.rollback_cleared_on_restart
        assert flags.laggy_update == 2.0

    def test_unknown_flag_rejected(self):
        with pytest.raises(ValueError, match="type3_ghost"):
            BugFlags.from_config({"type3_ghost": True})


class TestInvocations:
    def test_declared_functionalities(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        assert dapp.functionalities() == ("create", "update", "withdraw")

    def test_create_builds_a_set_transaction(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        tx = dapp.invoke("create", nonce=0)
        assert tx.tag == "create"
        assert tx.sender == dapp.sender
        assert tx.target == dapp.contract
        (op,) = tx.payload
        assert (op.kind.value, op.key, op.value) == ("set", "record:r1", "v1")

    def test_update_and_withdraw_need_an_existing_record(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        assert dapp.can("create")
        assert not dapp.can("update")
        assert not dapp.can("withdraw")
        with pytest.raises(ValueError, match="existing record"):
            dapp.invoke("update", nonce=0)
        dapp.invoke("create", nonce=0)
        assert dapp.can("update")
        assert dapp.can("withdraw")

    def test_unknown_functionality_rejected(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        with pytest.raises(ValueError, match="unknown functionality"):
            dapp.invoke("burn", nonce=0)

    def test_withdraw_deletes_the_record_it_planned(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        dapp.invoke("create", nonce=0)
        tx = dapp.invoke("withdraw", nonce=1)
        (op,) = tx.payload
        assert (op.kind.value, op.key) == ("delete", "record:r1")
        assert not dapp.can("update")

    def test_serial_numbering_across_invocations(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        first = dapp.invoke("create", nonce=0)
        second = dapp.invoke("create", nonce=1)
        assert first.payload[0].key == "record:r1"
        assert second.payload[0].key == "record:r2"
        assert second.payload[0].value == "v2"


class TestPassiveWaiting:
    def test_marks_in_flight_at_transaction_hash(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(hash_event(tx))
        doc = dapp.snapshot_document()
        assert doc["pending"] == {encoding.to_hex(tx.hash): True}
        assert doc["records"] == {}

    def test_receipt_alone_changes_nothing(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(hash_event(tx))
        dapp.on_event(receipt_event(tx))
        assert dapp.snapshot_document()["records"] == {}

    def test_applies_only_at_the_confirmation_threshold(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING, confirmations=6)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(hash_event(tx))
        dapp.on_event(receipt_event(tx))
        for count in range(1, 6):
            dapp.on_event(confirmation_event(tx, count))
            assert dapp.snapshot_document()["records"] == {}
        dapp.on_event(confirmation_event(tx, 6))
        doc = dapp.snapshot_document()
        assert doc["records"] == {"r1": {"value": "v1", "status": "active"}}
        assert doc["pending"] == {}
        assert doc["meta"]["index"] == ["r1"]
        assert doc["meta"]["op_count"] == 1
        assert doc["meta"]["last_tx"] == encoding.to_hex(tx.hash)

    def test_events_for_unknown_transactions_are_ignored(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        stranger = ChainEvent(seq=1, kind=EventKind.TRANSACTION_HASH, tx_hash=b"\x99" * 8)
        dapp.on_event(stranger)
        assert dapp.snapshot_document() == CLEAN_DOC


class TestAggressiveUpdating:
    def test_applies_at_successful_receipt(self):
        dapp = make_dapp(SyncStrategy.AGGRESSIVE_UPDATING)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(hash_event(tx))
        assert dapp.snapshot_document()["records"] == {}
        dapp.on_event(receipt_event(tx))
        assert dapp.snapshot_document()["records"] == {"r1": {"value": "v1", "status": "active"}}

    def test_failed_receipt_is_not_applied(self):
        dapp = make_dapp(SyncStrategy.AGGRESSIVE_UPDATING)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(receipt_event(tx, status="failed"))
        assert dapp.snapshot_document() == CLEAN_DOC

    def test_rollback_restores_the_exact_prior_document(self):
        dapp = make_dapp(SyncStrategy.AGGRESSIVE_UPDATING)
        seed = dapp.invoke("create", nonce=0)
        dapp.on_event(receipt_event(seed))
        before = copy.deepcopy(dapp.snapshot_document())
        tx = dapp.invoke("update", nonce=1)
        dapp.on_event(receipt_event(tx))
        assert dapp.snapshot_document() != before
        dapp.on_event(changed_event(tx))
        assert dapp.snapshot_document() == before

    def test_reexecution_after_rollback_applies_again(self):
        dapp = make_dapp(SyncStrategy.AGGRESSIVE_UPDATING)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(receipt_event(tx))
        dapp.on_event(changed_event(tx))
        assert dapp.snapshot_document()["records"] == {}
        dapp.on_event(receipt_event(tx))
        doc = dapp.snapshot_document()
        assert doc["records"] == {"r1": {"value": "v1", "status": "active"}}
        assert doc["meta"]["op_count"] == 1

    def test_rollback_without_a_journal_entry_is_a_quiet_no_op(self):
        dapp = make_dapp(SyncStrategy.AGGRESSIVE_UPDATING)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(changed_event(tx))
        assert dapp.snapshot_document() == CLEAN_DOC


class TestPeriodicPolling:
    def test_per_transaction_events_are_ignored(self):
        dapp = make_dapp(SyncStrategy.PERIODIC_POLLING)
        tx = dapp.invoke("create", nonce=0)
        before = copy.deepcopy(dapp.snapshot_document())
        for event in (hash_event(tx), receipt_event(tx), changed_event(tx),
                      confirmation_event(tx, 6)):
            dapp.on_event(event)
        assert dapp.snapshot_document() == before

    def test_poll_rebuilds_records_from_node_state(self):
        dapp = make_dapp(SyncStrategy.PERIODIC_POLLING)
        view = _StubNodeView({"record:r1": "v1", "record:r9": "v9", "counter": 42})
        dapp.poll_tick(view)
        doc = dapp.snapshot_document()
        assert doc["records"] == {
            "r1": {"value": "v1", "status": "active"},
            "r9": {"value": "v9", "status": "active"},
        }
        assert doc["meta"]["index"] == ["r1", "r9"]

    def test_poll_reflects_deletions(self):
        dapp = make_dapp(SyncStrategy.PERIODIC_POLLING)
        dapp.poll_tick(_StubNodeView({"record:r1": "v1"}))
        assert dapp.snapshot_document()["meta"]["index"] == ["r1"]
        dapp.poll_tick(_StubNodeView({}))
        doc = dapp.snapshot_document()
        assert doc["records"] == {}
        assert doc["meta"]["index"] == []

    def test_poll_tick_is_a_no_op_for_event_driven_strategies(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        before = copy.deepcopy(dapp.snapshot_document())
        dapp.poll_tick(_StubNodeView({"record:r1": "v1"}))
        assert dapp.snapshot_document() == before


class TestType1PrematureUpdate:
    def test_full_effect_lands_at_transaction_hash(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING, type1_premature_update=True)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(hash_event(tx))
        doc = dapp.snapshot_document()
        assert doc["records"] == {"r1": {"value": "v1", "status": "active"}}
        # No in-flight bookkeeping either — the update masquerades as final.
        assert doc["pending"] == {}

    def test_premature_document_survives_the_pool_roundtrip(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING, type1_premature_update=True)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(hash_event(tx))
        at_pending = copy.deepcopy(dapp.snapshot_document())
        dapp.on_event(changed_event(tx))
        assert dapp.snapshot_document() == at_pending


class TestType2NoRollback:
    def test_reversal_leaves_the_update_behind(self):
        dapp = make_dapp(SyncStrategy.AGGRESSIVE_UPDATING, type2_no_rollback=True)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(receipt_event(tx))
        applied = copy.deepcopy(dapp.snapshot_document())
        assert applied["records"] == {"r1": {"value": "v1", "status": "active"}}
        dapp.on_event(changed_event(tx))
        assert dapp.snapshot_document() == applied


class TestRollbackClearedOnRestart:
    def test_journal_is_gone_by_the_time_the_reorg_arrives(self):
        dapp = make_dapp(SyncStrategy.AGGRESSIVE_UPDATING, rollback_cleared_on_restart=True)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(receipt_event(tx))
        applied = copy.deepcopy(dapp.snapshot_document())
        dapp.on_event(changed_event(tx))
        assert dapp.snapshot_document() == applied

    def test_explicit_restart_has_the_same_effect(self):
        dapp = make_dapp(SyncStrategy.AGGRESSIVE_UPDATING)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(receipt_event(tx))
        applied = copy.deepcopy(dapp.snapshot_document())
        dapp.restart()
        dapp.on_event(changed_event(tx))
        assert dapp.snapshot_document() == applied


class TestLaggyUpdate:
    def test_data_mutations_wait_out_the_lag(self):
        clock = SimulatedClock()
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING, clock=clock, laggy_update=5.0)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(hash_event(tx))
        for count in range(1, 7):
            dapp.on_event(confirmation_event(tx, count))
        assert dapp.snapshot_document()["records"] == {}
        clock.sleep(4.9)
        assert dapp.snapshot_document()["records"] == {}
        clock.sleep(0.2)
        assert dapp.snapshot_document()["records"] == {"r1": {"value": "v1", "status": "active"}}

    def test_the_in_flight_marker_stays_prompt(self):
        # Only the heavyweight data processing lags; the cheap marker write
        # happens synchronously even under laggy_update.
        clock = SimulatedClock()
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING, clock=clock, laggy_update=5.0)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(hash_event(tx))
        assert dapp.snapshot_document()["pending"] == {encoding.to_hex(tx.hash): True}

    def test_flush_due_accepts_an_explicit_time(self):
        clock = SimulatedClock()
        dapp = make_dapp(SyncStrategy.AGGRESSIVE_UPDATING, clock=clock, laggy_update=3.0)
        tx = dapp.invoke("create", nonce=0)
        dapp.on_event(receipt_event(tx))
        dapp.flush_due(now=2.9)
        assert dapp._doc["records"] == {}
        dapp.flush_due(now=3.0)
        assert dapp._doc["records"] == {"r1": {"value": "v1", "status": "active"}}

    def test_delayed_mutations_apply_in_scheduling_order(self):
        clock = SimulatedClock()
        dapp = make_dapp(SyncStrategy.AGGRESSIVE_UPDATING, clock=clock, laggy_update=1.0)
        create = dapp.invoke("create", nonce=0)
        update = dapp.invoke("update", nonce=1)
        dapp.on_event(receipt_event(create))
        dapp.on_event(receipt_event(update))
        clock.sleep(1.0)
        doc = dapp.snapshot_document()
        assert doc["records"] == {"r1": {"value": "v2", "status": "active"}}
        assert doc["meta"]["op_count"] == 2


class TestRecommendedRules:
    def test_op_count_is_excluded_from_comparison(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        rules = dapp.recommended_rules()
        doc_a = {"records": {"r1": {"value": "v1"}}, "meta": {"index": ["r1"], "op_count": 1}}
        doc_b = {"records": {"r1": {"value": "v1"}}, "meta": {"index": ["r1"], "op_count": 5}}
        assert not documents_equal(doc_a, doc_b)
        assert documents_equal(filter_document(doc_a, rules), filter_document(doc_b, rules))

    def test_everything_else_survives_filtering(self):
        dapp = make_dapp(SyncStrategy.PASSIVE_WAITING)
        rules = dapp.recommended_rules()
        doc = {
            "records": {"r1": {"value": "v1", "status": "active"}},
            "meta": {"index": ["r1"], "op_count": 7, "last_tx": "0xffff"},
            "pending": {},
        }
        filtered = filter_document(doc, rules)
        assert filtered == {
            "records": {"r1": {"value": "v1", "status": "active"}},
            "meta": {"index": ["r1"], "last_tx": "0xffff"},
            "pending": {},
        }
