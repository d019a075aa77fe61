"""Lifecycle state machine: edges, traversals, and the stochastic driver."""
from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from txforge.chain import Chain, StateOp
from txforge.clock import SimulatedClock
from txforge.events import EventHub
from txforge.lifecycle import (
    DEFAULT_TRAVERSAL_PLAN,
    LifecycleController,
    LifecycleError,
    LifecycleState,
    StageHooks,
    StochasticProfile,
    TERMINAL_STATES,
    VALID_EDGES,
    validate_plan,
)

from conftest import CONTRACT, make_tx

S = LifecycleState


def fresh_controller(confirmations: int = 6):
    chain = Chain()
    hub = EventHub()
    controller = LifecycleController(chain, hub, SimulatedClock(),
                                     confirmations_required=confirmations)
    return chain, hub, controller


class TestAdvance:
    def test_register_starts_created(self, controller):
        tx = make_tx(0)
        controller.register(tx)
        assert controller.current_state(tx.hash) is S.CREATED

    def test_submit_reaches_pending(self, controller, chain):
        tx = make_tx(0)
        controller.register(tx)
        controller.advance(tx.hash, S.PENDING)
        assert controller.current_state(tx.hash) is S.PENDING
        assert chain.in_pool(tx.hash)

    def test_mine_reaches_executed(self, controller, chain):
        tx = make_tx(0)
        controller.register(tx)
        controller.advance(tx.hash, S.PENDING)
        record = controller.advance(tx.hash, S.EXECUTED)
        assert controller.current_state(tx.hash) is S.EXECUTED
        assert record.block_context == chain.tx_block_hash(tx.hash)

    def test_unknown_tx_rejected(self, controller):
        with pytest.raises(LifecycleError, match="unknown"):
            controller.current_state(b"\x01" * 32)
        with pytest.raises(LifecycleError, match="unknown"):
            controller.advance(b"\x01" * 32, S.PENDING)

    def test_invalid_edge_rejected(self, controller):
        tx = make_tx(0)
        controller.register(tx)
        with pytest.raises(LifecycleError, match="invalid transition"):
            controller.advance(tx.hash, S.EXECUTED)

    def test_pending_to_finalized_not_an_edge(self, controller):
        tx = make_tx(0)
        controller.register(tx)
        controller.advance(tx.hash, S.PENDING)
        with pytest.raises(LifecycleError, match="invalid transition"):
            controller.advance(tx.hash, S.FINALIZED)

    def test_terminal_states_refuse_further_steps(self, controller):
        tx = make_tx(0)
        controller.register(tx)
        controller.advance(tx.hash, S.PENDING)
        controller.advance(tx.hash, S.DROPPED)
        with pytest.raises(LifecycleError, match="terminal"):
            controller.advance(tx.hash, S.PENDING)

    def test_reversal_returns_tx_to_pool(self, controller, chain):
        tx = make_tx(0)
        controller.register(tx)
        controller.advance(tx.hash, S.PENDING)
        controller.advance(tx.hash, S.EXECUTED)
        controller.advance(tx.hash, S.REVERSED)
        assert chain.in_pool(tx.hash)
        assert chain.state_of(CONTRACT) == {}

    def test_finalized_requires_k_confirmations(self, chain, controller):
        tx = make_tx(0)
        controller.register(tx)
        for target in (S.PENDING, S.EXECUTED, S.FINALIZED):
            controller.advance(tx.hash, target)
        assert chain.confirmations(tx.hash) >= 6


class TestRunTraversal:
    def test_default_plan_trace(self, controller):
        tx = make_tx(0)
        controller.register(tx)
        trace = controller.run_traversal(tx.hash, DEFAULT_TRAVERSAL_PLAN, StageHooks())
        assert trace.complete
        assert trace.states() == [
            S.CREATED, S.PENDING, S.EXECUTED, S.REVERSED, S.EXECUTED, S.FINALIZED,
        ]
        # the two Executed visits carry distinct visit indices
        executed = [step for step in trace.steps if step.state is S.EXECUTED]
        assert [step.visit_index for step in executed] == [1, 2]

    def test_default_plan_chain_coherence(self, chain, controller):
        tx = make_tx(0, [StateOp.increment("n", 1)])
        controller.register(tx)
        controller.run_traversal(tx.hash, DEFAULT_TRAVERSAL_PLAN, StageHooks())
        assert chain.confirmations(tx.hash) >= 6
        # payload applied exactly once despite the double execution
        assert chain.compute_state(chain.head_hash) == {CONTRACT: {"n": 1}}

    def test_drop_plan(self, controller):
        tx = make_tx(0)
        controller.register(tx)
        trace = controller.run_traversal(
            tx.hash, [S.CREATED, S.PENDING, S.DROPPED], StageHooks())
        assert trace.complete
        assert len(trace.steps) == 3
        assert trace.current_state is S.DROPPED

    def test_normal_path_plan(self, controller):
        tx = make_tx(0)
        controller.register(tx)
        trace = controller.run_traversal(
            tx.hash, [S.CREATED, S.PENDING, S.EXECUTED, S.FINALIZED], StageHooks())
        assert trace.states() == [S.CREATED, S.PENDING, S.EXECUTED, S.FINALIZED]

    def test_traversal_requires_fresh_tx(self, controller):
        tx = make_tx(0)
        controller.register(tx)
        controller.advance(tx.hash, S.PENDING)
        with pytest.raises(LifecycleError, match="already advanced"):
            controller.run_traversal(tx.hash, DEFAULT_TRAVERSAL_PLAN, StageHooks())

    def test_hook_failure_marks_trace_incomplete(self, controller):
        class Boom(StageHooks):
            def on_stage(self, state, visit_index):
                if state is S.EXECUTED and visit_index == 2:
                    raise RuntimeError("capture infrastructure down")

        tx = make_tx(0)
        controller.register(tx)
        trace = controller.run_traversal(tx.hash, DEFAULT_TRAVERSAL_PLAN, Boom())
        assert not trace.complete
        assert "capture infrastructure down" in trace.abort_reason
        assert trace.current_state is S.EXECUTED

    def test_hooks_see_every_stage_in_order(self, controller):
        seen = []

        class Recorder(StageHooks):
            def on_stage(self, state, visit_index):
                seen.append((state, visit_index))

        tx = make_tx(0)
        controller.register(tx)
        controller.run_traversal(tx.hash, DEFAULT_TRAVERSAL_PLAN, Recorder())
        assert seen == [
            (S.CREATED, 1), (S.PENDING, 1), (S.EXECUTED, 1),
            (S.REVERSED, 1), (S.EXECUTED, 2), (S.FINALIZED, 1),
        ]


class TestEviction:
    def test_replacement_drops_evicted_tx_silently(self, controller, hub):
        first = make_tx(0, [StateOp.set("k", "a")])
        second = make_tx(0, [StateOp.set("k", "b")])
        controller.register(first)
        controller.register(second)
        controller.advance(first.hash, S.PENDING)
        controller.advance(second.hash, S.PENDING)
        assert controller.current_state(first.hash) is S.DROPPED
        assert controller.current_state(second.hash) is S.PENDING
        # eviction produces no event for the evicted tx beyond its original send
        kinds = [e.kind for e in hub.events(tx_hash=first.hash)]
        assert [k.value for k in kinds] == ["transaction_hash"]


class TestValidatePlan:
    def test_default_plan_is_valid(self):
        validate_plan(DEFAULT_TRAVERSAL_PLAN)

    def test_empty_plan_rejected(self):
        with pytest.raises(LifecycleError):
            validate_plan([])

    def test_plan_must_start_at_created(self):
        with pytest.raises(LifecycleError, match="start"):
            validate_plan([S.PENDING, S.EXECUTED])

    def test_plan_with_invalid_edge_rejected(self):
        with pytest.raises(LifecycleError, match="invalid transition"):
            validate_plan([S.CREATED, S.PENDING, S.FINALIZED])


# ---------------------------------------------------------------- stochastic


class TestStochastic:
    def test_zero_probabilities_do_nothing(self):
        chain, hub, controller = fresh_controller()
        tx = make_tx(0)
        controller.register(tx)
        controller.advance(tx.hash, S.PENDING)
        profile = StochasticProfile(
            reorg_probability_per_block=0.0,
            drop_probability_per_tick=0.0,
            execution_probability_per_block=0.0,
            rng_seed=1,
        )
        for _ in range(50):
            records = controller.stochastic_step(profile)
            assert records == []
        assert controller.current_state(tx.hash) is S.PENDING

    def test_same_seed_same_transitions(self):
        def run(seed):
            chain, hub, controller = fresh_controller()
            for n in range(5):
                tx = make_tx(n, [StateOp.increment("n", 1)])
                controller.register(tx)
                controller.advance(tx.hash, S.PENDING)
            profile = StochasticProfile(rng_seed=seed,
                                        drop_probability_per_tick=0.05)
            log = []
            for _ in range(200):
                for record in controller.stochastic_step(profile):
                    log.append((record.tx_hash, record.source, record.target))
            return log, chain.reorg_count

        first = run(42)
        second = run(42)
        different = run(43)
        assert first == second
        assert first != different

    def test_execution_probability_one_executes_everything(self):
        chain, hub, controller = fresh_controller(confirmations=2)
        txs = [make_tx(n) for n in range(4)]
        for tx in txs:
            controller.register(tx)
            controller.advance(tx.hash, S.PENDING)
        profile = StochasticProfile(
            reorg_probability_per_block=0.0,
            execution_probability_per_block=1.0,
            rng_seed=9,
        )
        controller.stochastic_step(profile)
        assert all(controller.current_state(t.hash) is S.EXECUTED for t in txs)
        # two more empty ticks reach K=2 confirmations -> finalized
        controller.stochastic_step(profile)
        controller.stochastic_step(profile)
        assert all(controller.current_state(t.hash) is S.FINALIZED for t in txs)

    def test_stochastic_traces_stay_on_valid_edges(self):
        chain, hub, controller = fresh_controller(confirmations=3)
        for n in range(6):
            tx = make_tx(n, [StateOp.increment("n", 1)])
            controller.register(tx)
            controller.advance(tx.hash, S.PENDING)
        profile = StochasticProfile(rng_seed=7, drop_probability_per_tick=0.03,
                                    reorg_probability_per_block=0.2)
        for _ in range(300):
            controller.stochastic_step(profile)
        for tx_hash in controller.tracked_hashes():
            states = controller.trace(tx_hash).states()
            for a, b in zip(states, states[1:]):
                assert (a, b) in VALID_EDGES
            for state in states[:-1]:
                assert state not in TERMINAL_STATES


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(["extend", "reverse", "finish"]),
                min_size=0, max_size=6))
def test_random_plans_keep_edge_soundness(moves):
    """Build a random valid plan, run it, and check the trace edge set."""
    plan = [S.CREATED, S.PENDING, S.EXECUTED]
    for move in moves:
        if plan[-1] in TERMINAL_STATES:
            break
        if move == "extend" and plan[-1] is S.REVERSED:
            plan.append(S.EXECUTED)
        elif move == "reverse" and plan[-1] is S.EXECUTED:
            plan.append(S.REVERSED)
        elif move == "finish" and plan[-1] is S.EXECUTED:
            plan.append(S.FINALIZED)
    chain, hub, controller = fresh_controller(confirmations=2)
    tx = make_tx(0)
    controller.register(tx)
    trace = controller.run_traversal(tx.hash, plan, StageHooks())
    assert trace.complete
    states = trace.states()
    assert states == plan
    for a, b in zip(states, states[1:]):
        assert (a, b) in VALID_EDGES
