"""Shared fixtures and factories for the test suite."""
from __future__ import annotations

import pytest

from txforge.chain import Address, Chain, StateOp, Transaction
from txforge.clock import SimulatedClock
from txforge.events import EventHub
from txforge.lifecycle import LifecycleController

SENDER = Address.from_int(1)
OTHER_SENDER = Address.from_int(2)
CONTRACT = Address.from_int(100)


def make_tx(nonce: int, ops=None, sender: Address = SENDER,
            target: Address = CONTRACT, tag: str | None = None) -> Transaction:
    """A well-formed transaction; default payload sets a unique key."""
    if ops is None:
        ops = [StateOp.set(f"k{nonce}", f"v{nonce}")]
    return Transaction(sender=sender, nonce=nonce, target=target,
                       payload=tuple(ops), tag=tag)


@pytest.fixture
def chain() -> Chain:
    return Chain()


@pytest.fixture
def clock() -> SimulatedClock:
    return SimulatedClock()


@pytest.fixture
def hub() -> EventHub:
    return EventHub()


@pytest.fixture
def controller(chain, hub, clock) -> LifecycleController:
    return LifecycleController(chain, hub, clock)
