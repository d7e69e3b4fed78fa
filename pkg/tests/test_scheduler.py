import pytest
from hypothesis import given
from hypothesis import strategies as st

from weightrelay.errors import ConfigError
from weightrelay.protocol.scheduler import RoundRobin, UniformRandom, make_scheduler


def test_round_robin_two_epochs():
    s = RoundRobin([1, 2, 3])
    out, prev = [], None
    for r in range(6):
        prev = s.next(r, prev)
        out.append(prev)
    assert out == [1, 2, 3, 1, 2, 3]


def test_custom_order():
    s = make_scheduler("round-robin", [1, 2, 3], order=[3, 1, 2])
    assert [s.next(r, None) for r in range(4)] == [3, 1, 2, 3]


def test_two_trainers_random_alternate():
    s = UniformRandom([1, 2], seed=9)
    prev = s.next(0, None)
    for r in range(1, 50):
        nxt = s.next(r, prev)
        assert nxt != prev
        prev = nxt


@given(st.integers(2, 8), st.integers(0, 10_000))
def test_random_never_repeats_and_is_seeded(L, seed):
    ids = list(range(1, L + 1))
    a, b = UniformRandom(ids, seed), UniformRandom(ids, seed)
    prev = None
    for r in range(40):
        nxt = a.next(r, prev)
        assert nxt in ids and nxt != prev
        assert b.next(r, prev) == nxt
        prev = nxt


def test_single_trainer_random_keeps_it():
    s = UniformRandom([4], seed=0)
    assert s.next(1, 4) == 4


def test_bad_configs():
    with pytest.raises(ConfigError):
        RoundRobin([1, 1, 2])
    with pytest.raises(ConfigError):
        make_scheduler("greedy", [1, 2])
