"""Who gets the weights next."""

from __future__ import annotations

from ..data import rng_for
from ..errors import ConfigError

_SCHEDULER_STREAM = 4


class RoundRobin:
    """Fixed cyclic order; round ``r`` goes to ``order[r % L]``."""

    kind = "round-robin"

    def __init__(self, order):
        order = [int(t) for t in order]
        if not order or len(set(order)) != len(order):
            raise ConfigError("round-robin order must list each trainer exactly once")
        self.order = order

    def next(self, round_index, previous):
        return self.order[round_index % len(self.order)]


class UniformRandom:
    """Uniform choice among the trainers other than the one that just finished."""

    kind = "random"

    def __init__(self, trainer_ids, seed):
        self.trainer_ids = sorted(int(t) for t in trainer_ids)
        if not self.trainer_ids:
            raise ConfigError("no trainers to schedule")
        self._rng = rng_for(seed, _SCHEDULER_STREAM)

    def next(self, round_index, previous):
        pool = [t for t in self.trainer_ids if t != previous] or self.trainer_ids
        return pool[int(self._rng.integers(len(pool)))]


def make_scheduler(kind, trainer_ids, seed=0, order=None):
    if kind == "round-robin":
        return RoundRobin(order if order is not None else sorted(trainer_ids))
    if kind == "random":
        return UniformRandom(trainer_ids, seed)
    raise ConfigError(f"unknown schedule {kind!r}")
