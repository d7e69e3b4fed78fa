"""Local weight-update rules and learning-rate schedules."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError


def _check_lengths(params, grads):
    if params.shape != grads.shape:
        raise ValueError(f"params {params.shape} and grads {grads.shape} differ in length")


def sgd_step(params, grads, lr: float) -> np.ndarray:
    """``W - lr * G`` as a new array."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    _check_lengths(params, grads)
    return params - lr * grads


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, eps)


def adam_step(state: AdamState, params, grads, lr: float):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    _check_lengths(params, grads)
    if state.m.shape != params.shape:
        raise ValueError(f"optimizer state has length {state.m.shape[0]}, params {params.shape[0]}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, step=t)


class Optimizer:
    """Trainer-owned optimizer.  State never leaves the trainer."""

    def __init__(self, kind="sgd", beta1=0.9, beta2=0.999, eps=1e-8, reset_each_round=False):
        if kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.reset_each_round = reset_each_round
        self.state = None

    def begin_round(self):
        if self.reset_each_round:
            self.state = None

    def step(self, params, grads, lr):
        if self.kind == "sgd":
            return sgd_step(params, grads, lr)
        if self.state is None:
            self.state = AdamState.zeros(len(params), self.beta1, self.beta2, self.eps)
        params, self.state = adam_step(self.state, params, grads, lr)
        return params


@dataclass(frozen=True)
class LrSchedule:
    """Learning rate as a function of the central epoch.

    ``ranges`` holds inclusive ``(first_epoch, last_epoch, rate)`` triples that
    must tile ``[0, last]`` without gaps or overlaps.
    """

    ranges: tuple

    def __post_init__(self):
        ranges = tuple((int(a), int(b), float(r)) for a, b, r in self.ranges)
        if not ranges:
            raise ConfigError("empty learning-rate schedule")
        expected = 0
        for a, b, r in ranges:
            if r <= 0:
                raise ConfigError(f"learning rate must be positive, got {r}")
            if a != expected or b < a:
                raise ConfigError(f"schedule ranges must be contiguous from epoch 0; bad range [{a}, {b}]")
            expected = b + 1
        object.__setattr__(self, "ranges", ranges)

    @classmethod
    def constant(cls, rate: float):
        return cls(((0, 2**62, rate),))

    @classmethod
    def piecewise(cls, ranges: Sequence):
        return cls(tuple(ranges))

    @classmethod
    def parse(cls, text: str):
        """``"0.05"`` or ``"0-40:1e-3,41-60:1e-4"``."""
        text = text.strip()
        if ":" not in text:
            return cls.constant(float(text))
        ranges = []
        for part in text.split(","):
            span, rate = part.split(":")
            lo, hi = span.split("-")
            ranges.append((int(lo), int(hi), float(rate)))
        return cls(tuple(ranges))


def lr_at(schedule: LrSchedule, central_epoch: int) -> float:
    for a, b, r in schedule.ranges:
        if a <= central_epoch <= b:
            return r
    raise ConfigError(f"central epoch {central_epoch} is outside the learning-rate schedule")
