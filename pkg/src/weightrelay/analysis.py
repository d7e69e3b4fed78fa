"""Checks on relay runs: centralized oracle, telescoping sums, collusion
accounting, running-time model and connection counts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, batches, dropout_seed, shuffle_rng
from .errors import ConfigError
from .ledger import RunLedger
from .nn import DropoutStream, NetworkSpec, loss_and_grad
from .optim import LrSchedule, lr_at


def centralized_oracle(
    spec: NetworkSpec,
    shards: Sequence[Dataset],
    schedule: Sequence[int],
    w_init,
    *,
    batch_size: int,
    lr: LrSchedule,
    seed: int,
    dropout: bool = False,
) -> np.ndarray:
    """Plain SGD over the combined dataset, one loop per central epoch.

    ``schedule`` lists the trainer id (1-based index into ``shards``) that
    held the weights in each relay round; round ``r`` belongs to central
    epoch ``r // len(shards)``.  For every central epoch the mini-batches of
    its rounds are concatenated in round order into one combined batch list,
    which is then walked by a single SGD loop.  Shuffles and dropout masks are
    drawn from the same keyed streams the trainers use.
    """
    L = len(shards)
    if L == 0:
        raise ConfigError("oracle needs at least one shard")
    for tid in schedule:
        if not 1 <= tid <= L:
            raise ConfigError(f"schedule names trainer {tid}, but only {L} shards were given")
    w = np.array(w_init, dtype=np.float64)
    n_epochs = math.ceil(len(schedule) / L)
    for epoch in range(n_epochs):
        combined = []
        for r in range(epoch * L, min((epoch + 1) * L, len(schedule))):
            tid = schedule[r]
            rng = shuffle_rng(seed, tid, r, 0)
            for k, batch in enumerate(batches(shards[tid - 1], batch_size, rng)):
                combined.append((batch, tid, r, k))
        alpha = lr_at(lr, epoch)
        for (X, y), tid, r, k in combined:
            stream = DropoutStream(dropout_seed(seed, tid, r, 0, k)) if dropout else None
            _, G = loss_and_grad(spec, w, X, y, stream)
            w = w - alpha * G
    return w


def check_equivalence(relay_final, oracle_final) -> float:
    """Largest absolute coordinate difference; 0.0 means bit-identical weights."""
    a = np.asarray(relay_final, dtype=np.float64)
    b = np.asarray(oracle_final, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"weight vectors differ in length: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def telescoping_check(ledger: RunLedger) -> float:
    """``max |(W_init - W_final) - sum(lr * G)|`` with the sum accumulated in step order."""
    if ledger.w_final is None:
        raise ValueError("ledger has no final weights")
    total = np.zeros_like(ledger.w_init)
    for s in ledger.steps:
        total = total + s.lr * s.grad
    diff = (ledger.w_init - ledger.w_final) - total
    return float(np.max(np.abs(diff))) if diff.size else 0.0


@dataclass(frozen=True)
class CollusionReport:
    unknowns: int  # data items in the honest trainer's shard
    equations: int  # central epochs observed
    n_features: int | None
    steps_per_round: int
    residuals: tuple  # one per observed round, in round order

    @property
    def variables(self):
        """Scalar unknowns once each data item is expanded to its ``d`` features."""
        return None if self.n_features is None else self.n_features * self.unknowns

    @property
    def verdict(self):
        return "underdetermined" if self.unknowns > self.equations else "determined"


def collusion_report(shard_size, batch_size, central_epochs, ledgers=None, n_features=None) -> CollusionReport:
    """What colluders observing an honest trainer's in/out weights can write down.

    Each central epoch yields one equation ``W_in - W_out = sum(lr * G)``
    whose gradients depend on the trainer's private rows.  With ledgers the
    identity is evaluated per round and its residual reported.
    """
    if shard_size < 1 or batch_size < 1 or central_epochs < 0:
        raise ConfigError("shard size and batch size must be positive, central epochs non-negative")
    residuals = ()
    if ledgers is not None:
        ledgers = sorted(ledgers, key=lambda lg: lg.round)
        seen = set()
        for lg in ledgers:
            if lg.steps:
                seen.update(lg.central_epochs)
        missing = sorted(set(range(central_epochs)) - seen)
        if missing:
            raise ConfigError(f"no ledger tagged with central epoch(s) {missing}")
        residuals = tuple(telescoping_check(lg) for lg in ledgers)
    return CollusionReport(
        unknowns=int(shard_size),
        equations=int(central_epochs),
        n_features=n_features,
        steps_per_round=math.ceil(shard_size / batch_size),
        residuals=residuals,
    )


# (dataset, network, unknowns per honest trainer, central epochs)
REFERENCE_PROFILES = (
    ("Pima", "MLP", 30, 20),
    ("Breast Cancer", "MLP", 19, 5),
    ("Banknote", "MLP", 39, 1),
    ("Adult", "MLP", 1628, 120),
    ("Skin", "MLP", 9802, 20),
    ("Credit", "MLP", 12816, 30),
    ("MNIST", "MLP", 10000, 639),
    ("MNIST", "CNN", 10000, 193),
    ("CIFAR-10", "CNN", 10000, 50),
    ("CIFAR-10", "ResNet", 10000, 100),
    ("CIFAR-100", "ResNet", 10000, 100),
)


_TERMS = ("sgd", "upload", "download", "encrypt", "decrypt")


@dataclass(frozen=True)
class TimingProfile:
    """Per-trainer seconds for one relay round, plus the number of central epochs."""

    sgd: tuple
    upload: tuple
    download: tuple
    encrypt: tuple
    decrypt: tuple
    n_epoch: int

    def __post_init__(self):
        lengths = set()
        for name in _TERMS:
            values = tuple(float(v) for v in getattr(self, name))
            if any(v < 0 or not math.isfinite(v) for v in values):
                raise ConfigError(f"timing term {name!r} must be finite and non-negative")
            object.__setattr__(self, name, values)
            lengths.add(len(values))
        if len(lengths) != 1:
            raise ConfigError("every timing term needs one entry per trainer")
        if self.n_epoch < 0:
            raise ConfigError("n_epoch must be non-negative")

    @property
    def n_trainers(self):
        return len(self.sgd)

    @classmethod
    def uniform(cls, n_trainers, sgd, upload, download, encrypt, decrypt, n_epoch):
        rep = lambda v: (v,) * n_trainers  # noqa: E731
        return cls(rep(sgd), rep(upload), rep(download), rep(encrypt), rep(decrypt), n_epoch)

    def breakdown(self) -> dict:
        """Total seconds contributed by each term over the whole run."""
        return {name: self.n_epoch * math.fsum(getattr(self, name)) for name in _TERMS}


def estimate_time(profile: TimingProfile) -> float:
    """``n_epoch * sum_i (sgd_i + upload_i + download_i + encrypt_i + decrypt_i)`` in seconds."""
    per_epoch = math.fsum(math.fsum(getattr(profile, name)[i] for name in _TERMS) for i in range(profile.n_trainers))
    return profile.n_epoch * per_epoch


MNIST_MLP_PROFILE = TimingProfile.uniform(5, sgd=18.0, upload=0.05, download=0.05, encrypt=0.12, decrypt=0.06, n_epoch=639)
MNIST_CNN_PROFILE = TimingProfile.uniform(5, sgd=3.3, upload=0.051, download=0.051, encrypt=0.13, decrypt=0.06, n_epoch=193)


def connection_count(topology: str, n_trainers: int) -> int:
    """Secure channels needed: one per trainer with a server, a full mesh without."""
    if n_trainers < 1:
        raise ConfigError("need at least one trainer")
    topology = topology.lower()
    if topology == "snt":
        return n_trainers
    if topology == "fnt":
        return n_trainers * (n_trainers - 1) // 2
    raise ConfigError(f"unknown topology {topology!r}")
