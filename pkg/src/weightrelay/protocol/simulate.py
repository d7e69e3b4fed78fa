"""Single-threaded, in-process relay runs over a loopback transport.

Every frame still goes through the wire codec, and SNT runs still encrypt,
so the simulator exercises the same state machines as a networked run.
Results depend only on the config, never on timing.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..data import Dataset
from ..envelope import keygen
from ..errors import ConfigError, ProtocolError
from ..nn import NetworkSpec, init_params
from ..optim import LrSchedule, Optimizer
from .fnt import FntPeer, first_holder
from .messages import decode, encode
from .scheduler import make_scheduler
from .server import RelayServerCore
from .trainer import LocalTrainer, SntClient


@dataclass
class SimConfig:
    spec: NetworkSpec
    shards: list
    topology: str = "snt"
    schedule: str = "round-robin"
    order: list | None = None
    central_epochs: int = 1
    local_epochs: int = 1
    batch_size: int = 32
    lr: LrSchedule | float = 0.01
    optimizer: str = "sgd"
    adam_reset: bool = False
    seed: int = 0
    init_seed: int | None = None
    init_scheme: str = "glorot_uniform"
    dropout: bool = True
    max_batches_per_round: int | None = None
    test: Dataset | None = None
    record_ledger: bool = False
    monitor: bool = True
    key: bytes | None = None

    def __post_init__(self):
        if not isinstance(self.lr, LrSchedule):
            self.lr = LrSchedule.constant(float(self.lr))
        self.shards = list(self.shards)

    @property
    def n_trainers(self):
        return len(self.shards)

    @property
    def trainer_ids(self):
        return list(range(1, self.n_trainers + 1))

    def validate(self):
        if self.n_trainers < 1:
            raise ConfigError("need at least one shard")
        if self.topology not in ("snt", "fnt"):
            raise ConfigError(f"topology must be 'snt' or 'fnt', not {self.topology!r}")
        if self.schedule not in ("round-robin", "random"):
            raise ConfigError(f"schedule must be 'round-robin' or 'random', not {self.schedule!r}")
        if self.central_epochs < 0 or self.local_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.order is not None and sorted(self.order) != self.trainer_ids:
            raise ConfigError(f"order must be a permutation of {self.trainer_ids}")
        for i, s in enumerate(self.shards, start=1):
            if len(s) == 0:
                raise ConfigError(f"shard {i} is empty")

    def initial_weights(self):
        seed = self.seed if self.init_seed is None else self.init_seed
        return init_params(self.spec, seed, self.init_scheme)

    def make_trainer(self, tid):
        return LocalTrainer(
            tid,
            self.spec,
            self.shards[tid - 1],
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.seed,
            local_epochs=self.local_epochs,
            optimizer=Optimizer(self.optimizer, reset_each_round=self.adam_reset),
            dropout=self.dropout,
            max_batches_per_round=self.max_batches_per_round,
            test=self.test,
            record_ledger=self.record_ledger,
            monitor=self.monitor,
        )


@dataclass
class SimResult:
    final: np.ndarray
    initial: np.ndarray
    schedule: list  # trainer id per round
    histories: dict  # trainer id -> accuracy records
    ledgers: dict  # trainer id -> per-round RunLedgers
    server_events: list = field(default_factory=list)
    server_frames: list = field(default_factory=list)  # every frame the server sent or received
    channels: int = 0
    frames: int = 0


def simulate(config: SimConfig) -> SimResult:
    config.validate()
    if config.topology == "snt":
        return _simulate_snt(config)
    return _simulate_fnt(config)


class _LoopConn:
    def __init__(self, tid):
        self.tid = tid
        self.closed = False

    def __repr__(self):
        return f"<loopback trainer {self.tid}>"


def _simulate_snt(cfg: SimConfig) -> SimResult:
    ids = cfg.trainer_ids
    key = cfg.key or keygen()
    initial = cfg.initial_weights()
    scheduler = make_scheduler(cfg.schedule, ids, cfg.seed, cfg.order)
    seeder = cfg.order[0] if cfg.order else ids[0]
    core = RelayServerCore(cfg.n_trainers, scheduler, cfg.central_epochs, seeder=seeder, clock=lambda: 0.0)
    trainers = {t: cfg.make_trainer(t) for t in ids}
    clients = {t: SntClient(trainers[t], key, initial if t == seeder else None) for t in ids}
    conns = {t: _LoopConn(t) for t in ids}
    frames = []
    wire: deque = deque()  # (to_server, tid, frame)

    for t in ids:
        core.connected(conns[t])
        for m in clients[t].start():
            wire.append((True, t, encode(m)))

    while wire:
        to_server, t, frame = wire.popleft()
        frames.append(frame)
        msg = decode(frame)
        if to_server:
            for act in core.receive(conns[t], msg):
                if act[0] == "send":
                    wire.append((False, act[1].tid, encode(act[2])))
                else:
                    act[1].closed = True
        else:
            if conns[t].closed:
                continue
            for reply in clients[t].receive(msg):
                wire.append((True, t, encode(reply)))

    if core.failed:
        raise ProtocolError(core.failed)
    if not core.done:
        raise ProtocolError(f"simulation stalled at round {core.round}")
    finals = [c.final for c in clients.values()]
    if any(f is None for f in finals):
        raise ProtocolError("a trainer never received the final weights")
    return SimResult(
        final=finals[0],
        initial=initial,
        schedule=list(core.schedule),
        histories={t: tr.history for t, tr in trainers.items()},
        ledgers={t: tr.ledgers for t, tr in trainers.items()},
        server_events=list(core.events),
        server_frames=frames,
        channels=len(ids),
        frames=len(frames),
    )


def _simulate_fnt(cfg: SimConfig) -> SimResult:
    ids = cfg.trainer_ids
    initial = cfg.initial_weights()
    total = cfg.central_epochs * cfg.n_trainers
    trainers = {t: cfg.make_trainer(t) for t in ids}
    peers = {t: FntPeer(trainers[t], ids, total, cfg.schedule, cfg.order, cfg.seed) for t in ids}
    mesh = {(a, b) for a in ids for b in ids if a < b}
    wire: deque = deque()
    n_frames = 0

    def push(src, out):
        for dest, msg in out:
            if (min(src, dest), max(src, dest)) not in mesh:
                raise ProtocolError(f"no channel between peers {src} and {dest}")
            wire.append((src, dest, encode(msg)))

    if total == 0:
        final = initial.copy()
    else:
        holder = first_holder(ids, cfg.order)
        push(holder, peers[holder].start(initial))
        while wire:
            src, dest, frame = wire.popleft()
            n_frames += 1
            push(dest, peers[dest].receive(src, decode(frame)))
        finals = [p.final for p in peers.values()]
        if any(f is None for f in finals) or not all(p.finished for p in peers.values()):
            raise ProtocolError("mesh run ended before every peer had the final weights")
        final = finals[0]

    schedule = [0] * total
    for t, p in peers.items():
        for r in p.rounds_done:
            schedule[r] = t
    return SimResult(
        final=final,
        initial=initial,
        schedule=schedule,
        histories={t: tr.history for t, tr in trainers.items()},
        ledgers={t: tr.ledgers for t, tr in trainers.items()},
        channels=len(mesh),
        frames=n_frames,
    )
