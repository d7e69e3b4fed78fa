"""Trainer side: local SGD rounds and the relay-server client."""

from __future__ import annotations

import csv
import logging
from typing import NamedTuple

import numpy as np

from ..data import Dataset, batches, dropout_seed, shuffle_rng
from ..envelope import seal, unseal
from ..errors import ConfigError, ProtocolError
from ..ledger import RunLedger
from ..nn import DropoutStream, NetworkSpec, evaluate, loss_and_grad, param_count
from ..optim import LrSchedule, Optimizer, lr_at
from .messages import Message, MsgType
from .transport import Connection

log = logging.getLogger(__name__)


class AccuracyRecord(NamedTuple):
    central_epoch: int
    round: int
    train_acc: float
    test_acc: float | None
    loss: float


ACCURACY_HEADER = ("central_epoch", "train_acc", "test_acc", "loss")


def write_accuracy_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ACCURACY_HEADER)
        for r in records:
            w.writerow([r.central_epoch, repr(r.train_acc), "" if r.test_acc is None else repr(r.test_acc), repr(r.loss)])


class LocalTrainer:
    """Owns one shard and trains on whatever weights it is handed.

    Each call to :meth:`train_round` runs ``local_epochs`` shuffled passes
    over the shard (optionally capped at ``max_batches_per_round`` batches
    per pass) and returns the new weights.
    """

    def __init__(
        self,
        trainer_id: int,
        spec: NetworkSpec,
        shard: Dataset,
        *,
        batch_size: int,
        lr: LrSchedule,
        seed: int,
        local_epochs: int = 1,
        optimizer: Optimizer | None = None,
        dropout: bool = True,
        max_batches_per_round: int | None = None,
        test: Dataset | None = None,
        record_ledger: bool = False,
        monitor: bool = True,
    ):
        if local_epochs < 0:
            raise ConfigError("local epochs must be >= 0")
        if max_batches_per_round is not None and max_batches_per_round < 1:
            raise ConfigError("max_batches_per_round must be >= 1")
        if shard.n_features != int(np.prod(spec.input_shape)):
            raise ConfigError(f"shard has {shard.n_features} features, network expects {spec.input_shape}")
        self.trainer_id = trainer_id
        self.spec = spec
        self.shard = shard
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.local_epochs = local_epochs
        self.optimizer = optimizer or Optimizer("sgd")
        self.dropout = dropout
        self.max_batches = max_batches_per_round
        self.test = test
        self.record_ledger = record_ledger
        self.monitor = monitor
        self.history: list = []
        self.ledgers: list = []

    def train_round(self, weights, round_index: int, central_epoch: int) -> np.ndarray:
        w = np.array(weights, dtype=np.float64)
        if w.shape != (param_count(self.spec),):
            raise ConfigError(f"received {w.shape} weights, network has {param_count(self.spec)}")
        self.optimizer.begin_round()
        alpha = lr_at(self.lr, central_epoch)
        ledger = RunLedger(w, self.trainer_id, round_index) if self.record_ledger else None
        for le in range(self.local_epochs):
            plan = batches(self.shard, self.batch_size, shuffle_rng(self.seed, self.trainer_id, round_index, le))
            if self.max_batches is not None:
                plan = plan[: self.max_batches]
            for k, (X, y) in enumerate(plan):
                stream = DropoutStream(dropout_seed(self.seed, self.trainer_id, round_index, le, k)) if self.dropout else None
                _, G = loss_and_grad(self.spec, w, X, y, stream)
                w = self.optimizer.step(w, G, alpha)
                if ledger is not None:
                    ledger.record(alpha, G, central_epoch)
        if ledger is not None:
            ledger.close(w)
            self.ledgers.append(ledger)
        if self.monitor:
            self._log_accuracy(w, round_index, central_epoch)
        return w

    def _log_accuracy(self, w, round_index, central_epoch):
        tr = evaluate(self.spec, w, self.shard)
        te = evaluate(self.spec, w, self.test).accuracy if self.test is not None else None
        rec = AccuracyRecord(central_epoch, round_index, tr.accuracy, te, tr.loss)
        self.history.append(rec)
        log.info(
            "trainer %d round %d epoch %d: train %.4f test %s loss %.5f",
            self.trainer_id, round_index, central_epoch, tr.accuracy, "-" if te is None else f"{te:.4f}", tr.loss,
        )


class SntClient:
    """Trainer state machine for the server topology.

    Weights are decrypted only between a TOKEN_GRANT and the matching
    TOKEN_RELEASE.  After BYE the client fetches the final ciphertext once.
    """

    def __init__(self, trainer: LocalTrainer, key: bytes, initial=None):
        self.trainer = trainer
        self.key = key
        self.initial = initial  # weights to seed the server with, or None
        self.grant = None
        self.final = None
        self.finished = False
        self._fetching_final = False

    def start(self):
        out = [Message.hello(self.trainer.trainer_id)]
        if self.initial is not None:
            out.append(Message.put(seal(self.key, self.trainer.spec, self.initial)))
        return out

    def receive(self, msg: Message):
        kind = msg.kind
        if kind == MsgType.TOKEN_GRANT:
            self.grant = (msg.round, msg.central_epoch)
            return [Message.simple(MsgType.GET_WEIGHTS)]
        if kind == MsgType.WEIGHTS:
            w = unseal(self.key, self.trainer.spec, msg.payload)
            if self.grant is not None:
                rnd, epoch = self.grant
                self.grant = None
                w = self.trainer.train_round(w, rnd, epoch)
                return [Message.put(seal(self.key, self.trainer.spec, w)), Message.simple(MsgType.TOKEN_RELEASE)]
            if self._fetching_final:
                self.final = w
                self.finished = True
            return []
        if kind == MsgType.BYE:
            self._fetching_final = True
            return [Message.simple(MsgType.GET_WEIGHTS)]
        if kind == MsgType.ACK:
            return []
        if kind == MsgType.ERROR:
            raise ProtocolError(f"server error {msg.code}: {msg.text}")
        raise ProtocolError(f"unexpected {kind.name} from server")


def run_snt_client(address, client: SntClient, tls=None, retries=50):
    """Drive ``client`` over TCP until it has the final weights."""
    conn = Connection.connect(address, tls, retries=retries)
    try:
        for m in client.start():
            conn.send(m)
        while not client.finished:
            msg = conn.recv()
            if msg is None:
                raise ProtocolError("server closed the connection before the run finished")
            for reply in client.receive(msg):
                conn.send(reply)
    finally:
        conn.close()
    return client.final
