"""Serverless relay: trainers pass plain weight blobs to each other over a
full mesh of secure channels."""

from __future__ import annotations

import logging
import queue
import threading

from ..data import peer_rng
from ..envelope import deserialize, serialize
from ..errors import ConfigError, ProtocolError
from .messages import Message, MsgType
from .transport import Connection, listen
from .trainer import LocalTrainer

log = logging.getLogger(__name__)


class FntPeer:
    """One trainer in the mesh.

    ``policy`` is ``"round-robin"`` (pass to the successor in ``order``) or
    ``"random"`` (pass to a uniformly chosen other peer).  The peer that
    finishes the last round broadcasts the final weights followed by BYE.
    Outputs are ``(destination_id, Message)`` pairs.
    """

    def __init__(self, trainer: LocalTrainer, peer_ids, total_rounds, policy="round-robin", order=None, seed=0):
        self.trainer = trainer
        self.id = trainer.trainer_id
        self.peer_ids = sorted(int(p) for p in peer_ids)
        if self.id not in self.peer_ids:
            raise ConfigError(f"peer {self.id} missing from the peer list")
        self.L = len(self.peer_ids)
        self.total_rounds = total_rounds
        if policy not in ("round-robin", "random"):
            raise ConfigError(f"unknown order policy {policy!r}")
        self.policy = policy
        self.order = list(order) if order is not None else list(self.peer_ids)
        if sorted(self.order) != self.peer_ids:
            raise ConfigError("order must list every peer exactly once")
        self._rng = peer_rng(seed, self.id)
        self.grant = None
        self.final = None
        self.finished = False
        self.rounds_done = []

    def _next_peer(self, round_index):
        if self.policy == "round-robin":
            return self.order[round_index % self.L]
        others = [p for p in self.peer_ids if p != self.id]
        return others[int(self._rng.integers(len(others)))] if others else self.id

    def start(self, initial):
        """Called on the peer that holds round 0, with the initial weights."""
        return self._work(initial, 0)

    def _work(self, w, round_index):
        while True:
            w = self.trainer.train_round(w, round_index, round_index // self.L)
            self.rounds_done.append(round_index)
            round_index += 1
            if round_index >= self.total_rounds:
                self.final = w
                self.finished = True
                blob = serialize(self.trainer.spec, w)
                out = []
                for p in self.peer_ids:
                    if p != self.id:
                        out += [(p, Message.weights(blob)), (p, Message.simple(MsgType.BYE))]
                return out
            nxt = self._next_peer(round_index)
            if nxt != self.id:  # a single-peer mesh keeps the weights
                blob = serialize(self.trainer.spec, w)
                return [(nxt, Message.grant(round_index, round_index // self.L)), (nxt, Message.weights(blob))]

    def receive(self, sender, msg: Message):
        kind = msg.kind
        if kind == MsgType.TOKEN_GRANT:
            self.grant = (msg.round, msg.central_epoch)
            return []
        if kind == MsgType.WEIGHTS:
            w = deserialize(msg.payload, self.trainer.spec)
            if self.grant is None:
                self.final = w
                return []
            rnd, _ = self.grant
            self.grant = None
            return self._work(w, rnd)
        if kind == MsgType.BYE:
            self.finished = True
            return []
        if kind == MsgType.ERROR:
            raise ProtocolError(f"peer {sender} reported error {msg.code}: {msg.text}")
        if kind in (MsgType.HELLO, MsgType.ACK):
            return []
        raise ProtocolError(f"unexpected {kind.name} from peer {sender}")


def first_holder(peer_ids, order=None):
    """The peer that seeds the weights and trains round 0."""
    return list(order)[0] if order is not None else sorted(peer_ids)[0]


def run_peer(peer: FntPeer, addresses: dict, initial=None, tls=None, retries=50, timeout=600.0):
    """Run one mesh peer over TCP.

    ``addresses`` maps every peer id to ``(host, port)``.  Each peer listens
    on its own address, dials every lower id and accepts every higher id, so
    the mesh has ``L(L-1)/2`` connections.  Returns the final weights.
    """
    me = peer.id
    sock = listen(addresses[me])
    inbox: queue.Queue = queue.Queue()
    channels: dict = {}

    def reader(pid, conn):
        try:
            while True:
                msg = conn.recv()
                if msg is None:
                    break
                inbox.put((pid, msg))
        except (OSError, ProtocolError) as exc:
            inbox.put((pid, exc))
            return
        inbox.put((pid, None))

    try:
        n_accept = sum(1 for p in peer.peer_ids if p > me)
        accepted = []

        def acceptor():
            for _ in range(n_accept):
                raw, _ = sock.accept()
                conn = Connection.server_side(raw, tls)
                hello = conn.recv()
                if hello is None or hello.kind != MsgType.HELLO:
                    raise ProtocolError("peer did not introduce itself")
                accepted.append((hello.trainer_id, conn))

        acc = threading.Thread(target=acceptor, daemon=True)
        acc.start()
        for p in peer.peer_ids:
            if p < me:
                try:
                    conn = Connection.connect(addresses[p], tls, retries=retries)
                except ProtocolError as exc:
                    raise ProtocolError(f"peer {p} unreachable during mesh setup: {exc}") from exc
                conn.send(Message.hello(me))
                channels[p] = conn
        acc.join(timeout)
        if acc.is_alive() or len(accepted) != n_accept:
            raise ProtocolError(f"peer {me}: mesh setup incomplete ({len(accepted)}/{n_accept} inbound channels)")
        channels.update(accepted)
        for pid, conn in channels.items():
            threading.Thread(target=reader, args=(pid, conn), daemon=True).start()

        def dispatch(out):
            for dest, msg in out:
                conn = channels.get(dest)
                if conn is None:
                    raise ProtocolError(f"no channel to peer {dest}")
                try:
                    conn.send(msg)
                except OSError as exc:
                    where = f"round {peer.rounds_done[-1] + 1 if peer.rounds_done else 0}"
                    raise ProtocolError(f"peer {dest} unreachable at {where}: {exc}") from exc

        gone = set()
        if initial is not None:
            dispatch(peer.start(initial))
        while not (peer.finished and peer.final is not None):
            try:
                sender, item = inbox.get(timeout=timeout)
            except queue.Empty:
                raise ProtocolError(f"peer {me}: no message for {timeout}s") from None
            if item is None or isinstance(item, Exception):
                # Finished peers hang up; that only matters once nobody is left.
                gone.add(sender)
                if len(gone) == len(channels) and not peer.finished:
                    pos = peer.rounds_done[-1] + 1 if peer.rounds_done else 0
                    raise ProtocolError(f"peer {me}: every peer hung up before round {pos} completed ({item or 'closed'})")
                continue
            dispatch(peer.receive(sender, item))
        return peer.final
    finally:
        sock.close()
        for conn in channels.values():
            conn.close()
