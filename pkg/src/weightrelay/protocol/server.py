"""Relay server: stores the current encrypted weights and serializes rounds
with an explicit token.

The server handles ciphertext as opaque bytes.  This module deliberately has
no access to keys or to the decryption routine; its log keeps only SHA-256
digests of what it stored.
"""

from __future__ import annotations

import hashlib
import json
import logging
import queue
import socket
import threading
import time
from dataclasses import asdict, dataclass

from ..errors import ProtocolError
from .messages import ErrorCode, Message, MsgType
from .transport import Connection, listen

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    trainer: int | None = None
    round: int | None = None
    central_epoch: int | None = None
    sha256: str | None = None

    def to_json(self):
        return json.dumps({k: v for k, v in asdict(self).items() if v is not None}, sort_keys=True)


def _digest(data):
    return hashlib.sha256(data).hexdigest()


class RelayServerCore:
    """Transport-free server state machine.

    Callers report ``connected`` / ``receive`` / ``disconnected`` / ``tick``
    and perform the returned actions, each ``("send", conn, Message)`` or
    ``("close", conn)``.
    """

    def __init__(self, n_trainers, scheduler, central_epochs, seeder=1, token_timeout=60.0, clock=time.monotonic):
        self.n_trainers = n_trainers
        self.scheduler = scheduler
        self.total_rounds = central_epochs * n_trainers
        self.seeder = seeder
        self.token_timeout = token_timeout
        self.clock = clock
        self.enc_w: bytes | None = None
        self.pending: bytes | None = None
        self.round = 0
        self.holder: int | None = None
        self.previous: int | None = None
        self.retry: int | None = None
        self.granted_at = 0.0
        self.waiting_since: float | None = None
        self.roster: dict = {}  # trainer id -> conn
        self.conns: dict = {}  # conn -> trainer id or None before HELLO
        self.events: list = []
        self.grants: list = []  # trainer id per completed grant, retries included
        self.schedule: list = []  # trainer id per committed round
        self.done = False
        self.failed: str | None = None

    def _log(self, kind, **kw):
        ev = Event(len(self.events), kind, **kw)
        self.events.append(ev)
        log.debug("server event %s", ev.to_json())
        return ev

    def connected(self, conn):
        self.conns[conn] = None
        return []

    def receive(self, conn, msg: Message):
        if conn not in self.conns:
            return []
        tid = self.conns[conn]
        kind = msg.kind
        if kind == MsgType.HELLO:
            return self._hello(conn, tid, msg.trainer_id)
        if tid is None:
            return [("send", conn, Message.error(ErrorCode.NOT_REGISTERED, "send HELLO first")), ("close", conn)]
        if kind == MsgType.PUT_WEIGHTS:
            return self._put(conn, tid, msg.payload)
        if kind == MsgType.GET_WEIGHTS:
            if self.enc_w is None:
                return [("send", conn, Message.error(ErrorCode.NO_WEIGHTS, "no weights stored yet"))]
            self._log("GET", trainer=tid, round=self.round if self.holder == tid else None, sha256=_digest(self.enc_w))
            return [("send", conn, Message.weights(self.enc_w))]
        if kind == MsgType.TOKEN_RELEASE:
            return self._release(conn, tid)
        if kind == MsgType.ACK:
            return []
        return [("send", conn, Message.error(ErrorCode.BAD_MESSAGE, f"unexpected {kind.name}"))]

    def _hello(self, conn, current, tid):
        if current is not None:
            return [("send", conn, Message.error(ErrorCode.BAD_MESSAGE, "already registered"))]
        if not 1 <= tid <= self.n_trainers:
            self._log("REJECT", trainer=tid)
            return [("send", conn, Message.error(ErrorCode.BAD_MESSAGE, f"trainer id must be in 1..{self.n_trainers}")), ("close", conn)]
        if tid in self.roster:
            self._log("REJECT", trainer=tid)
            return [("send", conn, Message.error(ErrorCode.DUPLICATE_ID, f"trainer {tid} is already connected")), ("close", conn)]
        self.conns[conn] = tid
        self.roster[tid] = conn
        self._log("HELLO", trainer=tid)
        actions = [("send", conn, Message.simple(MsgType.ACK))]
        if self.done:
            actions.append(("send", conn, Message.simple(MsgType.BYE)))
        return actions + self._maybe_grant()

    def _put(self, conn, tid, data):
        if self.enc_w is None and self.holder is None and self.round == 0:
            if tid != self.seeder:
                return [("send", conn, Message.error(ErrorCode.NOT_HOLDER, f"only trainer {self.seeder} seeds the weights"))]
            self.enc_w = data
            self._log("SEED", trainer=tid, sha256=_digest(data))
            return [("send", conn, Message.simple(MsgType.ACK))] + self._maybe_grant()
        if self.holder != tid:
            return [("send", conn, Message.error(ErrorCode.NOT_HOLDER, "PUT without holding the token"))]
        self.pending = data
        self._log("PUT", trainer=tid, round=self.round, sha256=_digest(data))
        return [("send", conn, Message.simple(MsgType.ACK))]

    def _release(self, conn, tid):
        if self.holder != tid:
            return [("send", conn, Message.error(ErrorCode.NOT_HOLDER, "RELEASE without holding the token"))]
        if self.pending is not None:
            self.enc_w = self.pending
        self.pending = None
        self._log("RELEASE", trainer=tid, round=self.round, central_epoch=self.round // self.n_trainers, sha256=_digest(self.enc_w))
        self.schedule.append(tid)
        self.previous = tid
        self.holder = None
        self.round += 1
        return [("send", conn, Message.simple(MsgType.ACK))] + self._maybe_grant()

    def _maybe_grant(self):
        if self.done or self.failed or self.holder is not None or self.enc_w is None:
            return []
        if self.round >= self.total_rounds:
            self.done = True
            self._log("DONE", round=self.round, sha256=_digest(self.enc_w))
            return [("send", c, Message.simple(MsgType.BYE)) for c in self.roster.values()]
        if self.round == 0 and len(self.roster) < self.n_trainers and self.retry is None:
            return []
        if self.retry is not None:
            nxt = self.retry
        else:
            nxt = self.scheduler.next(self.round, self.previous)
            self.retry = nxt  # pinned until the round commits
        conn = self.roster.get(nxt)
        if conn is None:
            if self.waiting_since is None:
                self.waiting_since = self.clock()
            return []
        self.waiting_since = None
        self.holder = nxt
        self.retry = None
        self.pending = None
        self.granted_at = self.clock()
        epoch = self.round // self.n_trainers
        self.grants.append(nxt)
        self._log("GRANT", trainer=nxt, round=self.round, central_epoch=epoch)
        return [("send", conn, Message.grant(self.round, epoch))]

    def _revoke(self, reason):
        tid = self.holder
        self._log("REVOKE", trainer=tid, round=self.round)
        log.warning("token for round %d revoked from trainer %s: %s", self.round, tid, reason)
        self.pending = None  # roll back to the last committed weights
        self.holder = None
        self.retry = tid
        self.waiting_since = self.clock()

    def disconnected(self, conn):
        tid = self.conns.pop(conn, None)
        if tid is None:
            return []
        if self.roster.get(tid) == conn:
            del self.roster[tid]
        self._log("DISCONNECT", trainer=tid)
        if self.holder == tid:
            self._revoke("disconnected")
        return self._maybe_grant()

    def tick(self):
        """Enforce the token timeout; call periodically."""
        now = self.clock()
        if self.done or self.failed:
            return []
        if self.holder is not None and now - self.granted_at > self.token_timeout:
            conn = self.roster.get(self.holder)
            self._revoke("timeout")
            actions = []
            if conn is not None:
                actions = [("send", conn, Message.error(ErrorCode.TIMEOUT, "token timed out")), ("close", conn)]
            return actions + self._maybe_grant()
        if self.waiting_since is not None and now - self.waiting_since > self.token_timeout:
            self.failed = f"trainer {self.retry} did not return within {self.token_timeout}s (round {self.round})"
            self._log("ABORT", trainer=self.retry, round=self.round)
            return [("send", c, Message.error(ErrorCode.ABORTED, self.failed)) for c in self.roster.values()]
        return []


def serve(address, core: RelayServerCore, tls=None, log_path=None, ready=None, poll=0.2, linger=5.0):
    """Run ``core`` over TCP until the run completes and clients leave.

    ``address`` is ``(host, port)``; ``ready`` (a ``threading.Event``) is set
    once listening, with the bound port stored on it as ``ready.port``.
    Returns the final ciphertext.
    """
    sock = listen(address)
    if ready is not None:
        ready.port = sock.getsockname()[1]
        ready.set()
    inbox: queue.Queue = queue.Queue()
    conns: dict = {}
    stop = threading.Event()

    def reader(conn):
        try:
            while True:
                msg = conn.recv()
                if msg is None:
                    break
                inbox.put(("msg", conn, msg))
        except (OSError, ProtocolError) as exc:
            log.info("connection %s dropped: %s", conn.peer, exc)
        inbox.put(("gone", conn, None))

    def acceptor():
        sock.settimeout(poll)
        while not stop.is_set():
            try:
                raw, peer = sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                conn = Connection.server_side(raw, tls)
            except (OSError, ProtocolError) as exc:
                log.warning("handshake with %s failed: %s", peer, exc)
                raw.close()
                continue
            inbox.put(("new", conn, None))
            threading.Thread(target=reader, args=(conn,), daemon=True).start()

    threading.Thread(target=acceptor, daemon=True).start()
    written = 0
    log_fh = open(log_path, "w") if log_path else None
    done_at = None
    try:
        while True:
            try:
                what, conn, msg = inbox.get(timeout=poll)
            except queue.Empty:
                what = None
            actions = []
            if what == "new":
                conns[conn] = True
                actions = core.connected(conn)
            elif what == "msg":
                try:
                    actions = core.receive(conn, msg)
                except ProtocolError as exc:
                    actions = [("send", conn, Message.error(ErrorCode.BAD_MESSAGE, str(exc))), ("close", conn)]
            elif what == "gone":
                conns.pop(conn, None)
                actions = core.disconnected(conn)
            actions += core.tick()
            for act in actions:
                if act[0] == "send":
                    try:
                        act[1].send(act[2])
                    except OSError:
                        pass
                else:
                    act[1].close()
            if log_fh:
                for ev in core.events[written:]:
                    log_fh.write(ev.to_json() + "\n")
                log_fh.flush()
                written = len(core.events)
            if core.failed:
                raise ProtocolError(core.failed)
            if core.done:
                done_at = done_at or time.monotonic()
                if not conns or time.monotonic() - done_at > linger:
                    return core.enc_w
    finally:
        stop.set()
        sock.close()
        for c in list(conns):
            c.close()
        if log_fh:
            log_fh.close()
