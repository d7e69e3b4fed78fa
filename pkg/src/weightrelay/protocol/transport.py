"""TCP framing with optional mutually authenticated TLS."""

from __future__ import annotations

import socket
import ssl
import threading
import time
from dataclasses import dataclass

from ..errors import ConfigError, ProtocolError
from .messages import MAX_FRAME, Message, decode_body, encode


@dataclass(frozen=True)
class TlsConfig:
    """Certificate material for one endpoint; both sides must present certificates."""

    ca: str
    cert: str
    key: str
    check_hostname: bool = True

    def server_context(self) -> ssl.SSLContext:
        ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        ctx.minimum_version = ssl.TLSVersion.TLSv1_2
        self._load(ctx)
        ctx.verify_mode = ssl.CERT_REQUIRED
        return ctx

    def client_context(self) -> ssl.SSLContext:
        ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
        ctx.minimum_version = ssl.TLSVersion.TLSv1_2
        self._load(ctx)
        ctx.check_hostname = self.check_hostname
        ctx.verify_mode = ssl.CERT_REQUIRED
        return ctx

    def _load(self, ctx):
        try:
            ctx.load_verify_locations(cafile=self.ca)
            ctx.load_cert_chain(self.cert, self.key)
        except (OSError, ssl.SSLError) as exc:
            raise ConfigError(f"cannot load TLS material: {exc}") from exc


def listen(address, backlog=64) -> socket.socket:
    host, port = address
    try:
        sock = socket.create_server((host, int(port)), backlog=backlog, reuse_port=False)
    except OSError as exc:
        raise ConfigError(f"cannot bind {host}:{port}: {exc}") from exc
    return sock


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            if buf:
                raise ProtocolError("connection closed mid-frame")
            return None
        buf.extend(chunk)
    return bytes(buf)


class Connection:
    """One framed, possibly TLS-wrapped, socket.  ``send`` is thread-safe."""

    def __init__(self, sock, peer=None):
        self.sock = sock
        self.peer = peer
        self._lock = threading.Lock()
        self._closed = False

    @classmethod
    def server_side(cls, raw, tls: TlsConfig | None = None):
        peer = raw.getpeername()
        if tls is not None:
            try:
                raw = tls.server_context().wrap_socket(raw, server_side=True)
            except ssl.SSLError as exc:
                raise ProtocolError(f"TLS handshake failed: {exc}") from exc
        return cls(raw, peer)

    @classmethod
    def connect(cls, address, tls: TlsConfig | None = None, retries=50, delay=0.1, timeout=None):
        host, port = address
        last = None
        for _ in range(max(1, retries)):
            try:
                raw = socket.create_connection((host, int(port)), timeout=timeout)
                break
            except OSError as exc:
                last = exc
                time.sleep(delay)
        else:
            raise ProtocolError(f"cannot reach {host}:{port}: {last}")
        raw.settimeout(None)
        if tls is not None:
            try:
                raw = tls.client_context().wrap_socket(raw, server_hostname=host)
            except ssl.SSLError as exc:
                raw.close()
                raise ProtocolError(f"TLS handshake with {host}:{port} failed: {exc}") from exc
        return cls(raw, (host, port))

    def send(self, msg: Message):
        frame = encode(msg)
        with self._lock:
            self.sock.sendall(frame)

    def recv(self) -> Message | None:
        """Next message, or ``None`` on a clean close."""
        head = _recv_exact(self.sock, 4)
        if head is None:
            return None
        n = int.from_bytes(head, "big")
        if n == 0 or n > MAX_FRAME:
            raise ProtocolError(f"bad frame length {n}")
        body = _recv_exact(self.sock, n)
        if body is None:
            raise ProtocolError("connection closed mid-frame")
        return decode_body(body)

    def close(self):
        if self._closed:
            return
        self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
