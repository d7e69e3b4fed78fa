"""Per-step record of a training run and its binary file format.

File layout (little-endian, same conventions as weight blobs)::

    b"WRLG" | version:u8 = 1 | sha256(spec encoding):32 | count:u64 | n_ledgers:u64
    per ledger:
        trainer:u32 | round:u32 | n_steps:u64 | w_init f64 x count | w_final f64 x count
        per step: central_epoch:u32 | lr:f64 | grad f64 x count
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envelope import spec_digest
from .errors import BlobError
from .nn import NetworkSpec, param_count

LEDGER_MAGIC = b"WRLG"
LEDGER_VERSION = 1
_FILE_HEADER = struct.Struct("<4sB32sQQ")
_LEDGER_HEADER = struct.Struct("<IIQ")
_STEP_HEADER = struct.Struct("<Id")


@dataclass
class LedgerStep:
    lr: float
    grad: np.ndarray
    central_epoch: int


@dataclass
class RunLedger:
    """``W_init``, the ordered ``(lr, G)`` steps and ``W_final`` of one stretch of training.

    A trainer keeps one ledger per relay round; ``trainer`` and ``round``
    identify it.  ``w_final`` stays ``None`` until :meth:`close`.
    """

    w_init: np.ndarray
    trainer: int = 0
    round: int = 0
    steps: list = field(default_factory=list)
    w_final: np.ndarray | None = None

    def __post_init__(self):
        self.w_init = np.array(self.w_init, dtype=np.float64)

    def record(self, lr, grad, central_epoch):
        self.steps.append(LedgerStep(float(lr), np.array(grad, dtype=np.float64), int(central_epoch)))

    def close(self, w_final):
        self.w_final = np.array(w_final, dtype=np.float64)

    def __len__(self):
        return len(self.steps)

    @property
    def central_epochs(self):
        return sorted({s.central_epoch for s in self.steps})

    def replay(self) -> np.ndarray:
        """Re-run the recorded SGD updates from ``w_init``."""
        w = self.w_init.copy()
        for s in self.steps:
            w = w - s.lr * s.grad
        return w


def merge(ledgers) -> RunLedger:
    """Chain consecutive ledgers into one; ``w_init`` of the first, ``w_final`` of the last."""
    ledgers = list(ledgers)
    if not ledgers:
        raise ValueError("nothing to merge")
    out = RunLedger(ledgers[0].w_init, ledgers[0].trainer, ledgers[0].round)
    for lg in ledgers:
        out.steps.extend(lg.steps)
    out.w_final = ledgers[-1].w_final
    return out


def _f64(a):
    return np.asarray(a, dtype="<f8").tobytes()


def dump_ledgers(path, spec: NetworkSpec, ledgers):
    n = param_count(spec)
    with open(path, "wb") as fh:
        fh.write(_FILE_HEADER.pack(LEDGER_MAGIC, LEDGER_VERSION, spec_digest(spec), n, len(ledgers)))
        for lg in ledgers:
            if lg.w_final is None:
                raise ValueError(f"ledger for trainer {lg.trainer} round {lg.round} was never closed")
            fh.write(_LEDGER_HEADER.pack(lg.trainer, lg.round, len(lg.steps)))
            fh.write(_f64(lg.w_init))
            fh.write(_f64(lg.w_final))
            for s in lg.steps:
                fh.write(_STEP_HEADER.pack(s.central_epoch, s.lr))
                fh.write(_f64(s.grad))


def load_ledgers(path, spec: NetworkSpec) -> list:
    data = Path(path).read_bytes()
    if len(data) < _FILE_HEADER.size:
        raise BlobError(f"{path}: truncated ledger file")
    magic, version, digest, n, count = _FILE_HEADER.unpack_from(data)
    if magic != LEDGER_MAGIC:
        raise BlobError(f"{path}: not a ledger file")
    if version != LEDGER_VERSION:
        raise BlobError(f"{path}: unknown ledger version {version}")
    if digest != spec_digest(spec) or n != param_count(spec):
        raise BlobError(f"{path}: ledger was recorded for a different network")
    view = memoryview(data)
    pos = _FILE_HEADER.size
    width = 8 * n

    def vec():
        nonlocal pos
        if pos + width > len(data):
            raise BlobError(f"{path}: truncated ledger file")
        out = np.frombuffer(view[pos : pos + width], dtype="<f8").astype(np.float64)
        pos += width
        return out

    def unpack(st):
        nonlocal pos
        if pos + st.size > len(data):
            raise BlobError(f"{path}: truncated ledger file")
        out = st.unpack_from(data, pos)
        pos += st.size
        return out

    ledgers = []
    for _ in range(count):
        trainer, rnd, n_steps = unpack(_LEDGER_HEADER)
        lg = RunLedger(vec(), trainer, rnd)
        lg.w_final = vec()
        for _ in range(n_steps):
            epoch, lr = unpack(_STEP_HEADER)
            lg.steps.append(LedgerStep(lr, vec(), epoch))
        ledgers.append(lg)
    if pos != len(data):
        raise BlobError(f"{path}: {len(data) - pos} trailing bytes")
    return ledgers
