"""Weight blobs and their AES-128-CBC envelopes.

Blob layout (all integers little-endian)::

    b"WRLY" | version:u8 = 1 | sha256(spec encoding):32 | count:u64 | count x f64

Envelope layout::

    iv:16 | AES-128-CBC(key, iv, PKCS#7(blob))

CBC gives confidentiality only.  Padding and blob-header checks after
decryption catch a wrong key or damage to the first or last blocks; they are
not a MAC.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from cryptography.hazmat.primitives import padding
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import BlobError, IntegrityError
from .nn import NetworkSpec, param_count

MAGIC = b"WRLY"
VERSION = 1
KEY_SIZE = 16
BLOCK = 16
_HEADER = struct.Struct("<4sB32sQ")
HEADER_SIZE = _HEADER.size  # 45


def spec_digest(spec: NetworkSpec) -> bytes:
    return hashlib.sha256(spec.canonical_encoding()).digest()


def keygen(rng=None) -> bytes:
    """Fresh 128-bit key from the OS CSPRNG.

    ``rng`` is for reproducible tests only: anything with ``randbytes``
    (``random.Random``) or ``bytes`` (``numpy`` generator).
    """
    if rng is None:
        key = os.urandom(KEY_SIZE)
    elif hasattr(rng, "randbytes"):
        key = rng.randbytes(KEY_SIZE)
    else:
        key = rng.bytes(KEY_SIZE)
    if len(key) != KEY_SIZE:
        raise RuntimeError("random source returned a short key")
    return key


def _check_key(key):
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_SIZE:
        raise ValueError(f"key must be {KEY_SIZE} bytes")


def read_key(path) -> bytes:
    data = Path(path).read_bytes().strip()
    if len(data) == 2 * KEY_SIZE:
        try:
            data = bytes.fromhex(data.decode("ascii"))
        except ValueError:
            pass
    _check_key(data)
    return data


def write_key(path, key: bytes):
    _check_key(key)
    path = Path(path)
    path.write_text(key.hex() + "\n")
    path.chmod(0o600)


def serialize(spec: NetworkSpec, params) -> bytes:
    params = np.asarray(params, dtype=np.float64)
    n = param_count(spec)
    if params.shape != (n,):
        raise BlobError(f"network expects {n} parameters, got {params.shape}")
    return _HEADER.pack(MAGIC, VERSION, spec_digest(spec), n) + params.astype("<f8").tobytes()


def deserialize(blob: bytes, spec: NetworkSpec) -> np.ndarray:
    if len(blob) < HEADER_SIZE:
        raise BlobError(f"truncated blob: {len(blob)} bytes is shorter than the header")
    magic, version, digest, n = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BlobError("not a weight blob (bad magic)")
    if version != VERSION:
        raise BlobError(f"unknown blob version {version}")
    if digest != spec_digest(spec):
        raise BlobError("blob was produced for a different network (spec digest mismatch)")
    if n != param_count(spec):
        raise BlobError(f"blob holds {n} parameters, network expects {param_count(spec)}")
    body = blob[HEADER_SIZE:]
    if len(body) != 8 * n:
        raise BlobError(f"blob body is {len(body)} bytes, expected {8 * n}")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(params)):
        raise BlobError("blob contains non-finite weights")
    return params


@dataclass(frozen=True)
class CipherEnvelope:
    iv: bytes
    ciphertext: bytes

    def __post_init__(self):
        if len(self.iv) != BLOCK:
            raise IntegrityError("envelope IV must be 16 bytes")
        if not self.ciphertext or len(self.ciphertext) % BLOCK:
            raise IntegrityError("ciphertext length must be a positive multiple of 16")

    def to_bytes(self) -> bytes:
        return self.iv + self.ciphertext

    @classmethod
    def from_bytes(cls, data: bytes):
        return cls(bytes(data[:BLOCK]), bytes(data[BLOCK:]))


def encrypt(key: bytes, blob: bytes, iv: bytes | None = None) -> CipherEnvelope:
    _check_key(key)
    iv = os.urandom(BLOCK) if iv is None else iv
    padder = padding.PKCS7(128).padder()
    padded = padder.update(blob) + padder.finalize()
    enc = Cipher(algorithms.AES(key), modes.CBC(iv)).encryptor()
    return CipherEnvelope(iv, enc.update(padded) + enc.finalize())


def decrypt(key: bytes, envelope) -> bytes:
    """Recover the plaintext; raises :class:`IntegrityError` on bad padding."""
    _check_key(key)
    if isinstance(envelope, (bytes, bytearray)):
        envelope = CipherEnvelope.from_bytes(envelope)
    dec = Cipher(algorithms.AES(key), modes.CBC(envelope.iv)).decryptor()
    padded = dec.update(envelope.ciphertext) + dec.finalize()
    unpadder = padding.PKCS7(128).unpadder()
    try:
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError:
        raise IntegrityError("bad padding: wrong key or corrupted ciphertext") from None


def seal(key: bytes, spec: NetworkSpec, params) -> bytes:
    """serialize + encrypt, as wire bytes."""
    return encrypt(key, serialize(spec, params)).to_bytes()


def unseal(key: bytes, spec: NetworkSpec, data: bytes) -> np.ndarray:
    return deserialize(decrypt(key, data), spec)
