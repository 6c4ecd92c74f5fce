"""Revocable protection keys, the key-to-latent map and the key registry.

Keys are 256-bit secrets persisted as 64 lowercase hex characters. A key's
id is the first 64 bits of SHA-256(secret), written as 16 hex characters.

The registry is an append-only event log, one event per line::

    2026-10-15T09:30:00Z 3f9a0c1d2e4b5a67 issue
    2026-10-15T09:30:00Z 81c2d3e4f5a6b7c8 issue parent=3f9a0c1d2e4b5a67
    2026-10-15T10:02:11Z 3f9a0c1d2e4b5a67 revoke

A derived (per-subject) key is active only while its parent is.
"""

import hashlib
import hmac
import os
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from latentmix.errors import FormatError, RevokedKeyError, UnknownKeyError
from latentmix.latent import LatentCode
from latentmix.prng import Stream, derive_seed

SECRET_BYTES = 32


@dataclass(frozen=True)
class ProtectionKey:
    secret: bytes = field(repr=False)

    def __post_init__(self):
        if not isinstance(self.secret, bytes) or len(self.secret) != SECRET_BYTES:
            raise FormatError("a protection key is exactly 32 bytes")

    @property
    def key_id(self):
        return hashlib.sha256(self.secret).digest()[:8].hex()

    @property
    def id_bytes(self):
        return hashlib.sha256(self.secret).digest()[:8]

    def hex(self):
        return self.secret.hex()

    @classmethod
    def from_hex(cls, text):
        text = text.strip()
        if len(text) != 2 * SECRET_BYTES or text != text.lower():
            raise FormatError("key must be 64 lowercase hex characters")
        try:
            return cls(bytes.fromhex(text))
        except ValueError as exc:
            raise FormatError(f"bad key hex: {exc}") from None

    def __repr__(self):
        return f"ProtectionKey(key_id={self.key_id})"


def issue_key(rng_seed=None):
    """Draw a fresh 256-bit key. ``rng_seed`` makes the draw reproducible."""
    if rng_seed is None:
        return ProtectionKey(secrets.token_bytes(SECRET_BYTES))
    return ProtectionKey(Stream(derive_seed("issue-key", rng_seed)).bytes(SECRET_BYTES))


def derive_subject_key(master, subject_id):
    """Per-subject key: HMAC-SHA256(master secret, subject id)."""
    digest = hmac.new(master.secret, str(subject_id).encode("utf-8"), hashlib.sha256).digest()
    return ProtectionKey(digest)


def key_seed(key):
    return derive_seed("key-latent", key.secret)


def key_to_latent(key, mapper, n_layers, dim):
    """Synthetic latent for ``key``: one mapped normal draw, copied to every layer."""
    if mapper.out_dim != dim:
        raise ValueError(f"mapper emits {mapper.out_dim}-vectors, latent dim is {dim}")
    base = Stream(key_seed(key)).normal(mapper.in_dim)
    w = mapper(base)
    return LatentCode(np.broadcast_to(w, (n_layers, dim)))


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


class KeyRegistry:
    """Key status history, optionally mirrored to an append-only log file."""

    def __init__(self, path=None):
        self._lock = threading.Lock()
        self.events = []
        self._status = {}
        self._parent = {}
        self.path = Path(path) if path is not None else None
        if self.path is not None and self.path.exists():
            for lineno, line in enumerate(self.path.read_text("utf-8").splitlines(), 1):
                if line.strip():
                    self._apply(self._parse(line, lineno))

    @staticmethod
    def _parse(line, lineno):
        parts = line.split()
        if len(parts) not in (3, 4) or parts[2] not in ("issue", "revoke"):
            raise FormatError(f"registry line {lineno}: {line!r}")
        parent = None
        if len(parts) == 4:
            if not parts[3].startswith("parent="):
                raise FormatError(f"registry line {lineno}: {line!r}")
            parent = parts[3][len("parent="):]
        return (parts[0], parts[1], parts[2], parent)

    def _apply(self, event):
        _, key_id, action, parent = event
        if action == "issue":
            if key_id in self._status:
                return False
            self._status[key_id] = "active"
            if parent:
                self._parent[key_id] = parent
        else:
            if key_id not in self._status:
                raise UnknownKeyError(f"unknown key id {key_id}")
            if self._status[key_id] == "revoked":
                return False
            self._status[key_id] = "revoked"
        self.events.append(event)
        return True

    def _record(self, key_id, action, parent=None):
        event = (_timestamp(), key_id, action, parent)
        with self._lock:
            if self._apply(event) and self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(self.format_event(event) + "\n")

    @staticmethod
    def format_event(event):
        ts, key_id, action, parent = event
        line = f"{ts} {key_id} {action}"
        return line + (f" parent={parent}" if parent else "")

    def register(self, key, parent=None):
        """Record ``key`` as issued. Re-registering an existing id is a no-op."""
        key_id = key if isinstance(key, str) else key.key_id
        parent_id = parent.key_id if isinstance(parent, ProtectionKey) else parent
        self._record(key_id, "issue", parent_id)
        return key_id

    def revoke(self, key_id):
        self._record(key_id, "revoke")

    def status(self, key_id):
        with self._lock:
            if key_id not in self._status:
                raise UnknownKeyError(f"unknown key id {key_id}")
            return self._status[key_id]

    def is_active(self, key_id):
        with self._lock:
            while key_id is not None:
                if self._status.get(key_id) != "active":
                    return False
                key_id = self._parent.get(key_id)
            return True

    def require_active(self, key_id):
        with self._lock:
            known = key_id in self._status
        if not known:
            raise UnknownKeyError(f"unknown key id {key_id}")
        if not self.is_active(key_id):
            raise RevokedKeyError(f"key {key_id} has been revoked")

    def keys(self):
        with self._lock:
            return [(k, s, self._parent.get(k)) for k, s in self._status.items()]


def issue(registry, rng_seed=None):
    key = issue_key(rng_seed)
    registry.register(key)
    return key


def revoke(registry, key_id):
    registry.revoke(key_id)


def is_active(registry, key_id):
    return registry.is_active(key_id)
