import hashlib
import hmac

import numpy as np
import pytest

from latentmix.errors import FormatError, RevokedKeyError, UnknownKeyError
from latentmix.keying import (
    KeyRegistry,
    ProtectionKey,
    derive_subject_key,
    is_active,
    issue,
    issue_key,
    key_to_latent,
    revoke,
)
from latentmix.backends import MappingNetwork
from latentmix.prng import Stream


def test_key_id_is_hash_prefix():
    key = ProtectionKey(bytes(range(32)))
    assert key.key_id == hashlib.sha256(bytes(range(32))).digest()[:8].hex()
    assert key.secret.hex() not in repr(key)


def test_hex_roundtrip_and_errors():
    key = issue_key(7)
    assert ProtectionKey.from_hex(key.hex()) == key
    for bad in ["", "ab" * 31, "AB" * 32, "zz" * 32]:
        with pytest.raises(FormatError):
            ProtectionKey.from_hex(bad)
    with pytest.raises((ValueError, FormatError)):
        ProtectionKey(b"short")


def test_issue_reproducible_with_seed():
    assert issue_key(1) == issue_key(1)
    assert issue_key(1) != issue_key(2)
    assert issue_key() != issue_key()


def test_subject_key_is_hmac_of_master():
    master = issue_key(3)
    expected = hmac.new(master.secret, b"alice", hashlib.sha256).digest()
    assert derive_subject_key(master, "alice").secret == expected
    assert derive_subject_key(master, "alice") != derive_subject_key(master, "bob")


def test_key_to_latent_broadcasts_and_is_deterministic():
    mapper = MappingNetwork(8, Stream(1))
    z1 = key_to_latent(issue_key(5), mapper, 6, 8)
    z2 = key_to_latent(issue_key(5), mapper, 6, 8)
    assert z1 == z2
    assert np.all(z1.layers == z1.layers[0])
    assert z1 != key_to_latent(issue_key(6), mapper, 6, 8)
    with pytest.raises(ValueError):
        key_to_latent(issue_key(5), mapper, 6, 4)


def test_registry_lifecycle(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    path = tmp_path / "keys.log"
    reg = KeyRegistry(path)
    key = issue(reg, rng_seed=1)
    assert is_active(reg, key.key_id)
    reg.register(key)  # re-issue is a no-op
    revoke(reg, key.key_id)
    revoke(reg, key.key_id)  # idempotent
    assert not is_active(reg, key.key_id)
    with pytest.raises(RevokedKeyError):
        reg.require_active(key.key_id)
    with pytest.raises(UnknownKeyError):
        reg.revoke("00" * 8)
    with pytest.raises(UnknownKeyError):
        reg.require_active("00" * 8)
    assert not reg.is_active("00" * 8)
    lines = path.read_text().splitlines()
    assert lines == [f"1970-01-01T00:00:00Z {key.key_id} issue", f"1970-01-01T00:00:00Z {key.key_id} revoke"]
    # reload from the log
    again = KeyRegistry(path)
    assert again.status(key.key_id) == "revoked"


def test_derived_key_follows_parent(tmp_path):
    reg = KeyRegistry(tmp_path / "r.log")
    master = issue(reg, rng_seed=2)
    child = derive_subject_key(master, "s1")
    reg.register(child, parent=master)
    assert reg.is_active(child.key_id)
    reg.revoke(master.key_id)
    assert reg.status(child.key_id) == "active"
    assert not reg.is_active(child.key_id)
    with pytest.raises(RevokedKeyError):
        reg.require_active(child.key_id)
    assert (child.key_id, "active", master.key_id) in KeyRegistry(tmp_path / "r.log").keys()


def test_corrupt_registry_rejected(tmp_path):
    path = tmp_path / "bad.log"
    path.write_text("garbage line here\n")
    with pytest.raises(FormatError):
        KeyRegistry(path)
