import numpy as np
import pytest

from latentmix.errors import FormatError, NumericError, RevokedKeyError, UnknownKeyError
from latentmix.keying import KeyRegistry, issue_key
from latentmix.latent import LatentCode
from latentmix.optimize import OptimizerSettings
from latentmix.pipeline import (
    AugmentationPolicy,
    ProtectedTemplate,
    ProtectionSettings,
    augment,
    naive_protect,
    protect,
    protect_batch,
    verify,
)
from latentmix.prng import Stream

from conftest import random_latents

FAST = ProtectionSettings(optimizer=OptimizerSettings(steps=8), augmentation=AugmentationPolicy(n=2))


@pytest.fixture
def face(backend, rng):
    return backend.generate_flat(random_latents(backend, rng))


def test_augment_zero_jitter_copies(backend, face):
    out = augment(face, AugmentationPolicy(n=3, sigma_coarse=0, sigma_fine=0), Stream(1), backend)
    assert len(out) == 3
    for x in out:
        np.testing.assert_allclose(x, face, atol=1e-12)


def test_augment_leakfree_keeps_identity(leakfree_backend, rng):
    b = leakfree_backend
    x = b.generate_flat(random_latents(b, rng))
    e = b.identity_embed(x)
    for x_i in augment(x, AugmentationPolicy(), Stream(7), b):
        np.testing.assert_allclose(b.identity_embed(x_i), e, atol=1e-8)


def test_augment_golden_seed_7(backend, face):
    out = np.array(augment(face, AugmentationPolicy(), Stream(7), backend))
    assert out.shape == (5, backend.image_dim)
    dists = [np.linalg.norm(out[i] - out[j]) for i in range(5) for j in range(i + 1, 5)]
    assert min(dists) > 0
    again = np.array(augment(face, AugmentationPolicy(), Stream(7), backend))
    assert np.array_equal(out, again)
    # frozen golden values for the default backend fixture and face
    np.testing.assert_allclose(out[:, :3], GOLDEN_AUG, rtol=0, atol=1e-12)


GOLDEN_AUG = [
    [0.032031629994317315, 0.1918526786166878, 0.8196640258961893],
    [-0.005887225151039451, 0.13057135238854323, 0.820820713790839],
    [-0.2058557020500182, 0.16347142732404227, 0.7603914031208645],
    [0.02204038098826199, 0.15219730458460393, 0.7975601398422459],
    [-0.07727903238138467, 0.18292349662960283, 0.8187658156679624],
]


def test_augmentation_policy_validation():
    with pytest.raises(ValueError):
        AugmentationPolicy(n=0)
    with pytest.raises(ValueError):
        AugmentationPolicy(sigma_fine=-1)


def test_protect_is_deterministic_and_regenerable(backend, face):
    key = issue_key(1)
    t1 = protect(face, key, backend, FAST, seed=3)
    t2 = protect(face, key, backend, FAST, seed=3)
    assert t1 == t2
    assert np.array_equal(t1.face, backend.generate(t1.latent))
    assert t1.key_id == key.key_id
    assert protect(face, key, backend, FAST, seed=4) != t1


def test_batch_results_independent_of_threads(backend, rng):
    faces = backend.generate_flat(random_latents(backend, rng, (60,)))
    keys = [issue_key(k % 3) for k in range(60)]
    seeds = list(range(60))
    a = protect_batch(faces, keys, backend, FAST, seeds, threads=1)
    b = protect_batch(faces, keys, backend, FAST, seeds, threads=2)
    assert a == b


def test_template_roundtrip_bit_exact(backend, face):
    t = protect(face, issue_key(2), backend, FAST, subject_id="ß-subject", config_hash=bytes(range(32)))
    blob = t.to_bytes()
    assert blob[:4] == b"FAMX"
    back = ProtectedTemplate.from_bytes(blob)
    assert back == t and back.to_bytes() == blob
    assert back.subject_id == "ß-subject"


def test_template_format_errors(backend, face):
    blob = protect(face, issue_key(2), backend, FAST).to_bytes()
    with pytest.raises(FormatError):
        ProtectedTemplate.from_bytes(b"NOPE" + blob[4:])
    with pytest.raises(FormatError):
        ProtectedTemplate.from_bytes(blob[:-1] if blob[-1:] else blob[:20])
    with pytest.raises(FormatError):
        ProtectedTemplate.from_bytes(blob[:10])
    with pytest.raises(FormatError):
        ProtectedTemplate.from_bytes(blob + b"x")


def test_revoked_and_unknown_keys_rejected(backend, face, tmp_path):
    reg = KeyRegistry(tmp_path / "keys.log")
    key = issue_key(5)
    with pytest.raises(UnknownKeyError):
        protect(face, key, backend, FAST, registry=reg)
    reg.register(key)
    protect(face, key, backend, FAST, registry=reg)
    reg.revoke(key.key_id)
    with pytest.raises(RevokedKeyError):
        protect(face, key, backend, FAST, registry=reg)


def test_revocation_flow_templates_differ(backend, face, tmp_path):
    reg = KeyRegistry(tmp_path / "keys.log")
    k1, k2 = issue_key(11), issue_key(12)
    reg.register(k1)
    t1 = protect(face, k1, backend, FAST, registry=reg)
    reg.revoke(k1.key_id)
    reg.register(k2)
    t2 = protect(face, k2, backend, FAST, registry=reg)
    assert t1.key_id != t2.key_id and not np.array_equal(t1.face, t2.face)


def test_verify_conventions(backend, face):
    t = naive_protect(face, issue_key(1), backend)
    match, score = verify(t, t, backend, 1.0)
    assert match and score == pytest.approx(1.0)
    other = naive_protect(face, issue_key(2), backend)
    _, s = verify(t, other, backend, 0.0)
    assert verify(t, other, backend, s)[0]  # score == threshold is a match
    assert not verify(t, other, backend, np.nextafter(s, 2.0))[0]
    bad = ProtectedTemplate(t.latent, np.zeros(3), t.key_id)
    with pytest.raises(FormatError):
        verify(t, bad, backend, 0.5)


def test_naive_protect_mid_band_from_key(leakfree_backend, rng):
    b = leakfree_backend
    x = b.generate_flat(random_latents(b, rng))
    t = naive_protect(x, issue_key(4), b)
    z_r = b.invert_flat(x)
    np.testing.assert_allclose(t.latent.flatten()[b.other_cols], z_r[b.other_cols], atol=1e-10)


def test_non_finite_refinement_reports_step(backend, face):
    # a runaway step size pushes the generator into saturation on the second step
    runaway = ProtectionSettings(optimizer=OptimizerSettings(name="sgd", lr=1e6, steps=3), augmentation=AugmentationPolicy(n=2))
    with pytest.raises(NumericError) as info:
        protect(face, issue_key(1), backend, runaway)
    assert info.value.step == 2
    assert "items 0..0" in str(info.value)
