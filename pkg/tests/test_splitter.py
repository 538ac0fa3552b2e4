import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnsplitter.errors import NNSplitterError, PairingError
from nnsplitter.mask import MaskParams, compute_c, profile_weights
from nnsplitter.obfuscator import OptimizerConfig, build_mask, optimize_delta
from nnsplitter.splitter import (ENTRY_SIZE, HEADER_SIZE, ModelSecrets,
                                 deserialize_secrets, normal_world_inference,
                                 restore_weights, secure_inference,
                                 serialize_secrets, split_model)
def full_selection(store):
    from nnsplitter.controller import ActionSet
    a0 = [0] * len(store.layers)
    a1 = [spec.out_channels - 1 for spec in store.layers]
    return ActionSet([a0, a1], [[0.0] * len(a0), [0.0] * len(a1)])


entry_st = st.tuples(st.integers(0, 2 ** 16 - 1), st.integers(0, 2 ** 16 - 1),
                     st.integers(0, 2 ** 64 - 1))

secrets_st = st.builds(
    lambda c, entries, fp: ModelSecrets(float(np.float32(c)),
                                        sorted(set(entries)), fp),
    c=st.floats(-10, 10, width=32),
    entries=st.lists(entry_st, max_size=40),
    fp=st.integers(0, 2 ** 64 - 1),
)


@settings(max_examples=1000, deadline=None)
@given(secrets_st)
def test_secrets_roundtrip_bit_exact(secrets):
    blob = serialize_secrets(secrets)
    assert len(blob) == HEADER_SIZE + ENTRY_SIZE * secrets.count == 24 + 12 * secrets.count
    back = deserialize_secrets(blob)
    assert back.entries == secrets.entries
    assert back.model_fingerprint == secrets.model_fingerprint
    assert np.float32(back.c).tobytes() == np.float32(secrets.c).tobytes()
    assert serialize_secrets(back) == blob


def test_secrets_validation():
    with pytest.raises(NNSplitterError):
        ModelSecrets(0.0, [(1, 0, 0), (0, 0, 0)], 0)  # unsorted
    with pytest.raises(NNSplitterError):
        ModelSecrets(0.0, [(0, 0, 0), (0, 0, 0)], 0)  # duplicate


def test_deserialize_rejects_garbage():
    good = serialize_secrets(ModelSecrets(0.5, [(0, 0, 1)], 7))
    with pytest.raises(NNSplitterError):
        deserialize_secrets(b"XXXX" + good[4:])  # bad magic
    with pytest.raises(NNSplitterError):
        bad_version = good[:4] + (99).to_bytes(4, "little") + good[8:]
        deserialize_secrets(bad_version)
    with pytest.raises(NNSplitterError):
        deserialize_secrets(good[:-1])  # truncated
    with pytest.raises(NNSplitterError):
        deserialize_secrets(good + b"\x00")  # trailing bytes
    with pytest.raises(NNSplitterError):
        deserialize_secrets(b"NN")  # shorter than the header


@pytest.fixture(scope="module")
def split_setup(tiny_victim, tiny_data):
    params = MaskParams(compute_c(profile_weights(tiny_victim)), 0.05)
    fmask = build_mask(tiny_victim, params, full_selection(tiny_victim))
    delta = optimize_delta(tiny_victim, fmask,
                           OptimizerConfig(inner_epochs=2, prune_threshold=0.0,
                                           seed=0), tiny_data)
    obf, secrets = split_model(tiny_victim, delta, params.c, run_id="t")
    return delta, obf, secrets


def test_split_applies_delta_and_indexes(tiny_victim, split_setup):
    delta, obf, secrets = split_setup
    assert secrets.count == delta.l0
    # every secrets entry maps back to a delta index via the flat convention
    back = set()
    for lid, f, within in secrets.entries:
        spec = tiny_victim.spec(lid)
        back.add((lid, f * spec.per_filter_size + within))
    assert back == set(delta.entries)
    for (lid, off), v in delta.entries.items():
        assert obf.flat(lid)[off] == tiny_victim.flat(lid)[off] + np.float32(v)
    # the public checkpoint does not leak the band parameters
    assert set(obf.provenance) == {"run_id"}


def test_restore_sets_c_exactly(tiny_victim, split_setup):
    delta, obf, secrets = split_setup
    restored = restore_weights(obf, secrets)
    c = np.float32(secrets.c)
    touched = set(delta.entries)
    for spec in tiny_victim.layers:
        orig = obf.flat(spec.layer_id)
        new = restored.flat(spec.layer_id)
        for off in range(orig.size):
            if (spec.layer_id, off) in touched:
                assert new[off] == c
            else:
                assert new[off] == orig[off]


def test_pairing_mismatch_refused(split_setup):
    delta, obf, secrets = split_setup
    tampered = obf.copy()
    tampered.flat(0)[0] += np.float32(1e-3)  # single weight nudge
    with pytest.raises(PairingError):
        restore_weights(tampered, secrets)
    with pytest.raises(PairingError):
        secure_inference(tampered, secrets, np.zeros(
            (1, obf.in_channels, obf.image_size, obf.image_size),
            dtype=np.float32))


def test_secure_inference_matches_restored(tiny_victim, tiny_data, split_setup):
    delta, obf, secrets = split_setup
    restored = restore_weights(obf, secrets)
    want = normal_world_inference(restored, tiny_data.eval_inputs)
    got = secure_inference(obf, secrets, tiny_data.eval_inputs)
    denom = np.maximum(np.abs(want), 1e-3)
    assert float(np.max(np.abs(got - want) / denom)) <= 1e-5
    assert (got.argmax(1) == want.argmax(1)).all()


def test_normal_world_sees_obfuscated(tiny_victim, tiny_data, split_setup):
    delta, obf, secrets = split_setup
    got = normal_world_inference(obf, tiny_data.eval_inputs)
    want = normal_world_inference(delta.apply(tiny_victim),
                                  tiny_data.eval_inputs)
    np.testing.assert_array_equal(got, want)
