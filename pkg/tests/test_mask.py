import numpy as np
import pytest

from nnsplitter.errors import CalibrationError, NNSplitterError
from nnsplitter.mask import (MaskParams, calibrate_epsilon, compute_c,
                             eligible_offsets_by_layer, eligible_set,
                             per_layer_eligible_counts, profile_weights,
                             replace_in_band)
from nnsplitter.models import evaluate_accuracy


def brute_force_eligible(store, c, eps):
    """Reference implementation: per-weight scan with python floats."""
    out = set()
    for spec in store.layers:
        flat = store.flat(spec.layer_id)
        for off in range(flat.size):
            if abs(float(flat[off]) - c) <= eps:
                out.add((spec.layer_id, off))
    return out


def test_compute_c_sorted_median_oracle(tiny_victim):
    profile = profile_weights(tiny_victim)
    medians = []
    for spec in tiny_victim.layers:
        vals = sorted(float(x) for x in tiny_victim.flat(spec.layer_id))
        n = len(vals)
        med = vals[n // 2] if n % 2 else (vals[n // 2 - 1] + vals[n // 2]) / 2
        medians.append(med)
    assert profile.per_layer_median == pytest.approx(medians, rel=1e-6)
    assert compute_c(profile) == pytest.approx(sum(medians) / len(medians),
                                               rel=1e-6)


def test_eligible_matches_brute_force(tiny_victim):
    profile = profile_weights(tiny_victim)
    c = compute_c(profile)
    for eps in (0.0, 0.005, 0.02, 0.1):
        params = MaskParams(c, eps)
        assert eligible_set(tiny_victim, params) == brute_force_eligible(
            tiny_victim, c, eps)


def test_eligible_closed_interval_ties():
    from nnsplitter.models import LayerSpec, WeightStore
    # dyadic values are exact in float32, so the band edges are exact too
    w = np.array([[0.125, 0.25, 0.375, 0.75]], dtype=np.float32)
    store = WeightStore("linear", 1, 2, 1,
                        [LayerSpec(0, "fc", 1, (1, 4))], [w], {})
    params = MaskParams(0.25, 0.125)
    got = eligible_set(store, params)
    # both endpoints 0.125 and 0.375 are inside the closed band
    assert got == {(0, 0), (0, 1), (0, 2)}


def test_eligible_by_layer_consistent(tiny_victim):
    params = MaskParams(compute_c(profile_weights(tiny_victim)), 0.02)
    by_layer = eligible_offsets_by_layer(tiny_victim, params)
    flat = {(lid, int(o)) for lid, offs in by_layer.items() for o in offs}
    assert flat == eligible_set(tiny_victim, params)
    counts = per_layer_eligible_counts(tiny_victim, params)
    assert sum(counts) == len(flat)


def test_replace_in_band_oracle(tiny_victim):
    c, eps = 0.01, 0.03
    replaced = replace_in_band(tiny_victim, c, eps)
    for spec in tiny_victim.layers:
        orig = tiny_victim.flat(spec.layer_id)
        new = replaced.flat(spec.layer_id)
        for off in range(orig.size):
            if abs(float(orig[off]) - c) <= eps:
                assert new[off] == np.float32(c)
            else:
                assert new[off] == orig[off]


def test_calibrated_epsilon_preserves_accuracy(tiny_victim, tiny_data):
    c = compute_c(profile_weights(tiny_victim))
    baseline = evaluate_accuracy(tiny_victim, tiny_data)
    eps = calibrate_epsilon(tiny_victim, c, tiny_data, delta_acc=0.01)
    assert eps > 0
    acc = evaluate_accuracy(replace_in_band(tiny_victim, c, eps), tiny_data)
    assert acc >= baseline - 0.01
    assert eps <= tiny_victim.global_std / 2.0


def test_calibrate_rejects_bad_delta(tiny_victim, tiny_data):
    with pytest.raises(NNSplitterError):
        calibrate_epsilon(tiny_victim, 0.0, tiny_data, delta_acc=0.0)


def test_calibrate_failure_raises():
    # degenerate model whose prediction flips when the load-bearing weight is
    # replaced by c: the search probes down to epsilon_max / 2**20, every
    # probed width still covers that weight, so lo stays 0 and it must refuse
    from nnsplitter.data import DatasetSplit
    from nnsplitter.models import LayerSpec, WeightStore

    w = np.array([[0.0], [1e-6]], dtype=np.float32)
    store = WeightStore("linear", 1, 1, 2, [LayerSpec(0, "fc", 2, (2, 1))],
                        [w], {"stages.1.bias": np.zeros(2, dtype=np.float32)})
    x = np.ones((4, 1, 1, 1), dtype=np.float32)
    y = np.ones(4, dtype=np.int64)
    data = DatasetSplit(x, y, x, y, num_classes=2)
    with pytest.raises(CalibrationError):
        calibrate_epsilon(store, 0.0, data, delta_acc=0.001, epsilon_max=100.0)


def test_mask_params_validation():
    with pytest.raises(NNSplitterError):
        MaskParams(0.0, -1e-9)
