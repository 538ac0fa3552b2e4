import numpy as np
import pytest

from nnsplitter.attacks import (ClipAttackConfig, FineTuneConfig,
                                min_entries_to_floor, norm_clip_attack,
                                clip_weights, fine_tune_attack,
                                random_weight_baseline, scale_bias_obfuscation)
from nnsplitter.errors import NNSplitterError
from nnsplitter.models import evaluate_accuracy
from nnsplitter.obfuscator import DeltaStore, OptimizerConfig


def test_clip_weights_oracle(tiny_victim):
    t = 0.4
    lo = t * tiny_victim.global_min
    hi = t * tiny_victim.global_max
    clipped = clip_weights(tiny_victim, t)
    for spec in tiny_victim.layers:
        orig = tiny_victim.flat(spec.layer_id)
        new = clipped.flat(spec.layer_id)
        for off in range(orig.size):
            assert new[off] == min(max(float(orig[off]), lo), hi)
    # t=1 is the identity on the checkpoint's own range
    same = clip_weights(tiny_victim, 1.0)
    for spec in tiny_victim.layers:
        np.testing.assert_array_equal(same.values[spec.layer_id],
                                      tiny_victim.values[spec.layer_id])


def test_clip_attack_sweeps_grid(tiny_victim, tiny_data):
    cfg = ClipAttackConfig((0.2, 1.0))
    res = norm_clip_attack(tiny_victim, cfg, tiny_data)
    assert [s.value for s in res.settings] == [0.2, 1.0]
    baseline = evaluate_accuracy(tiny_victim, tiny_data)
    assert res.settings[-1].mean == baseline
    assert res.best_recovered == max(s.mean for s in res.settings)


def test_clip_config_validation():
    with pytest.raises(NNSplitterError):
        ClipAttackConfig(())
    with pytest.raises(NNSplitterError):
        ClipAttackConfig((1.5,))
    with pytest.raises(NNSplitterError):
        FineTuneConfig(fractions=(2.0,))


def test_fine_tune_attack_shapes(tiny_victim, tiny_data):
    cfg = FineTuneConfig(fractions=(0.5,), epochs=1, trials=2, seed=0)
    res = fine_tune_attack(tiny_victim, cfg, tiny_data)
    assert len(res.settings) == 1
    assert len(res.settings[0].accuracies) == 2
    for acc in res.settings[0].accuracies:
        assert 0.0 <= acc <= 1.0


def test_min_entries_to_floor():
    from nnsplitter.data import DatasetSplit
    from nnsplitter.models import LayerSpec, WeightStore
    # identity-ish 2-class linear model: one big delta flips the prediction,
    # small ones do nothing, so the minimal prefix is exactly 1
    w = np.array([[1.0], [-1.0]], dtype=np.float32)
    store = WeightStore("linear", 1, 1, 2, [LayerSpec(0, "fc", 2, (2, 1))],
                        [w], {"stages.1.bias": np.zeros(2, dtype=np.float32)})
    x = np.ones((4, 1, 1, 1), dtype=np.float32)
    y = np.zeros(4, dtype=np.int64)
    data = DatasetSplit(x, y, x, y, num_classes=2)
    assert evaluate_accuracy(store, data) == 1.0
    delta = DeltaStore({(0, 0): -5.0, (0, 1): 1e-6})
    assert min_entries_to_floor(store, delta, data, floor=0.5) == 1
    weak = DeltaStore({(0, 0): 1e-6})
    assert min_entries_to_floor(store, weak, data, floor=0.5) is None


def test_random_weight_baseline_support(tiny_victim, tiny_data):
    cfg = OptimizerConfig(inner_epochs=1, max_batches_per_epoch=2, seed=0)
    rep = random_weight_baseline(tiny_victim, count=10, cfg=cfg,
                                 data=tiny_data, seeds=(0, 1))
    assert rep.count == 10
    assert rep.secrets_count == 20  # index + value per entry
    assert len(rep.accuracies) == 2
    with pytest.raises(NNSplitterError):
        random_weight_baseline(tiny_victim, tiny_victim.num_weights + 1,
                               cfg, tiny_data)


def test_scale_bias_unsupported_without_norm(tiny_victim, tiny_data):
    # tiny_cnn has no normalization stages
    rep = scale_bias_obfuscation(tiny_victim, tiny_data)
    assert not rep.supported
    assert rep.params_changed == 0


def test_scale_bias_on_norm_model(small_victim, tiny_data):
    rep = scale_bias_obfuscation(
        small_victim, tiny_data,
        FineTuneConfig(fractions=(0.5,), epochs=1, trials=1))
    assert rep.supported
    # small_cnn: two BN stages with 8 + 16 channels, scale + bias each
    assert rep.params_changed == 2 * (8 + 16)
    assert rep.fine_tuned is not None
