import numpy as np
import pytest

from nnsplitter.data import synthetic_split
from nnsplitter.errors import NNSplitterError, TrainingFloorError
from nnsplitter.models import (ARCHITECTURES, LayerSpec, WeightStore,
                               build_module, evaluate_accuracy,
                               forward_logits, locate, locate_inverse,
                               train_victim)


def test_locate_hand_arithmetic():
    # conv layer 4 filters of 2*3*3=18 weights each
    spec = LayerSpec(0, "conv", 4, (4, 2, 3, 3))
    assert spec.per_filter_size == 18
    assert spec.num_weights == 72
    assert locate(spec, 0) == (0, 0)
    assert locate(spec, 17) == (0, 17)
    assert locate(spec, 18) == (1, 0)
    assert locate(spec, 71) == (3, 17)
    # fc rows are filters
    fc = LayerSpec(1, "fc", 10, (10, 7))
    assert locate(fc, 23) == (3, 2)


def test_locate_inverse_roundtrip():
    spec = LayerSpec(0, "conv", 5, (5, 3, 2, 2))
    for off in range(spec.num_weights):
        f, w = locate(spec, off)
        assert locate_inverse(spec, f, w) == off


def test_locate_bounds():
    spec = LayerSpec(0, "fc", 2, (2, 4))
    with pytest.raises(NNSplitterError):
        locate(spec, 8)
    with pytest.raises(NNSplitterError):
        locate(spec, -1)
    with pytest.raises(NNSplitterError):
        locate_inverse(spec, 2, 0)
    with pytest.raises(NNSplitterError):
        locate_inverse(spec, 0, 4)


def test_layer_spec_validation():
    with pytest.raises(NNSplitterError):
        LayerSpec(0, "pool", 4, (4, 1, 3, 3))
    with pytest.raises(NNSplitterError):
        LayerSpec(0, "conv", 3, (4, 1, 3, 3))


def test_desk_cnn_weight_count():
    module = build_module("desk_cnn", 1, 28, 10)
    store = WeightStore.from_module(module, "desk_cnn", 1, 28, 10)
    assert store.num_weights == 429576
    assert [spec.kind for spec in store.layers] == [
        "conv", "conv", "conv", "conv", "conv", "fc", "fc"]


def test_store_module_roundtrip(tiny_victim, tiny_data):
    rebuilt = WeightStore.from_module(
        tiny_victim.to_module(), tiny_victim.arch_id, tiny_victim.in_channels,
        tiny_victim.image_size, tiny_victim.num_classes)
    for a, b in zip(tiny_victim.values, rebuilt.values):
        np.testing.assert_array_equal(a, b)
    for k in tiny_victim.extras:
        np.testing.assert_array_equal(tiny_victim.extras[k], rebuilt.extras[k])


def test_flat_is_view(tiny_victim):
    store = tiny_victim.copy()
    store.flat(0)[0] = 7.0
    assert store.values[0].reshape(-1)[0] == 7.0
    # and the original was not touched
    assert tiny_victim.values[0].reshape(-1)[0] != 7.0


def test_forward_deterministic(tiny_victim, tiny_data):
    a = forward_logits(tiny_victim, tiny_data.eval_inputs)
    b = forward_logits(tiny_victim, tiny_data.eval_inputs)
    np.testing.assert_array_equal(a, b)


def test_evaluate_accuracy_matches_manual(tiny_victim, tiny_data):
    logits = forward_logits(tiny_victim, tiny_data.eval_inputs)
    manual = float((logits.argmax(1) == tiny_data.eval_labels).mean())
    assert evaluate_accuracy(tiny_victim, tiny_data) == manual


def test_training_floor_error():
    data = synthetic_split(0, num_train=64, num_eval=64, image_size=8,
                           noise=0.3, max_shift=1)
    with pytest.raises(TrainingFloorError):
        train_victim("tiny_cnn", data, seed=0, epochs=0, floor_accuracy=0.99)


def test_train_deterministic():
    data = synthetic_split(3, num_train=128, num_eval=64, image_size=8,
                           noise=0.3, max_shift=1)
    s1, _ = train_victim("tiny_cnn", data, seed=5, epochs=2)
    s2, _ = train_victim("tiny_cnn", data, seed=5, epochs=2)
    for a, b in zip(s1.values, s2.values):
        np.testing.assert_array_equal(a, b)


def test_unknown_architecture():
    with pytest.raises(NNSplitterError):
        build_module("resnet152", 1, 28, 10)
    assert set(ARCHITECTURES) == {"desk_cnn", "small_cnn", "tiny_cnn", "linear"}
