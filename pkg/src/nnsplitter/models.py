"""Victim-model substrate: small CNN architectures, training, deterministic
evaluation, and the canonical per-layer flat-index convention.

A model is held as a :class:`WeightStore` (numpy, float32) and materialized
into a torch module on demand. Obfuscatable layers are exactly the
convolutional and fully connected weight matrices, in execution order; biases
and normalization parameters live in ``extras`` and are outside the mask
domain. Output rows of fully connected layers are treated as filters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .data import DatasetSplit
from .errors import NNSplitterError, TrainingFloorError


@dataclass(frozen=True)
class LayerSpec:
    """One obfuscatable layer: position, kind, and weight geometry."""

    layer_id: int
    kind: str  # "conv" | "fc"
    out_channels: int
    weight_shape: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in ("conv", "fc"):
            raise NNSplitterError(f"bad layer kind {self.kind!r}")
        if self.out_channels != self.weight_shape[0]:
            raise NNSplitterError("out_channels must equal weight_shape[0]")

    @property
    def per_filter_size(self) -> int:
        return int(np.prod(self.weight_shape[1:]))

    @property
    def num_weights(self) -> int:
        return int(np.prod(self.weight_shape))


def locate(spec: LayerSpec, flat_offset: int) -> tuple[int, int]:
    """Map a flat weight offset to (filter index, within-filter offset)."""
    if not 0 <= flat_offset < spec.num_weights:
        raise NNSplitterError(
            f"flat offset {flat_offset} out of range for layer {spec.layer_id}"
        )
    s = spec.per_filter_size
    return flat_offset // s, flat_offset % s


def locate_inverse(spec: LayerSpec, filter_index: int, within: int) -> int:
    """Inverse of :func:`locate`."""
    if not 0 <= filter_index < spec.out_channels:
        raise NNSplitterError(f"filter {filter_index} out of range")
    if not 0 <= within < spec.per_filter_size:
        raise NNSplitterError(f"within-filter offset {within} out of range")
    return filter_index * spec.per_filter_size + within


class StackedCNN(nn.Module):
    """Plain stage-sequential CNN; explicit stages make layer-by-layer
    (secure-world style) execution straightforward."""

    def __init__(self, stages: list[nn.Module]):
        super().__init__()
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        for stage in self.stages:
            x = stage(x)
        return x

    def obfuscatable_stage_indexes(self) -> list[int]:
        return [
            i
            for i, m in enumerate(self.stages)
            if isinstance(m, (nn.Conv2d, nn.Linear))
        ]


def _desk_cnn(in_channels: int, image_size: int, num_classes: int) -> StackedCNN:
    # wide normalized feature extractor feeding a deliberately narrow head;
    # all decision capacity funnels through the 12-unit penultimate layer
    s = image_size // 4
    return StackedCNN([
        nn.Conv2d(in_channels, 16, 3, padding=1),
        nn.BatchNorm2d(16), nn.ReLU(),
        nn.Conv2d(16, 32, 3, padding=1),
        nn.BatchNorm2d(32), nn.ReLU(), nn.MaxPool2d(2),
        nn.Conv2d(32, 64, 3, padding=1),
        nn.BatchNorm2d(64), nn.ReLU(), nn.MaxPool2d(2),
        nn.Conv2d(64, 320, 3, padding=1),
        nn.BatchNorm2d(320), nn.ReLU(),
        nn.Conv2d(320, 64, 3, padding=1),
        nn.BatchNorm2d(64), nn.ReLU(),
        nn.Flatten(),
        nn.Linear(64 * s * s, 12), nn.ReLU(),
        nn.Linear(12, num_classes),
    ])


def _small_cnn(in_channels: int, image_size: int, num_classes: int) -> StackedCNN:
    s = image_size // 4
    return StackedCNN([
        nn.Conv2d(in_channels, 8, 3, padding=1),
        nn.BatchNorm2d(8), nn.ReLU(), nn.MaxPool2d(2),
        nn.Conv2d(8, 16, 3, padding=1),
        nn.BatchNorm2d(16), nn.ReLU(), nn.MaxPool2d(2),
        nn.Flatten(),
        nn.Linear(16 * s * s, 32), nn.ReLU(),
        nn.Linear(32, num_classes),
    ])


def _tiny_cnn(in_channels: int, image_size: int, num_classes: int) -> StackedCNN:
    s = image_size // 2
    return StackedCNN([
        nn.Conv2d(in_channels, 4, 3, padding=1),
        nn.ReLU(), nn.MaxPool2d(2),
        nn.Flatten(),
        nn.Linear(4 * s * s, num_classes),
    ])


def _linear(in_channels: int, image_size: int, num_classes: int) -> StackedCNN:
    return StackedCNN([
        nn.Flatten(),
        nn.Linear(in_channels * image_size * image_size, num_classes),
    ])


ARCHITECTURES = {
    "desk_cnn": _desk_cnn,
    "small_cnn": _small_cnn,
    "tiny_cnn": _tiny_cnn,
    "linear": _linear,
}


def build_module(arch_id: str, in_channels: int, image_size: int,
                 num_classes: int) -> StackedCNN:
    if arch_id not in ARCHITECTURES:
        raise NNSplitterError(f"unknown architecture '{arch_id}'")
    return ARCHITECTURES[arch_id](in_channels, image_size, num_classes)


@dataclass
class WeightStore:
    """Ordered per-layer float32 weight arrays plus everything else needed to
    rebuild the torch module (biases, norm parameters, buffers)."""

    arch_id: str
    in_channels: int
    image_size: int
    num_classes: int
    layers: list[LayerSpec]
    values: list[np.ndarray]
    extras: dict[str, np.ndarray]
    provenance: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_module(cls, module: StackedCNN, arch_id: str, in_channels: int,
                    image_size: int, num_classes: int) -> "WeightStore":
        layers: list[LayerSpec] = []
        values: list[np.ndarray] = []
        obf_keys = set()
        for lid, si in enumerate(module.obfuscatable_stage_indexes()):
            stage = module.stages[si]
            kind = "conv" if isinstance(stage, nn.Conv2d) else "fc"
            w = stage.weight.detach().cpu().numpy().astype(np.float32, copy=True)
            layers.append(LayerSpec(lid, kind, w.shape[0], tuple(w.shape)))
            values.append(w)
            obf_keys.add(f"stages.{si}.weight")
        extras = {
            k: v.detach().cpu().numpy().copy()
            for k, v in module.state_dict().items()
            if k not in obf_keys
        }
        return cls(arch_id, in_channels, image_size, num_classes,
                   layers, values, extras)

    def to_module(self) -> StackedCNN:
        module = build_module(self.arch_id, self.in_channels, self.image_size,
                              self.num_classes)
        state = {}
        for lid, si in enumerate(module.obfuscatable_stage_indexes()):
            state[f"stages.{si}.weight"] = torch.from_numpy(self.values[lid].copy())
        for k, v in self.extras.items():
            state[k] = torch.from_numpy(v.copy())
        module.load_state_dict(state)
        module.eval()
        return module

    def copy(self) -> "WeightStore":
        return WeightStore(
            self.arch_id, self.in_channels, self.image_size, self.num_classes,
            list(self.layers), [v.copy() for v in self.values],
            {k: v.copy() for k, v in self.extras.items()},
            dict(self.provenance),
        )

    def flat(self, layer_id: int) -> np.ndarray:
        """Flat row-major view of one layer (output channel slowest)."""
        return self.values[layer_id].reshape(-1)

    @property
    def num_weights(self) -> int:
        return sum(spec.num_weights for spec in self.layers)

    @property
    def global_min(self) -> float:
        return float(min(v.min() for v in self.values))

    @property
    def global_max(self) -> float:
        return float(max(v.max() for v in self.values))

    @property
    def global_std(self) -> float:
        return float(np.concatenate([v.reshape(-1) for v in self.values]).std())

    def spec(self, layer_id: int) -> LayerSpec:
        if not 0 <= layer_id < len(self.layers):
            raise NNSplitterError(f"layer {layer_id} out of range")
        return self.layers[layer_id]


def _iter_batches(n: int, batch_size: int, generator: torch.Generator | None):
    if generator is None:
        order = torch.arange(n)
    else:
        order = torch.randperm(n, generator=generator)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def forward_logits(store: WeightStore, inputs: np.ndarray,
                   batch_size: int = 512) -> np.ndarray:
    """Deterministic eval-mode forward pass; returns logits as float32."""
    module = store.to_module()
    return forward_logits_module(module, inputs, batch_size)


def forward_logits_module(module: nn.Module, inputs: np.ndarray,
                          batch_size: int = 512) -> np.ndarray:
    module.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            x = torch.from_numpy(inputs[start:start + batch_size])
            outs.append(module(x).numpy())
    return np.concatenate(outs) if outs else np.empty((0, 0), dtype=np.float32)


def accuracy_module(module: nn.Module, inputs: np.ndarray,
                    labels: np.ndarray, batch_size: int = 512) -> float:
    if len(inputs) == 0:
        raise NNSplitterError("empty eval set")
    logits = forward_logits_module(module, inputs, batch_size)
    return float((logits.argmax(axis=1) == labels).mean())


def evaluate_accuracy(store: WeightStore, data: DatasetSplit,
                      batch_size: int = 512) -> float:
    """Top-1 accuracy on the eval split; pure function of (store, data)."""
    if store.num_classes != data.num_classes:
        raise NNSplitterError(
            f"class count mismatch: model {store.num_classes} vs data {data.num_classes}"
        )
    return accuracy_module(store.to_module(), data.eval_inputs,
                           data.eval_labels, batch_size)


def train_module(module: nn.Module, data: DatasetSplit, seed: int,
                 epochs: int, lr: float, batch_size: int = 64,
                 optimizer: str = "sgd") -> None:
    """In-place supervised training with a fixed-seed batch order."""
    gen = torch.Generator().manual_seed(seed)
    if optimizer == "adam":
        opt = torch.optim.Adam(module.parameters(), lr=lr)
    elif optimizer == "sgd":
        opt = torch.optim.SGD(module.parameters(), lr=lr, momentum=0.9)
    else:
        raise NNSplitterError(f"unknown optimizer '{optimizer}'")
    loss_fn = nn.CrossEntropyLoss()
    x_all = torch.from_numpy(data.train_inputs)
    y_all = torch.from_numpy(data.train_labels)
    module.train()
    for _ in range(epochs):
        for idx in _iter_batches(len(x_all), batch_size, gen):
            opt.zero_grad()
            loss = loss_fn(module(x_all[idx]), y_all[idx])
            loss.backward()
            opt.step()
    module.eval()


def hidden_fc_stages(module: StackedCNN) -> list[int]:
    """Stage indexes of fully connected layers before the output layer."""
    linear = [i for i, m in enumerate(module.stages)
              if isinstance(m, nn.Linear)]
    return linear[:-1]


def _train_bounded_head(module: StackedCNN, data: DatasetSplit, seed: int,
                        epochs: int, lr: float, batch_size: int,
                        head_weight_decay: float, preact_penalty: float,
                        preact_shift: float, shift_epochs: int) -> None:
    """Victim training regimen that bounds the classification head.

    The penultimate fully connected layer gets its own weight decay, and its
    pre-activations are penalized (`relu(z + shift)^2`), so the decision
    function concentrates in a few moderate-magnitude hidden units while the
    rest settle below the activation threshold. The shift is applied only in
    the last ``shift_epochs`` epochs, once features have formed; applying it
    from the start suppresses the head before anything is learned.
    """
    head = module.stages[hidden_fc_stages(module)[-1]]
    others = [p for _n, p in module.named_parameters() if p is not head.weight]
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.SGD([
        {"params": [head.weight], "weight_decay": head_weight_decay},
        {"params": others},
    ], lr=lr, momentum=0.9)
    loss_fn = nn.CrossEntropyLoss()
    cap: dict[str, torch.Tensor] = {}
    handle = head.register_forward_hook(
        lambda _m, _inp, out: cap.__setitem__("z", out))
    x_all = torch.from_numpy(data.train_inputs)
    y_all = torch.from_numpy(data.train_labels)
    module.train()
    for ep in range(epochs):
        shift = 0.0 if ep < epochs - shift_epochs else preact_shift
        perm = torch.randperm(len(x_all), generator=gen)
        for start in range(0, len(x_all), batch_size):
            idx = perm[start:start + batch_size]
            opt.zero_grad()
            loss = loss_fn(module(x_all[idx]), y_all[idx])
            loss = loss + preact_penalty * torch.relu(cap["z"] + shift).pow(2).mean()
            loss.backward()
            opt.step()
    handle.remove()
    module.eval()


def train_victim(
    arch_id: str,
    data: DatasetSplit,
    seed: int,
    epochs: int,
    lr: float = 0.05,
    batch_size: int = 64,
    floor_accuracy: float = 0.0,
    optimizer: str = "sgd",
    head_weight_decay: float = 1e-2,
    preact_penalty: float = 3e-3,
    preact_shift: float = 0.25,
    shift_epochs: int = 2,
) -> tuple[WeightStore, float]:
    """Train a victim from scratch; deterministic given the seed.

    Architectures with a hidden fully connected layer are trained with the
    bounded-head regimen (see :func:`_train_bounded_head`) unless both head
    knobs are zero; the others train plainly.

    Raises :class:`TrainingFloorError` when the eval accuracy ends up below
    ``floor_accuracy``.
    """
    if len(data.train_inputs) == 0:
        raise NNSplitterError("empty training set")
    torch.manual_seed(seed)
    module = build_module(arch_id, data.in_channels, data.image_size,
                          data.num_classes)
    if hidden_fc_stages(module) and (head_weight_decay > 0 or preact_penalty > 0):
        _train_bounded_head(module, data, seed, epochs, lr, batch_size,
                            head_weight_decay, preact_penalty, preact_shift,
                            shift_epochs)
    else:
        train_module(module, data, seed, epochs, lr, batch_size, optimizer)
    acc = accuracy_module(module, data.eval_inputs, data.eval_labels)
    if acc < floor_accuracy:
        raise TrainingFloorError(acc, floor_accuracy)
    store = WeightStore.from_module(module, arch_id, data.in_channels,
                                    data.image_size, data.num_classes)
    store.provenance["dataset"] = data.name
    store.provenance["train_seed"] = str(seed)
    return store, acc
