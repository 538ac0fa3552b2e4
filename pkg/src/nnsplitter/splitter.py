"""Model splitting: public obfuscated checkpoint vs. compact secrets, plus
the emulated secure-world inference path.

Secrets binary format (little-endian, bit-exact):
  magic "NNSP" | version u32=1 | model fingerprint u64 | c f32 | count u32
  then per entry: layer_id u16 | filter_index u16 | within_filter_offset u64
Total size = 24 + 12 * count bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .checkpoint import fingerprint
from .errors import NNSplitterError, PairingError
from .models import WeightStore, forward_logits_module, locate, locate_inverse

SECRETS_MAGIC = b"NNSP"
SECRETS_VERSION = 1
HEADER_SIZE = 24
ENTRY_SIZE = 12


@dataclass
class ModelSecrets:
    """The replacement constant plus sorted indexes of obfuscated weights."""

    c: float
    entries: list[tuple[int, int, int]]  # (layer_id, filter_index, within)
    model_fingerprint: int

    def __post_init__(self):
        if self.entries != sorted(self.entries):
            raise NNSplitterError("secrets entries must be sorted")
        if len(set(self.entries)) != len(self.entries):
            raise NNSplitterError("duplicate secrets entries")

    @property
    def count(self) -> int:
        return len(self.entries)

    def by_layer(self) -> dict[int, list[tuple[int, int]]]:
        out: dict[int, list[tuple[int, int]]] = {}
        for lid, f, off in self.entries:
            out.setdefault(lid, []).append((f, off))
        return out


def serialize_secrets(secrets: ModelSecrets) -> bytes:
    blob = struct.pack(
        "<4sIQfI", SECRETS_MAGIC, SECRETS_VERSION,
        secrets.model_fingerprint,
        np.float32(secrets.c), secrets.count,
    )
    for lid, f, off in secrets.entries:
        blob += struct.pack("<HHQ", lid, f, off)
    return blob


def deserialize_secrets(blob: bytes) -> ModelSecrets:
    if len(blob) < HEADER_SIZE:
        raise NNSplitterError("secrets blob truncated")
    magic, version, fp, c, count = struct.unpack_from("<4sIQfI", blob, 0)
    if magic != SECRETS_MAGIC:
        raise NNSplitterError("bad secrets magic")
    if version != SECRETS_VERSION:
        raise NNSplitterError(f"unsupported secrets version {version}")
    if len(blob) != HEADER_SIZE + ENTRY_SIZE * count:
        raise NNSplitterError("secrets blob length mismatch")
    entries = [
        struct.unpack_from("<HHQ", blob, HEADER_SIZE + ENTRY_SIZE * i)
        for i in range(count)
    ]
    return ModelSecrets(float(np.float32(c)),
                        [(int(a), int(b), int(o)) for a, b, o in entries], fp)


def split_model(victim: WeightStore, delta, c: float,
                run_id: str = "") -> tuple[WeightStore, ModelSecrets]:
    """Apply the sparse weight changes and emit (checkpoint, secrets).

    The public checkpoint carries only the run id as provenance; the band
    parameters stay private so the support cannot be enumerated.
    """
    obfuscated = delta.apply(victim)
    obfuscated.provenance = {"run_id": run_id} if run_id else {}
    entries = []
    for (lid, off) in delta.entries:
        spec = victim.spec(lid)
        f, within = locate(spec, off)
        entries.append((lid, f, within))
    secrets = ModelSecrets(float(np.float32(c)), sorted(entries),
                           fingerprint(obfuscated))
    return obfuscated, secrets


def _check_pairing(checkpoint: WeightStore, secrets: ModelSecrets) -> None:
    actual = fingerprint(checkpoint)
    if actual != secrets.model_fingerprint:
        raise PairingError(
            f"secrets fingerprint {secrets.model_fingerprint:016x} does not "
            f"match checkpoint {actual:016x}"
        )


def restore_weights(checkpoint: WeightStore,
                    secrets: ModelSecrets) -> WeightStore:
    """Legitimate-user view: every secret index set to the constant c."""
    _check_pairing(checkpoint, secrets)
    restored = checkpoint.copy()
    c = np.float32(secrets.c)
    for lid, f, within in secrets.entries:
        spec = restored.spec(lid)
        restored.flat(lid)[locate_inverse(spec, f, within)] = c
    return restored


class SecureWorld:
    """Emulated sealed component: holds the loaded secrets and recomputes the
    affected output channels of a layer with corrected weights."""

    def __init__(self):
        self._secrets: ModelSecrets | None = None
        self._by_layer: dict[int, list[tuple[int, int]]] = {}

    def load_secrets(self, blob: bytes, checkpoint: WeightStore) -> None:
        secrets = deserialize_secrets(blob)
        _check_pairing(checkpoint, secrets)
        self._secrets = secrets
        self._by_layer = secrets.by_layer()

    @property
    def loaded(self) -> bool:
        return self._secrets is not None

    def correct_channels(self, layer_id: int, stage: nn.Module,
                         inputs: torch.Tensor,
                         normal_out: torch.Tensor) -> torch.Tensor:
        """Overwrite the output channels owning secrets with a recomputation
        that uses the corrected (restored) weights."""
        if self._secrets is None:
            raise NNSplitterError("secrets not loaded")
        hits = self._by_layer.get(layer_id)
        if not hits:
            return normal_out
        filters = sorted({f for f, _ in hits})
        w = stage.weight.detach().clone()
        flat = w.reshape(w.shape[0], -1)
        for f, within in hits:
            flat[f, within] = self._secrets.c
        wf = w[filters]
        bias = stage.bias[filters] if stage.bias is not None else None
        if isinstance(stage, nn.Conv2d):
            fixed = F.conv2d(inputs, wf, bias, stage.stride, stage.padding,
                             stage.dilation, stage.groups)
        elif isinstance(stage, nn.Linear):
            fixed = F.linear(inputs, wf, bias)
        else:
            raise NNSplitterError(f"uncorrectable stage {type(stage).__name__}")
        out = normal_out.clone()
        out[:, filters] = fixed
        return out


def normal_world_inference(checkpoint: WeightStore, inputs: np.ndarray,
                           batch_size: int = 512) -> np.ndarray:
    """Attacker's view: plain forward with the obfuscated weights."""
    return forward_logits_module(checkpoint.to_module(), inputs, batch_size)


def secure_inference(checkpoint: WeightStore, secrets: ModelSecrets,
                     inputs: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Layer-by-layer split execution: normal-world pass on obfuscated
    weights, with secret-owning output channels corrected by the secure world
    before each next layer."""
    _check_pairing(checkpoint, secrets)
    world = SecureWorld()
    world.load_secrets(serialize_secrets(secrets), checkpoint)
    module = checkpoint.to_module()
    stage_to_layer = {
        si: lid for lid, si in enumerate(module.obfuscatable_stage_indexes())
    }
    outs = []
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            x = torch.from_numpy(inputs[start:start + batch_size])
            for si, stage in enumerate(module.stages):
                y = stage(x)
                if si in stage_to_layer:
                    y = world.correct_channels(stage_to_layer[si], stage, x, y)
                x = y
            outs.append(x.numpy())
    return np.concatenate(outs) if outs else np.empty((0, 0), dtype=np.float32)
