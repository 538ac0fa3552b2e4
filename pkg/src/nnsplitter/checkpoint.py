"""Checkpoint persistence: a text manifest plus raw little-endian float32
blobs, one per layer, fingerprinted with 64-bit FNV-1a over all weight bytes.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import NNSplitterError
from .models import LayerSpec, WeightStore

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

MANIFEST_NAME = "manifest.txt"


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def fingerprint(store: WeightStore) -> int:
    """FNV-1a over the little-endian bytes of every obfuscatable weight,
    in layer order."""
    h = _FNV_OFFSET
    for v in store.values:
        h = fnv1a64(v.astype("<f4", copy=False).tobytes(), h)
    return h


def _write_manifest(path: str, store: WeightStore, fp: int) -> None:
    lines = [
        "format: nnsplitter-checkpoint",
        "version: 1",
        f"arch: {store.arch_id}",
        f"in_channels: {store.in_channels}",
        f"image_size: {store.image_size}",
        f"num_classes: {store.num_classes}",
        f"num_layers: {len(store.layers)}",
        f"fingerprint: {fp:016x}",
    ]
    for spec in store.layers:
        shape = ",".join(str(d) for d in spec.weight_shape)
        lines.append(f"layer_{spec.layer_id}: {spec.kind} {spec.out_channels} {shape}")
    for i, key in enumerate(sorted(store.extras)):
        arr = store.extras[key]
        shape = ",".join(str(d) for d in arr.shape) or "-"
        lines.append(f"extra_{i}: {key} {arr.dtype.str} {shape}")
    for key in sorted(store.provenance):
        lines.append(f"provenance.{key}: {store.provenance[key]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_checkpoint(store: WeightStore, dirpath: str) -> int:
    """Write manifest + per-layer blobs; returns the fingerprint."""
    os.makedirs(dirpath, exist_ok=True)
    fp = fingerprint(store)
    _write_manifest(os.path.join(dirpath, MANIFEST_NAME), store, fp)
    for spec, v in zip(store.layers, store.values):
        with open(os.path.join(dirpath, f"layer_{spec.layer_id}.bin"), "wb") as fh:
            fh.write(v.astype("<f4", copy=False).tobytes())
    for i, key in enumerate(sorted(store.extras)):
        with open(os.path.join(dirpath, f"extra_{i}.bin"), "wb") as fh:
            fh.write(store.extras[key].tobytes())
    return fp


def _parse_manifest(path: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition(":")
            fields[key.strip()] = value.strip()
    return fields


def load_checkpoint(dirpath: str) -> WeightStore:
    """Load and integrity-check a checkpoint directory."""
    manifest = os.path.join(dirpath, MANIFEST_NAME)
    if not os.path.exists(manifest):
        raise NNSplitterError(f"no manifest at {manifest}")
    fields = _parse_manifest(manifest)
    if fields.get("format") != "nnsplitter-checkpoint":
        raise NNSplitterError("not a checkpoint manifest")

    num_layers = int(fields["num_layers"])
    layers: list[LayerSpec] = []
    values: list[np.ndarray] = []
    for lid in range(num_layers):
        kind, out_ch, shape_s = fields[f"layer_{lid}"].split()
        shape = tuple(int(d) for d in shape_s.split(","))
        layers.append(LayerSpec(lid, kind, int(out_ch), shape))
        with open(os.path.join(dirpath, f"layer_{lid}.bin"), "rb") as fh:
            arr = np.frombuffer(fh.read(), dtype="<f4").reshape(shape)
        values.append(arr.astype(np.float32))

    extras: dict[str, np.ndarray] = {}
    i = 0
    while f"extra_{i}" in fields:
        key, dtype_s, shape_s = fields[f"extra_{i}"].split()
        shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split(","))
        with open(os.path.join(dirpath, f"extra_{i}.bin"), "rb") as fh:
            extras[key] = np.frombuffer(fh.read(), dtype=np.dtype(dtype_s)).reshape(shape).copy()
        i += 1

    provenance = {
        k[len("provenance."):]: v
        for k, v in fields.items() if k.startswith("provenance.")
    }
    store = WeightStore(
        fields["arch"], int(fields["in_channels"]), int(fields["image_size"]),
        int(fields["num_classes"]), layers, values, extras, provenance,
    )
    expected = int(fields["fingerprint"], 16)
    actual = fingerprint(store)
    if actual != expected:
        raise NNSplitterError(
            f"checkpoint corrupt: fingerprint {actual:016x} != {expected:016x}"
        )
    return store
