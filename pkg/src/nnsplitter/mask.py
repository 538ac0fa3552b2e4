"""Mask hyper-parameter derivation: profile the weight distribution, pick the
band center c as the mean of per-layer medians, and calibrate the half-width
so that replacing every in-band weight by c preserves accuracy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import DatasetSplit
from .errors import CalibrationError, NNSplitterError
from .models import WeightStore, evaluate_accuracy

log = logging.getLogger(__name__)

EPSILON_SEARCH_STEPS = 20


@dataclass
class WeightProfile:
    per_layer_median: list[float]
    global_min: float
    global_max: float
    global_std: float


@dataclass(frozen=True)
class MaskParams:
    """Band center (also the stored replacement constant) and half-width."""

    c: float
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise NNSplitterError("epsilon must be >= 0")


def profile_weights(model: WeightStore) -> WeightProfile:
    if not model.layers:
        raise NNSplitterError("model has no obfuscatable layers")
    medians = [float(np.median(model.flat(spec.layer_id))) for spec in model.layers]
    return WeightProfile(medians, model.global_min, model.global_max,
                         model.global_std)


def compute_c(profile: WeightProfile) -> float:
    """Band center: arithmetic mean of the per-layer medians, which spreads
    eligibility across layers instead of concentrating it."""
    if not profile.per_layer_median:
        raise NNSplitterError("empty profile")
    return float(np.mean(profile.per_layer_median))


def replace_in_band(model: WeightStore, c: float, epsilon: float) -> WeightStore:
    """Every weight with |w - c| <= epsilon set to c (closed interval)."""
    out = model.copy()
    for lid in range(len(out.layers)):
        v = out.values[lid]
        v[np.abs(v - c) <= epsilon] = np.float32(c)
    return out


def calibrate_epsilon(
    model: WeightStore,
    c: float,
    data: DatasetSplit,
    delta_acc: float = 0.001,
    epsilon_max: float | None = None,
) -> float:
    """Largest band half-width (binary search over (0, eps_max], 20 halvings)
    such that the replace-with-c model stays within ``delta_acc`` of baseline.
    """
    if delta_acc <= 0:
        raise NNSplitterError("delta_acc must be > 0")
    if epsilon_max is None:
        epsilon_max = model.global_std / 2.0
    baseline = evaluate_accuracy(model, data)

    def ok(eps: float) -> bool:
        acc = evaluate_accuracy(replace_in_band(model, c, eps), data)
        return acc >= baseline - delta_acc

    if ok(epsilon_max):
        return float(epsilon_max)
    lo, hi = 0.0, epsilon_max  # lo always feasible (eps=0 only hits w == c)
    for _ in range(EPSILON_SEARCH_STEPS):
        mid = (lo + hi) / 2.0
        if ok(mid):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise CalibrationError(
            "no band width preserves accuracy; try a different center c"
        )
    return float(lo)


def eligible_set(model: WeightStore, params: MaskParams) -> set[tuple[int, int]]:
    """Indexes of all weights inside the closed band [c-eps, c+eps]."""
    out: set[tuple[int, int]] = set()
    for spec in model.layers:
        flat = model.flat(spec.layer_id)
        hits = np.flatnonzero(np.abs(flat - params.c) <= params.epsilon)
        out.update((spec.layer_id, int(off)) for off in hits)
    if not out:
        log.warning("eligible set is empty for c=%g eps=%g", params.c,
                    params.epsilon)
    return out


def eligible_offsets_by_layer(model: WeightStore,
                              params: MaskParams) -> dict[int, np.ndarray]:
    """Same membership as :func:`eligible_set`, vectorized per layer."""
    return {
        spec.layer_id: np.flatnonzero(
            np.abs(model.flat(spec.layer_id) - params.c) <= params.epsilon
        )
        for spec in model.layers
    }


def per_layer_eligible_counts(model: WeightStore,
                              params: MaskParams) -> list[int]:
    by_layer = eligible_offsets_by_layer(model, params)
    return [len(by_layer[spec.layer_id]) for spec in model.layers]
