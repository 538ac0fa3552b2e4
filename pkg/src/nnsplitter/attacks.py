"""Adversary toolbox: norm clipping, limited-data fine-tuning, random-support
and random-filter baselines, single-layer obfuscation controls, and the
normalization scale/bias obfuscation comparison.

All attacks act on copies; the input checkpoint is never mutated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .data import DatasetSplit
from .errors import NNSplitterError
from .mask import MaskParams, eligible_offsets_by_layer
from .models import (WeightStore, accuracy_module, evaluate_accuracy,
                     train_module)
from .obfuscator import (DeltaStore, FilterMask, OptimizerConfig,
                         optimize_delta)

log = logging.getLogger(__name__)

DEFAULT_T_GRID = tuple(round(0.05 * i, 2) for i in range(1, 21))


@dataclass(frozen=True)
class ClipAttackConfig:
    t_grid: tuple[float, ...] = DEFAULT_T_GRID

    def __post_init__(self):
        if not self.t_grid:
            raise NNSplitterError("t_grid must be non-empty")
        if any(not 0.0 <= t <= 1.0 for t in self.t_grid):
            raise NNSplitterError("t values must lie in [0, 1]")


@dataclass(frozen=True)
class FineTuneConfig:
    fractions: tuple[float, ...] = (0.01, 0.1)
    epochs: int = 20
    # 0.1x the victim's default training rate; the attacker has no schedule
    learning_rate: float = 5e-3
    trials: int = 5
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise NNSplitterError("fractions must lie in [0, 1]")


@dataclass
class AttackSetting:
    value: float
    accuracies: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


@dataclass
class AttackResult:
    name: str
    settings: list[AttackSetting]
    config_echo: dict[str, str] = field(default_factory=dict)

    @property
    def best_recovered(self) -> float:
        return max(s.mean for s in self.settings) if self.settings else 0.0

    def table(self) -> list[tuple[float, float, float]]:
        """(setting, mean, std) rows for delimited output / plotting."""
        return [(s.value, s.mean, s.std) for s in self.settings]


def clip_weights(checkpoint: WeightStore, t: float) -> WeightStore:
    """Clip every obfuscatable weight into t * [min(W'), max(W')] (global)."""
    out = checkpoint.copy()
    lo, hi = t * out.global_min, t * out.global_max
    for lid in range(len(out.layers)):
        np.clip(out.values[lid], lo, hi, out=out.values[lid])
    return out


def norm_clip_attack(checkpoint: WeightStore, cfg: ClipAttackConfig,
                     data: DatasetSplit) -> AttackResult:
    settings = []
    for t in cfg.t_grid:
        acc = evaluate_accuracy(clip_weights(checkpoint, t), data)
        settings.append(AttackSetting(t, [acc]))
        log.info("norm clip t=%.2f -> acc %.4f", t, acc)
    return AttackResult("norm_clip", settings,
                        {"t_grid": ",".join(f"{t:g}" for t in cfg.t_grid)})


def fine_tune_once(checkpoint: WeightStore, data: DatasetSplit,
                   fraction: float, epochs: int, lr: float, seed: int,
                   batch_size: int = 64) -> float:
    subset = data.subset(fraction, seed)
    module = checkpoint.to_module()
    if len(subset.train_inputs) > 0:
        train_module(module, subset, seed, epochs, lr, batch_size)
    return accuracy_module(module, data.eval_inputs, data.eval_labels)


def fine_tune_attack(checkpoint: WeightStore, cfg: FineTuneConfig,
                     data: DatasetSplit) -> AttackResult:
    """Fine-tune all weights on class-stratified fractions of the victim's
    training data; mean and std over independent trials per fraction."""
    settings = []
    for fraction in cfg.fractions:
        accs = [
            fine_tune_once(checkpoint, data, fraction, cfg.epochs,
                           cfg.learning_rate, cfg.seed + 7919 * trial,
                           cfg.batch_size)
            for trial in range(cfg.trials)
        ]
        settings.append(AttackSetting(fraction, accs))
        log.info("fine-tune fraction=%.2f -> %.4f +/- %.4f", fraction,
                 settings[-1].mean, settings[-1].std)
    echo = {
        "fractions": ",".join(f"{f:g}" for f in cfg.fractions),
        "epochs": str(cfg.epochs),
        "learning_rate": f"{cfg.learning_rate:g}",
        "trials": str(cfg.trials),
    }
    return AttackResult("fine_tune", settings, echo)


def _mask_from_support(support: dict[int, np.ndarray],
                       num_layers: int) -> FilterMask:
    # comparison-method masks bypass the eligibility band on purpose
    selected = [set() for _ in range(num_layers)]
    return FilterMask(MaskParams(0.0, 0.0), selected, support)


@dataclass
class RandomBaselineReport:
    count: int
    accuracies: list[float]
    secrets_count: int  # indexes + values: not collapsible to one constant

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


def random_weight_baseline(victim: WeightStore, count: int,
                           cfg: OptimizerConfig, data: DatasetSplit,
                           seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
                           ) -> RandomBaselineReport:
    """Obfuscation on a uniformly random support of matched size."""
    total = victim.num_weights
    if count > total:
        raise NNSplitterError(f"count {count} exceeds {total} weights")
    accuracies = []
    if count == 0:
        base = evaluate_accuracy(victim, data)
        return RandomBaselineReport(0, [base] * len(seeds), 1)
    sizes = [spec.num_weights for spec in victim.layers]
    bounds = np.cumsum([0] + sizes)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        picks = rng.choice(total, size=count, replace=False)
        support: dict[int, np.ndarray] = {}
        for lid in range(len(victim.layers)):
            inside = picks[(picks >= bounds[lid]) & (picks < bounds[lid + 1])]
            support[lid] = np.sort(inside - bounds[lid])
        mask = _mask_from_support(support, len(victim.layers))
        delta = optimize_delta(victim, mask,
                               replace(cfg, prune_threshold=0.0, seed=seed),
                               data)
        acc = evaluate_accuracy(delta.apply(victim), data)
        accuracies.append(acc)
        log.info("random support seed=%d -> acc %.4f (l0=%d)", seed, acc,
                 delta.l0)
    return RandomBaselineReport(count, accuracies, 2 * count)


def min_entries_to_floor(model: WeightStore, delta: DeltaStore,
                         data: DatasetSplit, floor: float) -> int | None:
    """Fewest largest-magnitude entries whose application reaches the
    accuracy floor; None when even the full delta misses it."""
    items = sorted(delta.entries.items(), key=lambda kv: -abs(kv[1]))

    def acc_top(k: int) -> float:
        return evaluate_accuracy(DeltaStore(dict(items[:k])).apply(model), data)

    if acc_top(len(items)) > floor:
        return None
    lo, hi = 0, len(items)
    while lo < hi:
        mid = (lo + hi) // 2
        if acc_top(mid) <= floor:
            hi = mid
        else:
            lo = mid + 1
    return hi


@dataclass
class AblationReport:
    floor: float
    reference_count: int
    random_count: int | None
    reachable: bool

    @property
    def increment_ratio(self) -> float | None:
        if not self.reachable or self.random_count is None:
            return None
        return (self.random_count - self.reference_count) / self.reference_count


def random_filter_ablation(victim: WeightStore, mask_params: MaskParams,
                           data: DatasetSplit, cfg: OptimizerConfig,
                           floor: float, reference_count: int,
                           seeds: tuple[int, ...] = (0, 1, 2),
                           max_filters_per_layer: int = 16) -> AblationReport:
    """Random filter selection (same band, same optimizer, same pruning): the
    deployed delta size of the smallest random selection that reaches the
    accuracy floor, against the controller run's deployed count.

    Both sides count the full secret — margin-bearing deactivation entries
    included. A magnitude-prefix count would strip exactly the entries that
    carry the fine-tuning resilience, which no deployment could actually drop.
    """
    eligible = eligible_offsets_by_layer(victim, mask_params)
    counts: list[int] = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        found: int | None = None
        n_filters = 1
        while n_filters <= max_filters_per_layer:
            support: dict[int, np.ndarray] = {}
            selected: list[set[int]] = []
            for spec in victim.layers:
                picks = rng.choice(spec.out_channels,
                                   size=min(n_filters, spec.out_channels),
                                   replace=False)
                offs = eligible[spec.layer_id]
                s = spec.per_filter_size
                support[spec.layer_id] = offs[np.isin(offs // s, picks)]
                selected.append(set(int(p) for p in picks))
            if sum(len(v) for v in support.values()) == 0:
                n_filters *= 2
                continue
            # same machinery as the pipeline, random selection instead of the
            # controller's
            mask = FilterMask(mask_params, selected, support)
            delta = optimize_delta(victim, mask, replace(cfg, seed=seed), data)
            if (delta.l0 > 0
                    and evaluate_accuracy(delta.apply(victim), data) <= floor):
                found = delta.l0
                break
            n_filters *= 2
        if found is not None:
            counts.append(found)
            log.info("ablation seed=%d: %d entries to reach floor", seed, found)
    if not counts:
        return AblationReport(floor, reference_count, None, False)
    return AblationReport(floor, reference_count,
                          int(round(float(np.mean(counts)))), True)


@dataclass
class SingleLayerReport:
    layer: str
    budget: int
    used: int
    obfuscated_accuracy: float
    fine_tuned: AttackResult


def single_layer_obfuscation(victim: WeightStore, which: str, budget: int,
                             data: DatasetSplit, mask_params: MaskParams,
                             cfg: OptimizerConfig,
                             ft_cfg: FineTuneConfig | None = None
                             ) -> SingleLayerReport:
    """Concentrate the whole secrets budget in the first or last layer, then
    measure how well limited-data fine-tuning recovers it."""
    if which not in ("first", "last"):
        raise NNSplitterError("which must be 'first' or 'last'")
    lid = 0 if which == "first" else len(victim.layers) - 1
    eligible = eligible_offsets_by_layer(victim, mask_params)
    support = {l: np.empty(0, dtype=np.int64) for l in range(len(victim.layers))}
    support[lid] = eligible[lid]
    if len(support[lid]) == 0:
        raise NNSplitterError(f"no eligible weights in layer {lid}")
    mask = _mask_from_support(support, len(victim.layers))
    delta = optimize_delta(victim, mask,
                           replace(cfg, prune_threshold=0.0), data)
    if delta.l0 > budget:
        items = sorted(delta.entries.items(), key=lambda kv: -abs(kv[1]))
        delta = DeltaStore(dict(items[:budget]))
    checkpoint = delta.apply(victim)
    acc = evaluate_accuracy(checkpoint, data)
    ft = fine_tune_attack(checkpoint, ft_cfg or FineTuneConfig(fractions=(0.1,)),
                          data)
    return SingleLayerReport(which, budget, delta.l0, acc, ft)


@dataclass
class ScaleBiasReport:
    supported: bool
    params_changed: int
    obfuscated_accuracy: float
    fine_tuned: AttackResult | None


def scale_bias_obfuscation(victim: WeightStore, data: DatasetSplit,
                           ft_cfg: FineTuneConfig | None = None
                           ) -> ScaleBiasReport:
    """Set every normalization scale to 1 and bias to 0; report the drop and
    the limited-data fine-tune recovery."""
    module = victim.to_module()
    norm_stages = [
        i for i, m in enumerate(module.stages)
        if isinstance(m, (torch.nn.BatchNorm1d, torch.nn.BatchNorm2d,
                          torch.nn.LayerNorm))
    ]
    if not norm_stages:
        return ScaleBiasReport(False, 0,
                               evaluate_accuracy(victim, data), None)
    obf = victim.copy()
    changed = 0
    for si in norm_stages:
        wkey, bkey = f"stages.{si}.weight", f"stages.{si}.bias"
        if wkey in obf.extras:
            changed += obf.extras[wkey].size
            obf.extras[wkey][...] = 1.0
        if bkey in obf.extras:
            changed += obf.extras[bkey].size
            obf.extras[bkey][...] = 0.0
    acc = evaluate_accuracy(obf, data)
    ft = fine_tune_attack(obf, ft_cfg or FineTuneConfig(fractions=(0.1,)), data)
    return ScaleBiasReport(True, changed, acc, ft)
