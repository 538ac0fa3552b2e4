"""Masked sparse-delta optimization and the full offline obfuscation loop.

The sparsity term is optimized through an l1 surrogate plus hard pruning at a
threshold; the stealthiness box constraint is enforced exactly by projecting
the perturbed weights after every optimizer step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .controller import (ActionSet, ControllerConfig, ControllerPolicy,
                         EpisodeBatch, RewardBaseline, reinforce_update,
                         sample_actions)
from .data import DatasetSplit
from .errors import (DivergenceError, EmptySupportError, NNSplitterError)
from .mask import (MaskParams, calibrate_epsilon, compute_c,
                   eligible_offsets_by_layer, profile_weights)
from .models import WeightStore, evaluate_accuracy
from .splitter import ModelSecrets, restore_weights, split_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    alpha: float = 0.95
    beta: float = 0.95
    lam: float = 1e-3
    eta1: float = 0.01
    inner_epochs: int = 2
    prune_threshold: float | None = None  # None -> adaptive sort-and-scan
    prune_max_acc_rise: float = 0.005
    batch_size: int = 128
    max_batches_per_epoch: int | None = 12
    # plain SGD keeps the ascent proportional to the true gradient, so the l1
    # surrogate retains its meaning; adaptive per-coordinate steps saturate
    # every supported weight at the projection bound regardless of lambda
    optimizer: str = "sgd"  # "sgd" | "adam"
    # unit-deactivation margins (pre-activation head-room against the drift of
    # refreshed normalization statistics; see deactivate_units)
    deactivation_margin: float = 2.5
    idle_margin: float = 0.5
    active_z: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1 or not 0 < self.beta <= 1:
            raise NNSplitterError("alpha and beta must be in (0, 1]")
        if self.lam < 0:
            raise NNSplitterError("lambda must be >= 0")
        if self.prune_threshold is not None and self.prune_threshold < 0:
            raise NNSplitterError("prune threshold must be >= 0")


@dataclass
class FilterMask:
    """Eligibility band intersected with the selected filters."""

    params: MaskParams
    selected: list[set[int]]  # per layer
    support_by_layer: dict[int, np.ndarray]  # layer_id -> sorted flat offsets

    @property
    def total_support(self) -> int:
        return sum(len(v) for v in self.support_by_layer.values())

    def support_set(self) -> set[tuple[int, int]]:
        return {
            (lid, int(off))
            for lid, offs in self.support_by_layer.items()
            for off in offs
        }


@dataclass
class DeltaStore:
    """Sparse weight changes restricted to the mask support.

    ``pinned`` marks entries that realize a unit deactivation: removing any of
    them erodes the deactivation margin without moving the accuracy, so the
    accuracy-driven pruning scan must not touch them.
    """

    entries: dict[tuple[int, int], float] = field(default_factory=dict)
    pinned: frozenset = frozenset()

    def __post_init__(self):
        for key, v in self.entries.items():
            if not np.isfinite(v):
                raise NNSplitterError(f"non-finite delta at {key}")

    @property
    def l0(self) -> int:
        return len(self.entries)

    def per_layer_counts(self, num_layers: int) -> list[int]:
        counts = [0] * num_layers
        for (lid, _), _v in self.entries.items():
            counts[lid] += 1
        return counts

    def apply(self, model: WeightStore) -> WeightStore:
        out = model.copy()
        for (lid, off), v in self.entries.items():
            flat = out.flat(lid)
            if not 0 <= off < flat.size:
                raise NNSplitterError(f"delta index ({lid},{off}) out of bounds")
            flat[off] += np.float32(v)
        return out

    def restrict(self, keep: set[tuple[int, int]]) -> "DeltaStore":
        return DeltaStore({k: v for k, v in self.entries.items() if k in keep},
                          pinned=self.pinned & frozenset(keep))


@dataclass
class ObfuscationReport:
    baseline_accuracy: float
    obfuscated_accuracy: float
    restored_accuracy: float
    num_obfuscated: int
    total_weights: int
    per_layer_counts: list[int]
    mask_c: float
    mask_epsilon: float
    reward_history: list[list[float]]
    baseline_history: list[float]
    loss_history: list[float]
    converged: bool
    episodes_run: int
    best_selection: list[list[int]]
    config_echo: dict[str, str] = field(default_factory=dict)
    dataset_synthetic: bool = False

    @property
    def ratio(self) -> float:
        return self.num_obfuscated / self.total_weights

    def summary_rows(self) -> list[tuple[str, str]]:
        return [
            ("baseline_acc", f"{self.baseline_accuracy:.4f}"),
            ("params", str(self.total_weights)),
            ("obfuscated_num", str(self.num_obfuscated)),
            ("obfuscated_ratio", f"{self.ratio:.6f}"),
            ("obfuscated_acc", f"{self.obfuscated_accuracy:.4f}"),
            ("restored_acc", f"{self.restored_accuracy:.4f}"),
            ("converged", str(self.converged).lower()),
            ("episodes", str(self.episodes_run)),
            ("mask_c", f"{self.mask_c:.6g}"),
            ("mask_epsilon", f"{self.mask_epsilon:.6g}"),
            ("dataset_synthetic", str(self.dataset_synthetic).lower()),
        ]


def build_mask(model: WeightStore, params: MaskParams, selection: ActionSet,
               eligible: dict[int, np.ndarray] | None = None) -> FilterMask:
    """Intersect the eligibility band with the selected filters' flat ranges."""
    if eligible is None:
        eligible = eligible_offsets_by_layer(model, params)
    selected = selection.selected_filters(len(model.layers))
    support: dict[int, np.ndarray] = {}
    for spec in model.layers:
        for k in selected[spec.layer_id]:
            if not 0 <= k < spec.out_channels:
                raise NNSplitterError(
                    f"filter {k} out of range for layer {spec.layer_id}"
                )
        offs = eligible[spec.layer_id]
        if len(offs) == 0 or not selected[spec.layer_id]:
            support[spec.layer_id] = np.empty(0, dtype=np.int64)
            continue
        s = spec.per_filter_size
        keep = np.isin(offs // s, sorted(selected[spec.layer_id]))
        support[spec.layer_id] = offs[keep]
    fm = FilterMask(params, selected, support)
    if fm.total_support == 0:
        raise EmptySupportError("mask support is empty: increase epsilon or reselect filters")
    return fm


def _forward_with_deltas(module, x, delta_map):
    for si, stage in enumerate(module.stages):
        if si in delta_map:
            d, m = delta_map[si]
            w_eff = stage.weight + d * m
            if isinstance(stage, nn.Conv2d):
                x = F.conv2d(x, w_eff, stage.bias, stage.stride, stage.padding,
                             stage.dilation, stage.groups)
            else:
                x = F.linear(x, w_eff, stage.bias)
        else:
            x = stage(x)
    return x


def prune_delta(model: WeightStore, delta: DeltaStore, data: DatasetSplit,
                threshold: float | None,
                max_acc_rise: float = 0.005) -> DeltaStore:
    """Hard-prune small entries to exact zero.

    With an explicit threshold, entries below it are dropped. Otherwise the
    threshold is found by sort-and-scan: keep the fewest largest-magnitude
    entries whose obfuscated accuracy stays within ``max_acc_rise`` of the
    unpruned one.
    """
    if delta.l0 == 0:
        return delta
    kept = {k: delta.entries[k] for k in delta.pinned if k in delta.entries}
    rest = {k: v for k, v in delta.entries.items() if k not in delta.pinned}
    pinned = frozenset(kept)
    if threshold is not None:
        kept.update({k: v for k, v in rest.items() if abs(v) >= threshold})
        return DeltaStore(kept, pinned=pinned)
    if not rest:
        return DeltaStore(kept, pinned=pinned)
    items = sorted(rest.items(), key=lambda kv: -abs(kv[1]))
    acc_full = evaluate_accuracy(delta.apply(model), data)

    def acc_top(k: int) -> float:
        cand = dict(kept)
        cand.update(items[:k])
        return evaluate_accuracy(DeltaStore(cand).apply(model), data)

    lo, hi = 0, len(items)  # invariant: hi always acceptable
    while lo < hi:
        mid = (lo + hi) // 2
        if acc_top(mid) <= acc_full + max_acc_rise:
            hi = mid
        else:
            lo = mid + 1
    kept.update(items[:hi])
    return DeltaStore(kept, pinned=pinned)


def _hidden_fc_layers(model: WeightStore) -> list[int]:
    """Fully connected layers before the output layer (rows feed a ReLU)."""
    return [spec.layer_id for spec in model.layers
            if spec.kind == "fc" and spec.layer_id != len(model.layers) - 1]


def _stage_inputs(module, stage_index: int, inputs: np.ndarray,
                  batch_size: int = 256) -> torch.Tensor:
    """Eval-mode activations feeding ``stages[stage_index]``, flattened."""
    module.eval()
    outs = []
    with torch.no_grad():
        x = torch.from_numpy(inputs)
        for start in range(0, len(x), batch_size):
            h = x[start:start + batch_size]
            for stage in module.stages[:stage_index]:
                h = stage(h)
            outs.append(h.reshape(len(h), -1))
    return torch.cat(outs)


def _train_cross_entropy(model: WeightStore, data: DatasetSplit,
                         limit: int = 2048) -> float:
    from .models import forward_logits
    logits = torch.from_numpy(forward_logits(model, data.train_inputs[:limit]))
    labels = torch.from_numpy(data.train_labels[:limit])
    return float(F.cross_entropy(logits, labels))


def _boxed_delta(w: float, target: float, lo: float, hi: float) -> float:
    """Delta toward ``target`` whose float32 application stays in [lo, hi]
    (w + (target - w) can round one ulp past the bound)."""
    d = np.float32(target - w)
    applied = np.float32(np.float32(w) + d)  # same arithmetic as apply()
    while applied < lo or applied > hi:
        d = np.nextafter(d, np.float32(0.0))
        applied = np.float32(np.float32(w) + d)
    return float(d)


def deactivate_units(model: WeightStore, mask: FilterMask,
                     cfg: OptimizerConfig, data: DatasetSplit,
                     cache: dict | None = None) -> DeltaStore:
    """Close the selected hidden fully connected units exactly.

    Eligible input weights of each selected unit are greedily driven to the
    projection bound (largest pre-activation reduction first) until the unit's
    pre-activation stays below a margin on the entire training set. A closed
    unit emits zero everywhere, so it passes no gradient to data-driven
    repair; the margin absorbs the drift of refreshed normalization
    statistics. The returned entries are pinned: removing any of them erodes
    the margin without moving the accuracy, which the pruning scan cannot see.
    """
    module = model.to_module()
    stage_of_layer = module.obfuscatable_stage_indexes()
    lo = cfg.alpha * model.global_min
    hi = cfg.beta * model.global_max
    entries: dict[tuple[int, int], float] = {}
    for lid in _hidden_fc_layers(model):
        selected = mask.selected[lid] if lid < len(mask.selected) else set()
        offs = mask.support_by_layer.get(lid)
        if not selected or offs is None or len(offs) == 0:
            continue
        si = stage_of_layer[lid]
        if entries:
            # an earlier hidden layer was already modified: recompute features
            feats = _stage_inputs(DeltaStore(dict(entries)).apply(model).to_module(),
                                  si, data.train_inputs)
        elif cache is not None and ("feats", lid) in cache:
            feats = cache[("feats", lid)]
        else:
            feats = _stage_inputs(module, si, data.train_inputs)
            if cache is not None:
                cache[("feats", lid)] = feats
        spec = model.spec(lid)
        s = spec.per_filter_size
        weights = model.values[lid].reshape(spec.out_channels, s)
        bias = model.extras.get(f"stages.{si}.bias")
        for j in sorted(selected):
            row = offs[(offs // s) == j] % s
            if len(row) == 0:
                continue
            wj = torch.from_numpy(weights[j].astype(np.float64))
            z = feats.double() @ wj + (0.0 if bias is None else float(bias[j]))
            margin = (cfg.deactivation_margin
                      if float(z.max()) > cfg.active_z else cfg.idle_margin)
            em = torch.zeros(s, dtype=torch.bool)
            em[torch.from_numpy(np.asarray(row))] = True
            while float(z.max()) > -margin and bool(em.any()):
                frow = feats[int(z.argmax())].double()
                gain_lo = (wj - lo) * frow
                gain_hi = (wj - hi) * frow
                gain = torch.where(em, torch.maximum(gain_lo, gain_hi),
                                   torch.full_like(gain_lo, -np.inf))
                i = int(gain.argmax())
                if float(gain[i]) <= 1e-9:
                    break  # nothing eligible can push this peak down further
                target = lo if float(gain_lo[i]) >= float(gain_hi[i]) else hi
                d = _boxed_delta(float(wj[i]), target, lo, hi)
                z += feats[:, i].double() * d
                entries[(lid, j * s + i)] = d
                wj[i] = wj[i] + d
                em[i] = False
    return DeltaStore(dict(entries), pinned=frozenset(entries))


def _head_inactive(base: WeightStore, data: DatasetSplit,
                   cache: dict | None) -> bool:
    """True when some hidden fc layer emits zero on the whole training set —
    then the output is input-independent and the task gradient vanishes
    identically for every weight."""
    module = base.to_module()
    stage_of_layer = module.obfuscatable_stage_indexes()
    for lid in _hidden_fc_layers(base):
        si = stage_of_layer[lid]
        if cache is not None and ("feats", lid) in cache:
            feats = cache[("feats", lid)]
        else:
            feats = _stage_inputs(module, si, data.train_inputs)
        spec = base.spec(lid)
        weights = torch.from_numpy(
            base.values[lid].reshape(spec.out_channels, spec.per_filter_size))
        z = feats @ weights.T
        bias = base.extras.get(f"stages.{si}.bias")
        if bias is not None:
            z = z + torch.from_numpy(bias)
        if float(z.max()) <= 0.0:
            return True
    return False


def _ascent_entries(model: WeightStore, base: WeightStore,
                    support_by_layer: dict[int, np.ndarray],
                    cfg: OptimizerConfig,
                    data: DatasetSplit) -> dict[tuple[int, int], float]:
    """Gradient steps on the masked deltas: maximize the task loss with an l1
    sparsity surrogate, projecting every perturbed weight into
    [alpha*min(W), beta*max(W)] of the victim after each step."""
    module = base.to_module()
    module.requires_grad_(False)
    module.eval()
    stage_of_layer = module.obfuscatable_stage_indexes()
    lo = cfg.alpha * model.global_min
    hi = cfg.beta * model.global_max

    delta_map: dict[int, tuple[torch.Tensor, torch.Tensor]] = {}
    layer_of_stage: dict[int, int] = {}
    for lid, offs in support_by_layer.items():
        if len(offs) == 0:
            continue
        shape = model.spec(lid).weight_shape
        m = torch.zeros(int(np.prod(shape)), dtype=torch.bool)
        m[torch.from_numpy(np.asarray(offs))] = True
        m = m.reshape(shape)
        d = torch.zeros(shape, requires_grad=True)
        si = stage_of_layer[lid]
        delta_map[si] = (d, m)
        layer_of_stage[si] = lid
    if not delta_map:
        return {}

    params = [d for d, _ in delta_map.values()]
    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=cfg.eta1)
    elif cfg.optimizer == "sgd":
        opt = torch.optim.SGD(params, lr=cfg.eta1)
    else:
        raise NNSplitterError(f"unknown optimizer '{cfg.optimizer}'")

    x_all = torch.from_numpy(data.train_inputs)
    y_all = torch.from_numpy(data.train_labels)
    gen = torch.Generator().manual_seed(cfg.seed)
    loss_fn = nn.CrossEntropyLoss()

    for _ in range(cfg.inner_epochs):
        order = torch.randperm(len(x_all), generator=gen)
        batches = range(0, len(x_all), cfg.batch_size)
        for bi, start in enumerate(batches):
            if (cfg.max_batches_per_epoch is not None
                    and bi >= cfg.max_batches_per_epoch):
                break
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            logits = _forward_with_deltas(module, x_all[idx], delta_map)
            l1 = sum((d * m).abs().sum() for d, m in delta_map.values())
            loss = -loss_fn(logits, y_all[idx]) + cfg.lam * l1
            if not torch.isfinite(loss):
                raise DivergenceError(f"delta optimization diverged: {loss.item()}")
            loss.backward()
            opt.step()
            with torch.no_grad():
                for si, (d, m) in delta_map.items():
                    w0 = module.stages[si].weight
                    d.copy_((torch.clamp(w0 + d * m, lo, hi) - w0) * m)
                    assert not bool((d * ~m).any()), "delta escaped mask support"

    entries: dict[tuple[int, int], float] = {}
    for si, (d, m) in delta_map.items():
        lid = layer_of_stage[si]
        flat = (d * m).detach().reshape(-1).numpy()
        for off in np.flatnonzero(flat):
            entries[(lid, int(off))] = float(flat[off])
    return entries


def optimize_delta(model: WeightStore, mask: FilterMask, cfg: OptimizerConfig,
                   data: DatasetSplit, *, cache: dict | None = None
                   ) -> DeltaStore:
    """Optimize the masked sparse delta under the obfuscation objective
    (maximize task loss, l0 penalty, box constraint).

    Two phases. Selected hidden fc units are first closed exactly
    (:func:`deactivate_units`); the candidate is kept only when its loss gain
    pays for its l0 cost under the objective (so a very large lambda yields an
    empty delta). The remaining support is then optimized by projected
    gradient ascent on the task loss with the l1 surrogate — skipped entirely
    when the closed head already makes the output input-independent, because
    the task gradient is identically zero there. Non-pinned entries are
    hard-pruned at the end.
    """
    if mask.total_support == 0:
        raise EmptySupportError("cannot optimize an empty support")
    kill = deactivate_units(model, mask, cfg, data, cache=cache)
    if kill.l0:
        if cache is not None and "train_ce" in cache:
            ce_base = cache["train_ce"]
        else:
            ce_base = _train_cross_entropy(model, data)
            if cache is not None:
                cache["train_ce"] = ce_base
        ce_kill = _train_cross_entropy(kill.apply(model), data)
        if ce_kill - ce_base < cfg.lam * kill.l0:
            kill = DeltaStore()

    base = kill.apply(model) if kill.l0 else model
    support = dict(mask.support_by_layer)
    if kill.l0:
        closed = {}
        for (lid, off) in kill.entries:
            closed.setdefault(lid, set()).add(off // model.spec(lid).per_filter_size)
        for lid, rows in closed.items():
            offs = support.get(lid)
            if offs is not None and len(offs):
                s = model.spec(lid).per_filter_size
                support[lid] = offs[~np.isin(offs // s, sorted(rows))]

    entries: dict[tuple[int, int], float] = dict(kill.entries)
    if not (kill.l0 and _head_inactive(base, data, cache)):
        entries.update(_ascent_entries(model, base, support, cfg, data))
    delta = DeltaStore(entries, pinned=kill.pinned)
    return prune_delta(model, delta, data, cfg.prune_threshold,
                       cfg.prune_max_acc_rise)


def evaluate_reward(model: WeightStore, delta: DeltaStore,
                    data: DatasetSplit) -> float:
    """Negative top-1 eval accuracy of the perturbed model."""
    return -evaluate_accuracy(delta.apply(model), data)


@dataclass
class PipelineResult:
    obfuscated: WeightStore
    secrets: ModelSecrets
    report: ObfuscationReport
    delta: DeltaStore
    mask_params: MaskParams


def run_pipeline(
    model: WeightStore,
    data: DatasetSplit,
    ocfg: OptimizerConfig,
    ccfg: ControllerConfig,
    mask_params: MaskParams | None = None,
    delta_acc: float = 0.001,
    run_id: str = "",
    log_fh=None,
) -> PipelineResult:
    """Full offline obfuscation: mask derivation, episodes of controller
    trials with inner delta optimization, REINFORCE updates until the reward
    converges, then split into checkpoint + secrets from the best selection.
    """
    baseline_acc = evaluate_accuracy(model, data)
    if mask_params is None:
        profile = profile_weights(model)
        c = compute_c(profile)
        eps = calibrate_epsilon(model, c, data, delta_acc=delta_acc)
        mask_params = MaskParams(c, eps)
    eligible = eligible_offsets_by_layer(model, mask_params)
    if sum(len(v) for v in eligible.values()) == 0:
        raise EmptySupportError("no weights fall inside the mask band")

    torch.manual_seed(ccfg.seed)
    policy = ControllerPolicy(
        [spec.out_channels for spec in model.layers],
        max_agents=max(ccfg.n_agents, 1),
        embed_dim=ccfg.embed_dim, hidden_dim=ccfg.hidden_dim,
    )
    tracker = RewardBaseline(ccfg.gamma)
    trial_cfg = replace(ocfg, prune_threshold=0.0)

    best_reward = -float("inf")
    best_action_set: ActionSet | None = None
    best_delta: DeltaStore | None = None
    reward_history: list[list[float]] = []
    baseline_history: list[float] = []
    loss_history: list[float] = []
    stall = 0
    converged = False
    episodes_run = 0
    cache: dict = {}  # per-run feature/loss cache shared across trials

    def run_trial(action_set: ActionSet, seed: int):
        try:
            fmask = build_mask(model, mask_params, action_set, eligible)
        except EmptySupportError:
            # worst-case reward discourages selections with no usable support
            return DeltaStore(), -baseline_acc
        delta = optimize_delta(model, fmask, replace(trial_cfg, seed=seed),
                               data, cache=cache)
        return delta, evaluate_reward(model, delta, data)

    for episode in range(ccfg.max_episodes):
        episodes_run = episode + 1
        prev_best = best_reward
        trials: list[tuple[ActionSet, float]] = []
        rewards: list[float] = []
        for j in range(ccfg.trials_per_episode):
            seed = ccfg.seed * 100003 + episode * 1009 + j
            action_set = sample_actions(policy, ccfg.n_agents,
                                        ccfg.temperature, seed=seed)
            delta, reward = run_trial(action_set, seed)
            trials.append((action_set, reward))
            rewards.append(reward)
            if reward > best_reward or (reward == best_reward
                                        and best_delta is not None
                                        and delta.l0 < best_delta.l0):
                best_reward, best_action_set, best_delta = reward, action_set, delta
        b = tracker.update(rewards)
        loss = reinforce_update(policy, EpisodeBatch(trials, b), ccfg.eta2,
                                ccfg.temperature)
        reward_history.append(rewards)
        baseline_history.append(b)
        loss_history.append(loss)
        if log_fh is not None:
            for j, r in enumerate(rewards):
                log_fh.write(f"{episode}\t{j}\t{r:.6f}\t{loss:.6f}\t{b:.6f}\n")
            log_fh.flush()
        log.info("episode %d: rewards %s, b=%.4f, loss=%.4f", episode,
                 [f"{r:.3f}" for r in rewards], b, loss)
        if best_reward - prev_best < ccfg.convergence_tol:
            stall += 1
        else:
            stall = 0
        if stall >= ccfg.convergence_window:
            converged = True
            break

    if best_action_set is None:
        raise NNSplitterError("no trials were run")

    # deployed selection: greedy decode vs. the best sampled trial, pruned
    # with the final (possibly adaptive) threshold, lower accuracy wins
    candidates: list[tuple[float, DeltaStore, ActionSet]] = []
    greedy_set = sample_actions(policy, ccfg.n_agents, greedy=True)
    greedy_delta, _ = run_trial(greedy_set, ccfg.seed * 100003 + 999331)
    for action_set, delta in ((best_action_set, best_delta),
                              (greedy_set, greedy_delta)):
        pruned = prune_delta(model, delta, data, ocfg.prune_threshold,
                             ocfg.prune_max_acc_rise)
        acc = evaluate_accuracy(pruned.apply(model), data) if pruned.l0 else baseline_acc
        candidates.append((acc, pruned, action_set))
    candidates.sort(key=lambda t: (t[0], t[1].l0))
    final_acc, final_delta, final_set = candidates[0]

    # local refinement of the winning selection: with several agents, distinct
    # picks in a hidden fc layer can be redundant (each closed unit costs many
    # delta entries); try collapsing each pick onto another selected one and
    # keep the collapse when (accuracy, entry count) does not get worse
    hidden_fc = set(_hidden_fc_layers(model))
    improved = True
    while improved and hidden_fc:
        improved = False
        sel = final_set.selected_filters(len(model.layers))
        for lid in sorted(hidden_fc):
            for unit in sorted(sel[lid]):
                others = sorted(sel[lid] - {unit})
                if not others:
                    continue
                actions = [list(agent) for agent in final_set.actions]
                for agent in actions:
                    if agent[lid] == unit:
                        agent[lid] = others[0]
                cand_set = ActionSet(actions, final_set.log_probs)
                delta, _ = run_trial(cand_set, ccfg.seed * 100003 + 999331)
                pruned = prune_delta(model, delta, data, ocfg.prune_threshold,
                                     ocfg.prune_max_acc_rise)
                acc = (evaluate_accuracy(pruned.apply(model), data)
                       if pruned.l0 else baseline_acc)
                if (acc, pruned.l0) < (final_acc, final_delta.l0):
                    final_acc, final_delta, final_set = acc, pruned, cand_set
                    improved = True
                    break
            if improved:
                break

    obfuscated, secrets = split_model(model, final_delta, mask_params.c,
                                      run_id=run_id)
    restored_acc = evaluate_accuracy(restore_weights(obfuscated, secrets), data)
    report = ObfuscationReport(
        baseline_accuracy=baseline_acc,
        obfuscated_accuracy=final_acc,
        restored_accuracy=restored_acc,
        num_obfuscated=final_delta.l0,
        total_weights=model.num_weights,
        per_layer_counts=final_delta.per_layer_counts(len(model.layers)),
        mask_c=mask_params.c,
        mask_epsilon=mask_params.epsilon,
        reward_history=reward_history,
        baseline_history=baseline_history,
        loss_history=loss_history,
        converged=converged,
        episodes_run=episodes_run,
        best_selection=[sorted(s) for s in final_set.selected_filters(len(model.layers))],
        dataset_synthetic=data.synthetic,
    )
    return PipelineResult(obfuscated, secrets, report, final_delta, mask_params)
