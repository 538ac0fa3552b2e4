"""Recurrent filter-selection policy trained with REINFORCE.

One shared policy serves all agents; each agent gets its own start token and
autoregressively emits one filter index per layer (the chosen index's
embedding feeds the next recurrent step). The update rule is a plain gradient
step on L = -(1/m) sum_j sum_t log pi(a_t) * (R_j - b) with an exponential
moving average baseline b.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import DivergenceError, NNSplitterError

EMBED_DIM = 256
HIDDEN_DIM = 512


@dataclass
class ControllerConfig:
    n_agents: int = 3
    trials_per_episode: int = 4
    eta2: float = 1e-3
    gamma: float = 0.9
    max_episodes: int = 50
    temperature: float = 1.0
    embed_dim: int = EMBED_DIM
    hidden_dim: int = HIDDEN_DIM
    seed: int = 0
    convergence_window: int = 5
    convergence_tol: float = 0.002


@dataclass
class ActionSet:
    """Per-agent, per-layer filter choices with their sampling log-probs."""

    actions: list[list[int]]  # [agent][layer]
    log_probs: list[list[float]]

    def flat_actions(self) -> list[int]:
        return [a for agent in self.actions for a in agent]

    def total_log_prob(self) -> float:
        return sum(lp for agent in self.log_probs for lp in agent)

    def selected_filters(self, num_layers: int) -> list[set[int]]:
        sel: list[set[int]] = [set() for _ in range(num_layers)]
        for agent in self.actions:
            for layer, k in enumerate(agent):
                sel[layer].add(k)
        return sel


@dataclass
class EpisodeBatch:
    trials: list[tuple[ActionSet, float]]
    baseline: float

    def __post_init__(self):
        for _, reward in self.trials:
            if not -1.0 <= reward <= 0.0:
                raise NNSplitterError(f"reward {reward} outside [-1, 0]")


class ControllerPolicy(nn.Module):
    """Encoder (start-token embedding) + LSTM core + per-layer linear decoders
    whose output widths match each layer's filter count."""

    def __init__(self, layer_channels: list[int], max_agents: int = 8,
                 embed_dim: int = EMBED_DIM, hidden_dim: int = HIDDEN_DIM):
        super().__init__()
        if any(k < 1 for k in layer_channels):
            raise NNSplitterError("every layer needs at least one filter")
        self.layer_channels = list(layer_channels)
        self.start_embed = nn.Embedding(max_agents, embed_dim)
        self.action_embeds = nn.ModuleList(
            [nn.Embedding(k, embed_dim) for k in layer_channels]
        )
        self.cell = nn.LSTMCell(embed_dim, hidden_dim)
        self.decoders = nn.ModuleList(
            [nn.Linear(hidden_dim, k) for k in layer_channels]
        )

    def _zero_state(self, ref: torch.Tensor):
        h = torch.zeros(1, self.cell.hidden_size, dtype=ref.dtype)
        return h, h.clone()

    def rollout_log_probs(self, actions: list[list[int]],
                          temperature: float = 1.0) -> torch.Tensor:
        """Log-probabilities of the given action paths under the current
        parameters, differentiable. Shape: (agents, layers)."""
        rows = []
        for agent_idx, agent_actions in enumerate(actions):
            x = self.start_embed(torch.tensor([agent_idx]))
            h, c = self._zero_state(x)
            lps = []
            for layer, k in enumerate(agent_actions):
                h, c = self.cell(x, (h, c))
                logits = self.decoders[layer](h).squeeze(0) / temperature
                lps.append(torch.log_softmax(logits, dim=0)[k])
                x = self.action_embeds[layer](torch.tensor([k]))
            rows.append(torch.stack(lps))
        return torch.stack(rows)


def sample_actions(policy: ControllerPolicy, n: int, temperature: float = 1.0,
                   seed: int = 0, greedy: bool = False) -> ActionSet:
    """Autoregressively sample one filter per layer for each of n agents."""
    if n < 1:
        raise NNSplitterError("need at least one agent")
    if n > policy.start_embed.num_embeddings:
        raise NNSplitterError("more agents than start tokens")
    gen = torch.Generator().manual_seed(seed)
    actions: list[list[int]] = []
    log_probs: list[list[float]] = []
    with torch.no_grad():
        for agent_idx in range(n):
            x = policy.start_embed(torch.tensor([agent_idx]))
            h, c = policy._zero_state(x)
            acts, lps = [], []
            for layer in range(len(policy.layer_channels)):
                h, c = policy.cell(x, (h, c))
                logits = policy.decoders[layer](h).squeeze(0) / temperature
                logp = torch.log_softmax(logits, dim=0)
                if greedy:
                    k = int(logp.argmax())
                else:
                    k = int(torch.multinomial(logp.exp(), 1, generator=gen))
                acts.append(k)
                lps.append(min(float(logp[k]), 0.0))
                x = policy.action_embeds[layer](torch.tensor([k]))
            actions.append(acts)
            log_probs.append(lps)
    return ActionSet(actions, log_probs)


def reinforce_loss(policy: ControllerPolicy, batch: EpisodeBatch,
                   temperature: float = 1.0) -> torch.Tensor:
    terms = []
    for action_set, reward in batch.trials:
        logp = policy.rollout_log_probs(action_set.actions, temperature)
        terms.append(logp.sum() * (reward - batch.baseline))
    return -torch.stack(terms).sum() / len(batch.trials)


def reinforce_update(policy: ControllerPolicy, batch: EpisodeBatch,
                     learning_rate: float,
                     temperature: float = 1.0) -> float:
    """One plain gradient step on the REINFORCE loss; returns the loss."""
    if not batch.trials:
        raise NNSplitterError("empty episode batch")
    policy.zero_grad()
    loss = reinforce_loss(policy, batch, temperature)
    if not torch.isfinite(loss):
        raise DivergenceError(
            f"non-finite controller loss {loss.item()} "
            f"(rewards={[r for _, r in batch.trials]}, b={batch.baseline})"
        )
    loss.backward()
    with torch.no_grad():
        for p in policy.parameters():
            if p.grad is not None:
                p -= learning_rate * p.grad
    policy.zero_grad()
    return float(loss.detach())


class RewardBaseline:
    """Exponential moving average of per-episode mean rewards."""

    def __init__(self, gamma: float = 0.9):
        self.gamma = gamma
        self.value: float | None = None

    def update(self, rewards: list[float]) -> float:
        if not rewards:
            raise NNSplitterError("empty reward list")
        mean = sum(rewards) / len(rewards)
        if self.value is None:
            self.value = mean
        else:
            self.value = self.gamma * self.value + (1.0 - self.gamma) * mean
        return self.value
