"""Report rendering: delimited tables plus matplotlib figures written next to
each other in the run directory."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .attacks import AttackResult  # noqa: E402
from .obfuscator import ObfuscationReport  # noqa: E402


def write_table(path: str, header: list[str], rows: list[tuple]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_summary(path: str, rows: list[tuple[str, str]]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        for key, value in rows:
            fh.write(f"{key}: {value}\n")


def render_reward_history(report: ObfuscationReport, out_base: str) -> None:
    rows = []
    for ep, rewards in enumerate(report.reward_history):
        for trial, r in enumerate(rewards):
            rows.append((ep, trial, f"{r:.6f}",
                         f"{report.baseline_history[ep]:.6f}",
                         f"{report.loss_history[ep]:.6f}"))
    write_table(out_base + ".csv",
                ["episode", "trial", "reward", "baseline", "loss"], rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    episodes = range(len(report.reward_history))
    best = [max(r) for r in report.reward_history]
    mean = [sum(r) / len(r) for r in report.reward_history]
    ax.plot(episodes, best, label="best trial reward")
    ax.plot(episodes, mean, label="mean trial reward", alpha=0.7)
    ax.plot(episodes, report.baseline_history, "--", label="moving baseline")
    ax.set_xlabel("episode")
    ax.set_ylabel("reward (-accuracy)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_base + ".png", dpi=120)
    plt.close(fig)


def render_layer_distribution(report: ObfuscationReport, out_base: str) -> None:
    rows = [(lid, n) for lid, n in enumerate(report.per_layer_counts)]
    write_table(out_base + ".csv", ["layer_id", "obfuscated_weights"], rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([r[0] for r in rows], [r[1] for r in rows])
    ax.set_xlabel("layer")
    ax.set_ylabel("obfuscated weights")
    fig.tight_layout()
    fig.savefig(out_base + ".png", dpi=120)
    plt.close(fig)


def render_attack_sweep(result: AttackResult, out_base: str,
                        xlabel: str, baseline: float | None = None) -> None:
    rows = [(f"{v:g}", f"{m:.6f}", f"{s:.6f}") for v, m, s in result.table()]
    write_table(out_base + ".csv", [xlabel, "accuracy_mean", "accuracy_std"],
                rows)

    xs = [s.value for s in result.settings]
    means = [s.mean for s in result.settings]
    stds = [s.std for s in result.settings]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, means, marker="o", label=result.name)
    if any(stds):
        lo = [m - s for m, s in zip(means, stds)]
        hi = [m + s for m, s in zip(means, stds)]
        ax.fill_between(xs, lo, hi, alpha=0.25)
    if baseline is not None:
        ax.axhline(baseline, linestyle=":", color="gray", label="baseline")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("top-1 accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_base + ".png", dpi=120)
    plt.close(fig)
