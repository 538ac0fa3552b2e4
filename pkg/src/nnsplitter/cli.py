"""Operator entry point: train, obfuscate, eval, attack, report.

Every command resolves one run configuration (file + --set overrides), echoes
it into its output directory, and derives the run id from its content hash.
Exit codes: 0 ok, 2 config error, 3 secrets/checkpoint pairing error,
4 non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import attacks as atk
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import load_dataset
from .errors import ConfigError, NNSplitterError, PairingError
from .mask import MaskParams
from .models import evaluate_accuracy, train_victim
from .obfuscator import run_pipeline
from .report import (render_attack_sweep, render_layer_distribution,
                     render_reward_history, write_summary, write_table)
from .splitter import (deserialize_secrets, normal_world_inference,
                       secure_inference, serialize_secrets)

log = logging.getLogger("nnsplitter")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PAIRING = 3
EXIT_NONCONVERGENCE = 4

ATTACK_KINDS = ("clip", "finetune", "random-weights", "random-filters",
                "single-layer", "scale-bias")


def _load_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig.defaults(overrides)


def _run_dir(cfg: RunConfig, label: str) -> str:
    path = os.path.join(cfg.output_dir, f"{cfg.run_id}-{label}")
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "config.txt"), "w") as fh:
        fh.write(cfg.resolved_text())
    return path


def _dataset(cfg: RunConfig):
    return load_dataset(cfg.dataset, cfg.cache_dir, cfg.seed,
                        num_train=cfg._int("num_train"),
                        num_eval=cfg._int("num_eval"))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _run_dir(cfg, "train")
    data = _dataset(cfg)
    store, acc = train_victim(
        cfg.arch, data, cfg.seed, cfg._int("train_epochs"),
        cfg._float("train_lr"), cfg._int("train_batch_size"),
        cfg._float("floor_accuracy"),
        head_weight_decay=cfg._float("head_weight_decay"),
        preact_penalty=cfg._float("preact_penalty"),
        preact_shift=cfg._float("preact_shift"),
        shift_epochs=cfg._int("shift_epochs"),
    )
    store.provenance["run_id"] = cfg.run_id
    fp = save_checkpoint(store, os.path.join(out, "victim"))
    write_summary(os.path.join(out, "summary.txt"), [
        ("baseline_acc", f"{acc:.4f}"),
        ("params", str(store.num_weights)),
        ("fingerprint", f"{fp:016x}"),
        ("dataset", data.name),
        ("dataset_synthetic", str(data.synthetic).lower()),
    ])
    print(f"trained {cfg.arch}: baseline accuracy {acc:.4f} -> {out}")
    return EXIT_OK


def cmd_obfuscate(args) -> int:
    cfg = _load_config(args)
    out = _run_dir(cfg, "obfuscate")
    data = _dataset(cfg)
    victim = load_checkpoint(args.checkpoint)
    eps = cfg.epsilon_override
    mask_params = None
    if eps is not None:
        from .mask import compute_c, profile_weights
        mask_params = MaskParams(compute_c(profile_weights(victim)), eps)
    with open(os.path.join(out, "episodes.log"), "w") as log_fh:
        result = run_pipeline(
            victim, data, cfg.optimizer_config(), cfg.controller_config(),
            mask_params=mask_params, delta_acc=cfg.delta_acc,
            run_id=cfg.run_id, log_fh=log_fh,
        )
    save_checkpoint(result.obfuscated, os.path.join(out, "obfuscated"))
    with open(os.path.join(out, "secrets.bin"), "wb") as fh:
        fh.write(serialize_secrets(result.secrets))
    write_summary(os.path.join(out, "summary.txt"),
                  result.report.summary_rows())
    render_reward_history(result.report, os.path.join(out, "reward_history"))
    render_layer_distribution(result.report,
                              os.path.join(out, "layer_distribution"))
    r = result.report
    print(f"obfuscated: acc {r.baseline_accuracy:.4f} -> "
          f"{r.obfuscated_accuracy:.4f} with {r.num_obfuscated} deltas "
          f"({100 * r.ratio:.4f}%), restored {r.restored_accuracy:.4f}")
    if not r.converged:
        print("warning: reward did not converge within max_episodes",
              file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    data = _dataset(cfg)
    checkpoint = load_checkpoint(args.checkpoint)
    if args.secrets:
        with open(args.secrets, "rb") as fh:
            secrets = deserialize_secrets(fh.read())
        logits = secure_inference(checkpoint, secrets, data.eval_inputs)
        label = "secured"
    else:
        logits = normal_world_inference(checkpoint, data.eval_inputs)
        label = "normal-world"
    acc = float((logits.argmax(axis=1) == data.eval_labels).mean())
    print(f"{label} accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _load_config(args)
    out = _run_dir(cfg, f"attack-{args.kind}")
    data = _dataset(cfg)
    checkpoint = load_checkpoint(args.checkpoint)

    if args.kind == "clip":
        result = atk.norm_clip_attack(checkpoint, cfg.clip_config(), data)
        render_attack_sweep(result, os.path.join(out, "clip"), "t")
        print(f"norm clip best recovered: {result.best_recovered:.4f}")
    elif args.kind == "finetune":
        result = atk.fine_tune_attack(checkpoint, cfg.fine_tune_config(), data)
        render_attack_sweep(result, os.path.join(out, "finetune"),
                            "data_fraction")
        print(f"fine-tune best recovered: {result.best_recovered:.4f}")
    elif args.kind == "random-weights":
        rep = atk.random_weight_baseline(checkpoint, args.count,
                                         cfg.optimizer_config(), data)
        write_summary(os.path.join(out, "summary.txt"), [
            ("count", str(rep.count)),
            ("accuracy_mean", f"{rep.mean:.4f}"),
            ("accuracy_std", f"{rep.std:.4f}"),
            ("secrets_count", str(rep.secrets_count)),
        ])
        print(f"random weights ({rep.count}): {rep.mean:.4f} +/- {rep.std:.4f}")
    elif args.kind == "random-filters":
        params = MaskParams(args.mask_c, args.mask_epsilon)
        rep = atk.random_filter_ablation(
            checkpoint, params, data, cfg.optimizer_config(),
            floor=args.floor, reference_count=args.reference_count,
        )
        ratio = rep.increment_ratio
        write_summary(os.path.join(out, "summary.txt"), [
            ("floor", f"{rep.floor:.4f}"),
            ("reference_count", str(rep.reference_count)),
            ("random_count", str(rep.random_count)),
            ("reachable", str(rep.reachable).lower()),
            ("increment_ratio", "n/a" if ratio is None else f"{ratio:+.4f}"),
        ])
        print(f"random filters need {rep.random_count} deltas "
              f"(increment {ratio if ratio is None else f'{100 * ratio:+.2f}%'})")
    elif args.kind == "single-layer":
        params = MaskParams(args.mask_c, args.mask_epsilon)
        rep = atk.single_layer_obfuscation(
            checkpoint, args.layer, args.budget, data, params,
            cfg.optimizer_config(), cfg.fine_tune_config(),
        )
        write_summary(os.path.join(out, "summary.txt"), [
            ("layer", rep.layer),
            ("budget", str(rep.budget)),
            ("used", str(rep.used)),
            ("obfuscated_acc", f"{rep.obfuscated_accuracy:.4f}"),
            ("fine_tuned_acc", f"{rep.fine_tuned.best_recovered:.4f}"),
        ])
        render_attack_sweep(rep.fine_tuned,
                            os.path.join(out, "finetune"), "data_fraction")
        print(f"single-layer {rep.layer}: obfuscated "
              f"{rep.obfuscated_accuracy:.4f}, fine-tuned "
              f"{rep.fine_tuned.best_recovered:.4f}")
    elif args.kind == "scale-bias":
        rep = atk.scale_bias_obfuscation(checkpoint, data,
                                         cfg.fine_tune_config())
        if not rep.supported:
            write_summary(os.path.join(out, "summary.txt"),
                          [("supported", "false")])
            print("model has no normalization layers; nothing to obfuscate")
            return EXIT_OK
        write_summary(os.path.join(out, "summary.txt"), [
            ("supported", "true"),
            ("params_changed", str(rep.params_changed)),
            ("obfuscated_acc", f"{rep.obfuscated_accuracy:.4f}"),
            ("fine_tuned_acc", f"{rep.fine_tuned.best_recovered:.4f}"),
        ])
        print(f"scale/bias: obfuscated {rep.obfuscated_accuracy:.4f}, "
              f"fine-tuned {rep.fine_tuned.best_recovered:.4f}")
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown attack kind {args.kind}")
    return EXIT_OK


def cmd_report(args) -> int:
    """Re-render figures from the delimited outputs of an obfuscate run."""
    import csv

    run = args.run
    episodes_path = os.path.join(run, "reward_history.csv")
    if not os.path.exists(episodes_path):
        raise NNSplitterError(f"no reward_history.csv under {run}")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_ep: dict[int, list[float]] = {}
    baselines: dict[int, float] = {}
    with open(episodes_path) as fh:
        for row in csv.DictReader(fh):
            ep = int(row["episode"])
            by_ep.setdefault(ep, []).append(float(row["reward"]))
            baselines[ep] = float(row["baseline"])
    eps = sorted(by_ep)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(eps, [max(by_ep[e]) for e in eps], label="best trial reward")
    ax.plot(eps, [baselines[e] for e in eps], "--", label="moving baseline")
    ax.set_xlabel("episode")
    ax.set_ylabel("reward (-accuracy)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(run, "reward_history.png"), dpi=120)
    plt.close(fig)
    print(f"re-rendered figures under {run}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nnsplitter",
        description="Split a trained CNN into an obfuscated checkpoint and "
                    "compact restoration secrets; evaluate attacks on it.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration file (key = value)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")

    p = sub.add_parser("train", help="train the victim model")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("obfuscate", help="run the obfuscation pipeline")
    common(p)
    p.add_argument("--checkpoint", required=True,
                   help="victim checkpoint directory")
    p.set_defaults(func=cmd_obfuscate)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--secrets", help="secrets file for secured inference")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="run an attack against a checkpoint")
    common(p)
    p.add_argument("kind", choices=ATTACK_KINDS)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=0,
                   help="matched delta count (random-weights)")
    p.add_argument("--floor", type=float, default=0.12,
                   help="accuracy floor to match (random-filters)")
    p.add_argument("--reference-count", type=int, default=1,
                   help="controller run's delta count (random-filters)")
    p.add_argument("--mask-c", type=float, default=0.0)
    p.add_argument("--mask-epsilon", type=float, default=0.0)
    p.add_argument("--layer", choices=("first", "last"), default="last")
    p.add_argument("--budget", type=int, default=0)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="re-render figures for a finished run")
    p.add_argument("--run", required=True, help="run directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("NNSPLITTER_LOGLEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PairingError as exc:
        print(f"pairing error: {exc}", file=sys.stderr)
        return EXIT_PAIRING
    except NNSplitterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
