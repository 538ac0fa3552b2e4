"""Run configuration: one text key-value file per run, with logged defaults,
strict unknown-key rejection, and a content-hashed run id.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .attacks import ClipAttackConfig, FineTuneConfig
from .controller import ControllerConfig
from .data import default_cache_dir
from .errors import ConfigError
from .obfuscator import OptimizerConfig

DEFAULTS: dict[str, str] = {
    # data / victim
    "dataset": "synthetic",
    "cache_dir": "",
    "arch": "desk_cnn",
    "seed": "0",
    "num_train": "8000",
    "num_eval": "1000",
    "train_epochs": "14",
    "train_lr": "0.05",
    "train_batch_size": "64",
    "floor_accuracy": "0.0",
    "head_weight_decay": "0.01",
    "preact_penalty": "0.003",
    "preact_shift": "0.25",
    "shift_epochs": "2",
    # mask
    "delta_acc": "0.001",
    "epsilon_override": "none",
    # delta optimizer
    "alpha": "0.95",
    "beta": "0.95",
    "lambda": "0.001",
    "eta1": "0.01",
    "inner_epochs": "2",
    "prune_threshold": "adaptive",
    "batch_size": "128",
    "max_batches_per_epoch": "12",
    "delta_optimizer": "sgd",
    # controller
    "n_agents": "3",
    "m_trials": "4",
    "eta2": "0.001",
    "gamma_baseline": "0.9",
    "max_episodes": "50",
    "temperature": "1.0",
    "embed_dim": "256",
    "hidden_dim": "512",
    # attacks
    "clip_t_grid": "",  # empty -> 0.05 .. 1.00 step 0.05
    "ft_fractions": "0.01,0.1",
    "ft_epochs": "20",
    "ft_lr": "0.005",
    "ft_trials": "5",
    # output
    "output_dir": "runs",
}


def _parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str, overrides: dict[str, str] | None = None
                  ) -> "RunConfig":
        given = _parse_kv_text(text)
        given.update(overrides or {})
        unknown = set(given) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        resolved = dict(DEFAULTS)
        resolved.update(given)
        return cls(resolved)

    @classmethod
    def from_file(cls, path: str, overrides: dict[str, str] | None = None
                  ) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read(), overrides)

    @classmethod
    def defaults(cls, overrides: dict[str, str] | None = None) -> "RunConfig":
        return cls.from_text("", overrides)

    # typed accessors ------------------------------------------------------
    def _float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"bad float for {key}: {self.values[key]!r}") from exc

    def _int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"bad int for {key}: {self.values[key]!r}") from exc

    def _opt_float(self, key: str) -> float | None:
        v = self.values[key].lower()
        return None if v in ("none", "") else self._float(key)

    @property
    def dataset(self) -> str:
        return self.values["dataset"]

    @property
    def cache_dir(self) -> str:
        return self.values["cache_dir"] or default_cache_dir()

    @property
    def arch(self) -> str:
        return self.values["arch"]

    @property
    def seed(self) -> int:
        return self._int("seed")

    @property
    def output_dir(self) -> str:
        return self.values["output_dir"]

    @property
    def delta_acc(self) -> float:
        return self._float("delta_acc")

    @property
    def epsilon_override(self) -> float | None:
        return self._opt_float("epsilon_override")

    def optimizer_config(self) -> OptimizerConfig:
        prune = self.values["prune_threshold"].lower()
        mbpe = self.values["max_batches_per_epoch"].lower()
        return OptimizerConfig(
            alpha=self._float("alpha"),
            beta=self._float("beta"),
            lam=self._float("lambda"),
            eta1=self._float("eta1"),
            inner_epochs=self._int("inner_epochs"),
            prune_threshold=None if prune == "adaptive" else float(prune),
            batch_size=self._int("batch_size"),
            max_batches_per_epoch=None if mbpe in ("none", "") else int(mbpe),
            optimizer=self.values["delta_optimizer"],
            seed=self.seed,
        )

    def controller_config(self) -> ControllerConfig:
        return ControllerConfig(
            n_agents=self._int("n_agents"),
            trials_per_episode=self._int("m_trials"),
            eta2=self._float("eta2"),
            gamma=self._float("gamma_baseline"),
            max_episodes=self._int("max_episodes"),
            temperature=self._float("temperature"),
            embed_dim=self._int("embed_dim"),
            hidden_dim=self._int("hidden_dim"),
            seed=self.seed,
        )

    def clip_config(self) -> ClipAttackConfig:
        raw = self.values["clip_t_grid"]
        if not raw:
            return ClipAttackConfig()
        return ClipAttackConfig(tuple(float(t) for t in raw.split(",")))

    def fine_tune_config(self) -> FineTuneConfig:
        return FineTuneConfig(
            fractions=tuple(float(f) for f in self.values["ft_fractions"].split(",")),
            epochs=self._int("ft_epochs"),
            learning_rate=self._float("ft_lr"),
            trials=self._int("ft_trials"),
            seed=self.seed,
        )

    # provenance -----------------------------------------------------------
    def resolved_text(self) -> str:
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values)) + "\n"

    @property
    def run_id(self) -> str:
        digest = hashlib.sha256(self.resolved_text().encode()).hexdigest()
        return digest[:12]
