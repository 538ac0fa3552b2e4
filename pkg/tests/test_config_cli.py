import os

import pytest

from nnsplitter.cli import main
from nnsplitter.config import DEFAULTS, RunConfig
from nnsplitter.errors import ConfigError
from nnsplitter.splitter import ModelSecrets, serialize_secrets


def test_defaults_resolve():
    cfg = RunConfig.defaults()
    assert cfg.values == DEFAULTS
    assert cfg.arch == "desk_cnn"
    assert cfg.optimizer_config().alpha == 0.95
    assert cfg.controller_config().trials_per_episode == 4
    assert cfg.fine_tune_config().fractions == (0.01, 0.1)
    assert len(cfg.clip_config().t_grid) == 20


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_text("no_such_key = 1\n")


def test_bad_syntax_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_text("just a line without equals\n")


def test_typed_accessor_errors():
    cfg = RunConfig.defaults({"seed": "abc"})
    with pytest.raises(ConfigError):
        _ = cfg.seed
    cfg = RunConfig.defaults({"train_lr": "fast"})
    with pytest.raises(ConfigError):
        cfg._float("train_lr")


def test_comments_and_whitespace():
    cfg = RunConfig.from_text("# comment\n  seed = 9  # trailing\n\n")
    assert cfg.seed == 9


def test_run_id_content_hashed():
    a = RunConfig.defaults()
    b = RunConfig.defaults()
    assert a.run_id == b.run_id
    c = RunConfig.defaults({"seed": "1"})
    assert c.run_id != a.run_id
    assert len(a.run_id) == 12
    # defaults written explicitly give the same id as implicit defaults
    d = RunConfig.from_text("seed = 0\n")
    assert d.run_id == a.run_id


def test_resolved_text_roundtrip():
    cfg = RunConfig.defaults({"seed": "3"})
    again = RunConfig.from_text(cfg.resolved_text())
    assert again.values == cfg.values


TINY = ["--set", "arch=tiny_cnn", "--set", "num_train=128",
        "--set", "num_eval=64", "--set", "train_epochs=2"]


def test_cli_config_error_exit_code(tmp_path, capsys):
    rc = main(["train", "--set", "bogus_key=1",
               "--set", f"output_dir={tmp_path}"])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_cli_bad_set_syntax(tmp_path):
    assert main(["train", "--set", "novalue"]) == 2


def test_cli_train_eval_roundtrip(tmp_path, capsys):
    out = str(tmp_path / "runs")
    rc = main(["train", *TINY, "--set", f"output_dir={out}"])
    assert rc == 0
    runs = os.listdir(out)
    assert len(runs) == 1
    run = os.path.join(out, runs[0])
    assert os.path.exists(os.path.join(run, "config.txt"))
    assert os.path.exists(os.path.join(run, "summary.txt"))
    ckpt = os.path.join(run, "victim")
    rc = main(["eval", *TINY, "--checkpoint", ckpt])
    assert rc == 0
    assert "normal-world accuracy" in capsys.readouterr().out


def test_cli_pairing_error_exit_code(tmp_path, capsys):
    out = str(tmp_path / "runs")
    assert main(["train", *TINY, "--set", f"output_dir={out}"]) == 0
    run = os.path.join(out, os.listdir(out)[0])
    ckpt = os.path.join(run, "victim")
    # secrets with a wrong fingerprint never pair with this checkpoint
    bogus = ModelSecrets(0.0, [(0, 0, 0)], model_fingerprint=12345)
    spath = str(tmp_path / "bad-secrets.bin")
    with open(spath, "wb") as fh:
        fh.write(serialize_secrets(bogus))
    rc = main(["eval", *TINY, "--checkpoint", ckpt, "--secrets", spath])
    assert rc == 3
    assert "pairing error" in capsys.readouterr().err


def test_cli_attack_clip_runs(tmp_path):
    out = str(tmp_path / "runs")
    assert main(["train", *TINY, "--set", f"output_dir={out}"]) == 0
    run = os.path.join(out, os.listdir(out)[0])
    ckpt = os.path.join(run, "victim")
    rc = main(["attack", "clip", *TINY, "--checkpoint", ckpt,
               "--set", f"output_dir={out}", "--set", "clip_t_grid=0.5,1.0"])
    assert rc == 0
    attack_dir = [d for d in os.listdir(out) if d.endswith("attack-clip")]
    assert len(attack_dir) == 1
    files = os.listdir(os.path.join(out, attack_dir[0]))
    assert any(f.endswith(".csv") for f in files)
    assert any(f.endswith(".png") for f in files)
