import csv
import os

from nnsplitter.attacks import AttackResult, AttackSetting
from nnsplitter.obfuscator import ObfuscationReport
from nnsplitter.report import (render_attack_sweep, render_layer_distribution,
                               render_reward_history, write_summary,
                               write_table)


def fake_report():
    return ObfuscationReport(
        baseline_accuracy=0.9, obfuscated_accuracy=0.1, restored_accuracy=0.9,
        num_obfuscated=12, total_weights=1000, per_layer_counts=[4, 8],
        mask_c=0.01, mask_epsilon=0.002,
        reward_history=[[-0.5, -0.3], [-0.2, -0.1]],
        baseline_history=[-0.4, -0.25], loss_history=[0.1, 0.05],
        converged=True, episodes_run=2, best_selection=[[0], [1]],
    )


def test_write_table_and_summary(tmp_path):
    p = str(tmp_path / "t.csv")
    write_table(p, ["a", "b"], [(1, 2), (3, 4)])
    rows = list(csv.reader(open(p)))
    assert rows == [["a", "b"], ["1", "2"], ["3", "4"]]
    s = str(tmp_path / "s.txt")
    write_summary(s, [("k", "v")])
    assert open(s).read() == "k: v\n"


def test_render_reward_history(tmp_path):
    base = str(tmp_path / "rh")
    render_reward_history(fake_report(), base)
    assert os.path.exists(base + ".png")
    rows = list(csv.DictReader(open(base + ".csv")))
    assert len(rows) == 4
    assert rows[0]["episode"] == "0" and rows[3]["trial"] == "1"
    assert float(rows[0]["reward"]) == -0.5


def test_render_layer_distribution(tmp_path):
    base = str(tmp_path / "ld")
    render_layer_distribution(fake_report(), base)
    rows = list(csv.DictReader(open(base + ".csv")))
    assert [(r["layer_id"], r["obfuscated_weights"]) for r in rows] == [
        ("0", "4"), ("1", "8")]
    assert os.path.exists(base + ".png")


def test_render_attack_sweep(tmp_path):
    res = AttackResult("demo", [AttackSetting(0.1, [0.5, 0.7]),
                                AttackSetting(0.2, [0.9])])
    base = str(tmp_path / "sweep")
    render_attack_sweep(res, base, "fraction", baseline=0.92)
    rows = list(csv.DictReader(open(base + ".csv")))
    assert rows[0]["fraction"] == "0.1"
    assert float(rows[0]["accuracy_mean"]) == 0.6
    assert os.path.exists(base + ".png")
