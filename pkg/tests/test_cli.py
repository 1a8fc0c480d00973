import json
import subprocess
import sys

import pytest

from erpolab.cli import ConfigError, config_hash, main, parse_experiment

MLE = """\
task:
  name: copy
  vocab_size: 4
  length: 4
  n_train: 40
  n_dev: 5
  n_test: 10
method:
  preset: mle
  steps: 30
  lr: 0.5
seeds: [0]
"""

COMPARE = """\
task: {name: copy, vocab_size: 4, length: 4, n_train: 40, n_dev: 5, n_test: 10}
methods:
  - {name: mle, preset: mle, steps: 20}
  - {name: interp, preset: interpolation, steps: 20, c: 6}
seeds: [0, 1, 2]
"""


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_train_minimal_mle(tmp_path, capsys):
    cfg = _write(tmp_path, MLE)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    files = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert files == ["checkpoint.txt", "history.csv", "resolved_config.json"]
    resolved = json.loads((tmp_path / "o" / "resolved_config.json").read_text())
    h = resolved["config_hash"]
    assert h == config_hash(resolved["config"])
    assert h in (tmp_path / "o" / "checkpoint.txt").read_text()
    assert (tmp_path / "o" / "history.csv").read_text().splitlines()[1].endswith(h)


def test_train_rerun_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, MLE)
    for out in ("a", "b"):
        assert main(["train", "--config", cfg, "--out", str(tmp_path / out)]) == 0
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()


def test_seed_override_changes_hash(tmp_path):
    cfg = _write(tmp_path, MLE)
    main(["train", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seeds", "5"])
    ha = json.loads((tmp_path / "a" / "resolved_config.json").read_text())["config_hash"]
    hb = json.loads((tmp_path / "b" / "resolved_config.json").read_text())["config_hash"]
    assert ha != hb


def test_alpha_beta_zero_rejected_with_line(tmp_path, capsys):
    cfg = _write(tmp_path, "task: {name: copy}\nmethod:\n  preset: raml\n  alpha: 0\n  beta: 0\n")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "alpha + beta must be positive" in err and "cfg.yaml:3" in err
    assert not (tmp_path / "o").exists()


def test_unknown_key_reports_its_line(tmp_path, capsys):
    cfg = _write(tmp_path, "task:\n  name: copy\nmethod:\n  preset: mle\n  learning_rate: 0.1\n")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "cfg.yaml:5: unknown key 'learning_rate'" in capsys.readouterr().err


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("task: {name: copy, vocab_size: two}\n", "expected an integer"),
        ("task: [1, 2]\n", "task must be a mapping"),
        ("- 1\n", "config must be a mapping"),
        ("task: {name: copy\n", "invalid YAML"),
        ("method: {preset: nope}\n", "unknown preset"),
        ("method: {preset: interpolation, schedule: {kind: linear, start: [0.5, 0.5, 0], end: [0, 0, 1]}}\nmode: interp\n", "schedule"),
        ("method: {preset: mle, reward: {kind: bleu}}\n", "unknown reward kind"),
        ("method: {preset: mle}\nseeds: [0, 1]\n", "train runs one seed"),
        ("task: {name: copy, vocab_size: 4, length: 12}\nmethod: {preset: mle, e_step: exact}\n", "budget"),
    ],
)
def test_validation_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_experiment(text, "c.yaml", "train")


def test_compare_counts(tmp_path):
    cfg = _write(tmp_path, COMPARE)
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    agg = (tmp_path / "o" / "report.csv").read_text().strip().splitlines()
    raw = (tmp_path / "o" / "report_raw.csv").read_text().strip().splitlines()
    assert len(agg) == 1 + 2 and len(raw) == 1 + 6
    data = json.loads((tmp_path / "o" / "report.json").read_text())
    assert data["config_hash"] in agg[1]


def test_compare_empty_methods(tmp_path, capsys):
    cfg = _write(tmp_path, "task: {name: copy}\nmethods: []\n")
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "methods list is empty" in capsys.readouterr().err


def test_compare_seeds_flag(tmp_path):
    cfg = _write(tmp_path, COMPARE)
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o"), "--seeds", "4", "--threads", "2"]) == 0
    raw = (tmp_path / "o" / "report_raw.csv").read_text().strip().splitlines()
    assert len(raw) == 1 + 2


def test_gridworld_compare_and_train(tmp_path):
    (tmp_path / "room.txt").write_text("S..\n.#.\n..G\n")
    cfg = _write(tmp_path, "gridworld: {map: room.txt, slip: 0.1, demos: [1, 2], episodes: 200, eval_every: 100}\nseeds: [0, 1]\n")
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "g")]) == 0
    table = (tmp_path / "g" / "gridworld_table.csv").read_text().strip().splitlines()
    assert table[0].startswith("demos,method,n_seeds,return_mean")
    assert len(table) == 1 + 4
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "t"), "--seeds", "0"]) == 1
    cfg1 = _write(tmp_path, "gridworld: {size: 3, demos: 2, episodes: 200, eval_every: 100}\n", "one.yaml")
    assert main(["train", "--config", cfg1, "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "history.csv").read_text().startswith("step,prefix_len,mean_return,config_hash")


def test_interp_train(tmp_path):
    text = MLE.replace("preset: mle", "preset: interpolation\n  c: 4") + "mode: interp\n"
    cfg = _write(tmp_path, text)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    head = (tmp_path / "o" / "history.csv").read_text().splitlines()[0]
    assert head.startswith("step,l1,l2,l3,c,sample_reward")


def test_verify_gradients(tmp_path, capsys):
    assert main(["verify", "gradients", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "verification.json").read_text())
    assert report["passed"] and all("tolerance" in c and "max_deviation" in c for c in report["checks"])
    assert report["config_hash"]


def test_verify_usage_and_budget_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["verify", "nonsense"])
    assert e.value.code == 1
    assert main(["verify", "gradients", "--budget", "10"]) == 2


def test_missing_config_and_out(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 1
    cfg = _write(tmp_path, MLE)
    assert main(["train", "--config", cfg]) == 1


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "erpolab", "verify", "bogus"], capture_output=True, text=True)
    assert r.returncode == 1 and "invalid choice" in r.stderr


@pytest.mark.parametrize("name", ["train_mle", "train_interp", "compare_copy", "compare_presets", "compare_gridworld"])
def test_shipped_configs_validate(name):
    import pathlib

    path = pathlib.Path(__file__).resolve().parent.parent / "configs" / f"{name}.yaml"
    exp = parse_experiment(path.read_text(), str(path), name.split("_")[0], config_dir=str(path.parent))
    assert exp.out and exp.config_hash
