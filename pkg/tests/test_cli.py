import json
import subprocess
import sys

import pytest

from glabigru import cli
from glabigru.numcore import GradReport

TINY = ["--de", "10", "--dh", "6", "--dp", "2", "--epochs", "2"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert cli.run(["synth", "--train", "40", "--test", "16", "--seed", "3", "--out", str(root)]) == 0
    return root


def args_for(data, *extra):
    return ["--data", str(data / "train.txt"), "--deps", str(data / "train.deps"), *extra]


def one_line_error(capsys, prefix):
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and err.startswith(f"glabigru: {prefix}")
    return err


# --- exit codes ------------------------------------------------------------------------------


@pytest.mark.parametrize("argv", [[], ["bogus"], ["train", "--nope", "1"], ["train", "--epochs", "x"],
                                  ["eval", "--gamma", "0.5"]])
def test_usage_errors_exit_1(argv, capsys):
    assert cli.run(argv) == 1
    one_line_error(capsys, "usage error")


def test_train_requires_out(data, capsys):
    assert cli.run(["train", *args_for(data), *TINY]) == 1
    assert "--out" in one_line_error(capsys, "usage error")


def test_invalid_model_setting_is_usage_error(data, tmp_path, capsys):
    assert cli.run(["train", *args_for(data), "--mode", "both", "--out", str(tmp_path)]) == 1
    assert cli.run(["train", *args_for(data), "--gamma", "2", "--out", str(tmp_path)]) == 1


def test_missing_and_malformed_inputs_exit_2(data, tmp_path, capsys):
    assert cli.run(["prep", "--data", str(tmp_path / "absent.txt")]) == 2
    one_line_error(capsys, "I/O error")
    bad = tmp_path / "bad.txt"
    bad.write_text('1\t"no tags here"\nOther\n')
    assert cli.run(["prep", "--data", str(bad)]) == 2
    assert "record 1" in one_line_error(capsys, "data error")
    deps = tmp_path / "short.deps"
    deps.write_text("1\t-1 0\n")
    assert cli.run(["prep", "--data", str(data / "train.txt"), "--deps", str(deps)]) == 2
    assert "heads but" in one_line_error(capsys, "data error")
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint")
    assert cli.run(["eval", "--checkpoint", str(junk), *args_for(data)]) == 2
    one_line_error(capsys, "data error")


def test_nan_embeddings_exit_3(data, tmp_path, capsys):
    emb = tmp_path / "vec.txt"
    tokens = (data / "train.txt").read_text().split()
    word = next(t for t in tokens if t.startswith("w"))
    emb.write_text(f"{word} " + " ".join(["nan"] * 10) + "\n")
    argv = ["train", *args_for(data), *TINY, "--embeddings", str(emb), "--out", str(tmp_path / "run")]
    assert cli.run(argv) == 3
    one_line_error(capsys, "numeric failure")


def test_failed_grad_check_exits_3(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_grad_check", lambda mode, seed: GradReport({"cls.W": 0.5}, 1e-4))
    assert cli.run(["grad-check", "--mode", "hard"]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_grad_check_passes():
    assert cli.run(["grad-check", "--mode", "hard"]) == 0


# --- config files ------------------------------------------------------------------------------


def test_config_file_and_overrides(data, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tiny model\nde = 10\ndh = 6\ndp = 2\nepochs = 3\ngamma = 0.25\nmode = hard\n")
    out = tmp_path / "run"
    assert cli.run(["train", "--config", str(cfg), *args_for(data), "--epochs", "1", "--out", str(out)]) == 0
    eff = dict(line.split(" = ") for line in (out / "effective.cfg").read_text().splitlines())
    assert eff["epochs"] == "1" and eff["gamma"] == "0.25" and eff["mode"] == "hard" and eff["dh"] == "6"
    assert len((out / "history.tsv").read_text().splitlines()) == 2


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("de = 10\nlearning_rate = 3\n")
    assert cli.run(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "bad.cfg:2" in one_line_error(capsys, "usage error")


def test_every_flag_has_a_config_key():
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for p in sub.choices.values():
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.dest in cli.FLAGS


# --- end-to-end wiring ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    argv = ["train", *args_for(data), *TINY, "--mode", "soft", "--seed", "2", "--out", str(out),
            "--eval-data", str(data / "test.txt"), "--eval-deps", str(data / "test.deps")]
    assert cli.run(argv) == 0
    return out


def test_train_outputs(trained):
    for name in ("model.ckpt", "last.ckpt", "best.ckpt", "history.tsv", "effective.cfg", "summary.txt"):
        assert (trained / name).exists(), name


def test_eval_predict_dump(data, trained, tmp_path, capsys):
    ck = str(trained / "model.ckpt")
    test = ["--data", str(data / "test.txt"), "--deps", str(data / "test.deps")]
    assert cli.run(["eval", "--checkpoint", ck, *test, "--out", str(tmp_path)]) == 0
    assert "macro-F1" in capsys.readouterr().out
    assert "macro_f1=" in (tmp_path / "report.kv").read_text()

    assert cli.run(["predict", "--checkpoint", ck, *test]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 16 and all(len(line.split("\t")) == 2 for line in lines)

    assert cli.run(["dump-attention", "--checkpoint", ck, *test, "--out", str(tmp_path)]) == 0
    recs = [json.loads(x) for x in (tmp_path / "attention.jsonl").read_text().splitlines()]
    assert len(recs) == 16 and recs[0]["columns"] == ["token", "alpha_g", "alpha_l", "alpha", "m"]


def test_prep_reports_fallback_share(data, tmp_path, capsys):
    assert cli.run(["prep", "--data", str(data / "train.txt")]) == 0
    assert "sdp_fallback_share=1.0" in capsys.readouterr().out
    assert cli.run(["prep", *args_for(data)]) == 0
    assert "sdp_fallback_share=0.0" in capsys.readouterr().out


def test_sweep_writes_table(data, tmp_path):
    argv = ["sweep", *args_for(data), *TINY, "--epochs", "1", "--gammas", "0,1", "--out", str(tmp_path),
            "--eval-data", str(data / "test.txt"), "--eval-deps", str(data / "test.deps")]
    assert cli.run(argv) == 0
    rows = (tmp_path / "sweep.tsv").read_text().splitlines()
    assert rows[0].startswith("gamma\t") and len(rows) == 3


def test_commands_write_only_inside_out(data, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "out"
    assert cli.run(["train", *args_for(data), *TINY, "--out", str(out)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out"]


def test_repeated_runs_are_byte_identical(data, tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert cli.run(["train", *args_for(data), *TINY, "--seed", "5", "--out", str(out)]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert runs[0] == runs[1]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "glabigru", "synth", "--train", "4", "--test", "2",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "glabigru", "nope"], capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stderr.count("\n") == 1
