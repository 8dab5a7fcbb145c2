from __future__ import annotations

import json
import math

import pytest

from radpretrain.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["syngen", "--n", "60", "--seed", "5", "--out", str(d)]) == 0
    assert main(["preprocess", "--in", str(d / "corpus.jsonl"), "--out", str(d)]) == 0
    assert main(["build-vocab", "--corpus", str(d / "sectioned.jsonl"), "--target-size", "1500", "--out", str(d)]) == 0
    return d


def _run(args, capsys):
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_pipeline_outputs(workdir):
    for name in ("corpus.jsonl", "gold.jsonl", "sectioned.jsonl", "vocab.txt", "vocab.txt.provenance.tsv"):
        assert (workdir / name).exists(), name


@pytest.mark.parametrize("cmd", [
    ["syngen", "--n", "60", "--seed", "5"],
    ["preprocess", "--in", "{d}/corpus.jsonl"],
    ["build-vocab", "--corpus", "{d}/sectioned.jsonl", "--target-size", "1500"],
    ["annotate", "--in", "{d}/sectioned.jsonl", "--vocab", "{d}/vocab.txt"],
    ["mask", "--objective", "kg", "--in", "{d}/sectioned.jsonl", "--vocab", "{d}/vocab.txt", "--seed", "2"],
])
def test_reruns_are_byte_identical(workdir, tmp_path, cmd, capsys):
    args = [a.format(d=workdir) for a in cmd]
    assert _run(args + ["--out", str(tmp_path / "a")], capsys)[0] == 0
    assert _run(args + ["--out", str(tmp_path / "b")], capsys)[0] == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_mask_reports_no_violations(workdir, tmp_path, capsys):
    code, out, _ = _run(["mask", "--objective", "kg", "--in", str(workdir / "sectioned.jsonl"),
                         "--vocab", str(workdir / "vocab.txt"), "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads(out)["invariant_violations"] == 0


def test_seed_before_subcommand_is_kept(workdir, tmp_path, capsys):
    _run(["--seed", "9", "syngen", "--n", "2", "--out", str(tmp_path / "a")], capsys)
    _run(["syngen", "--n", "2", "--seed", "9", "--out", str(tmp_path / "b")], capsys)
    assert (tmp_path / "a" / "corpus.jsonl").read_bytes() == (tmp_path / "b" / "corpus.jsonl").read_bytes()
    assert b"syn-9-" in (tmp_path / "a" / "corpus.jsonl").read_bytes()


def test_train_with_config_file(workdir, tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text('objective = "kg"\nsteps = 50\nd_model = 8\neval_every = 25\nseed = 3\n')
    code, out, _ = _run(["train", "--config", str(cfg), "--steps", "20", "--in", str(workdir / "sectioned.jsonl"),
                         "--vocab", str(workdir / "vocab.txt"), "--out", str(tmp_path / "run")], capsys)
    assert code == 0
    assert json.loads(out)["steps"] == 20  # flag overrides the file
    report = json.loads((tmp_path / "run" / "train_report.json").read_text())
    assert report["config"]["run_seed"] == 3 and report["config"]["objective"] == "kg"
    assert all(math.isfinite(row["kg"]) for row in report["curve"])


def test_loss_eval_prints_four_values(tmp_path, capsys):
    batch = {"x": [5, 6], "x_masked": [5, 4], "x_corrupt": [5, 7], "p_g": [[0.5, 0.5, 0, 0, 0, 0, 0, 0]],
             "d": [0.9, 0.3], "m": [1], "related": [None, False]}
    path = tmp_path / "b.json"
    path.write_text(json.dumps(batch))
    code, out, _ = _run(["loss-eval", "--batch", str(path)], capsys)
    assert code == 0
    values = dict(line.split("\t") for line in out.strip().splitlines())
    assert list(values) == ["l_mlm", "l_disc", "l_kg", "l_disc_kg"]
    assert float(values["l_disc"]) == pytest.approx(-math.log(0.9) - math.log(0.7), abs=1e-12)
    assert float(values["l_disc_kg"]) == pytest.approx(2 * float(values["l_disc"]), abs=1e-12)


@pytest.mark.parametrize("args", [
    ["--no-such-flag"],
    ["syngen", "--bogus"],
    ["mask", "--in", "missing.jsonl", "--vocab", "missing.txt"],
    ["build-vocab", "--corpus", "missing.jsonl"],
    ["train", "--config", "missing.toml"],
])
def test_usage_errors_exit_2(args, capsys):
    try:
        code = main(args)
    except SystemExit as exc:  # argparse reports usage errors this way
        code = exc.code
    assert code == 2


def test_small_target_size_is_usage_error(workdir, capsys):
    assert _run(["build-vocab", "--corpus", str(workdir / "sectioned.jsonl"), "--target-size", "6"], capsys)[0] == 2


def test_bad_config_value_is_usage_error(workdir, tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('lr = "fast"\n')
    code, _out, err = _run(["train", "--config", str(cfg), "--in", str(workdir / "sectioned.jsonl"),
                            "--vocab", str(workdir / "vocab.txt")], capsys)
    assert code == 2 and "fast" in err


def test_nested_config_is_rejected(tmp_path, capsys):
    cfg = tmp_path / "nested.toml"
    cfg.write_text("[train]\nsteps = 3\n")
    assert _run(["verify", "--config", str(cfg)], capsys)[0] == 2


def test_pipeline_error_exits_1_with_json(tmp_path, capsys):
    bad = tmp_path / "batch.json"
    bad.write_text(json.dumps({"x": [1]}))
    code, _out, err = _run(["loss-eval", "--batch", str(bad)], capsys)
    assert code == 1
    assert json.loads(err)["error"] == "LossInputError"


def test_verify_passes(tmp_path, capsys):
    code, out, _ = _run(["verify", "--out", str(tmp_path)], capsys)
    assert code == 0
    report = json.loads(out)
    assert report["passed"] and all(c["passed"] for c in report["checks"])
    assert (tmp_path / "verify_report.json").read_text() == out
