import json
import os

import pytest

from lsr.cli import main

FAST = ["--stages", "2", "--trees", "2", "--depth", "2",
        "--split-candidates", "16", "--perturbations", "2"]


def run_cli(argv):
    return main(argv)


def synth(out, count=24, split="12,8,4", seed=3):
    args = ["synth", "--count", str(count), "--out", str(out), "--seed", str(seed)]
    if split:
        args += ["--split", split]
    assert run_cli(args) == 0


def read_jsonl(path):
    return [json.loads(ln) for ln in open(path) if ln.strip()]


def tree_bytes(root):
    out = {}
    for name in sorted(os.listdir(root)):
        with open(os.path.join(root, name), "rb") as f:
            out[name] = f.read()
    return out


def test_synth_deterministic(tmp_path):
    synth(tmp_path / "a")
    synth(tmp_path / "b")
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_synth_split_counts(tmp_path, capsys):
    synth(tmp_path / "d", count=30, split="20,7,3")
    log = [json.loads(ln) for ln in capsys.readouterr().out.splitlines()]
    event = [e for e in log if e.get("event") == "synth"][-1]
    assert event["splits"] == {"train": 20, "unlabeled": 7, "test": 3}


def test_synth_bad_split_sum(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli(["synth", "--count", "10", "--out", str(tmp_path / "x"),
                 "--split", "5,5,5"])
    assert exc.value.code == 2


def test_missing_required_flag():
    with pytest.raises(SystemExit) as exc:
        run_cli(["synth", "--count", "5"])
    assert exc.value.code == 2


def test_unknown_command():
    with pytest.raises(SystemExit) as exc:
        run_cli(["frobnicate"])
    assert exc.value.code == 2


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    synth(root, count=24, split="12,8,4", seed=3)
    return root


def test_train_writes_model_and_is_deterministic(dataset, tmp_path):
    manifest = str(dataset / "manifest.jsonl")
    out1 = tmp_path / "m1"
    out2 = tmp_path / "m2"
    for out in (out1, out2):
        assert run_cli(["train", "--manifest", manifest, "--out", str(out),
                        "--seed", "5", *FAST]) == 0
        assert (out / "model.lsrm").exists()
        assert (out / "model.json").exists()
    assert (out1 / "model.lsrm").read_bytes() == (out2 / "model.lsrm").read_bytes()
    assert (out1 / "model.json").read_bytes() == (out2 / "model.json").read_bytes()


def test_train_invalid_stages(dataset, tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli(["train", "--manifest", str(dataset / "manifest.jsonl"),
                 "--out", str(tmp_path / "x"), "--stages", "0"])
    assert exc.value.code == 2


def test_train_missing_manifest(tmp_path):
    assert run_cli(["train", "--manifest", str(tmp_path / "no.jsonl"),
                    "--out", str(tmp_path / "x"), *FAST]) == 1


def test_eval_outputs(dataset, tmp_path, capsys):
    manifest = str(dataset / "manifest.jsonl")
    model_dir = tmp_path / "model"
    assert run_cli(["train", "--manifest", manifest, "--out", str(model_dir),
                    "--seed", "5", *FAST]) == 0
    capsys.readouterr()

    def eval_split(split, out):
        assert run_cli(["eval", "--manifest", manifest,
                        "--model", str(model_dir / "model.lsrm"),
                        "--out", str(out), "--split", split]) == 0
        log = [json.loads(ln) for ln in capsys.readouterr().out.splitlines()]
        return [e for e in log if e.get("event") == "eval"][-1]["mean_nme"]

    train_nme = eval_split("train", tmp_path / "ev_train")
    test_nme = eval_split("test", tmp_path / "ev_test")
    assert train_nme < test_nme

    rows = [ln.split(",") for ln in
            (tmp_path / "ev_test" / "ced.csv").read_text().splitlines()]
    assert rows[0] == ["threshold", "fraction"]
    assert float(rows[-1][1]) == 1.0
    assert (tmp_path / "ev_test" / "nme.csv").exists()


def test_eval_empty_split(tmp_path, capsys):
    root = tmp_path / "d"
    synth(root, count=10, split="8,2,0", seed=4)
    model_dir = tmp_path / "model"
    assert run_cli(["train", "--manifest", str(root / "manifest.jsonl"),
                    "--out", str(model_dir), *FAST]) == 0
    assert run_cli(["eval", "--manifest", str(root / "manifest.jsonl"),
                    "--model", str(model_dir / "model.lsrm"),
                    "--out", str(tmp_path / "ev"), "--split", "test"]) == 1


def reinforce_args(dataset, out, *extra):
    return ["reinforce", "--manifest", str(dataset / "manifest.jsonl"),
            "--out", str(out), "--seed", "5", *FAST, *extra]


def test_reinforce_alpha_dominance(dataset, tmp_path):
    out = tmp_path / "r"
    assert run_cli(reinforce_args(dataset, out, "--max-iters", "1",
                                  "--alpha-step", "1e9", "--eps", "1e-9")) == 0
    log = read_jsonl(out / "iterations.jsonl")
    assert len(log) == 1
    assert log[0]["survivors"] == 20        # 12 train + 8 unlabeled
    assert (out / "model.lsrm").exists()
    assert (out / "validators.lsrm").exists()
    assert (out / "checkpoint_001.lsrm").exists()


def test_reinforce_lambda_zero(dataset, tmp_path):
    out = tmp_path / "r0"
    assert run_cli(reinforce_args(dataset, out, "--max-iters", "1",
                                  "--lambda", "0")) == 0
    log = read_jsonl(out / "iterations.jsonl")
    assert log[0]["mean_g"] is not None     # geometry logged even when ignored


def test_reinforce_threads_identical(dataset, tmp_path):
    out1 = tmp_path / "t1"
    out8 = tmp_path / "t8"
    for out, n in ((out1, "1"), (out8, "8")):
        assert run_cli(reinforce_args(dataset, out, "--max-iters", "2",
                                      "--threads", n)) == 0
    assert (out1 / "model.lsrm").read_bytes() == (out8 / "model.lsrm").read_bytes()
    assert read_jsonl(out1 / "iterations.jsonl") == \
        read_jsonl(out8 / "iterations.jsonl")


def test_reinforce_all_manual_degenerates_to_train(tmp_path):
    root = tmp_path / "d"
    synth(root, count=12, split="12,0,0", seed=6)
    manifest = str(root / "manifest.jsonl")
    train_out = tmp_path / "sup"
    reinf_out = tmp_path / "ref"
    assert run_cli(["train", "--manifest", manifest, "--out", str(train_out),
                    "--seed", "5", *FAST]) == 0
    assert run_cli(["reinforce", "--manifest", manifest, "--out", str(reinf_out),
                    "--seed", "5", *FAST]) == 0
    assert (train_out / "model.lsrm").read_bytes() == \
        (reinf_out / "model.lsrm").read_bytes()
