"""The ``dualrec`` command line: subcommands, run layout and exit codes."""

import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dualrec.cli import build_parser, main
from dualrec.model import ModelConfig, init_params, layer_keys, save_checkpoint
from dualrec.positional import load_mask

README = Path(__file__).resolve().parents[1] / "README.md"

# The documented interface: every flag of every subcommand and its default.
DOCUMENTED = {
    None: {"--threads": "1", "--verbose": "False"},
    "prep": {"input": None, "--out": "data"},
    "synth": {"--users": "2000", "--vocab": "200", "--seed": "0", "--topic-prob": "0.5", "--out": "synth"},
    "train": {"--config": "None", "--data": "None", "--run-dir": "None", "--epochs": "None",
              "--seed": "None", "--batch-size": "None", "--lr": "None", "--patience": "None",
              "--set": "None", "--deterministic": "False"},
    "eval": {"--checkpoint": "None", "--data": "None", "--split": "test", "--mask": "None",
             "--mask-dir": "None", "--k": "[10, 50]", "--exclude-history": "False", "--out": "None",
             "--groups": "None"},
    "prune": {"--checkpoint": "None", "--stride": "8", "--tau": "0.5", "--out": "None"},
    "bench": {"--suite": "all", "--n": "[128, 256, 512, 1000]", "--batch": "[8]", "--reps": "30",
              "--warmups": "5", "--tau": "0.6", "--stride": "8", "--vocab": "200", "--seed": "0",
              "--run-dir": "None", "--out": "bench"},
    "plotdata": {"csv": None, "--out": "plotdata"},
}

TINY_SETS = ["--set", "n=20", "--set", "d=8", "--set", "d_ffn=16", "--set", "num_negatives=8",
             "--set", "vocab=30"]


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    out = capsys.readouterr() if capsys is not None else None
    return code, out


def parser_actions(sub):
    parser = build_parser()
    if sub is not None:
        parser = next(a for a in parser._actions if a.dest == "command").choices[sub]
    found = {}
    for action in parser._actions:
        if action.dest in ("help", "command"):
            continue
        name = max(action.option_strings, key=len) if action.option_strings else action.dest
        found[name] = action
    return found


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    assert main(["synth", "--users", "40", "--vocab", "30", "--seed", "3", "--out", str(root / "data")]) == 0
    argv = ["train", "--data", root / "data", "--run-dir", root / "run", "--epochs", "2",
            "--batch-size", "8", "--deterministic", *TINY_SETS]
    assert main([str(a) for a in argv]) == 0
    return root


class TestHelp:
    @pytest.mark.parametrize("sub", list(DOCUMENTED))
    def test_flags_match_documented_interface(self, sub):
        actions = parser_actions(sub)
        assert set(actions) == set(DOCUMENTED[sub])
        for name, default in DOCUMENTED[sub].items():
            if default is not None:
                assert str(actions[name].default) == default, name

    @pytest.mark.parametrize("sub", list(DOCUMENTED))
    def test_help_lists_flags_and_defaults(self, sub, capsys):
        code, out = run(([sub] if sub else []) + ["--help"], capsys)
        assert code == 0
        text = " ".join(out.out.split())
        for name, default in DOCUMENTED[sub].items():
            assert name in text
            if default is not None and not name.startswith("--verbose"):
                assert f"(default: {default})" in text, name

    def test_readme_documents_every_flag(self):
        text = README.read_text()
        for sub, flags in DOCUMENTED.items():
            if sub is not None:
                assert f"dualrec {sub}" in text
            for name in flags:
                assert name in text, name

    def test_module_and_script_entry_points(self):
        res = subprocess.run([sys.executable, "-m", "dualrec", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "plotdata" in res.stdout


class TestSynthPrep:
    def test_synth_twice_identical(self, tmp_path):
        for name in ("a", "b"):
            assert run(["synth", "--users", 100, "--vocab", 50, "--seed", 7, "--out", tmp_path / name])[0] == 0
        for f in ("dataset.tsv", "vocab.tsv", "split.txt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_prep_outputs_and_idempotence(self, tmp_path):
        (tmp_path / "log.tsv").write_text("7\t900\t5\n7\t12\t3\n8\t12\t1\n7\t40\t9\n")
        for name in ("a", "b"):
            assert run(["prep", tmp_path / "log.tsv", "--out", tmp_path / name])[0] == 0
        for f in ("dataset.tsv", "vocab.tsv", "split.txt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert (tmp_path / "a" / "vocab.tsv").read_text().split() == ["12", "1", "40", "2", "900", "3"]
        assert (tmp_path / "a" / "split.txt").read_text() == "7\t1\t2\n8\t-1\t-1\n"


class TestTrainEval:
    def test_run_layout(self, trained):
        run_dir = trained / "run"
        assert (run_dir / "metrics.csv").is_file()
        assert sorted(os.listdir(run_dir / "checkpoints")) == ["epoch_1", "epoch_2"]

    def test_config_echo(self, trained):
        echoed = json.loads((trained / "run" / "config.json").read_text())
        assert echoed["n"] == 20 and echoed["vocab"] == 30 and echoed["epochs"] == 2
        assert echoed["log_wall_time"] is False and echoed["lr"] == 1e-3

    def test_eval_equals_last_validation_row(self, trained, capsys):
        code, out = run(["eval", "--checkpoint", trained / "run" / "checkpoints" / "epoch_2",
                         "--data", trained / "data", "--split", "valid", "--k", "10",
                         "--out", trained / "valid.csv"], capsys)
        assert code == 0
        last = (trained / "run" / "metrics.csv").read_text().splitlines()[-1].split(",")
        got = dict((f"{m},{k}", v) for m, k, v in (ln.split(",") for ln in out.out.splitlines()[1:]))
        assert float(got["hr,10"]) == float(last[3])
        assert float(got["ndcg,10"]) == float(last[4])
        assert float(got["mrr,0"]) == float(last[5])

    def test_eval_default_output_and_groups(self, trained):
        ckpt = trained / "run" / "checkpoints" / "epoch_1"
        assert run(["eval", "--checkpoint", ckpt, "--data", trained / "data",
                    "--groups", trained / "groups.csv"])[0] == 0
        assert (ckpt / "eval_test.csv").read_text().startswith("metric,K,value\n")
        assert len((trained / "groups.csv").read_text().splitlines()) == 6

    def test_prune_then_masked_eval(self, trained, capsys):
        ckpt = trained / "run" / "checkpoints" / "epoch_2"
        code, out = run(["prune", "--checkpoint", ckpt, "--tau", "0.6", "--stride", "4"], capsys)
        assert code == 0
        masks = trained / "run" / "masks"
        assert sorted(os.listdir(masks)) == ["flops.csv", "layer_0.mask", "layer_1.mask"]
        assert out.out.splitlines()[0] == "layer,kept_blocks,dense_blocks,reduction_percent,pruned_diagonals"
        code, _ = run(["eval", "--checkpoint", ckpt, "--data", trained / "data", "--mask-dir", masks,
                       "--out", trained / "masked.csv"])
        assert code == 0

    def test_set_override_order(self, tmp_path, trained):
        (tmp_path / "c.json").write_text(json.dumps({"lr": 0.5, "epochs": 7, "d": 8}))
        argv = ["train", "--config", tmp_path / "c.json", "--data", trained / "data",
                "--run-dir", tmp_path / "r", "--set", "epochs=1", "--lr", "0.002", "--deterministic",
                *TINY_SETS]
        assert run(argv)[0] == 0
        echoed = json.loads((tmp_path / "r" / "config.json").read_text())
        assert (echoed["lr"], echoed["epochs"]) == (0.002, 1)


class TestPruneHandTrace:
    def test_n8_stride2_half(self, tmp_path, capsys):
        cfg = ModelConfig(n=8, d=4, d_ffn=8, num_layers=1, vocab=20)
        params = init_params(cfg, np.random.default_rng(0))
        # offsets 2,3 and 6,7 are weak, so the leftmost blocks at rows 1 and 3 score lowest
        params[layer_keys(0)["pos_w"]] = np.array([5.0, 5.0, 0.1, 0.1, 5.0, 5.0, 0.1, 0.1])
        save_checkpoint(tmp_path / "ckpt", cfg, params)
        code, out = run(["prune", "--checkpoint", tmp_path / "ckpt", "--tau", "0.5", "--stride", "2",
                         "--out", tmp_path / "m"], capsys)
        assert code == 0
        mask = load_mask(tmp_path / "m" / "layer_0.mask")
        assert mask.pruned == frozenset({4, 9, 14, 12})
        assert (tmp_path / "m" / "layer_0.mask").read_text() == "8 2 0.5\n4\n9\n12\n14\n"
        assert out.out.splitlines()[1] == "0,6,10,40.0000,1 3"


class TestExitCodes:
    @pytest.mark.parametrize("argv", [[], ["frobnicate"], ["synth", "--bogus"], ["--threads", "0", "synth"],
                                      ["eval", "--data", "x"]])
    def test_usage(self, argv, capsys):
        code, out = run(argv, capsys)
        assert code == 1 and out.err.startswith("dualrec: error[usage]:")

    def test_config_errors(self, tmp_path, trained, capsys):
        data = trained / "data"
        cases = [
            ["train", "--data", data, "--run-dir", tmp_path / "a", "--set", "bogus=1"],
            ["train", "--data", data, "--run-dir", tmp_path / "b", "--set", "vocab=10"],
            ["train", "--data", data, "--run-dir", tmp_path / "c", "--set", "d=abc"],
            ["train", "--run-dir", tmp_path / "d"],
            ["synth", "--vocab", "19", "--out", tmp_path / "e"],
        ]
        for argv in cases:
            code, out = run(argv, capsys)
            assert code == 2, argv
            assert out.err.startswith("dualrec: error[config]:")
        (tmp_path / "bad.json").write_text("{not json")
        assert run(["train", "--config", tmp_path / "bad.json", "--data", data])[0] == 2

    def test_data_errors(self, tmp_path, trained, capsys):
        (tmp_path / "bad.tsv").write_text("1\t2\n")
        code, out = run(["prep", tmp_path / "bad.tsv", "--out", tmp_path / "o"], capsys)
        assert code == 3 and "bad.tsv:1:" in out.err
        assert run(["eval", "--checkpoint", tmp_path / "missing", "--data", trained / "data"])[0] == 3
        (tmp_path / "junk.mask").write_text("eight 2 0.5\n")
        assert run(["eval", "--checkpoint", trained / "run" / "checkpoints" / "epoch_1",
                    "--data", trained / "data", "--mask", tmp_path / "junk.mask"])[0] == 3
        assert run(["plotdata", tmp_path / "nothing.csv", "--out", tmp_path / "p"])[0] == 3
        assert not (tmp_path / "p").exists()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_error(self, tmp_path, trained, capsys):
        code, out = run(["train", "--data", trained / "data", "--run-dir", tmp_path / "r", "--epochs", "2",
                         "--lr", "1e300", "--deterministic", *TINY_SETS], capsys)
        assert code == 4 and out.err.startswith("dualrec: error[numeric]:")


class TestBenchCli:
    def test_small_bench_writes_csvs(self, tmp_path, capsys):
        code, out = run(["bench", "--suite", "temporal", "--n", "16", "32", "--batch", "2",
                         "--run-dir", tmp_path], capsys)
        assert code == 0
        lines = (tmp_path / "bench" / "temporal.csv").read_text().splitlines()
        assert lines[0] == "case,n,batch,median_ms,p90_ms,flops_reduction"
        assert len(lines) == 1 + 2 * 4
        assert run(["plotdata", tmp_path / "bench" / "temporal.csv", "--out", tmp_path / "p"])[0] == 0
        assert (tmp_path / "p" / "exp_power_b2.tsv").is_file()

    def test_too_few_reps_is_config_error(self, tmp_path):
        assert run(["bench", "--suite", "temporal", "--n", "16", "--reps", "3", "--out", tmp_path])[0] == 2
        assert run(["bench", "--suite", "temporal", "--n", "16", "--warmups", "1", "--out", tmp_path])[0] == 2
