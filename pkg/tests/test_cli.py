"""End-to-end command-line behaviour, exit codes and determinism."""

import subprocess
import sys

import numpy as np
import pytest

from cnsf.checkpoint import checkpoint_load
from cnsf.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from cnsf.simulator import read_wav, write_wav

SIM = ["--set", "source_seconds=1.0", "--set", "conditions=2spk", "--set", "t60_max=0.15"]
SMALL = ["--profile", "toy", "--set", "win_length=64", "--set", "hop=32", "--set", "n_fft=64"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--count", "6", "--seed", "4", "--out", str(root / "data"), *SIM]) == EXIT_OK
    code = main(
        ["train", "--manifest", str(root / "data" / "manifest.tsv"), "--out", str(root / "run"), *SMALL,
         "--set", "max_steps=3", "--set", "batch_size=2", "--set", "valid_fraction=0.34"]
    )
    assert code == EXIT_OK
    return root


class TestUsage:
    def test_no_subcommand(self, capsys):
        assert main([]) == EXIT_USAGE
        assert "subcommand" in capsys.readouterr().err

    def test_unknown_flag(self):
        assert main(["simulate", "--count", "1", "--bogus"]) == EXIT_USAGE

    def test_missing_required(self):
        assert main(["simulate", "--out", "x"]) == EXIT_USAGE

    def test_bad_set(self):
        assert main(["simulate", "--count", "1", "--out", "x", "--set", "novalue"]) == EXIT_USAGE
        assert main(["simulate", "--count", "1", "--out", "x", "--set", "nokey=1"]) == EXIT_USAGE

    def test_theta_range(self, workspace, tmp_path):
        ck = str(workspace / "run" / "last.ckpt")
        mix = str(workspace / "data" / "scene00000_mix.wav")
        assert main(["separate", "--checkpoint", ck, "--mixture", mix, "--theta", "180", "--out", str(tmp_path / "o.wav")]) == EXIT_USAGE

    def test_print_config(self, capsys):
        assert main(["train", "--manifest", "m", "--mode", "cnsf-mvdr", "--set", "hop=128", "--print-config"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "mode = cnsf-mvdr" in out and "hop = 128" in out

    def test_config_file_then_flags(self, tmp_path, capsys):
        p = tmp_path / "c.ini"
        p.write_text("[model]\nmode = cnsf-mvdr\n[train]\nbatch_size = 8\n")
        assert main(["train", "--manifest", "m", "--config", str(p), "--set", "batch_size=2", "--print-config"]) == 0
        out = capsys.readouterr().out
        assert "mode = cnsf-mvdr" in out and "batch_size = 2" in out

    def test_bad_config_file(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nfoo = 1\n")
        assert main(["train", "--manifest", "m", "--config", str(p)]) == EXIT_USAGE

    def test_console_script_module(self):
        r = subprocess.run([sys.executable, "-m", "cnsf.cli"], capture_output=True, text=True)
        assert r.returncode == EXIT_USAGE


class TestSimulate:
    def test_fixed_seed_manifest_is_byte_identical(self, workspace, tmp_path):
        assert main(["simulate", "--count", "6", "--seed", "4", "--out", str(tmp_path / "again"), *SIM]) == 0
        assert (tmp_path / "again" / "manifest.tsv").read_bytes() == (workspace / "data" / "manifest.tsv").read_bytes()

    def test_out_is_a_file(self, tmp_path):
        f = tmp_path / "f"
        f.write_text("x")
        assert main(["simulate", "--count", "1", "--out", str(f), *SIM]) == EXIT_DATA


class TestTrain:
    def test_outputs(self, workspace):
        run = workspace / "run"
        for name in ("best.ckpt", "last.ckpt", "config.ini", "train_log.tsv", "train_steps.tsv"):
            assert (run / name).exists(), name
        steps = (run / "train_steps.tsv").read_text().splitlines()
        assert steps[0] == "step\tloss" and len(steps) == 4

    def test_first_step_losses_reproduce(self, workspace, tmp_path):
        args = ["train", "--manifest", str(workspace / "data" / "manifest.tsv"), "--out", str(tmp_path / "r"), *SMALL,
                "--set", "max_steps=3", "--set", "batch_size=2", "--set", "valid_fraction=0.34"]
        assert main(args) == EXIT_OK
        assert (tmp_path / "r" / "train_steps.tsv").read_text() == (workspace / "run" / "train_steps.tsv").read_text()
        a = checkpoint_load(tmp_path / "r" / "last.ckpt")
        b = checkpoint_load(workspace / "run" / "last.ckpt")
        assert a.tensors.keys() == b.tensors.keys()
        assert all(a.tensors[k].tobytes() == b.tensors[k].tobytes() for k in a.tensors)
        # only the output directory recorded in the metadata differs
        assert {k: v for k, v in a.meta["config"].items() if k != "out"} == {
            k: v for k, v in b.meta["config"].items() if k != "out"
        }

    def test_missing_manifest(self, tmp_path):
        assert main(["train", "--manifest", str(tmp_path / "none.tsv"), "--out", str(tmp_path / "r")]) == EXIT_DATA

    def test_channel_mismatch(self, workspace, tmp_path):
        args = ["train", "--manifest", str(workspace / "data" / "manifest.tsv"), "--out", str(tmp_path / "r"),
                "--set", "array=paper", *SMALL]
        assert main(args) == EXIT_DATA

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverging_run_exits_numeric(self, workspace, tmp_path):
        args = ["train", "--manifest", str(workspace / "data" / "manifest.tsv"), "--out", str(tmp_path / "r"), *SMALL,
                "--set", "max_steps=4", "--set", "batch_size=2", "--set", "learning_rate=inf"]
        assert main(args) == EXIT_NUMERIC


class TestSeparateEvaluate:
    def test_separate_writes_mono(self, workspace, tmp_path):
        mix = workspace / "data" / "scene00000_mix.wav"
        out = tmp_path / "est.wav"
        code = main(["separate", "--checkpoint", str(workspace / "run" / "last.ckpt"), "--mixture", str(mix),
                     "--theta", "45", "--out", str(out)])
        assert code == EXIT_OK
        est = read_wav(out)
        assert est.shape == (1, read_wav(mix).shape[1])
        assert np.all(np.isfinite(est))

    def test_separate_wrong_channels(self, workspace, tmp_path):
        write_wav(tmp_path / "three.wav", np.zeros((3, 1000)))
        code = main(["separate", "--checkpoint", str(workspace / "run" / "last.ckpt"), "--mixture",
                     str(tmp_path / "three.wav"), "--theta", "45", "--out", str(tmp_path / "o.wav")])
        assert code == EXIT_DATA

    def test_corrupt_checkpoint(self, workspace, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"CNSF\x01")
        code = main(["separate", "--checkpoint", str(tmp_path / "bad.ckpt"), "--mixture",
                     str(workspace / "data" / "scene00000_mix.wav"), "--theta", "45", "--out", str(tmp_path / "o.wav")])
        assert code == EXIT_DATA

    def test_evaluate_table(self, workspace, tmp_path, capsys):
        out = tmp_path / "table.tsv"
        code = main(["evaluate", "--checkpoint", str(workspace / "run" / "last.ckpt"), "--manifest",
                     str(workspace / "data" / "manifest.tsv"), "--out", str(out)])
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0].split("\t") == ["system", "2spk", "ave"]
        assert capsys.readouterr().out == out.read_text()

    def test_evaluate_identity_equals_mixture_row(self, workspace, tmp_path):
        out = tmp_path / "t.tsv"
        assert main(["evaluate", "--identity", "--manifest", str(workspace / "data" / "manifest.tsv"), "--out", str(out)]) == 0
        mixture_row, estimate_row = (l.split("\t")[1:] for l in out.read_text().splitlines()[1:3])
        assert mixture_row == estimate_row

    def test_evaluate_needs_model(self, workspace):
        assert main(["evaluate", "--manifest", str(workspace / "data" / "manifest.tsv")]) == EXIT_USAGE


class TestAnalyzeMask:
    def _args(self, workspace, out, *extra):
        d = workspace / "data"
        return ["analyze-mask", "--mixture", str(d / "scene00001_mix.wav"), "--reference",
                str(d / "scene00001_target.wav"), "--theta", "30", "--out", str(out), *extra]

    def test_oracle_columns_match(self, workspace, tmp_path):
        out = tmp_path / "m.tsv"
        assert main(self._args(workspace, out, "--oracle")) == EXIT_OK
        rows = np.loadtxt(out, skiprows=1)
        assert rows.shape[1] == 6
        np.testing.assert_array_equal(rows[:, 2:4], rows[:, 4:6])
        assert rows[:, 1].max() == 256

    def test_with_checkpoint(self, workspace, tmp_path):
        out = tmp_path / "m.tsv"
        ck = str(workspace / "run" / "last.ckpt")
        assert main(self._args(workspace, out, "--checkpoint", ck)) == EXIT_OK
        assert (tmp_path / "m.tsv").read_text().startswith("t\tf\ttrue_re\ttrue_im\test_re\test_im\n")

    def test_reference_length_mismatch(self, workspace, tmp_path):
        write_wav(tmp_path / "short.wav", np.zeros(100))
        d = workspace / "data"
        args = ["analyze-mask", "--oracle", "--mixture", str(d / "scene00001_mix.wav"), "--reference",
                str(tmp_path / "short.wav"), "--theta", "30", "--out", str(tmp_path / "m.tsv")]
        assert main(args) == EXIT_DATA

    def test_needs_model_or_oracle(self, workspace, tmp_path):
        assert main(self._args(workspace, tmp_path / "m.tsv")) == EXIT_USAGE
