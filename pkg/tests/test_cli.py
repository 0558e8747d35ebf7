"""Command-line surface: outputs, exit codes, determinism, fault injection."""

import json
import subprocess
import sys

import pytest

from carl_lab import cli

SMALL_CONFIG = """\
[data]
num_classes = 4
per_class = 16
dim = 8
separation = 4.0
noise_std = 0.5
mask_prob = 0.1

[model]
hidden_dims = 8
embedding_dim = 4

[objective]
num_prototypes = 4
decay_epochs = 2

[trainer]
epochs = 1
batch_size = 16
lr_start = 0.1
lr_end = 0.0001

[eval]
probe_epochs = 5
probe_seeds = 2
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG)
    return path


class TestTrain:
    def test_one_epoch_run_writes_one_data_row(self, config_path, tmp_path):
        out = tmp_path / "run"
        assert cli.main(["train", str(config_path), "--out", str(out), "--seed", "0"]) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert len(lines) == 2  # header + 1 epoch
        assert lines[0].startswith("epoch,total_loss,consistency_loss,kl_value")
        assert (out / "checkpoint.bin").is_file()
        assert (out / "config.resolved.cfg").is_file()
        jsonl = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
        assert len(jsonl) == 1 and "wall_seconds" in jsonl[0]

    def test_missing_config_exits_2(self, tmp_path):
        assert cli.main(["train", str(tmp_path / "none.cfg"), "--out", str(tmp_path / "x")]) == 2

    def test_bad_config_exits_2_with_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[data]\nwidgets = 3\n")
        assert cli.main(["train", str(bad), "--out", str(tmp_path / "x")]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_same_config_and_seed_byte_identical(self, config_path, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli.main(["train", str(config_path), "--out", str(out1), "--seed", "3"]) == 0
        assert cli.main(["train", str(config_path), "--out", str(out2), "--seed", "3"]) == 0
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()
        assert (out1 / "checkpoint.bin").read_bytes() == (out2 / "checkpoint.bin").read_bytes()


class TestEval:
    def test_eval_prints_machine_parseable_line(self, config_path, tmp_path, capsys):
        out = tmp_path / "run"
        cli.main(["train", str(config_path), "--out", str(out), "--seed", "0"])
        rc = cli.main(["eval", str(out / "checkpoint.bin"),
                       "--config", str(config_path), "--seeds", "2"])
        assert rc == 0
        line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("top1")][0]
        tag, mean, std = line.split()
        assert tag == "top1" and 0.0 <= float(mean) <= 1.0 and float(std) >= 0.0
        rows = [json.loads(l) for l in (out / "eval.jsonl").read_text().splitlines()]
        assert len(rows) == 2
        assert all(0.0 <= row["top1_accuracy"] <= 1.0 for row in rows)

    def test_invalid_checkpoint_exits_4(self, config_path, tmp_path):
        bogus = tmp_path / "bogus.bin"
        bogus.write_bytes(b"not a checkpoint")
        assert cli.main(["eval", str(bogus), "--config", str(config_path)]) == 4

    def test_version_mismatch_exits_4(self, config_path, tmp_path):
        out = tmp_path / "run"
        cli.main(["train", str(config_path), "--out", str(out), "--seed", "0"])
        blob = bytearray((out / "checkpoint.bin").read_bytes())
        blob[4] = 42
        tampered = tmp_path / "tampered.bin"
        tampered.write_bytes(bytes(blob))
        assert cli.main(["eval", str(tampered), "--config", str(config_path)]) == 4

    def test_lr_zero_checkpoint_probes_like_random_init(self, tmp_path, capsys):
        # training with lr 0 must leave the random-init features untouched
        frozen_cfg = tmp_path / "frozen.cfg"
        frozen_cfg.write_text(SMALL_CONFIG.replace("lr_start = 0.1", "lr_start = 0.0")
                              .replace("lr_end = 0.0001", "lr_end = 0.0")
                              .replace("normalize_energies = false", ""))
        out = tmp_path / "frozen_run"
        assert cli.main(["train", str(frozen_cfg), "--out", str(out), "--seed", "1"]) == 0
        assert cli.main(["eval", str(out / "checkpoint.bin"),
                         "--config", str(frozen_cfg), "--seeds", "1"]) == 0
        frozen_top1 = float(capsys.readouterr().out.split()[1])

        from carl_lab.evaluation import extract_features, train_linear_probe
        from carl_lab.runconfig import load_config, to_train_config
        from carl_lab.trainer import init_train_state

        config = load_config(frozen_cfg)
        state = init_train_state(to_train_config(config, seed=1))
        dataset = cli._build_dataset(config)
        feats = extract_features(state.encoder, dataset)
        reference = train_linear_probe(feats, dataset.labels, epochs=5, lr=0.03,
                                       seed=0).top1_accuracy
        assert abs(frozen_top1 - reference) < 1e-6  # printed at 6 decimals


class TestCifarEndToEnd:
    def test_train_and_eval_on_fixture_batches(self, tmp_path, capsys):
        import numpy as np

        from carl_lab.data import write_cifar10_binary

        rng = np.random.default_rng(0)
        cifar_dir = tmp_path / "cifar"
        cifar_dir.mkdir()
        for name, n in (("data_batch_1.bin", 48), ("test_batch.bin", 16)):
            write_cifar10_binary(cifar_dir / name,
                                 rng.integers(0, 4, size=n, dtype=np.uint8),
                                 rng.integers(0, 256, size=(n, 3072), dtype=np.uint8))
        config = tmp_path / "cifar.cfg"
        config.write_text(f"""
[data]
kind = cifar10
cifar_dir = {cifar_dir}
[model]
hidden_dims = 8
embedding_dim = 4
[objective]
num_prototypes = 4
decay_epochs = 1
[trainer]
epochs = 1
batch_size = 16
lr_start = 0.05
lr_end = 0.0001
[eval]
probe_epochs = 3
""")
        out = tmp_path / "cifar_run"
        assert cli.main(["train", str(config), "--out", str(out), "--seed", "0"]) == 0
        assert (out / "metrics.csv").read_text().count("\n") == 2
        rc = cli.main(["eval", str(out / "checkpoint.bin"),
                       "--config", str(config), "--seeds", "1"])
        assert rc == 0
        assert capsys.readouterr().out.startswith("top1 ")


class TestSweep:
    def test_vary_prototypes_counts(self, config_path, tmp_path):
        out = tmp_path / "sweep"
        rc = cli.main(["sweep", str(config_path),
                       "--vary", "objective.num_prototypes=2,4",
                       "--seeds", "2", "--out", str(out)])
        assert rc == 0
        lines = (out / "summary.csv").read_text().splitlines()
        assert len(lines) == 3  # header + 2 cells
        assert lines[0] == "key,value,seeds,top1_mean,top1_std,perplexity_mean,perplexity_std"
        for k in (2, 4):
            for seed in (0, 1):
                assert (out / f"num_prototypes={k}" / f"seed{seed}" / "metrics.csv").is_file()

    def test_vary_schedule_pairs(self, config_path, tmp_path):
        out = tmp_path / "sweep_schedule"
        rc = cli.main(["sweep", str(config_path), "--vary", "schedule=0:0,1:2",
                       "--seeds", "1", "--out", str(out)])
        assert rc == 0
        rows = (out / "summary.csv").read_text().splitlines()[1:]
        assert [row.split(",")[1] for row in rows] == ["0:0", "1:2"]

    def test_unknown_key_exits_2(self, config_path, tmp_path):
        rc = cli.main(["sweep", str(config_path), "--vary", "warp=1,2",
                       "--out", str(tmp_path / "s")])
        assert rc == 2


class TestGradcheck:
    def test_default_build_exits_0(self, capsys):
        assert cli.main(["gradcheck", "--trials", "2"]) == 0
        out = capsys.readouterr().out
        assert "worst overall" in out

    def test_single_trial_fast_mode(self):
        assert cli.main(["gradcheck", "--trials", "1"]) == 0

    def test_injected_wrong_gradient_exits_5(self, monkeypatch, capsys):
        from carl_lab import autodiff as ad

        original = ad.softmax_rows

        def wrong_softmax(x):
            out = original(x)
            if out._grad_fn is not None:
                fn = out._grad_fn
                out._grad_fn = lambda g: tuple(
                    None if p is None else p * 1.01 for p in fn(g))
            return out

        monkeypatch.setattr(ad, "softmax_rows", wrong_softmax)
        assert cli.main(["gradcheck", "--trials", "1"]) == 5
        assert "FAILED compositions" in capsys.readouterr().err


class TestReport:
    def test_run_figures(self, config_path, tmp_path):
        out = tmp_path / "run"
        cli.main(["train", str(config_path), "--out", str(out), "--seed", "0"])
        assert cli.main(["report", str(out)]) == 0
        assert (out / "losses.png").stat().st_size > 0
        assert (out / "usage.png").stat().st_size > 0

    def test_sweep_figures(self, config_path, tmp_path):
        out = tmp_path / "sweep"
        cli.main(["sweep", str(config_path), "--vary", "objective.num_prototypes=2,4",
                  "--seeds", "1", "--out", str(out)])
        assert cli.main(["report", str(out)]) == 0
        assert (out / "sweep_accuracy.png").stat().st_size > 0
        assert (out / "sweep_perplexity.png").stat().st_size > 0

    def test_empty_directory_exits_2(self, tmp_path):
        assert cli.main(["report", str(tmp_path)]) == 2


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run([sys.executable, "-m", "carl_lab", "gradcheck",
                               "--trials", "1"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert "worst overall" in proc.stdout
