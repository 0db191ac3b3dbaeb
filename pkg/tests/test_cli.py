"""Command-line harness: commands, exit codes, reproducibility."""
import hashlib
import subprocess
import sys

import numpy as np
import pytest

from cofill.cli import main
from cofill.data import load_series


TOY_CONFIG = """\
values_path = {values}
edges_path = {edges}
batch_size = 4
time_length = 16
window_stride = 8
epochs = 2
learning_rate = 0.001
lr_min = 0.0001
channel_size = 8
noise_layers = 1
heads = 2
emb_dim = 16
diffusion_steps = 5
n_samples = 2
val_samples = 1
seed = 0
"""


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    assert main(["synth", "--nodes", "3", "--length", "240", "--seed", "1",
                 "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def toy_config(dataset, tmp_path_factory):
    cfg_path = tmp_path_factory.mktemp("cfg") / "toy.cfg"
    cfg_path.write_text(TOY_CONFIG.format(values=dataset / "values.csv",
                                          edges=dataset / "edges.csv"))
    return cfg_path


@pytest.fixture(scope="module")
def checkpoint(toy_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("ck") / "model.ckpt"
    assert main(["train", "--config", str(toy_config), "--out", str(out)]) == 0
    return out


class TestSynth:
    def test_writes_loadable_dataset(self, dataset):
        series = load_series(dataset / "values.csv", dataset / "edges.csv")
        assert series.n_nodes == 3
        assert series.n_steps == 240
        assert series.mask.all()

    def test_deterministic_for_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["synth", "--nodes", "2", "--length", "40", "--seed", "6",
              "--out", str(a)])
        main(["synth", "--nodes", "2", "--length", "40", "--seed", "6",
              "--out", str(b)])
        assert (a / "values.csv").read_bytes() == (b / "values.csv").read_bytes()


class TestTrain:
    def test_writes_checkpoint_and_log(self, checkpoint):
        assert checkpoint.exists()
        log = checkpoint.parent / (checkpoint.name + ".log.csv")
        text = log.read_text().splitlines()
        assert text[0] == "epoch,step,loss,lr,val_mae"
        assert len(text) > 1

    def test_identical_seeds_identical_logs(self, toy_config, tmp_path):
        logs = []
        for name in ("a", "b"):
            out = tmp_path / f"{name}.ckpt"
            log = tmp_path / f"{name}.log.csv"
            assert main(["train", "--config", str(toy_config), "--out",
                         str(out), "--log", str(log), "--seed", "3"]) == 0
            logs.append(log.read_bytes())
        assert logs[0] == logs[1]

    def test_missing_data_file_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("values_path = /definitely/not/here.csv\n")
        assert main(["train", "--config", str(cfg)]) == 2
        assert "/definitely/not/here.csv" in capsys.readouterr().err

    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("wibble = 3\n")
        assert main(["train", "--config", str(cfg)]) == 2
        assert "wibble" in capsys.readouterr().err

    def test_config_required(self, capsys):
        assert main(["train"]) == 2


class TestImpute:
    def test_fully_observed_output_equals_input(self, checkpoint, dataset,
                                                tmp_path):
        out = tmp_path / "imp.csv"
        with pytest.warns(UserWarning):
            code = main(["impute", "--checkpoint", str(checkpoint),
                         "--data", str(dataset / "values.csv"),
                         "--edges", str(dataset / "edges.csv"),
                         "--out", str(out)])
        assert code == 0
        original = load_series(dataset / "values.csv")
        result = load_series(out)
        assert np.array_equal(result.values, original.values)

    def test_gaps_filled_and_reproducible(self, checkpoint, dataset, tmp_path):
        from cofill.data import mask_point, save_series
        series = load_series(dataset / "values.csv", dataset / "edges.csv")
        masked = series.with_mask(mask_point(series, 0.3,
                                             np.random.default_rng(0)))
        gap_csv = tmp_path / "gaps.csv"
        save_series(masked, gap_csv)

        hashes = []
        for name in ("x", "y"):
            out = tmp_path / f"{name}.csv"
            code = main(["impute", "--checkpoint", str(checkpoint),
                         "--data", str(gap_csv),
                         "--edges", str(dataset / "edges.csv"),
                         "--n-samples", "1", "--seed", "7",
                         "--out", str(out)])
            assert code == 0
            hashes.append(hashlib.sha256(out.read_bytes()).hexdigest())
        assert hashes[0] == hashes[1]
        reloaded = load_series(tmp_path / "x.csv")
        assert reloaded.mask.all()  # zero missing entries after imputation

    def test_samples_archive(self, checkpoint, dataset, tmp_path):
        from cofill.data import mask_point, save_series
        series = load_series(dataset / "values.csv", dataset / "edges.csv")
        masked = series.with_mask(mask_point(series, 0.3,
                                             np.random.default_rng(0)))
        gap_csv = tmp_path / "gaps.csv"
        save_series(masked, gap_csv)
        arch = tmp_path / "samples.npz"
        assert main(["impute", "--checkpoint", str(checkpoint),
                     "--data", str(gap_csv),
                     "--edges", str(dataset / "edges.csv"),
                     "--n-samples", "2", "--seed", "1",
                     "--out", str(tmp_path / "o.csv"),
                     "--samples-out", str(arch)]) == 0
        with np.load(arch) as z:
            assert z["samples"].shape == (2, 3, 240)
            assert z["target_mask"].shape == (3, 240)

    def test_node_count_mismatch_cites_both(self, checkpoint, tmp_path,
                                            capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("time,node_0\n0,1.0\n1,2.0\n")
        assert main(["impute", "--checkpoint", str(checkpoint),
                     "--data", str(bad), "--out",
                     str(tmp_path / "o.csv")]) == 1
        err = capsys.readouterr().err
        assert "1" in err and "3" in err


class TestEvaluate:
    def test_report_has_all_methods(self, checkpoint, dataset, tmp_path):
        out = tmp_path / "report.csv"
        assert main(["evaluate", "--checkpoint", str(checkpoint),
                     "--data", str(dataset / "values.csv"),
                     "--edges", str(dataset / "edges.csv"),
                     "--scenario", "point", "--ratio", "0.25",
                     "--seeds", "0,1", "--n-samples", "2",
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "scenario,method,seed,mae,mse,crps,n_targets"
        methods = {line.split(",")[1] for line in lines[1:]}
        assert methods == {"cofill", "mean", "linear"}
        agg = [l for l in lines[1:] if l.split(",")[2] == "agg"]
        assert len(agg) == 3
        for line in agg:
            mae_field = line.split(",")[3]
            assert float(mae_field.split("±")[1]) >= 0.0

    def test_byte_reproducible(self, checkpoint, dataset, tmp_path):
        blobs = []
        for name in ("r1", "r2"):
            out = tmp_path / f"{name}.csv"
            assert main(["evaluate", "--checkpoint", str(checkpoint),
                         "--data", str(dataset / "values.csv"),
                         "--edges", str(dataset / "edges.csv"),
                         "--seeds", "0,1", "--n-samples", "2",
                         "--out", str(out)]) == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]


class TestAblateSweep:
    def test_single_variant_single_row(self, toy_config, tmp_path):
        out = tmp_path / "ab.csv"
        assert main(["ablate", "--config", str(toy_config),
                     "--variants", "full", "--seeds", "0",
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "variant,seed,mae,mse,crps"
        assert len(lines) == 2
        assert lines[1].startswith("full,0,")

    def test_unknown_variant_lists_valid(self, toy_config, tmp_path, capsys):
        assert main(["ablate", "--config", str(toy_config),
                     "--variants", "no_everything",
                     "--out", str(tmp_path / "x.csv")]) == 2
        assert "no_cross" in capsys.readouterr().err

    def test_sweep_beta(self, toy_config, tmp_path):
        out = tmp_path / "sw.csv"
        assert main(["sweep", "--config", str(toy_config), "--param",
                     "beta_T", "--values", "0.2,0.3", "--seeds", "0",
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "param,value,mae,mse"
        assert len(lines) == 3
        assert lines[1].startswith("beta_T,0.2,")
        assert lines[2].startswith("beta_T,0.3,")

    def test_non_sweepable_param(self, toy_config, tmp_path, capsys):
        assert main(["sweep", "--config", str(toy_config), "--param",
                     "epochs", "--values", "1,2",
                     "--out", str(tmp_path / "x.csv")]) == 2
        assert "not sweepable" in capsys.readouterr().err


class TestEntryPoint:
    def test_console_script_help(self):
        out = subprocess.run([sys.executable, "-m", "cofill.cli", "--help"],
                             capture_output=True, text=True)
        assert out.returncode == 0
        for cmd in ("train", "impute", "evaluate", "ablate", "sweep", "synth"):
            assert cmd in out.stdout
