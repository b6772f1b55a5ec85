"""
Integration tests for the ssb-guard command line
"""
import pytest

from ssb_guard.cli import build_parser, companion_path, main
from ssb_guard.dataset import load_dataset, manifest_path, read_manifest
from ssb_guard.detector import load_thresholds
from ssb_guard.evaluation import read_decisions_csv

CONFIG = """\
# small scenario for tests
scenario.n_fft = 512
scenario.n_rb = 20
scenario.sjnr_grid_db = -10:20:10
scenario.distance_grid_m = 50
scenario.modulations = QPSK
layout.conv_channels = 4,4,4
layout.hidden_units = 8
train.batch_size = 8
train.max_epochs = 2
train.validation_frequency = 2
"""


@pytest.fixture
def workspace(temp_dir):
    (temp_dir / "run.cfg").write_text(CONFIG)
    return temp_dir


def run(workspace, *args: str) -> int:
    return main(["--config", str(workspace / "run.cfg"), "--log-format", "text", *args])


class TestCommands:
    """Test the commands chained the way a user runs them"""

    def test_full_chain(self, workspace, capsys):
        """Test gen, train, calibrate, detect and eval produce their files"""
        train_bin, cal_bin = workspace / "train.bin", workspace / "cal.bin"
        model1 = workspace / "model.bin"
        model2 = companion_path(model1, "dnn2")
        thresholds = workspace / "thresholds.txt"
        decisions = workspace / "decisions.csv"
        report = workspace / "report"

        assert run(workspace, "--seed", "1", "gen", "--out", str(train_bin),
                   "--obs-per-class", "12") == 0
        assert run(workspace, "--seed", "2", "gen", "--out", str(cal_bin),
                   "--obs-per-class", "8") == 0
        assert load_dataset(train_bin).n_obs == 24
        _, draws = read_manifest(manifest_path(train_bin))
        assert len(draws) == 24

        assert run(workspace, "train", str(train_bin), "--out", str(model1),
                   "--cascade", "--sjnr-cutoff", "0") == 0
        assert model2.exists()
        held_out = companion_path(model1, "calibration")
        assert load_dataset(held_out).n_obs == 4
        assert companion_path(model1, "log", ".csv").read_text().startswith("# batch_size=8")

        assert run(workspace, "calibrate", str(held_out), "--models", str(model1), str(model2),
                   "--delta-fa", "0.25", "--out", str(thresholds)) == 0
        assert load_thresholds(thresholds).delta_fa == 0.25

        assert run(workspace, "detect", str(cal_bin), "--models", str(model1), str(model2),
                   "--thresholds", str(thresholds), "--out", str(decisions)) == 0
        assert len(read_decisions_csv(decisions)) == 16

        assert run(workspace, "eval", str(cal_bin), "--models", str(model1), str(model2),
                   "--thresholds", str(thresholds), "--calibration", str(cal_bin),
                   "--out-dir", str(report)) == 0
        for name in ("roc.csv", "confusion.csv", "sjnr_miss.csv"):
            assert (report / name).exists()

        assert run(workspace, "eval", str(cal_bin), "--decisions", str(decisions),
                   "--out-dir", str(workspace / "report2")) == 0
        assert "dtddnn: accuracy" in capsys.readouterr().out

    def test_seed_reproducible(self, workspace):
        """Test the same seed writes byte-identical datasets"""
        first, second = workspace / "a.bin", workspace / "b.bin"
        for out in (first, second):
            assert run(workspace, "--seed", "5", "gen", "--out", str(out),
                       "--obs-per-class", "4") == 0
        assert first.read_bytes() == second.read_bytes()


class TestErrors:
    """Test exit codes for bad input"""

    def test_missing_config(self, temp_dir, capsys):
        """Test a missing config file exits with 1"""
        code = main(["--config", str(temp_dir / "absent.cfg"), "gen",
                     "--out", str(temp_dir / "x.bin")])
        assert code == 1
        assert "config file not found" in capsys.readouterr().err

    def test_corrupt_dataset(self, workspace, capsys):
        """Test training on a corrupt dataset exits with 1"""
        bad = workspace / "corrupt.bin"
        bad.write_bytes(b"NOTADATASET")
        assert run(workspace, "train", str(bad), "--out", str(workspace / "m.bin")) == 1
        assert capsys.readouterr().err.startswith("error: ")

    def test_bad_delta_fa(self, workspace):
        """Test an out-of-range probability is a usage error"""
        with pytest.raises(SystemExit) as exc_info:
            run(workspace, "calibrate", "cal.bin", "--models", "a.bin", "b.bin",
                "--delta-fa", "1.5", "--out", "t.txt")
        assert exc_info.value.code == 2

    def test_bad_threads(self):
        """Test a non-positive worker count is a usage error"""
        with pytest.raises(SystemExit) as exc_info:
            build_parser().parse_args(["--threads", "0", "gen", "--out", "x.bin"])
        assert exc_info.value.code == 2

    def test_eval_without_inputs(self, workspace, capsys):
        """Test eval needs decisions or models"""
        data = workspace / "d.bin"
        assert run(workspace, "gen", "--out", str(data), "--obs-per-class", "2") == 0
        assert run(workspace, "eval", str(data), "--out-dir", str(workspace / "r")) == 1
        assert "--decisions" in capsys.readouterr().err

    def test_missing_input_file(self, workspace, capsys):
        """Test a missing model file exits with 1 and names the path"""
        data = workspace / "d.bin"
        assert run(workspace, "gen", "--out", str(data), "--obs-per-class", "2") == 0
        absent = workspace / "absent.bin"
        code = run(workspace, "calibrate", str(data), "--models", str(absent), str(absent),
                   "--out", str(workspace / "t.txt"))
        assert code == 1
        assert f"File not found: {absent}" in capsys.readouterr().err

    def test_missing_dataset(self, workspace, capsys):
        """Test training on a dataset that does not exist exits with 1"""
        absent = workspace / "absent.bin"
        assert run(workspace, "train", str(absent), "--out", str(workspace / "m.bin")) == 1
        assert "File not found" in capsys.readouterr().err
