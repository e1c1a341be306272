"""
Integration tests for full experiment sweeps and the command line.
"""
import pytest
import sys
import csv
from pathlib import Path

import numpy as np

# Add parent directory to path to import modules
sys.path.insert(0, str(Path(__file__).parent.parent))

import pr
from experiment.config import parse_config
from experiment.harness import resolve_output_dir, run_experiment, run_simulation, sweep_cells
from utils.containers import read_container, write_container
from utils.processing_state import load_sweep_state, verify_manifest


TINY_CDP = """\
name = tiny
pattern = cdp
image = phantom:smooth:32
delta = 20
algorithm = pr, amm, palm
patch = 4
outer_iters = 3
baseline_iters = 5
eta = 0.05
r = 0.05
tau = 1e-2
c_k = 32
d_k = 1e4
e_k = 2
"""

TINY_PTYCHO = """\
name = tiny-ptycho
pattern = ptycho
image = phantom:disks:32
frame_side = 16
slide_dist = 8
delta = 5
algorithm = pr, palm
patch = 4
outer_iters = 2
baseline_iters = 5
eta = 0.05
r = 0.05
tau = 1e-2
c_k = 32
d_k = 1e4
e_k = 2
"""


def _summary_rows(experiment_dir):
    with open(experiment_dir / "summary.csv", newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


class TestExperimentSweep:
    """Integration test suite for run_experiment."""

    @pytest.mark.integration
    @pytest.mark.high
    def test_11_1_complete_cdp_sweep(self, tmp_path):
        """Test Case 11.1: Complete Sweep Writes Traces, Images, Summary and Manifest"""
        spec = parse_config(TINY_CDP)
        assert run_experiment(spec, str(tmp_path)) == 0
        experiment_dir = tmp_path / "tiny"
        rows = _summary_rows(experiment_dir)
        assert len(rows) == 3
        assert all(row["status"] == "success" for row in rows)
        assert all(np.isfinite(float(row["snr_db"])) for row in rows)
        for cell in sweep_cells(spec):
            cell_dir = experiment_dir / cell.cell_id
            assert (cell_dir / "trace.csv").exists()
            assert (cell_dir / "recon.cprm").exists()
            assert (cell_dir / "dictionary.cprd").exists() == (cell.algorithm != "pr")
        assert "SNR (dB)" in (experiment_dir / "summary.md").read_text(encoding="utf-8")
        assert verify_manifest(experiment_dir) == {}

    @pytest.mark.integration
    @pytest.mark.high
    def test_11_2_reruns_are_byte_identical(self, tmp_path):
        """Test Case 11.2: Same Config and Seeds Give Identical Artifacts"""
        spec = parse_config(TINY_CDP)
        run_experiment(spec, str(tmp_path / "first"))
        run_experiment(spec, str(tmp_path / "second"))
        for cell in sweep_cells(spec):
            for name in ("trace.csv", "recon.cprm"):
                first = (tmp_path / "first" / "tiny" / cell.cell_id / name).read_bytes()
                second = (tmp_path / "second" / "tiny" / cell.cell_id / name).read_bytes()
                assert first == second

    @pytest.mark.integration
    @pytest.mark.medium
    def test_11_3_workers_match_serial_run(self, tmp_path):
        """Test Case 11.3: A Process Pool Produces the Serial Artifacts"""
        spec = parse_config(TINY_CDP)
        run_experiment(spec, str(tmp_path / "serial"), workers=1)
        assert run_experiment(spec, str(tmp_path / "pool"), workers=2) == 0
        for cell in sweep_cells(spec):
            serial = (tmp_path / "serial" / "tiny" / cell.cell_id / "trace.csv").read_bytes()
            pooled = (tmp_path / "pool" / "tiny" / cell.cell_id / "trace.csv").read_bytes()
            assert serial == pooled

    @pytest.mark.integration
    @pytest.mark.high
    def test_11_4_resume_skips_finished_cells(self, tmp_path, capsys):
        """Test Case 11.4: Resume Skips Done Cells and Reruns Damaged Ones"""
        spec = parse_config(TINY_CDP)
        run_experiment(spec, str(tmp_path))
        experiment_dir = tmp_path / "tiny"
        damaged = sweep_cells(spec)[1]
        (experiment_dir / damaged.cell_id / "recon.cprm").unlink()
        capsys.readouterr()

        assert run_experiment(spec, str(tmp_path), resume=True) == 0
        out = capsys.readouterr().out
        assert out.count("⏭️") >= 2
        assert f"Skipping {damaged.cell_id}" not in out
        assert (experiment_dir / damaged.cell_id / "recon.cprm").exists()
        assert len(_summary_rows(experiment_dir)) == 3

    @pytest.mark.integration
    @pytest.mark.medium
    def test_11_5_changed_config_starts_fresh(self, tmp_path, capsys):
        """Test Case 11.5: Resume with a Different Configuration Reruns Everything"""
        run_experiment(parse_config(TINY_CDP), str(tmp_path))
        capsys.readouterr()
        changed = parse_config(TINY_CDP.replace("tau = 1e-2", "tau = 2e-2"))
        run_experiment(changed, str(tmp_path), resume=True)
        out = capsys.readouterr().out
        assert "different configuration" in out
        assert "⏭️  Skipping" not in out
        state = load_sweep_state(tmp_path / "tiny")
        assert state["config_hash"] == changed.config_hash()

    @pytest.mark.integration
    @pytest.mark.high
    def test_11_6_failing_cell_does_not_stop_sweep(self, tmp_path):
        """Test Case 11.6: A Missing Image Fails Its Cells, Others Still Run"""
        text = TINY_CDP.replace("image = phantom:smooth:32", f"image = phantom:smooth:32, {tmp_path / 'missing.pgm'}")
        text = text.replace("algorithm = pr, amm, palm", "algorithm = amm")
        assert run_experiment(parse_config(text), str(tmp_path / "out")) == 1
        rows = _summary_rows(tmp_path / "out" / "tiny")
        assert [row["status"] for row in rows] == ["success", "failed"]
        state = load_sweep_state(tmp_path / "out" / "tiny")
        assert "FileNotFoundError" in state["cells"][rows[1]["cell"]]["error"]

    @pytest.mark.integration
    @pytest.mark.high
    def test_11_7_ptychography_sweep(self, tmp_path):
        """Test Case 11.7: Ptychography with 16-Pixel Frames and Slide 8"""
        spec = parse_config(TINY_PTYCHO)
        assert run_experiment(spec, str(tmp_path)) == 0
        rows = _summary_rows(tmp_path / "tiny-ptycho")
        assert [row["slide_dist"] for row in rows] == ["8", "8"]
        assert all(np.isfinite(float(row["snr_db"])) for row in rows)

    @pytest.mark.integration
    @pytest.mark.medium
    def test_11_8_output_directory_from_environment(self, tmp_path, monkeypatch):
        """Test Case 11.8: DICPR_OUTPUT_DIR Sets the Base Directory"""
        monkeypatch.setenv("DICPR_OUTPUT_DIR", str(tmp_path / "env"))
        spec = parse_config(TINY_CDP)
        assert resolve_output_dir(spec) == tmp_path / "env" / "tiny"
        assert resolve_output_dir(spec, str(tmp_path / "flag")) == tmp_path / "flag" / "tiny"

    @pytest.mark.integration
    @pytest.mark.medium
    def test_11_9_simulation_only(self, tmp_path):
        """Test Case 11.9: Simulate Writes Counts, Truth and Masks"""
        spec = parse_config(TINY_CDP)
        assert run_simulation(spec, str(tmp_path)) == 0
        measurements = tmp_path / "tiny" / "measurements"
        counts = sorted(measurements.glob("*_counts.cprm"))
        assert len(counts) == 1
        data = read_container(counts[0])
        assert data.shape == (2 * 32, 32)
        assert np.all(data.imag == 0) and np.all(data.real >= 0)
        assert len(list(measurements.glob("*_masks.cprm"))) == 1
        assert verify_manifest(measurements) == {}


class TestCommandLine:
    """Integration test suite for the pr entry point."""

    def _config(self, tmp_path, text=TINY_CDP):
        path = tmp_path / "tiny.conf"
        path.write_text(text.replace("algorithm = pr, amm, palm", "algorithm = amm"), encoding="utf-8")
        return str(path)

    @pytest.mark.integration
    @pytest.mark.high
    def test_11_10_cli_run_and_simulate(self, tmp_path):
        """Test Case 11.10: run and simulate Exit 0"""
        config = self._config(tmp_path)
        assert pr.main(["run", "--config", config, "--out", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "tiny" / "summary.csv").exists()
        assert pr.main(["simulate", "--config", config, "--out", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "tiny" / "measurements" / "manifest.json").exists()

    @pytest.mark.integration
    @pytest.mark.medium
    def test_11_11_cli_overrides(self, tmp_path):
        """Test Case 11.11: --seed, --algo and --set Reach the Sweep"""
        config = self._config(tmp_path)
        argv = ["run", "--config", config, "--out", str(tmp_path / "out"),
                "--seed", "1", "--seed", "2", "--algo", "pr", "--set", "baseline_iters=3"]
        assert pr.main(argv) == 0
        rows = _summary_rows(tmp_path / "out" / "tiny")
        assert [(row["algorithm"], row["seed"], row["iterations"]) for row in rows] == [("pr", "1", "3"), ("pr", "2", "3")]

    @pytest.mark.integration
    @pytest.mark.high
    def test_11_12_cli_usage_errors(self, tmp_path, capsys):
        """Test Case 11.12: Configuration Errors Exit 2"""
        config = self._config(tmp_path)
        assert pr.main(["run", "--config", config, "--set", "algorithm="]) == 2
        assert "Configuration error" in capsys.readouterr().out
        assert pr.main(["run"]) == 2
        assert pr.main(["run", "--config", str(tmp_path / "absent.conf")]) == 2
        assert pr.main(["run", "--config", config, "--set", "noequals"]) == 2
        with pytest.raises(SystemExit):
            pr.main(["run", "--preset", "no-such-preset"])

    @pytest.mark.integration
    @pytest.mark.medium
    def test_11_13_cli_failure_exits_1(self, tmp_path):
        """Test Case 11.13: A Failed Cell Exits 1"""
        config = self._config(tmp_path, TINY_CDP.replace("phantom:smooth:32", str(tmp_path / "missing.pgm")))
        assert pr.main(["run", "--config", config, "--out", str(tmp_path / "out")]) == 1

    @pytest.mark.integration
    @pytest.mark.medium
    def test_11_14_cli_snr(self, tmp_path, capsys):
        """Test Case 11.14: snr Prints the Aligned SNR"""
        truth = np.ones((4, 4))
        estimate = write_container(tmp_path / "est.cprm", 1.1j * truth)
        reference = write_container(tmp_path / "truth.cprm", truth)
        assert pr.main(["snr", estimate, reference, "--denominator", "truth"]) == 0
        assert "SNR = 20.0000 dB" in capsys.readouterr().out
        assert pr.main(["snr", str(tmp_path / "none.cprm"), reference]) == 2

    @pytest.mark.integration
    @pytest.mark.low
    def test_11_15_preset_with_config_reports_file_line(self, tmp_path, capsys):
        """Test Case 11.15: Bad Key in a Config Layered on a Preset Reports Its Line"""
        path = tmp_path / "extra.conf"
        path.write_text("# overrides\nouter_iters = 2\nbogus_key = 1\n", encoding="utf-8")
        assert pr.main(["simulate", "--preset", "cdp-real-desk", "--config", str(path)]) == 2
        assert "line 3: unknown key 'bogus_key'" in capsys.readouterr().out
