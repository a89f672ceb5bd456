"""
End-to-end tests for the command-line interface.
"""
import json

import numpy as np
import pytest

from cli import EXIT_CONFIG, EXIT_FAIL, EXIT_IO, EXIT_OK, create_parser, main
from signals import simulate_fir
from storage import write_dataset

pytestmark = [pytest.mark.cli]


def _flat(text: str) -> str:
    """Collapse rich line wrapping."""
    return " ".join(text.split())


@pytest.fixture
def lemma_config(minimal_config_data, write_config):
    data = dict(minimal_config_data, lemma_trials=50)
    return write_config(data, "lemmas.json")


# ==================== Parser ====================

class TestParser:
    """Tests for argument parsing."""

    def test_subcommands(self):
        """Test that every subcommand parses."""
        parser = create_parser()
        args = parser.parse_args(["verify", "--config", "x.json", "--suites", "as,clt", "--workers", "4"])
        assert args.command == "verify"
        assert args.suites == "as,clt"
        assert args.workers == 4

    def test_report_defaults(self):
        """Test report argument defaults."""
        args = create_parser().parse_args(["report"])
        assert args.format == "terminal"
        assert args.report is None

    def test_no_command(self):
        """Test that a missing subcommand is a usage error."""
        assert main([]) == EXIT_CONFIG


# ==================== Commands ====================

class TestSimulate:
    """Tests for the simulate command."""

    def test_minimal_config(self, minimal_config_data, write_config, tmp_path):
        """Test simulate on the minimal document."""
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(write_config(minimal_config_data)), "--out", str(out)]) == EXIT_OK
        csv_path = out / "dataset_N100_rep0.csv"
        lines = csv_path.read_text(encoding="utf-8").split("\n")
        assert lines[2] == "t,u,y"
        assert len([line for line in lines[3:] if line]) == 100
        assert (out / "dataset_N100_rep0.truth.json").exists()
        assert (out / "logs").is_dir()

    def test_same_seed_same_bytes(self, minimal_config_data, write_config, tmp_path):
        """Test byte-identical CSVs for one seed."""
        config = str(write_config(minimal_config_data))
        for name in ("a", "b"):
            assert main(["simulate", "--config", config, "--out", str(tmp_path / name), "--seed", "9"]) == EXIT_OK
        a = (tmp_path / "a" / "dataset_N100_rep0.csv").read_bytes()
        b = (tmp_path / "b" / "dataset_N100_rep0.csv").read_bytes()
        assert a == b
        assert b"seed=9" in a

    def test_different_seed_different_data(self, minimal_config_data, write_config, tmp_path):
        """Test that a seed override changes the data."""
        config = str(write_config(minimal_config_data))
        main(["simulate", "--config", config, "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["simulate", "--config", config, "--out", str(tmp_path / "b"), "--seed", "2"])
        assert (tmp_path / "a" / "dataset_N100_rep0.csv").read_bytes() != \
            (tmp_path / "b" / "dataset_N100_rep0.csv").read_bytes()

    def test_sample_size_not_above_order(self, minimal_config_data, write_config, tmp_path, capsys):
        """Test the N > n configuration error."""
        data = dict(minimal_config_data, sample_sizes=[2], simulate={"sample_size": 2})
        code = main(["simulate", "--config", str(write_config(data)), "--out", str(tmp_path / "out")])
        assert code == EXIT_CONFIG
        assert "N > n required" in _flat(capsys.readouterr().out)

    def test_unknown_field_rejected(self, minimal_config_data, write_config, tmp_path):
        """Test rejection of unknown document fields."""
        data = dict(minimal_config_data, colour="blue")
        assert main(["simulate", "--config", str(write_config(data)), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_config_file_is_io_error(self, tmp_path):
        """Test exit code 3 for a missing document."""
        code = main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "out")])
        assert code == EXIT_IO

    def test_unwritable_output(self, minimal_config_data, write_config, tmp_path):
        """Test exit code 3 for an unwritable output directory."""
        blocker = tmp_path / "file.txt"
        blocker.write_text("x", encoding="utf-8")
        code = main(["simulate", "--config", str(write_config(minimal_config_data)), "--out", str(blocker / "sub")])
        assert code == EXIT_IO

    def test_default_output_dir(self, minimal_config_data, write_config, output_dir):
        """Test that simulate writes under FIRLAB_OUTPUT_DIR by default."""
        assert main(["simulate", "--config", str(write_config(minimal_config_data))]) == EXIT_OK
        assert (output_dir / "dataset_N100_rep0.csv").exists()


class TestEstimate:
    """Tests for the estimate command."""

    def test_noise_free_dataset(self, tmp_path):
        """Test exact recovery on noise-free data."""
        theta0 = np.array([0.9, -0.4])
        u = np.random.default_rng(3).standard_normal(60)
        path = write_dataset(simulate_fir(theta0, u, np.zeros(59)), tmp_path / "clean.csv")
        assert main(["estimate", "--dataset", str(path), "--out", str(tmp_path)]) == EXIT_OK
        result = json.loads((tmp_path / "estimate_clean.json").read_text(encoding="utf-8"))
        np.testing.assert_allclose(result["theta_ls"], result["theta0"], rtol=1e-10, atol=1e-12)
        assert result["rls"] == []
        assert result["asymptotic_se"] is None

    def test_hand_dataset(self, tmp_path):
        """Test estimate on a hand-computed dataset."""
        path = tmp_path / "hand.csv"
        path.write_text("# n=1 theta0=1 seed=none\n# u_init=1\nt,u,y\n1,1,0\n2,1,1\n3,,2\n", encoding="utf-8")
        assert main(["estimate", "--dataset", str(path), "--out", str(tmp_path)]) == EXIT_OK
        result = json.loads((tmp_path / "estimate_hand.json").read_text(encoding="utf-8"))
        assert result["theta_ls"] == pytest.approx([1.0])
        assert result["sigma2_hat"] == pytest.approx(1.0)

    def test_large_ridge_matches_ls(self, minimal_config_data, write_config, tmp_path):
        """Test that a huge ridge eta reproduces LS."""
        data = dict(minimal_config_data, kernels=[{"family": "ridge", "eta": [1e8]}], rls_sigma2="estimate")
        config = str(write_config(data))
        out = tmp_path / "out"
        assert main(["simulate", "--config", config, "--out", str(out)]) == EXIT_OK
        dataset = out / "dataset_N100_rep0.csv"
        assert main(["estimate", "--config", config, "--dataset", str(dataset), "--out", str(out)]) == EXIT_OK

        result = json.loads((out / "estimate_dataset_N100_rep0.json").read_text(encoding="utf-8"))
        (rls,) = result["rls"]
        theta_ls = np.array(result["theta_ls"])
        assert np.linalg.norm(np.array(rls["theta_tr"]) - theta_ls) <= 1e-6 * np.linalg.norm(theta_ls)
        assert rls["sigma2_source"] == "estimate"
        assert rls["sigma2_used"] == pytest.approx(result["sigma2_hat"])
        assert len(result["asymptotic_se"]) == 2

    def test_truth_sigma2(self, ar1_config_data, write_config, tmp_path):
        """Test RLS with the true noise variance."""
        config = str(write_config(ar1_config_data))
        out = tmp_path / "out"
        assert main(["simulate", "--config", config, "--out", str(out)]) == EXIT_OK
        assert sorted(p.name for p in out.glob("dataset_*.csv")) == ["dataset_N150_rep0.csv", "dataset_N150_rep1.csv"]

        data = dict(ar1_config_data, rls_sigma2="truth")
        config = str(write_config(data, "truth.json"))
        dataset = out / "dataset_N150_rep1.csv"
        assert main(["estimate", "--config", config, "--dataset", str(dataset), "--out", str(out)]) == EXIT_OK
        result = json.loads((out / "estimate_dataset_N150_rep1.json").read_text(encoding="utf-8"))
        assert [r["family"] for r in result["rls"]] == ["ridge", "tc", "dc"]
        assert all(r["sigma2_used"] == 0.5 for r in result["rls"])

    def test_rank_deficient_dataset(self, tmp_path, capsys):
        """Test the rank-deficiency error."""
        path = write_dataset(simulate_fir(np.ones(2), np.zeros(20), np.ones(19)), tmp_path / "flat.csv")
        assert main(["estimate", "--dataset", str(path), "--out", str(tmp_path)]) == EXIT_FAIL
        assert "rank deficient" in _flat(capsys.readouterr().out)

    def test_order_mismatch(self, ar1_config_data, write_config, tmp_path):
        """Test a dataset whose order disagrees with the document."""
        path = write_dataset(simulate_fir(np.ones(2), np.arange(21.0), np.zeros(20)), tmp_path / "d.csv")
        code = main(["estimate", "--config", str(write_config(ar1_config_data)), "--dataset", str(path),
                     "--out", str(tmp_path)])
        assert code == EXIT_CONFIG

    def test_malformed_dataset(self, tmp_path):
        """Test a malformed dataset CSV."""
        path = tmp_path / "bad.csv"
        path.write_text("t,u,y\n", encoding="utf-8")
        assert main(["estimate", "--dataset", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG


class TestVerify:
    """Tests for the verify command."""

    def test_lemmas_only(self, lemma_config, tmp_path):
        """Test verify with the lemma suite only."""
        out = tmp_path / "out"
        assert main(["verify", "--config", str(lemma_config), "--suites", "lemmas", "--out", str(out)]) == EXIT_OK
        report = json.loads((out / "verify_report.json").read_text(encoding="utf-8"))
        assert report["passed"] is True
        assert report["suites"] == ["lemmas"]
        assert (out / "verify_report.md").read_text(encoding="utf-8").startswith("# Verification report")

    def test_clt_with_few_replications(self, minimal_config_data, write_config, tmp_path, capsys):
        """Test exit code 2 for an undersized clt design."""
        data = dict(minimal_config_data, replications=50)
        code = main(["verify", "--config", str(write_config(data)), "--suites", "clt", "--out", str(tmp_path)])
        assert code == EXIT_CONFIG
        assert "insufficient replications" in _flat(capsys.readouterr().out)
        assert not (tmp_path / "verify_report.json").exists()

    def test_tampered_tolerance_fails(self, minimal_config_data, write_config, tmp_path, capsys):
        """Test exit code 1 when a tolerance is zeroed."""
        data = dict(minimal_config_data, replications=5, tolerances={"snr_rel": 0.0, "min_reps": 2})
        out = tmp_path / "out"
        code = main(["verify", "--config", str(write_config(data)), "--suites", "snr", "--out", str(out)])
        assert code == EXIT_FAIL
        assert "snr:snr_limit" in _flat(capsys.readouterr().out)
        assert json.loads((out / "verify_report.json").read_text(encoding="utf-8"))["passed"] is False

    def test_unknown_suite(self, lemma_config, tmp_path):
        """Test an unknown suite name."""
        code = main(["verify", "--config", str(lemma_config), "--suites", "lemmas,bogus", "--out", str(tmp_path)])
        assert code == EXIT_CONFIG

    def test_invalid_workers(self, lemma_config, tmp_path):
        """Test a nonpositive worker count."""
        code = main(["verify", "--config", str(lemma_config), "--workers", "0", "--out", str(tmp_path)])
        assert code == EXIT_CONFIG

    def test_seed_override_recorded(self, lemma_config, tmp_path):
        """Test that --seed reaches the report."""
        out = tmp_path / "out"
        main(["verify", "--config", str(lemma_config), "--suites", "lemmas", "--seed", "77", "--out", str(out)])
        report = json.loads((out / "verify_report.json").read_text(encoding="utf-8"))
        assert report["master_seed"] == 77
        assert all(v["seed"] == 77 for v in report["verdicts"])


class TestReport:
    """Tests for the report command."""

    @pytest.fixture
    def report_path(self, lemma_config, tmp_path):
        out = tmp_path / "out"
        main(["verify", "--config", str(lemma_config), "--suites", "lemmas", "--out", str(out)])
        return out / "verify_report.json"

    def test_terminal(self, report_path, capsys):
        """Test the terminal rendering."""
        assert main(["report", str(report_path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "PASSED" in out
        assert "trace_k1" in out

    def test_markdown_to_file(self, report_path, tmp_path):
        """Test markdown output to a file."""
        target = tmp_path / "report.md"
        assert main(["report", str(report_path), "-f", "markdown", "-o", str(target)]) == EXIT_OK
        text = target.read_text(encoding="utf-8")
        assert "| Suite | Criterion | Status |" in text
        assert "| lemmas | trace_k1 | pass |" in text

    def test_missing_report(self, tmp_path):
        """Test exit code 3 for a missing report."""
        assert main(["report", str(tmp_path / "nope.json")]) == EXIT_IO

    def test_default_report_path(self, lemma_config, output_dir, capsys):
        """Test that report reads from the default output directory."""
        assert main(["verify", "--config", str(lemma_config), "--suites", "lemmas"]) == EXIT_OK
        capsys.readouterr()
        assert main(["report"]) == EXIT_OK
        assert "PASSED" in capsys.readouterr().out
