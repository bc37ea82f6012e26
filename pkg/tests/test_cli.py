import json

import pytest

from ssmguard.cli import EXIT_ASSERT, EXIT_OK, EXIT_USAGE, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestEvalGuard:
    def test_reference_counts_print_headline_metrics(self, capsys, tmp_path):
        code, out, _ = run(capsys, "eval-guard", "--counts", "235,15,5,245",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        assert "F1 0.961" in out and "FPR 0.060" in out

    def test_missing_inputs_is_usage_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "eval-guard", "--out", str(tmp_path))
        assert code == EXIT_USAGE

    def test_ablation_table(self, capsys, tmp_path):
        run(capsys, "gen-data", "--benign", "10", "--adversarial", "10",
            "--length", "40", "--out", str(tmp_path))
        code, out, _ = run(capsys, "eval-guard", "--data",
                           str(tmp_path / "labeled_traces.jsonl"),
                           "--ablate", "0.2,0.3,0.99", "--out", str(tmp_path),
                           "--check")
        assert code == EXIT_OK
        lines = (tmp_path / "ablation.csv").read_text().splitlines()
        assert lines[1] == "rho_min,precision,recall,f1,fpr"
        assert len(lines) == 5


class TestHorizon:
    def test_halving_ratio(self, capsys, tmp_path):
        code, _, _ = run(capsys, "horizon", "--rho-grid", "0.99,0.98",
                         "--out", str(tmp_path))
        assert code == EXIT_OK
        lines = (tmp_path / "horizon.csv").read_text().splitlines()
        assert lines[0].startswith("# seed=")
        rows = [line.split(",") for line in lines[2:]]
        h99, h98 = float(rows[0][1]), float(rows[1][1])
        assert 1.9 <= h99 / h98 <= 2.1

    def test_divergent_rho_flagged(self, capsys, tmp_path):
        code, _, _ = run(capsys, "horizon", "--rho-grid", "1.0",
                         "--out", str(tmp_path))
        assert code == EXIT_OK
        body = (tmp_path / "horizon.csv").read_text()
        assert "bound undefined" in body

    def test_empty_grid_usage_error(self, capsys, tmp_path):
        code, _, _ = run(capsys, "horizon", "--rho-grid", "",
                         "--out", str(tmp_path))
        assert code == EXIT_USAGE


class TestValidateSpectral:
    def test_zero_matrices_usage_error(self, capsys, tmp_path):
        code, _, _ = run(capsys, "validate-spectral", "--n-matrices", "0",
                         "--out", str(tmp_path))
        assert code == EXIT_USAGE

    def test_small_run_passes(self, capsys, tmp_path):
        code, out, _ = run(capsys, "validate-spectral", "--n-matrices", "50",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        report = json.loads((tmp_path / "validate_spectral.json").read_text())
        assert report["mae"] < 1e-5

    def test_k1_worse_than_k3(self, capsys, tmp_path):
        run(capsys, "validate-spectral", "--n-matrices", "200", "--k", "1",
            "--out", str(tmp_path / "a"))
        run(capsys, "validate-spectral", "--n-matrices", "200", "--k", "3",
            "--out", str(tmp_path / "b"))
        mae1 = json.loads((tmp_path / "a" / "validate_spectral.json").read_text())["mae"]
        mae3 = json.loads((tmp_path / "b" / "validate_spectral.json").read_text())["mae"]
        assert mae3 < mae1


class TestMonitorCommand:
    def test_benign_trace_zero_alerts(self, capsys, tmp_path):
        code, _, _ = run(capsys, "clamp", "--rho-target", "0.95",
                         "--length", "40", "--out", str(tmp_path))
        assert code == EXIT_OK
        code, out, _ = run(capsys, "monitor", "--trace",
                           str(tmp_path / "clamp_trace.jsonl"),
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        assert "pass" in out
        lines = (tmp_path / "alerts.jsonl").read_text().splitlines()
        assert len(lines) == 1  # meta only, zero block lines

    def test_collapsed_trace_blocks_and_check_fails(self, capsys, tmp_path):
        run(capsys, "clamp", "--rho-target", "0.2", "--length", "40",
            "--out", str(tmp_path))
        code, out, _ = run(capsys, "monitor", "--trace",
                           str(tmp_path / "clamp_trace.jsonl"),
                           "--out", str(tmp_path), "--check")
        assert code == EXIT_ASSERT
        lines = (tmp_path / "alerts.jsonl").read_text().splitlines()
        alert = json.loads(lines[1])
        assert alert["decision"] == "block" and alert["t"] == 0


class TestGenDataAndTrain:
    def test_labeled_file_then_training(self, capsys, tmp_path):
        code, out, _ = run(capsys, "gen-data", "--benign", "15",
                           "--adversarial", "15", "--length", "50",
                           "--out", str(tmp_path), "--check")
        assert code == EXIT_OK
        lines = (tmp_path / "labeled_traces.jsonl").read_text().splitlines()
        assert len(lines) == 31  # meta + 30 labeled traces
        labels = [json.loads(l)["label"] for l in lines[1:]]
        assert sum(labels) == 15

        code, out, _ = run(capsys, "train-guard", "--data",
                           str(tmp_path / "labeled_traces.jsonl"),
                           "--out", str(tmp_path), "--check")
        assert code == EXIT_OK
        assert "auc=1.0000" in out


class TestReproducibility:
    def test_reruns_are_byte_identical(self, capsys, tmp_path):
        run(capsys, "phase", "--rho-levels", "0.3,0.9", "--distances",
            "10,50", "--out", str(tmp_path / "r1"))
        run(capsys, "phase", "--rho-levels", "0.3,0.9", "--distances",
            "10,50", "--out", str(tmp_path / "r2"))
        a = (tmp_path / "r1" / "phase.csv").read_bytes()
        b = (tmp_path / "r2" / "phase.csv").read_bytes()
        assert a == b

    def test_stamp_embedded_everywhere(self, capsys, tmp_path):
        run(capsys, "horizon", "--rho-grid", "0.9", "--out", str(tmp_path),
            "--seed", "17")
        header = (tmp_path / "horizon.csv").read_text().splitlines()[0]
        assert "seed=17" in header and "config_hash=" in header \
            and "version=" in header


class TestAttackCommands:
    def test_attack_check_passes(self, capsys, tmp_path):
        code, out, _ = run(capsys, "attack", "--prompts", "4",
                           "--out", str(tmp_path), "--check")
        assert code == EXIT_OK
        assert "strict_decrease=4/4" in out

    def test_pareto_csv_schema(self, capsys, tmp_path):
        code, _, _ = run(capsys, "pareto", "--prompts", "3", "--lambdas",
                         "0,1.0", "--steps", "10", "--out", str(tmp_path),
                         "--check")
        assert code == EXIT_OK
        lines = (tmp_path / "pareto.csv").read_text().splitlines()
        assert lines[1] == "lambda,delta_rho_mean,lexical_auc"
        assert len(lines) == 4


class TestClampPhase:
    def test_clamp_check(self, capsys, tmp_path):
        code, out, _ = run(capsys, "clamp", "--mode", "single_layer",
                           "--layer", "2", "--rho-target", "0.3",
                           "--length", "30", "--out", str(tmp_path),
                           "--check")
        assert code == EXIT_OK

    def test_phase_check_monotone(self, capsys, tmp_path):
        code, _, _ = run(capsys, "phase", "--rho-levels", "0.3,0.7,0.99",
                         "--distances", "10,100", "--out", str(tmp_path),
                         "--check")
        assert code == EXIT_OK
