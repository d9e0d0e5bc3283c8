import csv
import math

import numpy as np
import pytest

from edad.cli import FIELDS, RunConfig, main, read_config
from edad.data import KINDS, InjectionSpec, inject_anomalies, load_csv, sine_series, write_csv, TimeSeries

TINY = ["--d", "8", "--layers", "1", "--heads", "2", "--B", "16", "--stride", "8", "--batch_size", "8",
        "--n", "600", "--max_epochs", "2", "--seed", "1"]


def run(*argv):
    return main([str(a) for a in argv])


def resolved(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


class TestInject:
    def test_global_count(self, tmp_path):
        assert run("inject", "--kind", "global", "--ratio", "0.02", "--seed", "7", "--n", "1000",
                   "--out", tmp_path) == 0
        ts = load_csv(tmp_path / "series.csv")
        assert ts.labels.sum() == math.ceil(0.02 * 1000)

    @pytest.mark.parametrize("kind", KINDS)
    def test_every_kind_matches_library(self, kind, tmp_path):
        assert run("inject", "--kind", kind, "--ratio", "0.01", "--seed", "4", "--n", "2000",
                   "--out", tmp_path) == 0
        got = load_csv(tmp_path / "series.csv")
        want = inject_anomalies(sine_series(2000, seed=4), InjectionSpec(kind, 0.01, 3.0, 4, 50))
        assert got.labels.sum() == want.labels.sum() > 0
        np.testing.assert_array_equal(got.labels, want.labels)

    def test_trend_on_flat_series(self, tmp_path):
        write_csv(TimeSeries(np.zeros((400, 1))), tmp_path / "flat.csv")
        assert run("inject", "--input", tmp_path / "flat.csv", "--kind", "trend", "--ratio", "0.001",
                   "--out", tmp_path / "o") == 0
        ts = load_csv(tmp_path / "o" / "series.csv")
        idx = np.flatnonzero(ts.labels)
        assert len(idx) > 0 and (np.diff(idx) == 1).all()  # one contiguous segment


class TestConfig:
    def test_defaults_are_reference_hyperparameters(self, tmp_path):
        run("inject", "--out", tmp_path)
        cfg = resolved(tmp_path / "config.resolved")
        assert (cfg["d"], cfg["layers"], cfg["heads"], cfg["B"]) == ("256", "3", "8", "100")
        assert float(cfg["anomaly_ratio"]) == 0.01

    def test_snapshot_round_trips(self, tmp_path):
        run("inject", "--out", tmp_path, "--seed", "5", "--noise", "0.25")
        back = RunConfig(**read_config(tmp_path / "config.resolved"))
        assert back.seed == 5 and back.noise == 0.25

    def test_unknown_key_rejected(self, tmp_path, capsys):
        (tmp_path / "c.cfg").write_text("d=8\nbogus=1\n")
        assert run("inject", "--config", tmp_path / "c.cfg", "--out", tmp_path) == 2
        assert "bogus" in capsys.readouterr().err

    def test_unknown_flag_rejected(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("inject", "--bogus", "1")
        assert exc.value.code == 2

    def test_bad_value_rejected(self, tmp_path):
        assert run("inject", "--d", "eight", "--out", tmp_path) == 2
        assert run("inject", "--anomaly_ratio", "1.5", "--out", tmp_path) == 2

    def test_config_file_then_flags(self, tmp_path):
        (tmp_path / "c.cfg").write_text("# comment\nseed = 9\nnoise=0.3\n")
        run("inject", "--config", tmp_path / "c.cfg", "--noise", "0.2", "--out", tmp_path)
        cfg = resolved(tmp_path / "config.resolved")
        assert cfg["seed"] == "9" and float(cfg["noise"]) == 0.2

    def test_every_field_has_a_flag(self):
        assert {"standard_infonce", "conventional_addnorm", "point_adjust", "pool_train_scores"} <= set(FIELDS)


class TestPipeline:
    def _pipeline(self, out):
        assert run("train", *TINY, "--out", out) == 0
        assert run("score", *TINY, "--out", out) == 0
        assert run("eval", *TINY, "--out", out) == 0

    def test_train_score_eval_deterministic(self, tmp_path):
        self._pipeline(tmp_path / "a")
        self._pipeline(tmp_path / "b")
        for name in ("checkpoint.bin", "checkpoint_last.bin", "scores.csv", "report.txt", "report.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_scores_rows_equal_test_length(self, tmp_path):
        self._pipeline(tmp_path)
        rows = (tmp_path / "scores.csv").read_text().splitlines()
        assert len(rows) - 1 == 600 - round(600 * 0.7)
        assert rows[0] == "timestamp,score,coverage,prediction,label"

    def test_snapshot_reproduces_training(self, tmp_path):
        assert run("train", *TINY, "--out", tmp_path / "a") == 0
        assert run("train", "--config", tmp_path / "a" / "config.resolved", "--out", tmp_path / "b") == 0
        assert (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()

    def test_lambda3_zero_logs_reg_column(self, tmp_path):
        assert run("train", *TINY, "--lambda3", "0", "--max_epochs", "1", "--out", tmp_path) == 0
        with open(tmp_path / "train_log.csv") as fh:
            row = next(csv.DictReader(fh))
        assert float(row["L_reg"]) >= 0
        assert float(row["total"]) == pytest.approx(float(row["L_sta"]) + float(row["L_aux"]), rel=1e-9)

    def test_eval_perfect_predictions(self, tmp_path, capsys):
        labels = np.zeros(50, dtype=int)
        labels[20:23] = 1
        with open(tmp_path / "scores.csv", "w") as fh:
            fh.write("timestamp,score,coverage,prediction,label\n")
            for i, y in enumerate(labels):
                fh.write(f"{i},{float(y)},1,{y},{y}\n")
        assert run("eval", "--out", tmp_path, "--max_buffer", "0") == 0
        text = capsys.readouterr().out
        for key in ("P", "R", "F1", "A-PR", "A-ROC", "V-PR", "V-ROC"):
            assert f"{key}=1.000000" in text.replace(" ", ""), key

    def test_eval_without_labels(self, tmp_path):
        (tmp_path / "scores.csv").write_text("timestamp,score,coverage,prediction\n0,1.0,1,1\n")
        assert run("eval", "--out", tmp_path) == 2

    def test_missing_checkpoint(self, tmp_path):
        assert run("score", *TINY, "--out", tmp_path) == 2


class TestBench:
    def test_ablation_grid_has_twelve_rows(self, tmp_path):
        assert run("bench", *TINY, "--max_epochs", "1", "--grid", "ablation", "--out", tmp_path) == 0
        with open(tmp_path / "bench.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 12
        assert {(r["estimator"], r["critic"]) for r in rows} == {
            (e, c) for e in ("infonce", "nwj", "mine", "jsd") for c in ("separable", "bilinear", "concatenated")}
        assert all(r["error"] == "" for r in rows)
        with open(tmp_path / "bench_long.csv") as fh:
            long_rows = list(csv.DictReader(fh))
        assert len(long_rows) == 12 * 2 * 7

    def test_contamination_grid_default(self):
        assert RunConfig().cr_list() == [0.01, 0.02, 0.04, 0.06, 0.08, 0.1, 0.2]

    def test_deterministic_and_failures_recorded(self, tmp_path):
        # contamination 0.6 is outside what the injector accepts, so that cell fails
        args = [*TINY, "--max_epochs", "1", "--cr_grid", "0.01,0.6"]
        assert run("bench", *args, "--out", tmp_path / "a") == 1
        assert run("bench", *args, "--out", tmp_path / "b") == 1
        a = (tmp_path / "a" / "bench.csv").read_bytes()
        assert a == (tmp_path / "b" / "bench.csv").read_bytes()
        with open(tmp_path / "a" / "bench.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["error"] == "" and rows[1]["error"] != ""
        assert rows[1]["edad_A_ROC"] == "nan"
