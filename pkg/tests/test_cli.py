import pytest

from cldeepc.cli import load_config_file, main

TINY_ARGS = ["--nbar", "40", "--p", "6", "--f", "6", "--steps", "50", "--realizations", "2"]


class TestSimulate:
    def test_writes_signal_csv_and_reports(self, tmp_path, capsys):
        code = main(["simulate", "--controller", "oracle", "--seed", "3", "--out", str(tmp_path)] + TINY_ARGS)
        assert code == 0
        out = capsys.readouterr().out
        assert "j_rms=" in out
        header = (tmp_path / "signals.csv").read_text().splitlines()[0]
        assert header == "k,u,y,e,r,x1,x2,x3,x4,x5"
        assert (tmp_path / "runs.csv").exists()

    def test_signal_csv_row_count(self, tmp_path):
        main(["simulate", "--controller", "oracle", "--out", str(tmp_path)] + TINY_ARGS)
        lines = (tmp_path / "signals.csv").read_text().splitlines()
        assert len(lines) == 1 + 40 + 50  # header + open-loop + closed-loop


class TestSweep:
    def test_emits_reports(self, tmp_path, capsys):
        code = main(
            ["sweep", "--axis", "noise", "--values", "0.5,1.0", "--seed", "9", "--out", str(tmp_path)]
            + TINY_ARGS
        )
        assert code == 0
        runs = (tmp_path / "runs.csv").read_text().splitlines()
        assert len(runs) == 1 + 2 * 3 * 2
        assert "median j_rms" in capsys.readouterr().out

    def test_rerun_byte_identical(self, tmp_path):
        argv = ["sweep", "--axis", "noise", "--values", "1.0", "--seed", "4"] + TINY_ARGS
        main(argv + ["--out", str(tmp_path / "a")])
        main(argv + ["--out", str(tmp_path / "b")])
        for name in ("runs.csv", "percentiles.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_bad_values_exit_nonzero(self, tmp_path, capsys):
        code = main(["sweep", "--axis", "noise", "--values", "abc", "--out", str(tmp_path)] + TINY_ARGS)
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_axis_rejected_by_parser(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["sweep", "--axis", "gain", "--values", "1"])
        assert excinfo.value.code == 2


class TestCorrelationAndBias:
    def test_correlation_writes_matrices(self, tmp_path, capsys):
        code = main(["correlation", "--seed", "5", "--out", str(tmp_path)] + TINY_ARGS)
        assert code == 0
        assert (tmp_path / "correlation_mean_cl-deepc.csv").exists()
        assert (tmp_path / "correlation_se_deepc.csv").exists()
        assert "max |corr|/se" in capsys.readouterr().out

    def test_bias_writes_curves(self, tmp_path, capsys):
        code = main(
            ["bias", "--values", "40,50", "--seed", "6", "--out", str(tmp_path)] + TINY_ARGS
        )
        assert code == 0
        lines = (tmp_path / "bias_runs.csv").read_text().splitlines()
        assert lines[0] == "nbar,seed,controller,t_u_error"
        assert len(lines) == 1 + 2 * 2 * 2


class TestConfigFile:
    def test_file_values_applied_and_flags_override(self, tmp_path, capsys):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(
            "controller = oracle\n"
            "nbar = 40\n"
            "p = 6          # past window\n"
            "f = 6\n"
            "steps = 50\n"
            "realizations = 2\n"
            "noise_var = 0.5\n"
        )
        out = tmp_path / "res"
        code = main(
            ["simulate", "--config", str(cfg), "--steps", "60", "--out", str(out)]
        )
        assert code == 0
        lines = (out / "signals.csv").read_text().splitlines()
        assert len(lines) == 1 + 40 + 60  # file nbar, flag-overridden steps

    def test_parse_errors(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("unknown_key = 3\n")
        with pytest.raises(ValueError):
            load_config_file(cfg)
        cfg.write_text("just words\n")
        with pytest.raises(ValueError):
            load_config_file(cfg)

    def test_config_error_is_nonzero_exit(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nbar = oops\n")
        code = main(["simulate", "--config", str(cfg)])
        assert code == 1
        assert "error" in capsys.readouterr().err
