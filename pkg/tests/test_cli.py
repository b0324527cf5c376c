import csv
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ahmpc
from ahmpc import ConfigError
from ahmpc.cli import (
    ExperimentConfig,
    build_experiment_config,
    build_model,
    emit_figure_data,
    load_config,
    main,
    parse_config_text,
    read_trace_csv,
    run_experiment,
    write_trace_csv,
)
from ahmpc.closed_loop import ClosedLoopTrace, StepRecord, StopRule, run_adaptive


def write_config(tmp_path, text, name="exp.config"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestConfigParsing:
    def test_basic_keys_and_comments(self):
        entries = parse_config_text(
            "# comment\nmodel = lq\nalpha_bar = 0.2, 0.6  # grid\n\nsolver.tol = 1e-7\n"
        )
        assert entries["model"] == ("lq", 2)
        assert entries["alpha_bar"] == ("0.2, 0.6", 3)
        assert entries["solver.tol"] == ("1e-7", 5)

    def test_malformed_line_reports_position(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("model = lq\nnonsense\n")
        assert err.value.line == 2

    def test_missing_model(self):
        with pytest.raises(ConfigError):
            build_experiment_config(parse_config_text("alpha_bar = 0.5\n"))

    def test_alpha_out_of_range(self):
        with pytest.raises(ConfigError) as err:
            build_experiment_config(parse_config_text("model = lq\nalpha_bar = 1.5\n"))
        assert err.value.field == "alpha_bar"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as err:
            build_experiment_config(parse_config_text("model = lq\nbogus.key = 1\n"))
        assert err.value.field == "bogus.key"

    def test_bad_number_reports_field_and_line(self):
        with pytest.raises(ConfigError) as err:
            build_experiment_config(
                parse_config_text("model = lq\nsolver.tol = fast\n"))
        assert err.value.field == "solver.tol" and err.value.line == 2

    def test_overrides_apply(self, tmp_path):
        path = write_config(tmp_path, "model = lq\nalpha_bar = 0.5\n")
        config = load_config(path, overrides=["alpha_bar=0.25"], out_dir=str(tmp_path))
        assert config.alpha_grid == (0.25,)
        assert config.out_dir == str(tmp_path)

    def test_model_selectors(self):
        for name, dim in (("crane", 6), ("lq", 1), ("finite", 1)):
            config = build_experiment_config(parse_config_text(f"model = {name}\n"))
            model, x0 = build_model(config)
            assert model.state_dim == dim and x0.size == dim

    def test_explicit_x0(self):
        config = build_experiment_config(
            parse_config_text("model = lq\nx0 = 2.5\n"))
        _, x0 = build_model(config)
        assert x0[0] == 2.5

    def test_x0_dimension_mismatch(self):
        config = build_experiment_config(
            parse_config_text("model = crane\nx0 = 1, 2\n"))
        with pytest.raises(ConfigError):
            build_model(config)

    def test_user_file_model(self, tmp_path):
        model_py = tmp_path / "mymodel.py"
        model_py.write_text(
            "import numpy as np\n"
            "from ahmpc.systems import SystemModel\n"
            "def build_model():\n"
            "    return SystemModel(state_dim=1, control_dim=1,\n"
            "        dynamics=lambda x, u: 0.5 * x + u,\n"
            "        stage_cost=lambda x, u: float(x @ x + u @ u),\n"
            "        control_bounds=((-1.0, 1.0),))\n",
            encoding="utf-8",
        )
        config = build_experiment_config(
            parse_config_text(f"model = {model_py}\nx0 = 1.0\n"))
        model, x0 = build_model(config)
        assert model.state_dim == 1 and x0[0] == 1.0
        config_no_x0 = build_experiment_config(parse_config_text(f"model = {model_py}\n"))
        with pytest.raises(ConfigError):
            build_model(config_no_x0)


class TestTraceRoundTrip:
    def test_lq_trace_round_trips_exactly(self, tmp_path, lq_sys):
        trace = ahmpc.run_fixed(lq_sys, [1.0], 2)
        path = str(tmp_path / "trace.csv")
        write_trace_csv(path, trace)
        back = read_trace_csv(path)
        assert back.accumulated_cost == trace.accumulated_cost
        assert back.n_star == trace.n_star
        assert len(back.records) == len(trace.records)
        for a, b in zip(trace.records, back.records):
            assert np.array_equal(a.state, b.state)
            assert np.array_equal(a.control, b.control)
            assert a.stage_cost == b.stage_cost and a.value == b.value
            assert a.alpha == b.alpha and a.reused_from_tail == b.reused_from_tail

    @given(
        rows=st.lists(
            st.tuples(
                st.floats(-1e3, 1e3), st.floats(0, 1e3), st.floats(0, 1e6),
                st.integers(2, 20), st.booleans(),
            ),
            min_size=1, max_size=12,
        )
    )
    @settings(max_examples=30, deadline=None)
    def test_round_trip_property(self, rows, tmp_path_factory):
        records = tuple(
            StepRecord(
                index=i, state=np.array([x]), horizon=n, control=np.array([x / 2]),
                stage_cost=stage, value=value,
                alpha=None if reused else 0.5, solves_performed=i,
                reused_from_tail=reused,
            )
            for i, (x, stage, value, n, reused) in enumerate(rows)
        )
        trace = ClosedLoopTrace(records, "step-limit", records[0].state)
        path = str(tmp_path_factory.mktemp("rt") / "t.csv")
        write_trace_csv(path, trace)
        back = read_trace_csv(path)
        assert back.accumulated_cost == trace.accumulated_cost
        assert back.n_star == trace.n_star


class TestFigureData:
    def make_traces(self, lq_sys):
        cfg_a = ahmpc.AdaptationConfig(alpha_bar=0.5, n_min=2, n_max=8)
        cfg_b = ahmpc.AdaptationConfig(alpha_bar=0.95, n_min=2, n_max=8)
        return [
            (0.5, run_adaptive(lq_sys, [1.0], cfg_a)),
            (0.95, run_adaptive(lq_sys, [1.0], cfg_b)),
        ]

    def test_horizon_rows_match_record_count(self, tmp_path, lq_sys):
        traces = self.make_traces(lq_sys)
        path = emit_figure_data(traces, "horizon-vs-time", str(tmp_path / "h.csv"))
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == sum(len(t.records) for _, t in traces)
        assert list(rows[0].keys()) == ["alpha_bar", "time", "horizon"]

    def test_alpha_cost_one_row_per_trace(self, tmp_path, lq_sys):
        traces = self.make_traces(lq_sys)
        path = emit_figure_data(traces, "alpha-vs-cost", str(tmp_path / "a.csv"))
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert float(rows[0]["accumulated_cost"]) == traces[0][1].accumulated_cost

    def test_single_point_sweep(self, tmp_path, lq_sys):
        traces = self.make_traces(lq_sys)[:1]
        path = emit_figure_data(traces, "alpha-vs-cost", str(tmp_path / "a1.csv"))
        with open(path) as fh:
            assert len(list(csv.DictReader(fh))) == 1

    def test_unknown_kind(self, tmp_path, lq_sys):
        with pytest.raises(ValueError):
            emit_figure_data(self.make_traces(lq_sys), "bogus", str(tmp_path / "x.csv"))


class TestRunExperiment:
    def test_lq_fixed_smoke(self, tmp_path):
        config = ExperimentConfig(model="lq", mode="fixed", fixed_horizon=2,
                                  out_dir=str(tmp_path))
        status = run_experiment(config, quiet=True)
        assert status == 0
        with open(tmp_path / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        expected = (5.0 / 3.0) * (1.0 - 0.25**7)
        assert float(rows[0]["accumulated_cost"]) == pytest.approx(expected, abs=1e-4)
        assert rows[0]["terminated"] == "cost-threshold"

    def test_lq_adaptive_grid(self, tmp_path):
        config = ExperimentConfig(model="lq", alpha_grid=(0.5, 0.95),
                                  n_max=10, out_dir=str(tmp_path))
        status = run_experiment(config, quiet=True)
        assert status == 0
        for alpha in (0.5, 0.95):
            trace_file = tmp_path / f"trace_alpha_{alpha:g}.csv"
            assert trace_file.exists()
            back = read_trace_csv(str(trace_file))
            want = run_adaptive(
                ahmpc.lq_model(ahmpc.scalar_lq()), [1.0],
                ahmpc.AdaptationConfig(alpha_bar=alpha, n_min=2, n_max=10),
                StopRule(),
            )
            assert back.horizons == want.horizons
            assert back.accumulated_cost == pytest.approx(want.accumulated_cost,
                                                          rel=1e-12)
        assert (tmp_path / "alpha_vs_cost.csv").exists()
        assert (tmp_path / "horizon_vs_time.csv").exists()

    def test_summary_recomputable_from_traces(self, tmp_path):
        config = ExperimentConfig(model="lq", alpha_grid=(0.5, 0.95), n_max=10,
                                  out_dir=str(tmp_path))
        assert run_experiment(config, quiet=True) == 0
        with open(tmp_path / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            alpha = float(row["alpha_bar"])
            back = read_trace_csv(str(tmp_path / f"trace_alpha_{alpha:g}.csv"))
            assert int(row["steps"]) == len(back.records)
            assert int(row["n_star"]) == back.n_star
            assert int(row["total_solves"]) == back.total_solves
            assert float(row["accumulated_cost"]) == back.accumulated_cost

    def test_parallel_jobs_match_serial(self, tmp_path):
        serial_dir, par_dir = tmp_path / "serial", tmp_path / "par"
        base = dict(model="lq", alpha_grid=(0.5, 0.95), n_max=10)
        assert run_experiment(ExperimentConfig(out_dir=str(serial_dir), **base),
                              quiet=True) == 0
        assert run_experiment(ExperimentConfig(out_dir=str(par_dir), jobs=2, **base),
                              quiet=True) == 0
        for alpha in (0.5, 0.95):
            a = read_trace_csv(str(serial_dir / f"trace_alpha_{alpha:g}.csv"))
            b = read_trace_csv(str(par_dir / f"trace_alpha_{alpha:g}.csv"))
            assert a.accumulated_cost == b.accumulated_cost
            assert a.horizons == b.horizons

    def test_finite_model_fixed_run(self, tmp_path):
        config = ExperimentConfig(model="finite", mode="fixed", fixed_horizon=3,
                                  out_dir=str(tmp_path))
        assert run_experiment(config, quiet=True) == 0
        back = read_trace_csv(str(tmp_path / "trace_fixed_n3.csv"))
        assert back.records[0].control[0] >= -1.0  # hull bounds respected

    def test_verify_after_round_trip(self, tmp_path, lq_sys):
        cfg = ahmpc.AdaptationConfig(alpha_bar=0.5, n_min=2, n_max=10)
        trace = run_adaptive(lq_sys, [1.0], cfg, start_horizon=6)
        path = str(tmp_path / "t.csv")
        write_trace_csv(path, trace)
        back = read_trace_csv(path)
        report = ahmpc.verify_trace(back, lq_sys, alpha_bar=0.5)
        assert report.min_slack() >= -1e-8
        assert report.replay_ok

    def test_failed_run_exit_status(self, tmp_path, capsys):
        config = ExperimentConfig(model="lq", alpha_grid=(0.9999999,), n_max=4,
                                  out_dir=str(tmp_path))
        assert run_experiment(config, quiet=True) == 3
        assert "failed" in capsys.readouterr().err


class TestMain:
    def test_run_subcommand(self, tmp_path, capsys):
        path = write_config(
            tmp_path,
            "model = lq\nmode = fixed\nhorizon.fixed = 2\n",
        )
        status = main(["run", path, "--out", str(tmp_path / "out"), "--quiet"])
        assert status == 0
        assert (tmp_path / "out" / "summary.csv").exists()

    def test_config_error_exit_code(self, tmp_path, capsys):
        path = write_config(tmp_path, "model = lq\nalpha_bar = 1.5\n")
        assert main(["run", path, "--quiet"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_file(self, capsys):
        assert main(["run", "/nonexistent/path.config"]) == 2

    def test_override_flag(self, tmp_path):
        path = write_config(tmp_path, "model = lq\nmode = fixed\nhorizon.fixed = 2\n")
        out = str(tmp_path / "o2")
        assert main(["run", path, "--override", "stop.step_limit=1",
                     "--out", out, "--quiet"]) == 0
        back = read_trace_csv(os.path.join(out, "trace_fixed_n2.csv"))
        assert len(back.records) == 1
