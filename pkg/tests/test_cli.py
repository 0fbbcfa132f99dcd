import pytest
from hypothesis import given, settings, strategies as st

from parksim import cli
from parksim.cli import (
    AnalyzeCmd,
    BrokerCmd,
    ReportCmd,
    SimulateCmd,
    UsageError,
    WatchCmd,
    parse_args,
)

DAY_CFG = """
facility.total_slots = 4
traffic.hourly_rates = 30,30,30,30,30,30,30,30,30,30,30,30,30,30,30,30,30,30,30,30,30,30,30,30
traffic.dwell_mean_s = 300
duration_s = 1800
env_sample_period_s = 300
gas_sample_period_s = 0
seed = 9
"""


class TestParseArgs:
    def test_analyze_maps_flags(self):
        cmd = parse_args(
            ["analyze", "--lambda", "4", "--slots", "4", "--lambda-unit", "per-dwell"]
        )
        assert cmd == AnalyzeCmd(lam=4.0, n=4, t_avg_hours=None, delta_g_ppm=0.0,
                                 rate_ppm_per_s=1.0, lambda_unit="per-dwell")

    def test_simulate_maps_flags(self):
        cmd = parse_args(["simulate", "--scenario", "day.cfg", "--seed", "7"])
        assert cmd == SimulateCmd(scenario_path="day.cfg", seed_override=7,
                                  out_dir="out", broker_addr=None)

    def test_unknown_subcommand_is_usage_error(self):
        with pytest.raises(UsageError):
            parse_args(["frobnicate"])

    def test_missing_subcommand_is_usage_error(self):
        with pytest.raises(UsageError):
            parse_args([])

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(UsageError):
            parse_args(["broker", "--warp-speed"])

    def test_per_hour_requires_t_avg(self):
        with pytest.raises(UsageError):
            parse_args(["analyze", "--lambda", "20", "--slots", "4",
                        "--lambda-unit", "per-hour"])

    def test_watch_and_broker_and_report(self):
        assert parse_args(["broker", "--bind", "127.0.0.1:2883"]) == BrokerCmd("127.0.0.1:2883")
        watch = parse_args(["watch", "--broker", "10.0.0.2:1883", "--filter", "lot/#"])
        assert watch == WatchCmd(broker_addr="10.0.0.2:1883", topic_filter="lot/#",
                                 retries=3, color="auto")
        report = parse_args(["report", "--in", "e.jsonl", "--out", "r.txt"])
        assert report == ReportCmd(in_path="e.jsonl", out_path="r.txt")

    @given(st.lists(st.text(min_size=0, max_size=12), max_size=6))
    @settings(max_examples=150)
    def test_total_every_argv_parses_or_usage_errors(self, argv):
        try:
            command = parse_args(argv)
        except UsageError:
            return
        except SystemExit as exc:  # --help / -h
            assert exc.code in (0, None)
            return
        assert isinstance(command, (BrokerCmd, SimulateCmd, WatchCmd, AnalyzeCmd, ReportCmd))


class TestExitCodes:
    def test_usage_error_exits_1(self, capsys):
        assert cli.main(["frobnicate"]) == 1
        assert "parksim:" in capsys.readouterr().err

    def test_help_exits_0(self, capsys):
        assert cli.main(["--help"]) == 0
        assert "COMMAND" in capsys.readouterr().out

    def test_config_error_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("facility.total_slots = 0\n", encoding="utf-8")
        assert cli.main(["simulate", "--scenario", str(bad)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_scenario_exits_2(self):
        assert cli.main(["simulate", "--scenario", "/nope/missing.cfg"]) == 2

    def test_watch_unreachable_exits_3(self, capsys):
        assert cli.main(["watch", "--broker", "127.0.0.1:1", "--retries", "1"]) == 3


class TestAnalyzeOutput:
    def test_per_dwell_csv(self, capsys):
        code = cli.main(["analyze", "--lambda", "4", "--slots", "4",
                         "--lambda-unit", "per-dwell", "--delta-g", "10", "--rate", "2"])
        assert code == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out[0] == "lambda,n,p_full,L,t_response"
        lam, n, p_full, L, t_response = out[1].split(",")
        assert (lam, n) == ("4", "4")
        assert float(p_full) == pytest.approx(0.19536681481316456, abs=1e-9)
        assert float(L) == 4.0
        assert float(t_response) == 5.0

    def test_per_hour_uses_littles_law(self, capsys):
        cli.main(["analyze", "--lambda", "20", "--slots", "1000",
                  "--lambda-unit", "per-hour", "--t-avg", "0.5"])
        row = capsys.readouterr().out.strip().splitlines()[1]
        assert float(row.split(",")[3]) == 10.0


class TestSimulateAndReport:
    def test_simulate_writes_outputs(self, tmp_path, capsys):
        scenario = tmp_path / "day.cfg"
        scenario.write_text(DAY_CFG, encoding="utf-8")
        out_dir = tmp_path / "out"
        code = cli.main(["simulate", "--scenario", str(scenario), "--out", str(out_dir)])
        assert code == 0
        assert (out_dir / "events.jsonl").exists()
        assert (out_dir / "metrics.csv").exists()
        assert (out_dir / "report.txt").exists()
        assert "final vacancy" in capsys.readouterr().out

    def test_seed_override_changes_events(self, tmp_path):
        scenario = tmp_path / "day.cfg"
        scenario.write_text(DAY_CFG, encoding="utf-8")
        cli.main(["simulate", "--scenario", str(scenario), "--out", str(tmp_path / "a")])
        cli.main(["simulate", "--scenario", str(scenario), "--out", str(tmp_path / "b"),
                  "--seed", "123"])
        a = (tmp_path / "a" / "events.jsonl").read_text()
        b = (tmp_path / "b" / "events.jsonl").read_text()
        assert a != b

    def test_report_regenerates_identical_text(self, tmp_path):
        scenario = tmp_path / "day.cfg"
        scenario.write_text(DAY_CFG, encoding="utf-8")
        out_dir = tmp_path / "out"
        cli.main(["simulate", "--scenario", str(scenario), "--out", str(out_dir)])
        regenerated = tmp_path / "report2.txt"
        code = cli.main(["report", "--in", str(out_dir / "events.jsonl"),
                         "--out", str(regenerated)])
        assert code == 0
        assert regenerated.read_text() == (out_dir / "report.txt").read_text()

    def test_report_on_garbage_exits_2(self, tmp_path):
        bad = tmp_path / "events.jsonl"
        bad.write_text("{}\nnot json\n", encoding="utf-8")
        assert cli.main(["report", "--in", str(bad), "--out", str(tmp_path / "r.txt")]) == 2
