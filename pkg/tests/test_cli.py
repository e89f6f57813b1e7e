import math
import os
from unittest.mock import patch

import numpy as np
import pytest

from app.core.errors import CapExceededError, ConfigError
from app.core.probdist import JointDist, format_distribution
from app.main import EXIT_CAP, EXIT_OK, EXIT_USAGE, build_parser, main
from app.services.commands_registry import commands_registry
from app.services.job_config import build_job, parse_config_text
from app.services.reports import column, read_csv
from app.services.schemas import ExponentResult, RateKind, TradeoffPoint
from tests.conftest import FIG1

FAST = ["--coarse", "8", "--starts", "4", "--rounds", "2"]


@pytest.fixture
def source_file(tmp_path):
    path = tmp_path / "source.txt"
    path.write_text(format_distribution("source", JointDist(np.array(FIG1))))
    return str(path)


def test_registry_lists_commands():
    assert commands_registry.get_command_names() == ["exponent", "tradeoff", "simulate", "fig1"]
    assert "fig1" in build_parser().epilog


def test_missing_command_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE


def test_exponent_command_writes_csv(tmp_path, source_file):
    out = str(tmp_path / "out")
    code = main(["exponent", "--kind", "er_map", "--source", source_file, "--rate", "const:0.5", "--out", out] + FAST)
    assert code == EXIT_OK
    header, rows = read_csv(os.path.join(out, "exponent_er_map.csv"))
    assert header == ["rate", "value", "feasible", "est_error", "refinement_rounds", "witness"]
    assert len(rows) == 1
    assert rows[0][0] == "const:0.5"
    assert rows[0][1] > 0.0
    assert rows[0][2] == 1.0


def test_reports_are_byte_identical_across_runs(tmp_path, source_file):
    texts = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        args = ["exponent", "--kind", "fr_random", "--source", source_file, "--sweep", "R:0.2:0.4:2", "--out", out]
        assert main(args + FAST) == EXIT_OK
        with open(os.path.join(out, "exponent_fr_random.csv")) as f:
            texts.append(f.read())
    assert texts[0] == texts[1]
    assert texts[0].splitlines()[0].startswith("R,value")


def test_unknown_kind_exits_with_usage_code(tmp_path, source_file):
    code = main(["exponent", "--kind", "nope", "--source", source_file, "--out", str(tmp_path)])
    assert code == EXIT_USAGE


def test_missing_source_exits_with_usage_code(tmp_path):
    assert main(["tradeoff", "--mode", "e_star", "--out", str(tmp_path)]) == EXIT_USAGE


def test_oversized_alphabet_exits_with_cap_code(tmp_path):
    path = tmp_path / "big.txt"
    path.write_text("dist big\n" + " ".join(["0.0625"] * 16 + ["0"]) + "\nend\n")
    assert main(["exponent", "--source", str(path), "--out", str(tmp_path)]) == EXIT_CAP


def test_cap_raised_by_a_command_maps_to_exit_code(tmp_path, source_file):
    with patch("app.main.commands_registry.execute", side_effect=CapExceededError("blocklength too large")):
        assert main(["simulate", "--source", source_file, "--n", "40", "--out", str(tmp_path)]) == EXIT_CAP


def test_simulate_command(tmp_path, source_file):
    out = str(tmp_path)
    args = ["simulate", "--decoder", "map", "--source", source_file, "--rate", "const:0.3", "--n", "4",
            "--codes", "3", "--seed", "1", "--delta", "0.05", "--out", out]
    assert main(args + FAST) == EXIT_OK
    header, rows = read_csv(os.path.join(out, "simulate_map.csv"))
    assert header[:9] == ["n", "codes", "seed", "decoder", "rate_spec", "mean_pe", "mean_log_pe", "se_pe", "se_log_pe"]
    assert rows[0][:5] == [4, 3, 1, "map", "const:0.3"]
    assert len(rows) == 1
    assert 0.0 <= column(header, rows, "mean_pe")[0] <= 1.0
    assert column(header, rows, "formula_trc") == [None]


def test_tradeoff_command_with_patched_solver(tmp_path, source_file):
    with patch("app.tasks.tradeoff_job.tradeoff.e_star_of_delta", side_effect=[0.0, 0.25]) as solver:
        code = main(["tradeoff", "--mode", "e_star", "--source", source_file, "--sweep", "delta:0.1:0.3:2",
                     "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert solver.call_count == 2
    header, rows = read_csv(os.path.join(str(tmp_path), "tradeoff_e_star.csv"))
    assert header == ["delta", "e_star"]
    assert column(header, rows, "e_star") == [0.0, 0.25]


def test_fig1_writes_csv_and_svg(tmp_path):
    with patch("app.tasks.fig1_job.fr_expurgated", return_value=ExponentResult(value=0.1)), \
            patch("app.tasks.fig1_job.tradeoff_e_given_er", return_value=TradeoffPoint(x=0.0, y=math.inf)):
        assert main(["fig1", "--out", str(tmp_path)]) == EXIT_OK
    header, rows = read_csv(os.path.join(str(tmp_path), "fig1.csv"))
    assert header == ["R", "E_ex_fr", "E_e_inf"]
    assert len(rows) == 32
    assert rows[0][0] == pytest.approx(0.05)
    assert rows[-1][0] == pytest.approx(0.68)
    assert column(header, rows, "E_e_inf") == [math.inf] * 32
    assert os.path.exists(os.path.join(str(tmp_path), "fig1.svg"))


# ─── Config files ────────────────────────────────────────────


def test_config_file_merges_with_flags(tmp_path):
    path = tmp_path / "job.cfg"
    path.write_text(
        "# exponent job\n"
        "kind = excess_rate\n"
        "delta = 0.2\n"
        "rate = j:er=0.1,delta=0.1\n"
        "cross_check = yes\n"
        + format_distribution("side", JointDist(np.array(FIG1)))
    )
    job = build_job("exponent", {"delta": 0.3, "seed": None}, str(path))
    assert job.kind == "excess_rate"
    assert job.delta == 0.3
    assert job.rate.kind == RateKind.J_RATE
    assert job.cross_check is True
    assert job.source_name == "side"
    np.testing.assert_allclose(job.source, FIG1)


def test_config_source_can_name_a_block(tmp_path):
    path = tmp_path / "job.cfg"
    path.write_text(
        "source = w\n"
        + format_distribution("source", JointDist(np.array(FIG1)))
        + "dist w\n0.25 0.25\n0.25 0.25\nend\n"
    )
    job = build_job("exponent", {}, str(path))
    assert job.source_name == "w"
    np.testing.assert_allclose(job.source, [[0.25, 0.25], [0.25, 0.25]])


def test_config_unknown_key_reports_position():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("kind = er_map\n  bogus = 1\n")
    assert (exc.value.line, exc.value.column) == (2, 3)


def test_config_bad_value_reports_position(tmp_path):
    path = tmp_path / "job.cfg"
    path.write_text("kind = er_map\nn = abc\n")
    with pytest.raises(ConfigError) as exc:
        build_job("simulate", {}, str(path))
    assert (exc.value.line, exc.value.column) == (2, 5)


def test_config_bad_rate_reports_line(tmp_path):
    path = tmp_path / "job.cfg"
    path.write_text("rate = sometimes\n")
    with pytest.raises(ConfigError) as exc:
        build_job("exponent", {}, str(path))
    assert exc.value.line == 1


def test_config_errors_exit_with_usage_code(tmp_path):
    path = tmp_path / "job.cfg"
    path.write_text("kind = er_map\nbogus = 1\n")
    assert main(["exponent", "--config", str(path), "--out", str(tmp_path)]) == EXIT_USAGE


def test_optimizer_flags_reach_settings():
    job = build_job("exponent", {"rounds": 2, "coarse": 8, "starts": 4})
    assert (job.settings.rounds, job.settings.coarse_resolution, job.settings.starts) == (2, 8, 4)
    with pytest.raises(ConfigError):
        build_job("exponent", {"n": 0})
