import json
import logging
import math
from fractions import Fraction

import pandas as pd
import pytest

import cli_interface
import main as entry
from cli_interface import build_parser, run_command
from colored_logger import ColoredFormatter
from data_processor import polynomial_from_json, read_json
from errors import RegimeError
from symbolalg import x, xi

X1, X2 = x(3, 1), x(3, 2)
K1, K2 = xi(3, 1), xi(3, 2)
H10 = 1.0 / math.sqrt(10 * 11)


def test_average_command(tmp_path):
    out = tmp_path / "avg.json"
    assert run_command(["average", "--flow", "1,1", "--poly", "x1^2", "--out", str(out)]) == 0
    expected = (x(2, 1) ** 2 + xi(2, 1) ** 2) * Fraction(1, 2)
    assert polynomial_from_json(read_json(str(out))) == expected


def test_sphere_radon_prints_json(capsys):
    assert run_command(["sphere-radon", "--q", "x1*x2"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert polynomial_from_json(data["sigma_form"]) == (X1 * X2 + K1 * K2) * Fraction(1, 2)
    assert data["reduced_form"]["frame"] == "orbit"


def test_config_file_supplies_options(tmp_path):
    out = tmp_path / "radon.json"
    config = tmp_path / "run.cfg"
    config.write_text(f"q = x1*x2\nout = {out}\n")
    assert run_command(["sphere-radon", "--config", str(config)]) == 0
    assert "sigma_form" in read_json(str(out))


def test_flags_override_config_file(tmp_path, capsys):
    config = tmp_path / "run.cfg"
    config.write_text("q = x1*x2\n")
    assert run_command(["sphere-radon", "--config", str(config), "--q", "x1^3"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["sigma_form"]["terms"] == []


def test_spectrum_then_verify(tmp_path):
    spectrum = tmp_path / "spectrum.csv"
    rectangles = tmp_path / "rectangles.json"
    report = tmp_path / "report.json"
    assert run_command(["spectrum", "--h", str(H10), "--eps", "0", "--q", "x1", "--lmin", "4", "--lmax", "16",
                        "--pad", "2", "--out", str(spectrum), "--rectangles-out", str(rectangles)]) == 0
    assert run_command(["verify", "--spectrum", str(spectrum), "--rectangles", str(rectangles),
                        "--out", str(report)]) == 0
    data = read_json(str(report))
    assert [c["k1"] for c in data["clusters"]] == list(range(6, 15))
    assert data["stats"]["unassigned_count"] == 0


def test_spectrum_writes_stage_history(tmp_path):
    history = tmp_path / "history.txt"
    assert run_command(["spectrum", "--h", str(H10), "--eps", "0", "--q", "x1", "--lmin", "4", "--lmax", "16",
                        "--pad", "2", "--out", str(tmp_path / "spectrum.csv"), "--history-out", str(history)]) == 0
    text = history.read_text(encoding="utf-8")
    assert "Total Stages: 1" in text
    assert "1. [" in text and "] spectrum (" in text


def test_spectrum_reports_unwritable_history(tmp_path):
    assert run_command(["spectrum", "--h", str(H10), "--eps", "0", "--q", "x1", "--lmin", "4", "--lmax", "16",
                        "--pad", "2", "--out", str(tmp_path / "spectrum.csv"),
                        "--history-out", str(tmp_path / "missing" / "history.txt")]) == 1


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_lattice_needs_operating_point():
    with pytest.raises(ValueError):
        run_command(["lattice", "--profile", "constant", "--k1", "0,2"])


@pytest.mark.parametrize("regime", ["thm4.2", "subcluster"])
def test_lattice_accepts_theorem_regime_tags(tmp_path, regime):
    out = tmp_path / "lattice.csv"
    assert run_command(["lattice", "--regime", regime, "--profile", "constant", "--h", "0.01", "--eps", "0.03",
                        "--k1", "0,2", "--k2", "0,1", "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    assert len(frame) == 6
    assert frame["re"].to_numpy() == pytest.approx(0.01 * frame["k1"].to_numpy())


def test_lattice_rejects_unknown_regime_tag():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["lattice", "--regime", "thm9.9"])


def test_lattice_balanced_tag_needs_long_time_averages():
    with pytest.raises(RegimeError):
        run_command(["lattice", "--regime", "thm4.4", "--profile", "constant", "--h", "0.01", "--eps", "0.1",
                     "--k1", "0,2", "--t-inf", "0.2"])


# ----------------------------------------------------------------------
# exit codes
def test_exit_code_for_usage_errors():
    assert entry.main(["sphere-s", "--q", "x1*x2"]) == entry.EXIT_USAGE_ERROR
    assert entry.main(["average", "--flow", "1,1"]) == entry.EXIT_USAGE_ERROR
    assert entry.main(["verify", "--spectrum", "missing.csv", "--rectangles", "missing.json"]) \
        == entry.EXIT_USAGE_ERROR


def test_exit_code_for_success(tmp_path):
    assert entry.main(["sphere-s", "--q", "x1", "--out", str(tmp_path / "s.json")]) == 0


def test_exit_code_for_unexpected_errors(monkeypatch):
    def boom(argv):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli_interface, "run_command", boom)
    assert entry.main(["average"]) == entry.EXIT_FAILURE


def test_exit_code_for_interrupt(monkeypatch):
    def interrupted(argv):
        raise KeyboardInterrupt

    monkeypatch.setattr(cli_interface, "run_command", interrupted)
    assert entry.main(["average"]) == entry.EXIT_INTERRUPTED


def test_status_lines_stay_off_stdout(tmp_path, capsys):
    assert run_command(["sphere-s", "--q", "x1", "--out", str(tmp_path / "s.json")]) == 0
    captured = capsys.readouterr()
    assert captured.out == ""
    assert "Wrote" in captured.err


def test_plain_formatter_has_no_escape_codes():
    record = logging.LogRecord("verify", logging.WARNING, __file__, 1, "leakage %s", ("1e-7",), None)
    text = ColoredFormatter(use_color=False).format(record)
    assert text.endswith("WARNING  verify: leakage 1e-7")
    assert "\033[" not in text
    assert ColoredFormatter(use_color=True).format(record).startswith("\033[33m")
