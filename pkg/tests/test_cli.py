import csv
import io
import json
import os
from pathlib import Path

import pytest
from click.testing import CliRunner

from haarweak import cli, verify

SNAPSHOTS = Path(__file__).parent / "snapshots"
COMMANDS = (None, "xi1", "xi2", "free-energy", "threshold", "zero-noise", "simulate", "verify")


def _help_text(command):
    args = [command, "--help"] if command else ["--help"]
    res = CliRunner().invoke(cli.main, args, terminal_width=100, prog_name="haarweak")
    assert res.exit_code == 0
    return res.output


@pytest.mark.parametrize("command", COMMANDS)
def test_help_snapshot(command):
    path = SNAPSHOTS / f"help_{command or 'main'}.txt"
    text = _help_text(command)
    if os.environ.get("UPDATE_SNAPSHOTS"):
        path.parent.mkdir(exist_ok=True)
        path.write_text(text)
    assert text == path.read_text()


@pytest.mark.parametrize("command", COMMANDS[1:])
def test_help_lists_every_flag(command):
    text = _help_text(command)
    for param in cli.main.commands[command].params:
        for opt in param.opts:
            assert opt in text


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def _run(capsys, argv):
    code = cli.entry(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_noiseless_sums_to_four(capsys):
    code, out, _ = _run(capsys, ["simulate", "--n", "4", "--delta", "1", "--sigma", "0", "--ensemble", "haar"])
    assert code == 0
    ys = [float(r["y"]) for r in _rows(out)]
    assert len(ys) == 4
    assert sum(ys) == pytest.approx(4.0, rel=1e-12)


def test_xi2_at_zero_is_twice_xi1(capsys):
    _, out1, _ = _run(capsys, ["xi1", "--sigma", "0.3"])
    _, out2, _ = _run(capsys, ["xi2", "--sigma", "0.3", "--q", "0"])
    xi1 = float(_rows(out1)[0]["xi1"])
    xi2 = float(_rows(out2)[0]["xi2"])
    assert abs(xi2 - 2 * xi1) <= 1e-8


def test_zero_noise_grid(capsys):
    code, out, _ = _run(capsys, ["zero-noise", "--q-grid", "0:0.5:3"])
    assert code == 0
    rows = _rows(out)
    assert [float(r["q"]) for r in rows] == [0.0, 0.25, 0.5]
    assert float(rows[0]["xi2"]) == 2.0


@pytest.mark.parametrize("argv", [
    ["zero-noise", "--q-grid", "0.5", "--gaussian"],
    ["simulate", "--n", "4", "--delta", "1"],
    ["xi1", "--sigma", "abc"],
    ["zero-noise", "--q-grid", "0.5,1.2"],
    ["nosuch"],
    ["simulate", "--n", "10", "--delta", "2.5", "--sigma", "0.1", "--ensemble", "cdp", "--masks", "2"],
    ["xi2", "--sigma", "0.3", "--q", "1.0"],
    ["free-energy", "--sigma", "0.3", "--delta", "1.5", "--q-max", "0.5"],
])
def test_invalid_input_exits_one(capsys, argv):
    code, _, _ = _run(capsys, argv)
    assert code == cli.EXIT_INVALID


def test_failed_verification_exits_two(capsys, monkeypatch):
    bad = [verify._row("x", 2, 1, "stat", 1.0, 0.5, False)]
    monkeypatch.setattr(verify, "run_suite", lambda name, seed=0, trials=None: bad)
    code, out, err = _run(capsys, ["verify", "--suite", "overlap"])
    assert code == cli.EXIT_NUMERICAL
    assert _rows(out)[0]["passed"] == "false"
    assert "verification failed" in err


def test_numerical_error_exits_two(capsys, monkeypatch):
    from haarweak import errors, free_energy

    def boom(*a, **k):
        raise errors.ScanError("no sign change")
    monkeypatch.setattr(free_energy, "threshold_scan", boom)
    code, _, err = _run(capsys, ["threshold", "--sigma", "0.3"])
    assert code == cli.EXIT_NUMERICAL
    assert "ScanError" in err


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nn = 6\ndelta = 1\nsigma = 0\nseed = 3\n")
    code, out, _ = _run(capsys, ["--config", str(cfg), "simulate"])
    assert code == 0
    assert len(_rows(out)) == 6
    code, out, _ = _run(capsys, ["--config", str(cfg), "simulate", "--n", "8"])
    assert len(_rows(out)) == 8


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("bogus = 1\n")
    code, _, _ = _run(capsys, ["--config", str(cfg), "simulate", "--n", "4", "--delta", "1", "--sigma", "0"])
    assert code == cli.EXIT_INVALID


def test_output_directory_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path))
    code, out, err = _run(capsys, ["simulate", "--n", "4", "--delta", "1", "--sigma", "0.1"])
    assert code == 0
    assert out == ""
    assert (tmp_path / "measurements.csv").exists()
    code, _, _ = _run(capsys, ["simulate", "--n", "4", "--delta", "1", "--sigma", "0.1", "-o", "sub/y.csv"])
    assert (tmp_path / "sub" / "y.csv").read_bytes() == (tmp_path / "measurements.csv").read_bytes()


@pytest.mark.parametrize("argv", [
    ["simulate", "--n", "32", "--delta", "2", "--sigma", "0.3", "--seed", "9", "--ensemble", "cdp"],
    ["simulate", "--n", "32", "--delta", "1.5", "--sigma", "0.3", "--seed", "9"],
    ["zero-noise", "--q-grid", "0.1,0.5,0.9"],
    ["xi2", "--sigma", "0.5", "--q", "0.3"],
    ["free-energy", "--sigma", "0", "--delta", "1.5", "--grid-n", "20"],
])
def test_byte_identical_outputs(tmp_path, capsys, argv):
    a, b = tmp_path / "a.out", tmp_path / "b.out"
    assert cli.entry(argv + ["-o", str(a)]) == 0
    assert cli.entry(argv + ["-o", str(b)]) == 0
    capsys.readouterr()
    assert a.read_bytes() == b.read_bytes()


def test_free_energy_summary_goes_to_stdout_with_file(tmp_path, capsys):
    target = tmp_path / "curve.csv"
    code, out, _ = _run(capsys, ["free-energy", "--sigma", "0", "--delta", "1.5", "--grid-n", "20",
                                 "-o", str(target)])
    assert code == 0
    summary = _rows(out)[0]
    assert summary["verdict"] == "condition-holds"
    assert float(summary["curvature_at_zero"]) == pytest.approx(1.0 / 3.0, rel=1e-8)
    assert target.read_text().startswith("q,F,xi2")


def test_threshold_json(capsys):
    code, out, _ = _run(capsys, ["threshold", "--sigma", "0.3", "--gaussian", "--tol", "0.01", "--grid-n", "40"])
    assert code == 0
    res = json.loads(out)
    assert res["variant"] == "gaussian"
    assert res["bracket_hi"] - res["bracket_lo"] <= 0.01


def test_q_grid_parser():
    assert cli._parse_q_grid("0:1:5") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert cli._parse_q_grid("0.1, 0.2") == [0.1, 0.2]


def test_fmt_round_trips_floats():
    v = 0.1 + 0.2
    assert float(cli.fmt(v)) == v
    assert cli.fmt(True) == "true"
