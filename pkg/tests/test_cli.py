import csv
import io
import subprocess
import sys

import pytest

from shiftedeuler import __version__
from shiftedeuler.cli import (
    RESULT_COLUMNS,
    ConfigError,
    RunConfig,
    build_config,
    load_config_file,
    main,
    parse_config,
    parse_deltas,
    parse_grid,
)
from shiftedeuler.exit_sim import StoppingMode
from shiftedeuler.overshoot_dist import C0

PLAIN, SHIFTED = StoppingMode.PLAIN, StoppingMode.SHIFTED

ELLIPTIC_CONFIG = """\
x0 = [0.0, 0.0, 0.0]
delta = 0.01
n = 50
seed = 3

[model]
name = "section6"

[domain]
kind = "ball"
radius = 2.0

[problem]
g = {polynomial = [[1.0, 1, 1, 1]]}
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def rows_of(text):
    lines = text.splitlines()
    assert lines[0].startswith("# shiftedeuler ")
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


def config_error(capsys, argv):
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:config:")
    return err


# --------------------------------------------------------------------------
# configuration


@pytest.mark.trivial
def test_minimal_grid_config(tmp_path):
    path = write(tmp_path, "grid.toml", 'preset = "section6-grid"\ndelta = [0.1, 0.05, 0.01]\nn = 100000\nseed = 1\n')
    cfg = parse_config(["preset", "--config", path])
    assert isinstance(cfg, RunConfig)
    assert cfg.preset == "section6-grid" and cfg.deltas == (0.1, 0.05, 0.01)
    assert cfg.n_paths == 100_000 and cfg.seed == 1 and cfg.modes == (PLAIN, SHIFTED)


@pytest.mark.trivial
def test_negative_delta(tmp_path, capsys):
    with pytest.raises(ConfigError, match="delta must be > 0") as info:
        build_config("estimate", {"preset": "section6", "delta": -0.1}, {})
    assert info.value.key == "delta"
    path = write(tmp_path, "bad.toml", 'preset = "section6"\ndelta = -0.1\n')
    err = config_error(capsys, ["estimate", "--config", path])
    assert err.startswith("error:config:delta: delta must be > 0")


@pytest.mark.trivial
def test_unknown_key(tmp_path, capsys):
    path = write(tmp_path, "typo.toml", 'preset = "section6"\ndetla = 0.1\n')
    with pytest.raises(ConfigError) as info:
        load_config_file(path)
    assert info.value.key == "detla"
    assert "error:config:detla:" in config_error(capsys, ["estimate", "--config", path])


def test_unknown_nested_key(tmp_path):
    path = write(tmp_path, "typo.toml", ELLIPTIC_CONFIG.replace("radius", "raduis"))
    with pytest.raises(ConfigError) as info:
        load_config_file(path)
    assert info.value.key == "domain.raduis"


def test_flags_override_file(tmp_path):
    path = write(tmp_path, "c.toml", 'preset = "section6"\ndelta = 0.1\nn = 1000\nseed = 4\n')
    cfg = parse_config(["estimate", "--config", path, "--n", "500", "--delta", "0.05,1/32"])
    assert cfg.n_paths == 500 and cfg.seed == 4 and cfg.deltas == (0.05, 1 / 32)


def test_config_errors(tmp_path, capsys):
    config_error(capsys, ["estimate", "--preset", "section6", "--n", "1.5"])
    config_error(capsys, ["estimate", "--preset", "section6", "--mode", "fast"])
    config_error(capsys, ["estimate", "--preset", "section6", "--x0", "3,0,0"])
    config_error(capsys, ["estimate", "--preset", "halfspace-bm", "--delta", "0.3"])
    config_error(capsys, ["estimate"])
    config_error(capsys, ["estimate", "--config", str(tmp_path / "missing.toml")])
    config_error(capsys, ["estimate", "--config", write(tmp_path, "broken.toml", "n = = 3")])
    config_error(capsys, ["nonsense"])
    config_error(capsys, ["convergence", "--preset", "halfspace-bm", "--delta", "0.1"])


def test_deltas_parsing():
    assert parse_deltas("1/64..1/1024") == tuple(2.0**-k for k in range(6, 11))
    assert parse_deltas(0.1) == (0.1,)
    assert parse_deltas([0.1, "1/20"]) == (0.1, 0.05)
    for bad in ("1/64..1/1000", "1/1024..1/64", "0..1", "", "x"):
        with pytest.raises(ConfigError):
            parse_deltas(bad)


def test_grid_parsing():
    assert parse_grid("0:1:5") == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert parse_grid("0.5,2") == (0.5, 2.0)
    for bad in ("0:1", "1:0:5", "-1,2", "0:1:1"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


def test_negative_x0_flag():
    cfg = parse_config(["estimate", "--preset", "section6", "--x0", "-0.7,0.3,0.7", "--delta", "0.1"])
    assert cfg.x0 == (-0.7, 0.3, 0.7)


def test_config_hash_ignores_output_and_workers():
    a = build_config("estimate", {"preset": "section6"}, {"output": "a.csv", "workers": 1})
    b = build_config("estimate", {"preset": "section6"}, {"output": "b.csv", "workers": 4})
    c = build_config("estimate", {"preset": "section6"}, {"seed": 2})
    assert a.config_hash == b.config_hash != c.config_hash
    assert len(a.config_hash) == 16


def test_version():
    out = subprocess.run([sys.executable, "-m", "shiftedeuler", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == f"shiftedeuler {__version__}"


# --------------------------------------------------------------------------
# commands


def test_estimate_section6(capsys):
    argv = "estimate --preset section6 --x0 -0.7,0.3,0.7 --delta 0.1 --mode shifted --n 100000 --seed 1".split()
    assert main(argv) == 0
    out = capsys.readouterr().out
    (row,) = rows_of(out)
    assert list(row) == RESULT_COLUMNS
    assert row["mode"] == "shifted" and row["n"] == "100000"
    mean, se = float(row["mean"]), float(row["stderr"])
    assert abs(mean - (-0.147)) < 3 * se
    assert float(row["exact"]) == -0.147


def test_output_file_layout(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["estimate", "--preset", "halfspace-bm", "--delta", "1/16", "--n", "1000", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith(f"# shiftedeuler {__version__} seed=1 config=")
    assert lines[1] == ",".join(RESULT_COLUMNS)
    assert len(lines) == 4
    assert not list(tmp_path.glob(".tmp-*"))
    assert "plain" in capsys.readouterr().out


def test_byte_identical_across_workers(tmp_path):
    base = ["estimate", "--preset", "section6", "--x0", "0.3,-0.3,0.7", "--delta", "0.1", "--n", "70000", "--seed", "5"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(base + ["--workers", "1", "-o", str(a)]) == 0
    assert main(base + ["--workers", "2", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_custom_polynomial_config(tmp_path, capsys):
    path = write(tmp_path, "ell.toml", ELLIPTIC_CONFIG.replace("n = 50", "n = 2000"))
    assert main(["estimate", "--config", path, "--delta", "0.05"]) == 0
    rows = rows_of(capsys.readouterr().out)
    assert {r["mode"] for r in rows} == {"plain", "shifted"}
    for r in rows:
        assert r["exact"] == "" and float(r["side_exit_fraction"]) == 1.0


def test_simulation_error_keeps_partial(tmp_path, capsys):
    path = write(tmp_path, "ell.toml", ELLIPTIC_CONFIG)
    out = tmp_path / "r.csv"
    assert main(["estimate", "--config", path, "--max-steps", "5", "-o", str(out)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:simulation:MaxStepsExceeded")
    assert "partial results saved to" in err.splitlines()[1]
    assert not out.exists()
    partial = tmp_path / "r.csv.partial"
    assert partial.exists() and partial.read_text().startswith("# shiftedeuler")


def test_preset_command(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert main(["preset", "--preset", "section6", "--delta", "0.1", "--n", "2000", "-o", str(out)]) == 0
    assert "x0 = (-0.7, 0.3, 0.7)" in capsys.readouterr().out
    assert len(rows_of(out.read_text())) == 2


@pytest.mark.slow
def test_convergence_halfspace(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["convergence", "--preset", "halfspace-bm", "--deltas", "1/64..1/1024"]) == 0
    out = capsys.readouterr().out
    slope = float(next(l for l in out.splitlines() if l.startswith("slope plain:")).split()[2])
    assert 0.4 <= slope <= 0.6
    dat = (tmp_path / "convergence-halfspace-bm.dat").read_text()
    assert "# mode plain" in dat and "# mode shifted" in dat
    assert len([l for l in dat.splitlines() if l and not l.startswith("#")]) == 10


def test_convergence_reference_when_no_closed_form(tmp_path, capsys):
    plot = tmp_path / "mi.dat"
    argv = ["convergence", "--preset", "moving-interval", "--deltas", "1/16,1/32", "--n", "5000",
            "--reference-n", "5000", "--plot-data", str(plot)]
    assert main(argv) == 0
    cap = capsys.readouterr()
    assert "reference" in cap.err and "dt=0.00390625" in cap.err
    assert "slope plain:" in cap.out and plot.exists()


@pytest.mark.slow
def test_ladder_command(capsys):
    assert main("ladder --n 1000000 --cap 1000000 --seed 1".split()) == 0
    out = capsys.readouterr().out
    est = float(next(l for l in out.splitlines() if l.startswith("c0 estimate")).split()[2])
    assert abs(est - C0) < 0.01
    assert "c0 analytic 0.5825971579" in out
    assert round(C0, 4) == 0.5826


def test_ladder_grid_output(tmp_path, capsys):
    out = tmp_path / "h.csv"
    assert main(["ladder", "--n", "2000", "--grid", "0:2:5", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[1] == "y,H" and len(lines) == 7
    values = [float(l.split(",")[1]) for l in lines[2:]]
    assert values[0] == 0.0 and values == sorted(values) and values[-1] <= 1.0


def test_overshoot_command(tmp_path, capsys):
    plot = tmp_path / "o.dat"
    argv = ["overshoot", "--x0", "0.9", "--delta", "1e-3", "--n", "2000", "--ladder-n", "20000", "--plot-data", str(plot)]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert out.startswith("side exits") and "KS distance to H" in out
    text = plot.read_text()
    assert "# empirical" in text and "# limit" in text


def test_overshoot_without_side_exits(capsys):
    argv = ["overshoot", "--x0", "-50", "--delta", "0.25", "--n", "10", "--ladder-n", "100"]
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("error:simulation:NoSideExits")
