import glob
import json
import math
import os
from dataclasses import replace

import pytest

from conftest import small_flat_config
from urapprox.cli import main
from urapprox.config import ConfigError, load_config, parse_list, parse_number
from urapprox.pipeline import run_scenario

SCENARIOS = sorted(glob.glob(os.path.join(os.path.dirname(__file__), "..", "scenarios", "*.ini")))


def test_parse_number_forms():
    assert parse_number("2^-9") == 2.0 ** -9
    assert parse_number(" 1/8 ") == 0.125
    assert parse_number("0.25") == 0.25
    assert parse_list("0.5, 2^-2,1/8") == [0.5, 0.25, 0.125]


@pytest.mark.parametrize("key,value", [("eta", "0.5"), ("K", "8"), ("tau", "0.25"),
                                       ("eps", "0.5, 1.5"), ("k_min", "7"), ("h", "2^-6"),
                                       ("box", "0, 0, -1"), ("q0", "4; 0")])
def test_invalid_values_rejected(key, value):
    with pytest.raises(ConfigError):
        small_flat_config(**{key: value})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        small_flat_config(colour="red")


def test_defaults_and_auto_h():
    c = small_flat_config(h=None, tau=None, whitney_extra=None)
    assert math.isnan(c.h) and c.solver_h == 2.0 ** -7
    assert c.tau == 0.125 and c.whitney_extra == 4
    assert c.as_dict()["h"] == "auto"
    d = c.deeper()
    assert d.k_max == 7 and d.solver_h == 2.0 ** -8


@pytest.mark.parametrize("path", SCENARIOS, ids=lambda p: os.path.basename(p))
def test_shipped_scenarios_load(path):
    c = load_config(path)
    assert c.name == os.path.splitext(os.path.basename(path))[0]
    assert c.eta == 2.0 ** -4 and c.K == 2.0 ** 6
    assert c.solver_h <= 2.0 ** -(c.k_max + 1)


def _write(tmp_path, text, name="s.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL_INI = """[scenario]
boundary = flat_plane
boundary_params = lo=-2; hi=2
spacing = 2^-11
k_min = 4
k_max = 6
eta = 2^-4
K = 2^6
data = coordinate
data_params = scale=0.03
box = -0.625, -0.625, 1.25
q0 = 4; 0, 0
eps = 0.5, 0.25
stability = false
adr_trials = 40
nta_trials = 8
families = 3
extrapolation_samples = 10
"""


def test_cli_verify_grid_stage(tmp_path, capsys):
    assert main(["verify", _write(tmp_path, SMALL_INI), "--stage", "grid"]) == 0
    out = capsys.readouterr().out
    assert out.strip().endswith("grid: PASS")
    # 4 level-4 cubes cover [-2, 2] x {0}: 64 + 128 + 256 over three generations
    assert json.loads(out[:out.rindex("}") + 1])["cubes"] == 448


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = _write(tmp_path, SMALL_INI.replace("eta = 2^-4", "eta = 0.5"))
    assert main(["verify", bad, "--stage", "grid"]) == 2
    assert "eta" in capsys.readouterr().err
    assert main(["verify", str(tmp_path / "missing.ini"), "--stage", "grid"]) == 2


def test_cli_unknown_stage(tmp_path):
    assert main(["verify", _write(tmp_path, SMALL_INI), "--stage", "bogus"]) == 2


@pytest.fixture(scope="module")
def twin_runs(tmp_path_factory):
    """The small scenario run twice into different directories, plus a no-sweep run."""
    base = tmp_path_factory.mktemp("runs")
    cfg = small_flat_config()
    reps = []
    for tag in ("a", "b"):
        reps.append(run_scenario(replace(cfg, output=str(base / tag))))
    nosweep = run_scenario(replace(cfg, output=str(base / "c"), sweep=False))
    return base, reps, nosweep


def _manifest(d):
    with open(os.path.join(d, "MANIFEST.tsv")) as fh:
        return [line.split("\t") for line in fh.read().splitlines()]


def test_repeat_runs_bit_identical(twin_runs):
    base, reps, _ = twin_runs
    ma, mb = _manifest(base / "a"), _manifest(base / "b")
    assert ma == mb
    names = [row[0] for row in ma]
    assert "report.json" in names and "summary.txt" in names
    assert any(n.startswith("plots" + os.sep) and n.endswith(".svg") for n in names)
    for rel, digest in ma:
        assert len(digest) == 64
        assert (base / "a" / rel).read_bytes() == (base / "b" / rel).read_bytes()


def test_stage_isolation(twin_runs):
    """Turning the sweep off leaves every other stage's record unchanged."""
    _, reps, nosweep = twin_runs
    assert "approx" in reps[0].stages and "approx" not in nosweep.stages
    for stage, rec in nosweep.stages.items():
        assert reps[0].stages[stage] == rec


def test_plot_extents_match_box(twin_runs):
    base, reps, _ = twin_runs
    x0, y0, side = reps[0].config["box"]
    with open(base / "a" / "plots" / "extents.tsv") as fh:
        rows = fh.read().splitlines()[1:]
    assert len(rows) == 3
    for row in rows:
        _, a, b, c, d = row.split("\t")
        assert (float(a), float(b), float(c), float(d)) == (x0, x0 + side, y0, y0 + side)


def _rows(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    return len(lines) - 1  # header


def test_table_rows_match_cube_counts(twin_runs):
    base, reps, _ = twin_runs
    n = reps[0].stages["grid"]["cubes"]
    per_level = reps[0].stages["grid"]["per_level"]
    assert n == sum(per_level.values())
    assert _rows(base / "a" / "tables" / "cubes.tsv") == n
    assert _rows(base / "a" / "tables" / "energy_coefficients.tsv") == n
    with open(base / "a" / "summary.txt") as fh:
        assert "passed:" in fh.read()
