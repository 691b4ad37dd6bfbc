import json
import math
import os
import subprocess
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest

from cmaflow.cli import ReportError, main, read_report, validate_report
from cmaflow.continuity import load_path
from cmaflow.flow import read_csv, snapshot_read
from cmaflow.operator import invariant_c
from cmaflow.scenario import ScenarioError, loads

ROOT = Path(__file__).resolve().parents[1]
SCEN = ROOT / "scenarios"

BASE = """
[problem]
n = 2
alpha = 1
[grid]
points = [8, 1, 8, 1]
[omega]
constant = [[1, 0], [0, 1]]
[chi]
constant = [[{chi}, 0], [0, {chi}]]
[psi]
kind = "constant"
value = {psi}
[flow]
dt_safety = 1.0
t_max = 5.0
{extra}
"""


def scenario(tmp_path, chi=2.0, psi=1.0, extra="", name="s.toml"):
    p = tmp_path / name
    p.write_text(BASE.format(chi=chi, psi=psi, extra=extra))
    return str(p)


# validation

@pytest.mark.parametrize("bad,match", [
    ("[problem]\nn = 2\nalpha = 3", "alpha"),
    ("[problem]\nn = 2\nalpha = 0", "alpha"),
    ("[problem]\nn = 1\nalpha = 1", "n must"),
])
def test_problem_validation(bad, match):
    text = BASE.format(chi=2.0, psi=1, extra="").replace("[problem]\nn = 2\nalpha = 1", bad)
    with pytest.raises(ScenarioError, match=match):
        loads(text)


def test_rejects_non_hermitian():
    text = BASE.format(chi=2.0, psi=1, extra="").replace(
        "constant = [[2.0, 0], [0, 2.0]]", "constant = [[2.0, [0, 1]], [[0, 1], 2.0]]")
    with pytest.raises(ScenarioError, match="Hermitian"):
        loads(text)


def test_accepts_hermitian_complex_pair():
    text = BASE.format(chi=2.0, psi=1, extra="").replace(
        "constant = [[2.0, 0], [0, 2.0]]", "constant = [[2.0, [0.1, 0.2]], [[0.1, -0.2], 2.0]]")
    chi = loads(text).build().chi
    assert chi[..., 0, 1].ravel()[0] == 0.1 + 0.2j


@pytest.mark.parametrize("psi_block,match", [
    ('kind = "modes"\nmean = 1.0\nfloor = 0.0', "floor"),
    ('kind = "modes"\nmean = 1.0\nfloor = -1.0', "floor"),
    ('kind = "constant"\nvalue = -2.0', "positive"),
    ('kind = "bogus"', "kind"),
    ('kind = "constant"\nvalue = 1.0\ncolour = 3', "unknown keys"),
])
def test_psi_validation(psi_block, match):
    text = BASE.format(chi=2.0, psi=1, extra="").replace('kind = "constant"\nvalue = 1', psi_block)
    with pytest.raises(ScenarioError, match=match):
        loads(text)


@pytest.mark.parametrize("grid_block", [
    "points = [8, 1, 8, 1]\nperiods = [1.0, 0.0, 1.0, 1.0]",
    "points = [8, 1, 8, 1]\nperiods = [1.0, -1.0, 1.0, 1.0]",
    "points = [8, 8]",
])
def test_grid_validation(grid_block):
    text = BASE.format(chi=2.0, psi=1, extra="").replace("points = [8, 1, 8, 1]", grid_block)
    with pytest.raises(ScenarioError, match="grid"):
        loads(text)


def test_unknown_sections_rejected():
    with pytest.raises(ScenarioError, match="unknown keys"):
        loads(BASE.format(chi=2, psi=1, extra="[plot]\nx = 1"))
    with pytest.raises(ScenarioError, match="unknown keys in flow"):
        loads(BASE.format(chi=2, psi=1, extra="max_steps = 4"))
    with pytest.raises(ScenarioError, match="kappa_policy"):
        loads(BASE.format(chi=2, psi=1, extra='[continuity]\nkappa_policy = "min"'))
    with pytest.raises(ScenarioError, match="unknown checks"):
        loads(BASE.format(chi=2, psi=1, extra='[check]\nrequire = ["vibes"]'))


def test_psi_kinds():
    sc = loads(BASE.format(chi=2.0, psi=1, extra="").replace(
        'kind = "constant"\nvalue = 1', 'kind = "scaled"\nsigma = 0.5\nbase = {kind = "constant", value = 2.0}'))
    assert np.allclose(sc.build().psi, 2 * math.exp(0.5))
    manu = (SCEN / "manufactured.toml").read_text()
    sc = loads(manu)
    assert sc.u_star() is not None and sc.u_star().shape == sc.grid.shape


def test_random_modes_depend_on_seed():
    text = (SCEN / "hermitian_modes.toml").read_text()
    a, b = loads(text), loads(text)
    assert np.array_equal(a.build().psi, b.build().psi)
    b.seed += 1
    assert not np.array_equal(a.build().psi, b.build().psi)


@pytest.mark.parametrize("path", sorted(SCEN.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_scenarios_load(path):
    from cmaflow.scenario import load
    sc = load(path)
    assert sc.build().psi.shape == sc.grid.shape


# check

def test_check_c_and_psi_ge_c(tmp_path, capsys):
    p = scenario(tmp_path, chi=2.0, psi=1.0, extra='[check]\nrequire = ["cone", "psi_ge_c"]')
    assert main(["check", p]) == 1
    out = capsys.readouterr().out
    assert "invariant c         : 2\n" in out and "psi >= c            : False" in out
    assert "cone condition      : satisfied" in out


def test_check_psi_equal_c(tmp_path, capsys):
    p = scenario(tmp_path, chi=2.0, psi=2.0, extra='[check]\nrequire = ["cone", "psi_ge_c"]')
    assert main(["check", p]) == 0
    assert "psi >= c            : True" in capsys.readouterr().out


def test_check_cone_violated(capsys):
    assert main(["check", str(SCEN / "cone_violated.toml")]) == 1
    assert "violated" in capsys.readouterr().out


def test_check_parse_errors(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[problem\nn = 2")
    assert main(["check", str(bad)]) == 2
    assert main(["check", str(tmp_path / "missing.toml")]) == 2
    assert main(["frobnicate"]) == 2
    assert main([]) == 2


def test_threads_flag_validated(tmp_path):
    assert main(["check", scenario(tmp_path), "--threads", "0"]) == 2


# run

def test_run_constant_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    p = scenario(tmp_path, extra="snapshot_every = 2")
    assert main(["run", p, "--out", str(out)]) == 0
    rows = read_csv(out / "diagnostics.csv")
    assert rows and rows[0].t == 0.0
    rep = read_report(out / "report.json")
    assert rep["converged"] and abs(rep["b"] - math.log(2)) <= 1e-12
    assert rep["checks"]["max_principle"]["passed"]
    snaps = sorted((out / "snapshots").glob("snap_*.bin"))
    assert snaps
    g, st = snapshot_read(snaps[-1])
    assert np.allclose(st.u, st.t * math.log(2), rtol=1e-12)


def test_run_manufactured_residual(tmp_path):
    assert main(["run", str(SCEN / "manufactured.toml"), "--out", str(tmp_path)]) == 0
    rep = read_report(tmp_path / "report.json")
    assert rep["residual"] <= 1e-6 and abs(rep["b"]) <= 1e-6
    assert rep["decay_fit"]["c0"] > 0


def test_run_kahler_flags_j_monotone(tmp_path):
    assert main(["run", str(SCEN / "kahler_j.toml"), "--out", str(tmp_path)]) == 0
    rep = read_report(tmp_path / "report.json")
    j = rep["checks"]["j_monotone"]
    assert j["applicable"] and j["passed"]


def test_run_refuses_cone_violation(tmp_path):
    p = str(SCEN / "cone_violated.toml")
    assert main(["run", p, "--out", str(tmp_path / "a")]) == 1
    assert not (tmp_path / "a" / "report.json").exists()


def test_run_deterministic(tmp_path):
    p = str(SCEN / "hermitian_modes.toml")
    main(["run", p, "--out", str(tmp_path / "a")])
    main(["run", p, "--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "diagnostics.csv").read_bytes()
    assert a == (tmp_path / "b" / "diagnostics.csv").read_bytes()


def test_report_rejects_unknown_fields(tmp_path):
    main(["run", scenario(tmp_path), "--out", str(tmp_path / "o")])
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    validate_report(rep)
    rep["extra"] = 1
    (tmp_path / "x.json").write_text(json.dumps(rep))
    with pytest.raises(ReportError, match="unknown"):
        read_report(tmp_path / "x.json")
    del rep["extra"]
    rep["checks"]["max_principle"]["note"] = "hi"
    with pytest.raises(ReportError, match="unknown"):
        validate_report(rep)
    rep["checks"]["max_principle"].pop("note")
    rep["schema_version"] = 2
    with pytest.raises(ReportError, match="version"):
        validate_report(rep)


# continuity

def test_continuity_completes(tmp_path, capsys):
    # psi0 is built strictly above psi, so the CLI path has several nodes;
    # the psi0 == psi single-node case is covered in test_continuity.py
    p = scenario(tmp_path, chi=2.0, psi=3.0)
    assert main(["continuity", p, "--out", str(tmp_path / "c")]) == 0
    path = load_path(tmp_path / "c" / "manifest.json")
    assert path.complete and abs(path.nodes[-1].b - math.log(2 / 3)) <= 1e-10


def test_continuity_resume(tmp_path, capsys):
    p = scenario(tmp_path, chi=2.0, psi=3.0)
    assert main(["continuity", p, "--out", str(tmp_path / "full")]) == 0
    full = load_path(tmp_path / "full" / "manifest.json")
    # rebuild an interrupted run: keep the first two nodes only
    m = json.loads((tmp_path / "full" / "manifest.json").read_text())
    m["nodes"] = m["nodes"][:2]
    m["reason"] = "paused"
    (tmp_path / "full" / "manifest.json").write_text(json.dumps(m))
    assert main(["continuity", p, "--resume", str(tmp_path / "full" / "manifest.json")]) == 0
    resumed = load_path(tmp_path / "full" / "manifest.json")
    assert resumed.s_values == full.s_values
    assert np.max(np.abs(resumed.nodes[-1].u - full.nodes[-1].u)) <= 1e-10


def test_continuity_needs_out(tmp_path):
    assert main(["continuity", scenario(tmp_path)]) == 2


# verify

def test_verify_quick(capsys):
    assert main(["verify", "--quick", "--seed", "3"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "cmaflow", "check", scenario(tmp_path)],
                       capture_output=True, text=True, env=env)
    assert r.returncode == 0 and "invariant c" in r.stdout
