import csv
import json
import textwrap

import pytest
from click.testing import CliRunner

from mixedvi.cli import main
from mixedvi.config import ConfigError, load_config, parse_config

BASE = """
[mesh]
nx = {n}
ny = {n}

[problem]
r = 2.0
theta = {theta}
g = 1.0
f_coeffs = [{f}, 0.5]
"""


def write(tmp_path, body, name="run.toml", n=4, theta=0.5, f=1.0):
    path = tmp_path / name
    path.write_text(BASE.format(n=n, theta=theta, f=f) + textwrap.dedent(body))
    return path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_solve_writes_artifacts(tmp_path):
    cfg = write(tmp_path, '[task]\nkind = "solve"\n')
    out = tmp_path / "out"
    res = invoke("run", cfg, "--out", out, "--quiet")
    assert res.exit_code == 0, res.output
    u = rows(out / "u.csv")
    lam = rows(out / "lambda.csv")
    assert u[0] == ["node", "x", "y", "u"] and len(u) == 1 + 25
    assert lam[0][-1] == "lambda" and len(lam) == 1 + 4
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == 1
    assert summary["checks"]["feasible"] and summary["checks"]["complementarity_ok"]
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["solver"]["converged"]
    trace = rows(out / "trace.csv")
    assert trace[0] == ["uzawa_iter", "newton_iter", "residual", "multiplier_update"]


def test_zero_load_solution_is_zero(tmp_path):
    cfg = write(tmp_path, '[task]\nkind = "solve"\n', f=0.0)
    cfg.write_text(cfg.read_text().replace("[0.0, 0.5]", "[0.0, 0.0]"))
    res = invoke("solve", "--config", cfg, "--out", tmp_path / "o", "--quiet")
    assert res.exit_code == 0
    assert all(float(r[3]) == 0.0 for r in rows(tmp_path / "o" / "u.csv")[1:])


def test_forced_nonconvergence_exit_2(tmp_path):
    cfg = write(tmp_path, '[solver]\nmax_uzawa = 1\n\n[task]\nkind = "solve"\n', theta=10.0)
    res = invoke("run", cfg, "--out", tmp_path / "o", "--quiet")
    assert res.exit_code == 2


def test_unknown_key_exit_1(tmp_path):
    cfg = write(tmp_path, '[task]\nkind = "solve"\ntypo = 3\n')
    res = invoke("run", cfg, "--out", tmp_path / "o")
    assert res.exit_code == 1
    assert "unknown key" in res.output


def test_missing_file_exit_1(tmp_path):
    assert invoke("run", tmp_path / "nope.toml").exit_code == 1
    assert invoke("validate", tmp_path / "nope.toml").exit_code == 1


def test_validate_valid(tmp_path):
    cfg = write(tmp_path, '[task]\nkind = "solve"\n')
    res = invoke("validate", cfg)
    assert res.exit_code == 0
    assert "valid" in res.output


def test_validate_lists_every_violation(tmp_path):
    cfg = write(tmp_path, '[task]\nkind = "solve"\n', theta=-1.0)
    text = cfg.read_text().replace("r = 2.0", "r = 1.5").replace("nx = 4", 'nx = 4\npartition = {left = "G1", right = "G2", bottom = "G3", top = "G3"}')
    cfg.write_text(text)
    res = invoke("validate", "--config", cfg)
    assert res.exit_code == 1
    assert "r ≥ 2 required" in res.output
    assert "meas(Γᵢ) > 0 required" in res.output
    assert "violates ϑ ≥ 0" in res.output


def test_validate_reports_range_errors_next_to_schema_errors(tmp_path):
    cfg = write(tmp_path, '[task]\nkind = "solve"\n')
    cfg.write_text(cfg.read_text().replace("r = 2.0", "r = 1.5\nbogus = 1"))
    res = invoke("validate", cfg)
    assert "unknown key" in res.output and "r ≥ 2 required" in res.output


def test_config_requires_exactly_one_known_task(tmp_path):
    cfg, problems = parse_config({"problem": {}, "task": {"kind": "dance"}})
    assert cfg is None and problems
    cfg, problems = parse_config({"problem": {}})
    assert cfg is None and any("task" in p for p in problems)


def test_optimize_config_checks():
    _, problems = parse_config({"problem": {}, "task": {"kind": "optimize", "cost": "g_target", "bounds": [[0.0, 0.0]]}})
    assert any("g_max > 0" in p for p in problems)
    _, problems = parse_config({"problem": {}, "task": {"kind": "optimize", "cost": "full_data", "bounds": [[0, 1]]}})
    assert any("needs 4 intervals" in p for p in problems)


def test_load_config_raises(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[problem\n")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(path)


def test_command_task_mismatch(tmp_path):
    cfg = write(tmp_path, '[task]\nkind = "solve"\n')
    assert invoke("converge", "--config", cfg, "--quiet").exit_code == 1
    # tasks without parameters can run on any config
    assert invoke("oracle", "--config", cfg, "--out", tmp_path / "o", "--quiet").exit_code == 0


def test_verify_passes(tmp_path):
    cfg = write(tmp_path, '[task]\nkind = "verify"\nn_starts = 3\nn_pairs = 10\n')
    res = invoke("run", cfg, "--out", tmp_path / "o", "--quiet")
    assert res.exit_code == 0, res.output
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["passed"] and summary["bounds"]["primal_ok"] and summary["bounds"]["dual_asserted"]
    assert summary["constants"]["M"] == 0.5


def test_converge_table(tmp_path):
    body = '[task]\nkind = "converge"\nlevels = 6\nf_shift = [0.1, 0.0]\ntheta_shift = 0.1\ng_shift = 0.1\n'
    cfg = write(tmp_path, body)
    res = invoke("run", cfg, "--out", tmp_path / "o", "--quiet")
    assert res.exit_code == 0, res.output
    table = rows(tmp_path / "o" / "table.csv")
    assert len(table) == 1 + 6
    header = table[0]
    assert header[:7] == ["n", "f_c0", "f_c1", "theta", "g", "x_gap", "y_gap"]
    gaps = [float(r[header.index("x_gap")]) for r in table[1:]]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_converge_rejects_nonconvergent_schedule(tmp_path):
    body = '[task]\nkind = "converge"\nlevels = [1, 2, 3]\ntheta_values = [0.0, 0.0, 0.0]\n'
    cfg = write(tmp_path, body)
    assert invoke("run", cfg, "--out", tmp_path / "o", "--quiet").exit_code == 1


def test_optimize_trace(tmp_path):
    body = '[task]\nkind = "optimize"\ncost = "g_target"\nbounds = [[0.0, 2.0]]\ntarget_g = 0.7\nbudget = 20\n'
    cfg = write(tmp_path, body)
    res = invoke("run", cfg, "--out", tmp_path / "o", "--quiet")
    assert res.exit_code == 0, res.output
    trace = rows(tmp_path / "o" / "trace.csv")
    assert trace[0] == ["evaluation", "p_1", "cost"]
    assert 1 < len(trace) <= 21
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["result"]["evaluations"] == len(trace) - 1


def test_repeat_runs_byte_identical(tmp_path):
    cfg = write(tmp_path, '[task]\nkind = "solve"\nrandom_start = true\n')
    for name in ("a", "b"):
        assert invoke("run", cfg, "--out", tmp_path / name, "--seed", 11, "--quiet").exit_code == 0
    for f in ("u.csv", "lambda.csv", "trace.csv", "summary.json", "diagnostics.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_json_only_output(tmp_path):
    cfg = write(tmp_path, '[task]\nkind = "solve"\n\n[output]\nformats = ["json"]\n')
    assert invoke("run", cfg, "--out", tmp_path / "o", "--quiet").exit_code == 0
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["diagnostics.json", "summary.json"]
