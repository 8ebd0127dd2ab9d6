import hashlib
import json
import os

import pytest

from bsvie.cli import CliError, _SCHEMAS, main, parse_config_text


def _read_json(run_dir, name):
    with open(os.path.join(run_dir, name), encoding="utf-8") as fh:
        return json.load(fh)


def _run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out.strip().splitlines(), captured.err


def _last_run_dir(out_lines):
    return out_lines[-1]


# -- config parsing ---------------------------------------------------------


def test_parse_config_text_round_trip():
    schema = _SCHEMAS["solve"]
    text = """
    # a comment line
    grid.steps = 16

    ensemble.paths = 512
    problem.case = "zero"
    solver.picard = true
    """
    parsed = parse_config_text(text, schema)
    assert parsed == {
        "grid.steps": 16,
        "ensemble.paths": 512,
        "problem.case": "zero",
        "solver.picard": True,
    }


def test_parse_config_text_rejects_unknown_key():
    with pytest.raises(CliError, match="known keys"):
        parse_config_text("grid.stepz = 16", _SCHEMAS["solve"])


def test_parse_config_text_rejects_bad_value():
    with pytest.raises(CliError):
        parse_config_text("grid.steps = sixteen", _SCHEMAS["solve"])
    with pytest.raises(CliError):
        parse_config_text("solver.picard = maybe", _SCHEMAS["solve"])


def test_parse_config_text_rejects_missing_equals():
    with pytest.raises(CliError, match="key = value"):
        parse_config_text("grid.steps 16", _SCHEMAS["solve"])


# -- solve ------------------------------------------------------------------


def test_solve_zero_case_artifacts(tmp_path, capsys):
    out = str(tmp_path / "runs")
    code, lines, _ = _run(
        capsys,
        ["solve", "--case", "zero", "--n", "8", "--m", "256", "--output.dir", out],
    )
    assert code == 0
    run_dir = _last_run_dir(lines)
    assert run_dir.startswith(out + os.sep + "solve-")
    for name in ("y_table.csv", "z_surface.csv", "summary.json", "errors.json",
                 "manifest.json"):
        assert os.path.exists(os.path.join(run_dir, name)), name
    summary = _read_json(run_dir, "summary.json")
    assert summary["converged"] is True
    assert summary["s2_norm"] == 0.0
    assert _read_json(run_dir, "errors.json")["y"] == 0.0


def test_solve_csv_uses_crlf_rows(tmp_path, capsys):
    out = str(tmp_path / "runs")
    _, lines, _ = _run(
        capsys,
        ["solve", "--case", "zero", "--n", "4", "--m", "64", "--output.dir", out],
    )
    with open(os.path.join(_last_run_dir(lines), "y_table.csv"), "rb") as fh:
        data = fh.read()
    assert b"\r\n" in data
    assert data.decode("utf-8").splitlines()[0] == "i,t,mean,stderr,l2"


def test_solve_unknown_case_exits_one(tmp_path, capsys):
    code, _, err = _run(
        capsys,
        ["solve", "--case", "cubic", "--output.dir", str(tmp_path)],
    )
    assert code == 1
    assert "error:" in err
    assert "available" in err


def test_solve_case_and_expressions_conflict(tmp_path, capsys):
    code, _, err = _run(
        capsys,
        ["solve", "--case", "zero", "--problem.generator", "0",
         "--output.dir", str(tmp_path)],
    )
    assert code == 1
    assert "either" in err


def test_solve_expression_problem(tmp_path, capsys):
    out = str(tmp_path / "runs")
    code, lines, _ = _run(
        capsys,
        ["solve", "--problem.generator", "0", "--problem.terminal", "wT",
         "--n", "8", "--m", "512", "--output.dir", out],
    )
    assert code == 0
    summary = _read_json(_last_run_dir(lines), "summary.json")
    assert summary["mode"] == "s-solution"
    assert summary["s2_norm"] > 0.0


def test_solve_non_convergence_exits_two(tmp_path, capsys):
    code, lines, _ = _run(
        capsys,
        ["solve", "--case", "product-linear", "--n", "8", "--m", "512",
         "--solver.picard", "true", "--solver.max_iter", "1",
         "--solver.tol", "1e-14", "--output.dir", str(tmp_path / "runs")],
    )
    assert code == 2
    summary = _read_json(_last_run_dir(lines), "summary.json")
    assert summary["converged"] is False


def test_full_paths_export_warns_and_writes(tmp_path, capsys):
    out = str(tmp_path / "runs")
    code, lines, err = _run(
        capsys,
        ["solve", "--case", "zero", "--n", "4", "--m", "32",
         "--full-paths", "--output.dir", out],
    )
    assert code == 0
    assert "warning" in err
    run_dir = _last_run_dir(lines)
    assert os.path.exists(os.path.join(run_dir, "y_paths.csv"))
    assert os.path.exists(os.path.join(run_dir, "z_paths.csv"))


# -- determinism ------------------------------------------------------------


def test_rerun_reproduces_identical_tables(tmp_path, capsys):
    out = str(tmp_path / "runs")
    argv = ["solve", "--case", "product-linear", "--n", "8", "--m", "512",
            "--output.dir", out]
    _, lines, _ = _run(capsys, argv)
    run_dir = _last_run_dir(lines)
    first = _read_json(run_dir, "manifest.json")
    _, lines, _ = _run(capsys, argv)
    assert _last_run_dir(lines) == run_dir
    second = _read_json(run_dir, "manifest.json")
    assert first["tables"] == second["tables"]
    assert first["config_sha256"] == second["config_sha256"]


def test_manifest_hashes_name_the_file_bytes(tmp_path, capsys):
    out = str(tmp_path / "runs")
    _, lines, _ = _run(
        capsys,
        ["solve", "--case", "zero", "--n", "4", "--m", "64", "--output.dir", out],
    )
    run_dir = _last_run_dir(lines)
    manifest = _read_json(run_dir, "manifest.json")
    assert manifest["tables"]
    for name, digest in manifest["tables"].items():
        with open(os.path.join(run_dir, name), "rb") as fh:
            assert hashlib.sha256(fh.read()).hexdigest() == digest, name


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "problem.case = zero\ngrid.steps = 4\nensemble.paths = 32\n",
        encoding="utf-8",
    )
    out = str(tmp_path / "runs")
    # the flag overrides the file's step count
    code, lines, _ = _run(
        capsys,
        ["solve", "--config", str(cfg), "--n", "8", "--output.dir", out],
    )
    assert code == 0
    summary = _read_json(_last_run_dir(lines), "summary.json")
    assert summary["steps"] == 8
    assert summary["paths"] == 32


def test_output_root_env_var(tmp_path, capsys, monkeypatch):
    root = tmp_path / "env-root"
    monkeypatch.setenv("BSVIE_OUTPUT_ROOT", str(root))
    code, lines, _ = _run(capsys, ["solve", "--case", "zero", "--n", "4", "--m", "32"])
    assert code == 0
    assert _last_run_dir(lines).startswith(str(root) + os.sep)


# -- risk -------------------------------------------------------------------


def test_risk_girsanov_summary_includes_selftest(tmp_path, capsys):
    out = str(tmp_path / "runs")
    code, lines, _ = _run(
        capsys,
        ["risk", "--route", "girsanov", "--risk.r1", "0.3", "--n", "8",
         "--m", "1024", "--output.dir", out],
    )
    assert code == 0
    run_dir = _last_run_dir(lines)
    summary = _read_json(run_dir, "summary.json")
    assert summary["route"] == "girsanov"
    assert summary["selftest"]["passed"] is True
    assert os.path.exists(os.path.join(run_dir, "rho_table.csv"))


def test_risk_direct_summary_has_no_selftest(tmp_path, capsys):
    code, lines, _ = _run(
        capsys,
        ["risk", "--n", "8", "--m", "512", "--output.dir", str(tmp_path / "runs")],
    )
    assert code == 0
    summary = _read_json(_last_run_dir(lines), "summary.json")
    assert "selftest" not in summary


# -- verify -----------------------------------------------------------------


def test_verify_zero_case_all_zero_tables(tmp_path, capsys):
    out = str(tmp_path / "runs")
    code, lines, _ = _run(
        capsys,
        ["verify", "--case", "zero", "--levels", "4,8", "--m", "128",
         "--output.dir", out],
    )
    assert code == 0
    run_dir = _last_run_dir(lines)
    orders = _read_json(run_dir, "orders.json")
    assert orders["errors_decrease"] is True
    # strict JSON: undefined orders become nulls, never NaN literals
    assert all(o is None for o in orders["y_orders"])
    with open(os.path.join(run_dir, "chart.svg"), encoding="utf-8") as fh:
        assert "machine zero" in fh.read()


def test_verify_non_decreasing_errors_exit_three(tmp_path, capsys):
    code, lines, _ = _run(
        capsys,
        ["verify", "--case", "product-linear", "--levels", "16,32,64",
         "--m", "128", "--seed", "1", "--output.dir", str(tmp_path / "runs")],
    )
    assert code == 3
    orders = _read_json(_last_run_dir(lines), "orders.json")
    assert orders["errors_decrease"] is False


def test_verify_requires_case(tmp_path, capsys):
    code, _, err = _run(capsys, ["verify", "--output.dir", str(tmp_path)])
    assert code == 1
    assert "verify.case" in err


# -- axioms -----------------------------------------------------------------


def test_axioms_linear_preset(tmp_path, capsys):
    out = str(tmp_path / "runs")
    code, lines, _ = _run(
        capsys,
        ["axioms", "--preset", "linear", "--eta", "0.1", "--c", "1.0",
         "--n", "8", "--m", "1024", "--output.dir", out],
    )
    assert code == 0
    run_dir = _last_run_dir(lines)
    summary = _read_json(run_dir, "summary.json")
    assert summary["passed"] is True
    assert summary["axioms"]["translation"]["max_violation"] <= 1e-10
    assert os.path.exists(os.path.join(run_dir, "axioms.csv"))
    assert os.path.exists(os.path.join(run_dir, "discount.csv"))


def test_axioms_absolute_preset_has_no_discount_table(tmp_path, capsys):
    out = str(tmp_path / "runs")
    code, lines, _ = _run(
        capsys,
        ["axioms", "--preset", "absolute", "--n", "8", "--m", "1024",
         "--output.dir", out],
    )
    assert code == 0
    run_dir = _last_run_dir(lines)
    assert not os.path.exists(os.path.join(run_dir, "discount.csv"))
    summary = _read_json(run_dir, "summary.json")
    assert "translation" not in summary["axioms"]


# -- residual ---------------------------------------------------------------


def test_residual_symmetric_forms_match(tmp_path, capsys):
    out = str(tmp_path / "runs")
    code, lines, _ = _run(
        capsys,
        ["residual", "--case", "mirror-pair", "--n", "8", "--m", "512",
         "--output.dir", out],
    )
    assert code == 0
    summary = _read_json(_last_run_dir(lines), "summary.json")
    assert summary["forms_match_bitwise"] is True
    assert summary["row_aggregate"] == summary["column_aggregate"]
