import io
import math
from fractions import Fraction

import numpy as np
import pytest

from fourierdd import cli
from fourierdd.fem import FunctionSpace, interpolate
from fourierdd.harness import (ConvergenceReport, RunConfig, broken_h1_error,
                               config_from_mapping, default_config, h1_error,
                               l2_error, parse_config, poisson_exact,
                               poisson_exact_gradient, poisson_forcing,
                               run_experiment, run_infsup_study,
                               run_lambda_dump, run_poisson_study)
from fourierdd.mesh import poisson_mesh_pair, structured_rect_mesh


# ------------------------------------------------- manufactured Poisson data

def test_forcing_guard_finite_differences():
    # independent check of the hand-derived closed form: -lap u = f
    rng = np.random.default_rng(42)
    eps = 1e-5
    pts = rng.uniform(0.05, 0.95, (100, 2))
    for x, y in pts:
        lap = (poisson_exact(x + eps, y) + poisson_exact(x - eps, y)
               + poisson_exact(x, y + eps) + poisson_exact(x, y - eps)
               - 4 * poisson_exact(x, y)) / eps**2
        assert abs(-lap - poisson_forcing(x, y)) < 1e-4


def test_gradient_guard_finite_differences():
    rng = np.random.default_rng(43)
    eps = 1e-6
    for x, y in rng.uniform(0.05, 0.95, (50, 2)):
        gx = (poisson_exact(x + eps, y) - poisson_exact(x - eps, y)) / (2 * eps)
        gy = (poisson_exact(x, y + eps) - poisson_exact(x, y - eps)) / (2 * eps)
        ex, ey = poisson_exact_gradient(x, y)
        assert abs(gx - ex) < 1e-6 and abs(gy - ey) < 1e-6


def test_exact_solution_vanishes_on_boundary():
    for t in np.linspace(0, 1, 17):
        for x, y in ((t, 0.0), (t, 1.0), (0.0, t), (1.0, t)):
            assert abs(poisson_exact(x, y)) < 1e-13


# ------------------------------------------------------------- error norms

def test_broken_error_of_interpolant_is_zero():
    m1, m2 = poisson_mesh_pair(8)
    spaces = (FunctionSpace(m1, "P1"), FunctionSpace(m2, "P1"))
    linear = lambda x, y: 2.0 * x - y
    coeffs = [interpolate(V, linear) for V in spaces]
    total, per = broken_h1_error(spaces, coeffs, linear,
                                 lambda x, y: (2.0, -1.0))
    assert total < 1e-12


def test_broken_error_constant_offset():
    m1, m2 = poisson_mesh_pair(8)
    spaces = (FunctionSpace(m1, "P2"), FunctionSpace(m2, "P2"))
    coeffs = [np.zeros(V.n_dofs) for V in spaces]
    c = 0.75
    total, per = broken_h1_error(spaces, coeffs, lambda x, y: c + 0 * x,
                                 lambda x, y: (0.0, 0.0))
    assert total == pytest.approx(c, abs=1e-12)
    assert per[0] == pytest.approx(c / math.sqrt(2), abs=1e-12)


def test_l2_error_simple():
    V = FunctionSpace(structured_rect_mesh((0, 1, 0, 1), 4, 4), "P1")
    err = l2_error(V, np.zeros(V.n_dofs), lambda x, y: 1.0 + 0 * x)
    assert err == pytest.approx(1.0, abs=1e-12)


def test_h1_error_includes_seminorm():
    V = FunctionSpace(structured_rect_mesh((0, 1, 0, 1), 4, 4), "P1")
    err = h1_error(V, np.zeros(V.n_dofs), lambda x, y: x,
                   lambda x, y: (1.0, 0.0))
    assert err == pytest.approx(math.sqrt(1 / 3 + 1), abs=1e-12)


# ------------------------------------------------------------------ config

def test_parse_config_values():
    text = """
    # comment
    experiment = poisson
    N = 20, 28
    h = 1/16, 1/32
    ortho = false
    degrees = P1, P2
    q = 2
    label = hello
    """
    cfg = parse_config(text)
    assert cfg["experiment"] == "poisson"
    assert cfg["N"] == (20, 28)
    assert cfg["h"] == (Fraction(1, 16), Fraction(1, 32))
    assert cfg["ortho"] is False
    assert cfg["degrees"] == ("P1", "P2")
    assert cfg["q"] == 2
    assert cfg["label"] == "hello"


def test_parse_config_bad_line():
    with pytest.raises(ValueError, match="line 1"):
        parse_config("not a key value pair")


def test_config_from_mapping_defaults():
    cfg = config_from_mapping({"experiment": "poisson", "N": 20,
                               "n_gamma": (13,)})
    assert cfg.N == (20,)
    assert cfg.degrees == ("P2", "P2")
    with pytest.raises(ValueError, match="experiment"):
        config_from_mapping({"N": (20,)})
    with pytest.raises(ValueError, match="unknown experiment"):
        default_config("bogus")
    with pytest.raises(ValueError):
        RunConfig(experiment="poisson")   # no N and no h


def test_default_configs_exist():
    for name in ("poisson", "poisson-mixed", "quadrature", "infsup",
                 "condition", "ns-manufactured", "cavity", "dump-lambda"):
        cfg = default_config(name)
        assert cfg.experiment == name


# ----------------------------------------------------------------- reports

def _tiny_infsup_config():
    return default_config("infsup", N=(8,), n_gamma=(3, 5))


def test_report_csv_roundtrip_and_determinism():
    rep1 = run_infsup_study(_tiny_infsup_config())
    rep2 = run_infsup_study(_tiny_infsup_config())
    assert rep1.csv_text() == rep2.csv_text()
    lines = rep1.csv_text().strip().splitlines()
    assert lines[0].startswith("experiment,N,h,n_gamma")
    assert len(lines) == 3


def test_report_json():
    rep = run_infsup_study(_tiny_infsup_config())
    buf = io.StringIO()
    rep.to_json(buf)
    import json
    payload = json.loads(buf.getvalue())
    assert len(payload) == 2 and payload[0]["n_gamma"] == 3


def test_poisson_study_rows_and_orders():
    cfg = default_config("poisson", N=(8, 16), n_gamma=(5,))
    rep = run_poisson_study(cfg)
    sweep = [r for r in rep.rows if r["n_gamma"] == 5]
    assert len(sweep) == 2
    assert sweep[0]["order"] == ""
    assert 1.5 < sweep[1]["order"] < 2.5
    ref = [r for r in rep.rows if r["n_gamma"] == "ref"]
    assert len(ref) == 2
    for row in rep.rows:
        assert row["q"] != "" and row["conforming"] != ""


def test_poisson_study_propagates_row_errors():
    cfg = default_config("poisson", N=(8, 7), n_gamma=(5,))
    rep = run_poisson_study(cfg, reference=False)
    rows = rep.rows
    assert rows[0]["error"] == "" and rows[0]["error_broken"] != ""
    assert "ValueError" in rows[1]["error"]


def test_lambda_dump_matches_one_sided_derivatives():
    cfg = default_config("dump-lambda", N=(40,), n_gamma=(13,))
    rep = run_lambda_dump(cfg)
    assert rep.columns == ["s", "lambda", "dudx_omega1", "dudx_omega2"]
    assert len(rep.rows) == 200
    lam = np.array([r["lambda"] for r in rep.rows])
    g1 = np.array([r["dudx_omega1"] for r in rep.rows])
    g2 = np.array([r["dudx_omega2"] for r in rep.rows])
    scale = np.abs(lam).max()
    assert np.abs(lam - 0.5 * (g1 + g2)).max() < 0.02 * scale


# --------------------------------------------------------------------- cli

def test_cli_writes_csv_and_json(tmp_path):
    cfg = tmp_path / "infsup.cfg"
    cfg.write_text("experiment = infsup\nN = 8\nn_gamma = 3, 5\n")
    out = tmp_path / "result.csv"
    rc = cli.main(["infsup", "--config", str(cfg), "--out", str(out), "--json"])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 3
    assert (tmp_path / "result.json").exists()


def test_cli_rejects_mismatched_config(tmp_path):
    cfg = tmp_path / "x.cfg"
    cfg.write_text("experiment = poisson\nN = 8\n")
    with pytest.raises(SystemExit):
        cli.main(["infsup", "--config", str(cfg)])


def test_run_experiment_dispatch():
    rep = run_experiment(_tiny_infsup_config())
    assert len(rep.rows) == 2
