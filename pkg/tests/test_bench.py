import csv
import math
from importlib import resources

import numpy as np
import pytest

from hardbc import cli
from hardbc.bench import residuals as R
from hardbc.bench import runner
from hardbc.bench.problems import SpecError, darcy, load_problem, navier_stokes, problem_from_dict, sample_parameters
from hardbc.grid import Grid


def ns_grid(nx=111, ny=21):
    return Grid(navier_stokes().domain, nx, ny)


# ---------------------------------------------------------------- residuals


def test_poisson_residual_of_exact_solution_converges():
    pb = load_problem("poisson")
    errs = []
    for n in (21, 41):
        g = Grid(pb.domain, n, n)
        r = R.residual_poisson(pb.reference_fields(g.x, g.y)["u"], g)
        errs.append(np.max(np.abs(r[g.loss_nodes()])))
    assert errs[1] < errs[0] / 3.5


def test_darcy_source_matches_expression():
    pb = darcy(1.7, 3.2)
    x, y = np.random.default_rng(0).uniform(0, 1, (2, 50))
    np.testing.assert_allclose(R.darcy_source(x, y, 1.7, 3.2), pb.coefficient("f", x, y), atol=1e-13)


def test_darcy_residual_of_exact_solution_is_small():
    pb = darcy(2.0, 3.0)
    g = Grid(pb.domain, 101, 101)
    r = R.make_residual(pb)([pb.reference_fields(g.x, g.y)["u"]], g)[0]
    assert np.mean(r[g.loss_nodes()] ** 2) < 1e-4


def test_ns_rest_state_has_zero_residual():
    g = ns_grid()
    z = np.zeros(g.n)
    for r in R.residual_ns(z, z, np.full(g.n, 3.0), g, 1e-3):
        np.testing.assert_array_equal(r, 0.0)


def test_ns_poiseuille_is_exact():
    """u = 4 U y (H - y) / H^2 with dP/dx = -8 nu U / H^2 solves the steady equations."""
    g = ns_grid()
    nu, U, H = 1e-3, 0.3, 0.41
    u = 4 * U * g.y * (H - g.y) / H**2
    P = -8 * nu * U / H**2 * g.x
    rx, ry, div = R.residual_ns(u, 0 * u, P / math.sqrt(nu), g, nu)
    m = g.loss_nodes()
    assert np.max(np.abs(rx[m])) < 1e-12
    assert np.max(np.abs(ry[m])) < 1e-12
    assert np.max(np.abs(div[m])) < 1e-12


def test_streamfunction_velocity_divergence_converges():
    # psi = sin(3x) cos(5y): u = psi_y, v = -psi_x
    errs = []
    for nx, ny in ((221, 42), (441, 83)):
        g = ns_grid(nx, ny)
        u = -5 * np.sin(3 * g.x) * np.sin(5 * g.y)
        v = -3 * np.cos(3 * g.x) * np.cos(5 * g.y)
        div = R.residual_ns(u, v, 0 * u, g, 1e-3)[2]
        errs.append(np.max(np.abs(div[g.loss_nodes()])))
    assert errs[0] / errs[1] > 3.5


# ---------------------------------------------------------------- errors


def test_l2_error_oracles():
    ref = np.array([1.0, -2.0, 3.0])
    assert R.l2_error(ref, ref) == 0.0
    assert R.l2_error(2 * ref, ref) == pytest.approx(1.0)
    assert R.l2_error(np.zeros(3), ref) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        R.l2_error(ref[:2], ref)


def test_l2_error_uses_domain_nodes_only():
    g = Grid(darcy().domain, 21, 21)
    ref = np.ones(g.n)
    pred = ref.copy()
    pred[g.outside] = 100.0
    assert R.l2_error(pred, ref, g) == 0.0


# ---------------------------------------------------------------- diagnostics


def test_diagnostics_of_rest_state_are_zero():
    g = ns_grid(221, 42)
    z = np.zeros(g.n)
    d = R.compute_diagnostics(z, z, z, g, 1e-3, center=(0.2, 0.2), radius=0.05)
    assert (d.delta_p, d.c_D, d.c_L) == (0.0, 0.0, 0.0)


def test_uniform_pressure_gradient_gives_pressure_drop_and_buoyancy_drag():
    """P = -k x: probes 0.1 apart see k/10, and the pressure force on the disc is k pi r^2."""
    g = ns_grid(221, 42)
    nu, k = 1e-3, 2.0
    z = np.zeros(g.n)
    p = -k * g.x / math.sqrt(nu)
    d = R.compute_diagnostics(z, z, p, g, nu, center=(0.2, 0.2), radius=0.05, mean_velocity=0.2, diameter=0.1)
    assert d.delta_p == pytest.approx(k * 0.1, rel=1e-9)
    assert d.c_D == pytest.approx(2 * k * math.pi * 0.05**2 / (0.04 * 0.1), rel=1e-3)
    assert abs(d.c_L) < 1e-9


def test_diagnostic_errors():
    d = R.FlowDiagnostics(0.1175 * 1.1, 5.5795, 0.0)
    e = d.errors({"delta_p": 0.1175, "c_D": 5.5795})
    assert e["delta_p"] == pytest.approx(0.1) and e["c_D"] == 0.0


def test_reference_csv_interpolation(tmp_path):
    xs, ys = np.meshgrid(np.linspace(0, 1, 11), np.linspace(0, 1, 11))
    path = tmp_path / "ref.csv"
    with open(path, "w") as fh:
        fh.write("x,y,u\n")
        for x, y in zip(xs.ravel(), ys.ravel()):
            fh.write(f"{x},{y},{2 * x + 3 * y}\n")
    g = Grid(load_problem("poisson").domain, 7, 7)
    out = R.read_reference_csv(path, g, ["u"])
    np.testing.assert_allclose(out["u"], 2 * g.x + 3 * g.y, atol=1e-12)


# ---------------------------------------------------------------- specs and sampling


def test_sample_parameters_deterministic_and_in_range():
    a = sample_parameters(5, seed=7)
    assert a == sample_parameters(5, seed=7)
    assert a != sample_parameters(5, seed=8)
    assert all(1.0 <= v < 4.0 for p in a for v in p)
    with pytest.raises(ValueError):
        sample_parameters(0)


def test_shipped_specs_load():
    for name in ("poisson", "darcy", "ns"):
        pb = load_problem(name)
        assert pb.kind == name
    assert navier_stokes().components == ("u", "v", "p")
    assert darcy().grid == (101, 101)


def test_spec_error_reports_line(tmp_path):
    text = resources.files("hardbc.data").joinpath("darcy.json").read_text()
    bad = text.replace('"g": "sin(alpha*x)"', '"g": "sin(alpha*x"')
    path = tmp_path / "bad.json"
    path.write_text(bad)
    # errors point at the segment's name line
    line = bad[:bad.index('"name": "2"')].count("\n") + 1
    with pytest.raises(SpecError, match=f"line {line}"):
        load_problem(path)


def test_spec_rejects_unknown_problem():
    with pytest.raises(SpecError, match="problem"):
        problem_from_dict({"problem": "heat", "domain": {}})


def test_invalid_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"problem": "darcy",\n  oops}')
    with pytest.raises(SpecError, match="line 2"):
        load_problem(p)


def test_parameter_sets_for_darcy():
    sets = runner.parameter_sets(darcy(), 3, seed=0)
    assert [(s.params["alpha"], s.params["beta"]) for s in sets] == sample_parameters(3, 0)
    assert runner.parameter_sets(load_problem("poisson"), 3) == [load_problem("poisson")]


# ---------------------------------------------------------------- runner and CLI


def test_run_writes_outputs(tmp_path):
    res = runner.run(darcy(), "op", tmp_path, grid_shape=(21, 21), epochs=3, pairs=2, plots=True)
    assert len(res) == 2
    for name in ("results.csv", "losses.csv", "field_u_0.csv", "field_u_1.png"):
        assert (tmp_path / name).exists()
    rows = list(csv.DictReader(open(tmp_path / "results.csv")))
    assert [r["mode"] for r in rows] == ["op", "op"]
    assert float(rows[0]["err_l2_u"]) > 0
    losses = list(csv.DictReader(open(tmp_path / "losses.csv")))
    assert len(losses) == 6 and losses[-1]["run"] == "1"


def test_cli_darcy_smoke(tmp_path, capsys):
    code = cli.main(["darcy", "--mode", "weak", "--grid", "21", "21", "--epochs", "2", "--out", str(tmp_path),
                     "--no-plots", "--checkpoint"])
    assert code == 0
    assert (tmp_path / "checkpoint.json").exists()
    assert "results written" in capsys.readouterr().out


def test_cli_ns_smoke(tmp_path, capsys):
    code = cli.main(["ns", "--grid", "111", "21", "--epochs", "1", "--out", str(tmp_path), "--no-plots"])
    assert code == 0
    row = next(csv.DictReader(open(tmp_path / "results.csv")))
    assert {"delta_p", "c_D", "c_L", "rel_err_c_D"} <= set(row)


def test_cli_bad_mode(tmp_path, capsys):
    assert cli.main(["darcy", "--mode", "strong", "--out", str(tmp_path)]) == 2
    assert "unknown mode" in capsys.readouterr().err


def test_cli_spec_kind_mismatch(tmp_path):
    assert cli.main(["poisson", "--spec", "darcy", "--out", str(tmp_path)]) == 2


def test_cli_verify_bc(tmp_path, capsys):
    code = cli.main(["verify-bc", "--spec", "darcy", "--trials", "3", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "[PASS] darcy glss" in out and "[PASS] darcy op" in out
    rows = list(csv.DictReader(open(tmp_path / "results.csv")))
    assert len(rows) == 2 and all(r["passed"] == "True" for r in rows)
