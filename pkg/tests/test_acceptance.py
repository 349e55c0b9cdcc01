"""Acceptance criteria 1-7, each at its stated tolerance.

Every test prints one ``[PASS]`` / ``[FAIL]`` line (visible under ``pytest -v``)
before asserting. Criteria 2 and 3 train networks and take minutes.
"""

import time

import numpy as np
import pytest
import sympy as sp
import torch

from hardbc import expr as ex
from hardbc.bench import runner
from hardbc.bench.problems import darcy, load_problem, navier_stokes
from hardbc.bench.residuals import make_residual
from hardbc.grid import Grid
from hardbc.structure import build
from hardbc.structure.verify import weight_properties
from hardbc.train import Ansatz, LossModel, TrainConfig, gradient_check

NS_GLSS = {"psi^u", "psi^v", "psi^p", "psi_S^p", "psibar_3^u", "psibar_3^v", "psi_A^p", "psi_B^p", "psi_C^p",
           "psi_D^p"}
NS_OP = {"psi^u", "psi^v", "psi^p", "psitilde^u", "psitilde^v", "psitilde^p"}


@pytest.fixture(autouse=True)
def _one_thread():
    n = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(n)


@pytest.fixture
def report(capsys):
    def emit(number, ok, text):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}")
    return emit


def test_1_bc_exactness(report):
    t0 = time.perf_counter()
    worst_d, worst_o, ok = 0.0, np.inf, True
    for name in ("poisson", "darcy", "ns"):
        for rep in runner.verify(load_problem(name), ("glss", "op"), trials=25):
            ok &= rep.passed(1e-10, 1.9)
            worst_d = max(worst_d, rep.dirichlet_max())
            worst_o = min([worst_o] + [min(o) for o in rep.robin_orders().values() if o])
    dt = time.perf_counter() - t0
    ok &= dt < 60
    report(1, ok, f"max Dirichlet residual {worst_d:.2e}, min Robin order {worst_o:.2f}, {dt:.1f}s")
    assert ok


@pytest.mark.slow
def test_2_corner_instability(report):
    pb = load_problem("poisson")
    res = {m: runner.run_single(pb, m) for m in ("glss", "legacy-sukumar")}
    g, leg = res["glss"].errors["u"], res["legacy-sukumar"].errors["u"]
    ok = leg >= 5 * g and g <= 5e-2
    report(2, ok, f"GLSS l2 {g:.3e}, legacy l2 {leg:.3e}, ratio {leg / g:.1f} (1000 epochs, "
                  f"{pb.grid[0]}x{pb.grid[1]})")
    assert ok


@pytest.mark.slow
def test_3_darcy_desk_scale(report):
    rows, ok = [], True
    for prob in runner.parameter_sets(darcy(), 3, seed=0):
        a, b = prob.params["alpha"], prob.params["beta"]
        errs = {m: runner.run_single(prob, m).errors["u"] for m in ("glss", "op", "semi-weak", "weak")}
        ok &= errs["glss"] <= 0.1 and errs["op"] <= 0.1
        rows.append(f"({a:.3f}, {b:.3f}) " + " ".join(f"{m}={e:.3e}" for m, e in errs.items()))
    report(3, ok, "relative l2 after 1000 epochs at 101x101; weak and semi-weak reported only\n    "
           + "\n    ".join(rows))
    assert ok


def _loss_model(pb, mode, shape):
    g = Grid(pb.domain, *shape)
    ss = runner.build_structure(pb, mode)
    return LossModel(ss, g, make_residual(pb), pb.expr_params), ss


def test_4_gradients(report):
    cases = [("poisson", (21, 21), ("glss", "op", "semi-weak", "weak", "legacy-sukumar")),
             ("darcy", (21, 21), ("glss", "op", "semi-weak", "weak")),
             ("ns", (111, 21), ("glss", "op", "semi-weak", "weak"))]
    worst, lines = 0.0, []
    for name, shape, modes in cases:
        pb = load_problem(name)
        for mode in modes:
            model, ss = _loss_model(pb, mode, shape)
            a = Ansatz(ss.slots, pb.domain.box, seed=1)
            chk = gradient_check(model, a, n=20, seed=2)
            worst = max(worst, chk["max_rel_error"])
            lines.append(f"{name}/{mode} {chk['max_rel_error']:.1e}")
    ok = worst < 1e-4
    report(4, ok, f"max relative gradient error {worst:.2e} over 20 parameters each: " + ", ".join(lines))
    assert ok


def test_5_manufactured_source(report):
    x, y, al, be = sp.symbols("x y alpha beta")
    u = sp.sin(al * x) * sp.cos(be * y)
    a = sp.sin(al * x) * sp.sin(be * y)
    f = -(sp.diff(a * sp.diff(u, x), x) + sp.diff(a * sp.diff(u, y), y))
    f_num = sp.lambdify((x, y, al, be), f, "numpy")
    pb = darcy()
    printed = pb.coefficients["f"]
    rng = np.random.default_rng(0)
    X, Y = rng.uniform(0, 1, (2, 500))
    A, B = rng.uniform(1, 4, (2, 500))
    got = ex.evaluate(printed, {"x": X, "y": Y, "alpha": A, "beta": B})
    err = float(np.max(np.abs(got - f_num(X, Y, A, B))))
    ok = err <= 1e-10
    report(5, ok, f"max |symbolic - printed f| {err:.2e} at 500 points")
    assert ok


def test_6_weights_on_l_shape(report):
    dom = darcy().domain
    reps = [weight_properties(dom, n, n) for n in (21, 41, 81)]
    pu = max(r.partition_error for r in reps)
    bounds = all(r.min_weight >= 0 and r.max_weight <= 1 + 1e-12 for r in reps)
    dn = {s: [r.normal_derivative[s] for r in reps] for s in reps[0].normal_derivative}
    shrinking = all(v[2] < v[1] < v[0] and v[2] < 0.5 * v[0] for v in dn.values())
    ok = pu < 1e-12 and bounds and shrinking and len(dn) == 4
    text = ", ".join(f"{s}: " + "/".join(f"{d:.1e}" for d in v) for s, v in dn.items())
    report(6, ok, f"partition error {pu:.1e}; max |dw/dn| on Robin segments at h=1/20,1/40,1/80: {text}")
    assert ok


def test_7_navier_stokes_gate(report):
    pb = navier_stokes()
    glss = runner.build_structure(pb, "glss")
    op = runner.build_structure(pb, "op")
    slots_ok = set(glss.slots) == NS_GLSS and len(glss.slots) == 10 and set(op.slots) == NS_OP and len(op.slots) == 6
    reps = runner.verify(pb, ("glss", "op"), trials=25)
    bc_ok = all(r.passed() for r in reps)
    # short training run: diagnostics are reported against the reference values, not asserted
    res = runner.run_single(pb, "op", cfg=runner.train_config(pb, epochs=50))
    ref = pb.diagnostics["reference"]
    diag = ", ".join(f"{k}={res.diagnostics[k]:.4g} (ref {ref[k]})" for k in ("delta_p", "c_D", "c_L"))
    ok = slots_ok and bc_ok
    report(7, ok, f"GLSS {len(glss.slots)} slots, OP {len(op.slots)} slots, verify_bc "
                  f"{'passed' if bc_ok else 'failed'}; diagnostics after 50 OP epochs: {diag}")
    assert ok
