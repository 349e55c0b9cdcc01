import math

import numpy as np
import pytest
import torch

from hardbc import structure as S
from hardbc.bench.problems import darcy, load_problem
from hardbc.bench.residuals import make_residual
from hardbc.grid import Grid
from hardbc.train import (AdamState, Ansatz, LossModel, NonFiniteLossError, TrainConfig, TrainingError, adam_step,
                          gradient_check, load_checkpoint, predict, relative_l2, save_checkpoint, train)


def small_problem(mode="glss", n=11):
    pb = darcy(2.0, 3.0)
    g = Grid(pb.domain, n, n)
    ss = S.build(pb.domain, mode, pb.expr_params)
    return pb, g, ss


# ---------------------------------------------------------------- ansatz


def test_ansatz_shapes_and_init():
    a = Ansatz(["psi", "psi_C"], (0, 1, 0, 1), seed=3)
    assert a.layer_sizes == (2, 64, 64, 64, 64, 2)
    assert a.n_params == 2 * 64 + 64 + 3 * (64 * 64 + 64) + 64 * 2 + 2
    w = a.layers[1].weight.detach().numpy()
    assert np.abs(w).max() <= math.sqrt(6 / 128)
    assert all(np.all(l.bias.detach().numpy() == 0) for l in a.layers)
    out = a(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
    assert out.shape == (2, 2)


def test_ansatz_seed_is_deterministic():
    a, b = Ansatz(["psi"], (0, 1, 0, 1), seed=5), Ansatz(["psi"], (0, 1, 0, 1), seed=5)
    np.testing.assert_array_equal(a.get_flat(), b.get_flat())
    assert not np.array_equal(a.get_flat(), Ansatz(["psi"], (0, 1, 0, 1), seed=6).get_flat())


def test_flat_round_trip():
    a = Ansatz(["psi"], (0, 1, 0, 1), hidden=(4, 4))
    t = np.arange(a.n_params, dtype=float)
    a.set_flat(t)
    np.testing.assert_array_equal(a.get_flat(), t)


def test_unsupported_activation():
    with pytest.raises(ValueError):
        Ansatz(["psi"], (0, 1, 0, 1), activation="relu")


# ---------------------------------------------------------------- optimizer


def test_adam_zero_gradient_is_a_no_op():
    p = torch.nn.Parameter(torch.tensor([1.0, -2.0], dtype=torch.float64))
    st = AdamState.create([p], lr=0.1)
    for _ in range(3):
        adam_step(st, [torch.zeros(2, dtype=torch.float64)], 0.1)
    np.testing.assert_array_equal(p.detach().numpy(), [1.0, -2.0])


def test_adam_constant_gradient_moves_by_lr():
    p = torch.nn.Parameter(torch.zeros(3, dtype=torch.float64))
    st = AdamState.create([p], lr=0.01)
    g = torch.tensor([2.0, -0.5, 1e-3], dtype=torch.float64)
    prev = p.detach().clone()
    for _ in range(50):
        adam_step(st, [g], 0.01)
        step = (p.detach() - prev).numpy()
        prev = p.detach().clone()
    np.testing.assert_allclose(step, -0.01 * np.sign(g.numpy()), rtol=1e-3)


def test_lr_schedule_halves_at_milestones():
    cfg = TrainConfig(lr=0.0025, milestone=200)
    assert cfg.lr_at(0) == 0.0025
    assert cfg.lr_at(199) == 0.0025
    assert cfg.lr_at(200) == 0.00125
    assert cfg.lr_at(999) == 0.0025 / 16


@pytest.mark.parametrize("kw", [{"epochs": 0}, {"lr": 0.0}, {"milestone": 0}, {"bc_weight": -1.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# ---------------------------------------------------------------- loss and gradients


@pytest.mark.parametrize("mode", ["glss", "op", "weak", "semi-weak"])
def test_gradient_check_darcy(mode):
    pb, g, ss = small_problem(mode)
    a = Ansatz(ss.slots, pb.domain.box, hidden=(8, 8), seed=1)
    chk = gradient_check(LossModel(ss, g, make_residual(pb), pb.expr_params), a, n=20)
    assert chk["max_rel_error"] < 1e-4


def test_hard_structures_have_no_bc_loss():
    pb, g, ss = small_problem("glss")
    a = Ansatz(ss.slots, pb.domain.box, hidden=(8,))
    _, _, bc, _ = LossModel(ss, g, make_residual(pb), pb.expr_params)(a)
    assert float(bc) == 0.0


def test_weak_bc_loss_vanishes_for_exact_solution():
    pb, g, ss = small_problem("weak", n=41)
    model = LossModel(ss, g, make_residual(pb), pb.expr_params)
    ref = torch.as_tensor(pb.reference_fields(g.x, g.y)["u"])
    _, bc = model.terms([ref])
    assert float(bc) < 1e-4


def test_relative_l2():
    ref = np.array([1.0, 2.0, 2.0])
    assert relative_l2(ref, ref) == 0.0
    assert relative_l2(2 * ref, ref) == 1.0
    assert relative_l2(ref + 5, ref, modulo_constant=True) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        relative_l2(ref, 0 * ref)


# ---------------------------------------------------------------- training


def test_training_is_deterministic_and_decreases():
    pb, g, ss = small_problem("op", n=21)
    cfg = TrainConfig(epochs=30, lr=0.0025, hidden=(16, 16))
    ref = pb.reference_fields(g.x, g.y)
    a1, r1 = train(ss, g, make_residual(pb), cfg, reference=ref, params=pb.expr_params)
    a2, r2 = train(ss, g, make_residual(pb), cfg, reference=ref, params=pb.expr_params)
    np.testing.assert_array_equal(r1.column("loss_total"), r2.column("loss_total"))
    np.testing.assert_array_equal(a1.get_flat(), a2.get_flat())
    loss = r1.column("loss_total")
    assert loss[-1] < 0.5 * loss[0]
    assert r1.columns == ["epoch", "loss_total", "loss_pde", "loss_bc", "err_l2_u"]
    assert len(r1.rows) == 30


def test_non_finite_loss_raises():
    pb, g, ss = small_problem("glss")

    def bad(comps, grid):
        return [comps[0] * float("nan")]

    with pytest.raises(NonFiniteLossError) as err:
        train(ss, g, bad, TrainConfig(epochs=3, hidden=(4,)))
    assert err.value.report is not None


def test_divergence_aborts():
    pb, g, ss = small_problem("glss")

    def huge(comps, grid):
        return [comps[0] * 0 + 1e7]

    _, rep = train(ss, g, huge, TrainConfig(epochs=5, hidden=(4,), divergence_limit=1e12))
    assert rep.aborted and len(rep.rows) == 1


def test_ansatz_must_match_slots():
    pb, g, ss = small_problem("glss")
    with pytest.raises(TrainingError):
        train(ss, g, make_residual(pb), TrainConfig(epochs=1), ansatz=Ansatz(["psi"], pb.domain.box))


def test_checkpoint_round_trip(tmp_path):
    pb, g, ss = small_problem("op")
    a = Ansatz(ss.slots, pb.domain.box, hidden=(5, 7), seed=2)
    save_checkpoint(tmp_path / "ck", a, ss.hash())
    b = load_checkpoint(tmp_path / "ck", ss.hash())
    np.testing.assert_array_equal(a.get_flat(), b.get_flat())
    np.testing.assert_array_equal(predict(ss, g, a)[0], predict(ss, g, b)[0])
    assert (tmp_path / "ck.bin").stat().st_size == 8 * a.n_params
    with pytest.raises(TrainingError):
        load_checkpoint(tmp_path / "ck", "other")


def test_poisson_glss_error_drops():
    pb = load_problem("poisson")
    g = Grid(pb.domain, 21, 21)
    ss = S.build(pb.domain, "glss")
    ref = pb.reference_fields(g.x, g.y)
    cfg = TrainConfig(epochs=300, lr=0.005, milestone=1000, hidden=(16, 16))
    _, rep = train(ss, g, make_residual(pb), cfg, reference=ref, modulo_constant=True)
    err = rep.column("err_l2_u")
    assert err[-1] < 0.25 * err[0]
