"""Dense-network ansatz for the slot functions and full-batch training.

The network maps box coordinates (rescaled to ``[-1, 1]^2``) to one output per
slot. Structure evaluation, finite differences and the residuals are all torch
operations on the grid, so parameter gradients come from reverse mode.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import expr as ex
from .grid import Grid
from .structure.fields import GridEvaluator

DTYPE = torch.float64


class TrainingError(RuntimeError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, message: str, report: "LossReport | None" = None):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# ansatz


class Ansatz(torch.nn.Module):
    """Fully connected tanh network with one output per slot."""

    def __init__(self, slots, box, hidden=(64, 64, 64, 64), seed: int = 0, activation: str = "tanh"):
        super().__init__()
        if activation not in ("tanh",):
            raise ValueError(f"unsupported activation {activation!r}")
        self.slots = list(slots)
        self.box = tuple(float(v) for v in box)
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = int(seed)
        self.activation = activation
        sizes = (2,) + self.hidden + (len(self.slots),)
        gen = torch.Generator().manual_seed(self.seed)
        layers = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            lin = torch.nn.Linear(n_in, n_out, dtype=DTYPE)
            bound = math.sqrt(6.0 / (n_in + n_out))
            with torch.no_grad():
                lin.weight.copy_(torch.rand(n_out, n_in, generator=gen, dtype=DTYPE) * 2 * bound - bound)
                lin.bias.zero_()
            layers.append(lin)
        self.layers = torch.nn.ModuleList(layers)

    @property
    def layer_sizes(self) -> tuple:
        return (2,) + self.hidden + (len(self.slots),)

    @property
    def n_outputs(self) -> int:
        return len(self.slots)

    def normalize(self, x, y):
        x0, x1, y0, y1 = self.box
        x = torch.as_tensor(x, dtype=DTYPE)
        y = torch.as_tensor(y, dtype=DTYPE)
        return torch.stack([2 * (x - x0) / (x1 - x0) - 1, 2 * (y - y0) / (y1 - y0) - 1], dim=1)

    def forward(self, x, y) -> torch.Tensor:
        h = self.normalize(x, y)
        for lin in self.layers[:-1]:
            h = torch.tanh(lin(h))
        return self.layers[-1](h)

    def slot_values(self, x, y) -> dict:
        out = self(x, y)
        return {name: out[:, k] for k, name in enumerate(self.slots)}

    # flat parameter access (checkpoints, gradient checks)

    def get_flat(self) -> np.ndarray:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()]).numpy().copy()

    def set_flat(self, theta) -> None:
        theta = torch.as_tensor(np.asarray(theta, dtype=float), dtype=DTYPE)
        k = 0
        with torch.no_grad():
            for p in self.parameters():
                n = p.numel()
                p.copy_(theta[k:k + n].reshape(p.shape))
                k += n

    @property
    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())


def forward(a: Ansatz, grid: Grid) -> dict:
    """Slot values at every grid node."""
    return a.slot_values(grid.x, grid.y)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam optimizer bound to a list of tensors."""

    optimizer: torch.optim.Adam

    @classmethod
    def create(cls, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> "AdamState":
        return cls(torch.optim.Adam(list(params), lr=lr, betas=tuple(betas), eps=eps))

    @property
    def params(self) -> list:
        return [p for g in self.optimizer.param_groups for p in g["params"]]


def adam_step(state: AdamState, grads, lr: float) -> None:
    """One Adam update of the state's parameters with the given gradients."""
    for p, g in zip(state.params, grads):
        p.grad = torch.as_tensor(g, dtype=p.dtype).reshape(p.shape).clone()
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()


# ---------------------------------------------------------------------------
# loss


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 0.0025
    milestone: int = 200
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    pde_weight: float = 1.0
    bc_weight: float = 1.0
    hidden: tuple = (64, 64, 64, 64)
    divergence_limit: float = 1e12
    log_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.milestone < 1:
            raise ValueError("milestone must be at least 1")
        if self.pde_weight < 0 or self.bc_weight < 0:
            raise ValueError("loss weights must be non-negative")

    def lr_at(self, epoch: int) -> float:
        return self.lr * 0.5 ** (epoch // self.milestone)


class LossModel:
    """Loss of a structure on a grid for a problem, as a function of the ansatz.

    ``residual(components, grid)`` returns a list of PDE residual vectors;
    only ``grid.loss_nodes()`` enter the PDE loss. Boundary terms of weak and
    semi-weak structures are evaluated with sparse boundary operators.
    """

    def __init__(self, ss, grid: Grid, residual, params: dict | None = None):
        self.ss = ss
        self.grid = grid
        self.residual = residual
        self.params = params if params is not None else ss.info.get("params", {})
        self.evaluator = GridEvaluator(ss, grid)
        self.loss_nodes = torch.as_tensor(np.flatnonzero(grid.loss_nodes()))
        self.bc = [self._bc_term(t) for t in ss.bc_terms]

    def _bc_term(self, t):
        ops = self.grid.boundary_operators(t.segment)
        pts = ops.points
        env = dict({k: float(v) for k, v in self.params.items() if k in ex.VARIABLES},
                   x=pts[:, 0], y=pts[:, 1])

        def ev(e):
            return torch.as_tensor(np.broadcast_to(np.asarray(ex.evaluate(e, env), dtype=float), (len(pts),)).copy(),
                                   dtype=DTYPE)

        data = {"kind": t.kind, "basis": torch.as_tensor(t.basis, dtype=DTYPE), "value": ops.value,
                "normal": ops.normal}
        if t.kind == "dirichlet":
            data["g"] = ev(t.g)
        else:
            data["c"] = [ev(c) for c in t.c]
            data["h"] = ev(t.h)
        return data

    def components(self, a: Ansatz) -> list:
        return self.evaluator.evaluate(forward(a, self.grid), backend="torch")

    def terms(self, comps) -> tuple:
        res = self.residual(comps, self.grid)
        pde = sum(torch.mean(r[self.loss_nodes] ** 2) for r in res)
        if not self.bc:
            return pde, torch.zeros((), dtype=DTYPE)
        pieces = []
        for t in self.bc:
            bu = sum(t["basis"][m] * comps[m] for m in range(len(comps)) if t["basis"][m] != 0)
            if t["kind"] == "dirichlet":
                pieces.append(t["value"](bu) - t["g"])
            else:
                cu = sum(c * t["value"](comps[m]) for m, c in enumerate(t["c"]))
                pieces.append(t["normal"](bu) + cu - t["h"])
        bc = torch.mean(torch.cat(pieces) ** 2)
        return pde, bc

    def __call__(self, a: Ansatz, cfg: TrainConfig | None = None):
        cfg = cfg or TrainConfig()
        comps = self.components(a)
        pde, bc = self.terms(comps)
        return cfg.pde_weight * pde + cfg.bc_weight * bc, pde, bc, comps


def loss_and_grad(model: LossModel, a: Ansatz, cfg: TrainConfig | None = None):
    """Loss value and flat parameter gradient."""
    a.zero_grad()
    total, _, _, _ = model(a, cfg)
    total.backward()
    g = torch.cat([p.grad.reshape(-1) for p in a.parameters()]).numpy().copy()
    return float(total.detach()), g


def gradient_check(model: LossModel, a: Ansatz, n: int = 20, step: float = 1e-5, seed: int = 0,
                   cfg: TrainConfig | None = None) -> dict:
    """Compare reverse-mode gradients with central differences on ``n`` random parameters.

    The relative error uses ``max(|g_a|, |g_fd|, 1e-6 * max|g|)`` as the scale,
    so near-zero entries are judged against the gradient as a whole.
    """
    theta = a.get_flat()
    _, g = loss_and_grad(model, a, cfg)
    rng = np.random.default_rng(seed)
    idx = rng.choice(theta.size, size=min(n, theta.size), replace=False)
    floor = 1e-6 * float(np.max(np.abs(g)))
    fd = np.empty(len(idx))
    with torch.no_grad():
        for k, i in enumerate(idx):
            t = theta.copy()
            t[i] += step
            a.set_flat(t)
            fp = float(model(a, cfg)[0])
            t[i] -= 2 * step
            a.set_flat(t)
            fm = float(model(a, cfg)[0])
            fd[k] = (fp - fm) / (2 * step)
    a.set_flat(theta)
    scale = np.maximum(np.maximum(np.abs(g[idx]), np.abs(fd)), floor)
    rel = np.abs(g[idx] - fd) / scale
    return {"indices": idx, "analytic": g[idx], "numeric": fd, "rel_error": rel, "max_rel_error": float(rel.max())}


# ---------------------------------------------------------------------------
# training


@dataclass
class LossReport:
    columns: list
    rows: list = field(default_factory=list)
    aborted: bool = False
    wall_time: float = 0.0

    def append(self, row: dict) -> None:
        self.rows.append([row.get(c, float("nan")) for c in self.columns])

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    @property
    def final(self) -> dict:
        return dict(zip(self.columns, self.rows[-1])) if self.rows else {}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([int(v) if c == "epoch" else f"{v:.10g}" for c, v in zip(self.columns, r)])


def relative_l2(pred, ref, mask=None, modulo_constant: bool = False) -> float:
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if mask is not None:
        pred, ref = pred[mask], ref[mask]
    if modulo_constant:
        pred = pred - pred.mean()
        ref = ref - ref.mean()
    den = np.linalg.norm(ref)
    if den == 0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm(pred - ref) / den)


def train(ss, grid: Grid, residual, cfg: TrainConfig | None = None, reference: dict | None = None,
          params: dict | None = None, modulo_constant: bool = False, ansatz: Ansatz | None = None,
          callback=None):
    """Full-batch Adam with the learning rate halved at every milestone.

    ``reference`` maps component names to grid vectors; when given, relative
    l2 errors over the domain nodes are logged each epoch. Returns
    ``(ansatz, LossReport)``.
    """
    cfg = cfg or TrainConfig()
    torch.manual_seed(cfg.seed)
    a = ansatz or Ansatz(ss.slots, grid.domain.box, cfg.hidden, cfg.seed)
    if a.slots != list(ss.slots):
        raise TrainingError("ansatz outputs do not match the structure's slots")
    model = LossModel(ss, grid, residual, params)
    state = AdamState.create(a.parameters(), cfg.lr, cfg.betas, cfg.eps)
    mask = grid.domain_mask
    ref_names = [c for c in ss.component_names if reference and c in reference]
    cols = ["epoch", "loss_total", "loss_pde", "loss_bc"] + [f"err_l2_{c}" for c in ref_names]
    report = LossReport(cols)
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        a.zero_grad()
        total, pde, bc, comps = model(a, cfg)
        value = float(total.detach())
        row = {"epoch": epoch, "loss_total": value, "loss_pde": float(pde.detach()), "loss_bc": float(bc.detach())}
        for c in ref_names:
            k = ss.component_names.index(c)
            row[f"err_l2_{c}"] = relative_l2(comps[k].detach().numpy(), reference[c], mask, modulo_constant)
        if not math.isfinite(value):
            report.wall_time = time.perf_counter() - t0
            raise NonFiniteLossError(f"non-finite loss at epoch {epoch}", report)
        report.append(row)
        if value > cfg.divergence_limit:
            report.aborted = True
            break
        total.backward()
        adam_step(state, [p.grad for p in a.parameters()], lr)
        if callback is not None:
            callback(epoch, row)
        if cfg.log_every and epoch % cfg.log_every == 0:
            print(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()), flush=True)
    report.wall_time = time.perf_counter() - t0
    return a, report


def predict(ss, grid: Grid, a: Ansatz) -> list:
    """Component values (numpy) of a trained structure on ``grid``."""
    with torch.no_grad():
        comps = GridEvaluator(ss, grid).evaluate(forward(a, grid), backend="torch")
    return [c.numpy().copy() for c in comps]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, a: Ansatz, structure_hash: str = "", extra: dict | None = None) -> None:
    """Write ``<path>.json`` (header) and ``<path>.bin`` (little-endian float64 parameters)."""
    path = Path(path)
    theta = a.get_flat()
    header = {"layer_sizes": list(a.layer_sizes), "activation": a.activation, "seed": a.seed,
              "slots": a.slots, "box": list(a.box), "dtype": "float64-le", "n_params": int(theta.size),
              "structure_hash": structure_hash}
    if extra:
        header.update(extra)
    path.with_suffix(".json").write_text(json.dumps(header, indent=2))
    theta.astype("<f8").tofile(path.with_suffix(".bin"))


def load_checkpoint(path, structure_hash: str | None = None) -> Ansatz:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if structure_hash is not None and header.get("structure_hash") and header["structure_hash"] != structure_hash:
        raise TrainingError("checkpoint was trained for a different structure")
    sizes = header["layer_sizes"]
    a = Ansatz(header["slots"], header["box"], tuple(sizes[1:-1]), header["seed"], header["activation"])
    theta = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    if theta.size != header["n_params"] or theta.size != a.n_params:
        raise TrainingError(f"checkpoint holds {theta.size} parameters, expected {a.n_params}")
    a.set_flat(theta)
    return a


__all__ = [
    "Ansatz", "AdamState", "LossModel", "LossReport", "NonFiniteLossError", "TrainConfig", "TrainingError",
    "adam_step", "forward", "gradient_check", "load_checkpoint", "loss_and_grad", "predict", "relative_l2",
    "save_checkpoint", "train",
]
