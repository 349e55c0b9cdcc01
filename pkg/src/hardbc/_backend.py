"""Helpers that let field code run on numpy arrays or torch tensors."""

from __future__ import annotations

import numpy as np


def torch_module():
    import torch

    return torch


def is_torch(value) -> bool:
    mod = type(value).__module__
    return mod.startswith("torch")


def as_numpy(value) -> np.ndarray:
    if is_torch(value):
        return value.detach().cpu().numpy()
    return np.asarray(value)


def to_torch(arr):
    torch = torch_module()
    return torch.as_tensor(np.ascontiguousarray(arr), dtype=torch.float64)


def isfinite_all(value) -> bool:
    if is_torch(value):
        return bool(torch_module().isfinite(value).all())
    return bool(np.all(np.isfinite(value)))
