"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def numeric_grad(f: Callable[[], Tensor], p: Tensor, h: float = 1e-5, entries=None) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. ``p`` (all entries, or the flat indices given)."""
    flat = p.data.reshape(-1)
    out = np.zeros_like(flat)
    idx = range(flat.size) if entries is None else entries
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        up = f().item()
        flat[i] = orig - h
        down = f().item()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out.reshape(p.shape)


def group_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / (||a|| + ||n||) over a whole parameter tensor."""
    den = max(1e-8, float(np.linalg.norm(analytic) + np.linalg.norm(numeric)))
    return float(np.linalg.norm(analytic - numeric)) / den


def finite_diff_check(f: Callable[[], Tensor], params: dict[str, Tensor] | list[Tensor], h: float = 1e-5,
                      per_param: bool = False, mode: str = "elementwise"):
    """Max relative error between backward() and central differences.

    ``mode="elementwise"`` takes the worst single entry; ``mode="group"``
    compares each parameter tensor as a whole, which is insensitive to
    entries whose true gradient sits at the finite-difference noise floor.
    ``f`` must rebuild the graph on every call and be deterministic. With
    ``per_param=True`` a dict name -> error is returned instead.
    """
    if mode not in ("elementwise", "group"):
        raise ValueError(f"unknown mode {mode!r}")
    if not isinstance(params, dict):
        params = {str(i): p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    f().backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    errors = {}
    for k, p in params.items():
        num = numeric_grad(f, p, h)
        if not p.data.size:
            errors[k] = 0.0
        elif mode == "group":
            errors[k] = group_relative_error(analytic[k], num)
        else:
            errors[k] = float(relative_error(analytic[k], num).max())
    for p in params.values():
        p.grad = None
    return errors if per_param else max(errors.values(), default=0.0)
