"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError
from .core import Tensor, backward, no_grad, precision


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    checked: int


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray | Tensor], h: float = 1e-3,
               tol: float = 1e-3, floor: float = 1e-6, max_entries: int | None = None,
               seed: int = 0, dtype=np.float64) -> GradCheckReport:
    """Compare backprop gradients of ``fn(*inputs)`` with central differences.

    ``fn`` must return a single-element tensor. The relative error of an entry
    is ``|a - n| / max(|a|, |n|, floor)``. When ``max_entries`` is set, that many
    entries per input are sampled (seeded) instead of checking all of them.
    Both passes run at ``dtype``; float64 keeps the O(eps/h) rounding term of
    the differences well below ``tol``.
    """
    with precision(dtype):
        leaves = [Tensor(np.array(np.asarray(getattr(x, "data", x)), dtype=dtype), requires_grad=True)
                  for x in inputs]
        out = fn(*leaves)
        if not isinstance(out, Tensor) or out.size != 1:
            raise ContractError("grad_check closure must return a single-element tensor")
        backward(out, params=leaves)
        analytic = [np.array(t.grad, dtype=np.float64) for t in leaves]

        rng = np.random.default_rng(seed)
        worst = 0.0
        checked = 0
        with no_grad():
            for t, ga in zip(leaves, analytic):
                flat = t.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_entries is not None and flat.size > max_entries:
                    idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = float(fn(*leaves).data.reshape(-1)[0])
                    flat[i] = orig - h
                    fm = float(fn(*leaves).data.reshape(-1)[0])
                    flat[i] = orig
                    num = (fp - fm) / (2 * h)
                    a = float(ga.reshape(-1)[i])
                    err = abs(a - num) / max(abs(a), abs(num), floor)
                    worst = max(worst, err)
                    checked += 1
    return GradCheckReport(max_rel_err=worst, passed=worst <= tol, checked=checked)
