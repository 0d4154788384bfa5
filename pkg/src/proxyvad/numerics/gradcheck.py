"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ops import record_branches
from .tensor import DiffTensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    worst: tuple[str, tuple[int, ...], float, float] | None  # name, index, analytic, numeric
    n_skipped: int = 0  # stencils that crossed a kink


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(
    loss_fn: Callable[[], DiffTensor],
    tensors: Sequence[DiffTensor],
    n_samples: int | None = None,
    step: float = 1e-5,
    rng: np.random.Generator | None = None,
    skip_kinks: bool = False,
) -> GradCheckResult:
    """Compare ``backward()`` gradients to central differences.

    ``loss_fn`` must rebuild the graph from the current values of ``tensors``.
    With ``n_samples`` set, that many scalar entries are drawn uniformly over
    all entries of all tensors; otherwise every entry is checked.

    With ``skip_kinks``, an entry whose ``±step`` stencil changes the branch of
    any ReLU, max pool or L1 term is not differentiable over the stencil, so it
    is skipped and, when sampling, replaced by a fresh draw.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    with record_branches() as base:
        loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    sizes = np.array([t.data.size for t in tensors])
    bounds = np.cumsum(sizes)
    total = int(sizes.sum())
    order = np.arange(total) if n_samples is None else rng.permutation(total)
    want = total if n_samples is None else min(n_samples, total)

    worst, worst_err, checked, skipped = None, 0.0, 0, 0
    for f in order:
        if checked >= want:
            break
        i = int(np.searchsorted(bounds, f, side="right"))
        j = int(f - (bounds[i - 1] if i else 0))
        t = tensors[i]
        flat_view = t.data.reshape(-1)
        orig = flat_view[j]
        flat_view[j] = orig + step
        with record_branches() as up_branches:
            up = float(loss_fn().data)
        flat_view[j] = orig - step
        with record_branches() as down_branches:
            down = float(loss_fn().data)
        flat_view[j] = orig
        if skip_kinks and not (_same_branches(base, up_branches) and _same_branches(base, down_branches)):
            skipped += 1
            continue
        numeric = (up - down) / (2 * step)
        a = float(analytic[i].reshape(-1)[j])
        err = relative_error(a, numeric)
        checked += 1
        if err >= worst_err:
            worst_err = err
            worst = (t.name or f"tensor{i}", np.unravel_index(j, t.shape), a, numeric)
    return GradCheckResult(worst_err, checked, worst, skipped)
