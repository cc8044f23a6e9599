"""Central finite-difference verification of taped gradients."""

from __future__ import annotations

import numpy as np

from .grid import Grid, backward, recording


def central_difference(loss_fn, grid: Grid, flat_index: int, step: float = 1e-5) -> float:
    """d(loss)/d(grid[flat_index]) by central differences; restores the value."""
    flat = grid.data.reshape(-1)
    old = flat[flat_index]
    flat[flat_index] = old + step
    fp = loss_fn().item()
    flat[flat_index] = old - step
    fm = loss_fn().item()
    flat[flat_index] = old
    return (fp - fm) / (2.0 * step)


def gradient_pairs(loss_fn, grids, rng=None, max_coords: int = 20, step: float = 1e-5):
    """Analytic vs numeric gradient samples for each grid.

    loss_fn must rebuild the scalar loss from scratch on every call. Returns
    a list of (analytic, numeric) float arrays, one pair per grid.
    """
    rng = rng or np.random.default_rng(0)
    for g in grids:
        g.ensure_grad().fill(0.0)
    with recording() as tape:
        loss = loss_fn()
    backward(loss, tape)
    analytic_full = [g.grad.copy() for g in grids]

    out = []
    for g, full in zip(grids, analytic_full):
        n = g.data.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        numeric = np.array([central_difference(loss_fn, g, int(i), step) for i in coords])
        out.append((full.reshape(-1)[coords], numeric))
    return out


def max_relative_error(loss_fn, grids, rng=None, max_coords: int = 20,
                       step: float = 1e-5, atol: float = 1e-8) -> float:
    """Worst relative error between analytic and numeric gradients.

    Coordinates where both values are below atol count as zero error.
    """
    worst = 0.0
    for analytic, numeric in gradient_pairs(loss_fn, grids, rng, max_coords, step):
        for a, n in zip(analytic, numeric):
            denom = max(abs(a), abs(n))
            if denom < atol:
                continue
            err = abs(a - n) / denom
            if abs(a - n) <= atol:
                continue
            worst = max(worst, err)
    return worst
