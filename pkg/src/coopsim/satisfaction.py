"""Link satisfaction scoring and the pairwise network objective.

A delivered block is worth the receiver's mean interest over the block's area
times the sender's confidence in it; satisfaction adds this over delivered
blocks, and the network objective multiplies the two directions of each pair
so that one-sided exchanges score nothing.
"""

from __future__ import annotations

import csv

import numpy as np

from .quadtree import QuadBlock, block_value


def block_interest_sum(blk: QuadBlock, interest: np.ndarray) -> float:
    """Sum of the receiver's per-cell interest over the block (world-clipped)."""
    n = interest.shape[0]
    x0, y0 = max(blk.origin[0], 0), max(blk.origin[1], 0)
    x1 = min(blk.origin[0] + blk.side, n)
    y1 = min(blk.origin[1] + blk.side, n)
    if x0 >= x1 or y0 >= y1:
        return 0.0
    return float(interest[x0:x1, y0:y1].sum())


def satisfaction(delivered: list[QuadBlock], interest: np.ndarray, cell_m: float,
                 mu: float, now: float) -> float:
    """f = sum_b (interest mass of b / area of b) * sender's block value."""
    f = 0.0
    for blk in delivered:
        area = (blk.side * cell_m) ** 2
        f += block_interest_sum(blk, interest) / area * block_value(blk, mu, now)
    return f


def objective(f: np.ndarray, assoc: np.ndarray) -> float:
    """Sum of f[a,b] * f[b,a] over associated unordered pairs."""
    total = 0.0
    n = f.shape[0]
    for a in range(n):
        for b in range(a + 1, n):
            if assoc[a, b]:
                total += f[a, b] * f[b, a]
    return total


def choose_delivered(selected: list[QuadBlock], capacity: int,
                     rng: np.random.Generator) -> list[QuadBlock]:
    """Uniform random subset when the link cannot carry everything selected."""
    if capacity <= 0:
        return []
    if len(selected) <= capacity:
        return list(selected)
    idx = rng.choice(len(selected), size=capacity, replace=False)
    return [selected[i] for i in sorted(idx)]


def check_constraints(assoc: np.ndarray, alloc: np.ndarray, sent: np.ndarray,
                      delivered: np.ndarray, budget: np.ndarray) -> dict[str, bool]:
    """Structural feasibility flags; True means the constraint holds."""
    pair_overlap = (alloc * np.swapaxes(alloc, 0, 1)).sum(axis=2)
    return {
        "delivery_within_budget": bool((delivered <= np.floor(budget + 1e-9)).all()),
        "one_rb_per_vehicle": bool((alloc.sum(axis=(1, 2)) <= 1).all()),
        "one_association_per_vehicle": bool((assoc.sum(axis=1) <= 1).all()),
        "symmetric_association": bool(np.array_equal(assoc, assoc.T)),
        "binary_variables": bool(np.isin(assoc, (0, 1)).all()
                                 and np.isin(alloc, (0, 1)).all()),
        "orthogonal_pair_rbs": bool(not (pair_overlap * assoc).any()),
        "sent_from_inventory": bool((sent >= delivered).all()),
    }


def write_satisfaction_trace(path: str, rows: list[tuple]) -> None:
    """rows: (slot, n, n', f, blocks_sent, blocks_delivered)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "n", "n_prime", "f", "blocks_sent", "blocks_delivered"])
        for r in rows:
            w.writerow(r)
