"""Brute-force references: optimal block selection and tiny exhaustive RSU search.

Block selection is solved exactly: satisfaction is additive with non-negative
per-block terms, so the argmax under a count budget is reachable greedily; the
implementation returns the lexicographically smallest optimal subset, which is
what subset enumeration with that tie rule yields (tests cross-check them).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .agents import decode_pairing, pairing_branches, rb_pairs
from .channel import NetConfig, build_allocation, compute_rates
from .quadtree import QuadBlock, block_value
from .satisfaction import block_interest_sum
from .world import Junction


class OracleGuardError(ValueError):
    """Instance too large for exhaustive reference computation."""


def block_contributions(candidates: list[QuadBlock | None], interest: np.ndarray,
                        cell_m: float, mu: float, now: float) -> np.ndarray:
    out = np.zeros(len(candidates))
    for i, blk in enumerate(candidates):
        if blk is None:
            continue
        area = (blk.side * cell_m) ** 2
        out[i] = block_interest_sum(blk, interest) / area * block_value(blk, mu, now)
    return out


def oracle_blocks(candidates: list[QuadBlock | None], interest: np.ndarray,
                  budget: int, cell_m: float, mu: float, now: float,
                  max_candidates: int = 22) -> tuple[np.ndarray, float]:
    """Best send-bits under |selection| <= budget; exact argmax of satisfaction.

    Among equally good subsets, returns the lexicographically smallest index
    tuple (which may include zero-contribution low-index blocks when the budget
    has slack). Returns (bits aligned to candidates, satisfaction achieved).
    """
    n = len(candidates)
    if n > max_candidates:
        raise OracleGuardError(f"{n} candidates exceeds the exhaustive guard "
                               f"({max_candidates})")
    contrib = block_contributions(candidates, interest, cell_m, mu, now)
    real = np.array([blk is not None for blk in candidates])
    budget = max(int(budget), 0)

    def best_from(i: int, slots: int) -> float:
        vals = contrib[i:][real[i:] & (contrib[i:] > 0.0)]
        if slots <= 0 or vals.size == 0:
            return 0.0
        return float(np.sort(vals)[::-1][:slots].sum())

    target = best_from(0, budget)
    bits = np.zeros(n, dtype=np.int64)
    value = 0.0
    used = 0
    for i in range(n):
        if used >= budget or not real[i]:
            continue
        if value + contrib[i] + best_from(i + 1, budget - used - 1) >= target - 1e-12:
            bits[i] = 1
            value += contrib[i]
            used += 1
    return bits, value


@dataclass
class RsuSnapshot:
    """Everything the exhaustive RSU search needs about one instant."""
    positions: np.ndarray                    # (n, 2)
    present: np.ndarray                      # (n,) bool
    candidates: list[list[QuadBlock | None]]  # per vehicle
    interest: list[np.ndarray]               # per vehicle, world grid
    now: float
    mu: float
    cell_m: float
    slot_s: float


def all_pairings(n: int):
    """Every perfect matching, via the branch decoding (bijection by design)."""
    for tup in product(*[range(j) for j in pairing_branches(n)]):
        yield decode_pairing(np.array(tup), n)


def oracle_rsu(snap: RsuSnapshot, junction: Junction, net: NetConfig
               ) -> tuple[list[tuple[int, int]], list[tuple[int, int]], float]:
    """Exhaustive pairing + RB-pair search maximizing the one-slot objective
    under oracle content selection, fading disabled. Small n, k only."""
    n = snap.positions.shape[0]
    if n > 4 or net.n_rb > 4:
        raise OracleGuardError("exhaustive RSU search is limited to n <= 4, K <= 4")
    if net.fading:
        net = NetConfig(**{**net.__dict__, "fading": False})
    combos = rb_pairs(net.n_rb)
    rng = np.random.default_rng(0)  # unused: fading disabled
    from .channel import link_gains
    gains = link_gains(snap.positions, snap.present, junction, net, rng)

    best = (None, None, -1.0)
    for pairs in all_pairings(n):
        for rb_choice in product(range(len(combos)), repeat=len(pairs)):
            rbs = []
            for pair, ci in zip(pairs, rb_choice):
                k1, k2 = combos[ci]
                rbs.append((k1, k2))
            assoc, alloc = build_allocation(pairs, rbs, n, net.n_rb)
            rates, _ = compute_rates(assoc, alloc, gains, net, snap.slot_s)
            total = 0.0
            for a, b in pairs:
                if not (snap.present[a] and snap.present[b]):
                    continue
                f_ab = _link_oracle_f(snap, a, b, rates[a, b])
                f_ba = _link_oracle_f(snap, b, a, rates[b, a])
                total += f_ab * f_ba
            if total > best[2]:
                best = (pairs, rbs, total)
    return best


def _link_oracle_f(snap: RsuSnapshot, sender: int, receiver: int,
                   rate: float) -> float:
    budget = int(np.floor(rate + 1e-9))
    cands = snap.candidates[sender]
    _, f = oracle_blocks(cands, snap.interest[receiver], budget, snap.cell_m,
                         snap.mu, snap.now, max_candidates=max(len(cands), 22))
    return f
