"""State encoders, action decoders, and rewards for the RSU and vehicle agents.

The RSU picks a perfect matching of vehicles plus one resource-block pair per
match, once per frame, through positional branches: pairing branch i chooses
which of the remaining vehicles joins the lowest unpaired one, so any branch
tuple decodes to exactly one matching and every matching has exactly one
tuple. Vehicles pick, per slot, which candidate blocks to send (one binary
branch per candidate slot).
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .quadtree import QuadBlock, block_value
from .sensing import S_FREE, S_OCC
from .world import VehicleState, WorldConfig


class ActionError(ValueError):
    pass


def pairing_branches(n: int) -> list[int]:
    return [n - 2 * i + 1 for i in range(1, n // 2 + 1)]


def rsu_branches(n: int, k: int) -> list[int]:
    n_rb_pairs = k * (k - 1) // 2
    return pairing_branches(n) + [n_rb_pairs] * (n // 2)


def vehicle_branches(width: int) -> list[int]:
    return [2] * width


def decode_pairing(actions: np.ndarray, n: int) -> list[tuple[int, int]]:
    """Branch i pairs the lowest unpaired vehicle with the (a_i+1)-th remaining."""
    unpaired = list(range(n))
    pairs = []
    for i, a in enumerate(actions):
        a = int(a)
        if not 0 <= a < len(unpaired) - 1:
            raise ActionError(f"pairing branch {i}: sub-action {a} out of range")
        head = unpaired.pop(0)
        partner = unpaired.pop(a)
        pairs.append((head, partner))
    return pairs


def encode_pairing(pairs: list[tuple[int, int]], n: int) -> np.ndarray:
    """Inverse of decode_pairing; pairs may be in any order/orientation."""
    partner = {}
    for a, b in pairs:
        partner[a], partner[b] = b, a
    unpaired = list(range(n))
    actions = []
    while len(unpaired) > 1:
        head = unpaired.pop(0)
        mate = partner[head]
        actions.append(unpaired.index(mate))
        unpaired.remove(mate)
    return np.array(actions, dtype=np.int64)


def rb_pairs(k: int) -> list[tuple[int, int]]:
    return list(combinations(range(k), 2))


def decode_rb(actions: np.ndarray, pairs: list[tuple[int, int]], k: int
              ) -> list[tuple[int, int]]:
    """RB pair per vehicle pair; the lower RB goes to the lower-indexed vehicle."""
    combos = rb_pairs(k)
    out = []
    for i, (a, pair) in enumerate(zip(actions, pairs)):
        a = int(a)
        if not 0 <= a < len(combos):
            raise ActionError(f"RB branch {i}: sub-action {a} out of range")
        k1, k2 = combos[a]
        lo, hi = min(pair), max(pair)
        out.append((k1, k2) if pair == (lo, hi) else (k2, k1))
    return out


def decode_selection(bits: np.ndarray, candidates: list[QuadBlock | None]
                     ) -> list[QuadBlock]:
    """Chosen blocks; send decisions on padding slots are ignored."""
    return [blk for bit, blk in zip(bits, candidates) if bit and blk is not None]


# --- observations ---------------------------------------------------------------


def rsu_obs_width(n: int) -> int:
    return 3 * n


def encode_rsu_obs(positions: np.ndarray, speeds: np.ndarray, present: np.ndarray,
                   cfg: WorldConfig) -> np.ndarray:
    """(x, y, v) per roster slot, normalized; absent vehicles read all-zero."""
    n = positions.shape[0]
    obs = np.zeros(3 * n, dtype=np.float32)
    for i in range(n):
        if present[i]:
            obs[3 * i] = positions[i, 0] / cfg.extent_m
            obs[3 * i + 1] = positions[i, 1] / cfg.extent_m
            obs[3 * i + 2] = speeds[i] / cfg.speed_max
    return obs


def vehicle_obs_width(n_candidates: int) -> int:
    return n_candidates * 7 + 6


def encode_vehicle_obs(own: VehicleState | None, peer: VehicleState | None,
                       candidates: list[QuadBlock | None], levels: int,
                       cfg: WorldConfig, mu: float, now: float) -> np.ndarray:
    """Per-candidate (state one-hot, depth, offset in own frame, value) + poses.

    Padding slots are all-zero; a real block always has a nonzero one-hot, so
    the encoding distinguishes them without a separate flag.
    """
    obs = np.zeros(vehicle_obs_width(len(candidates)), dtype=np.float32)
    if own is None:
        return obs
    c, s = np.cos(own.heading), np.sin(own.heading)
    for i, blk in enumerate(candidates):
        if blk is None:
            continue
        o = 7 * i
        obs[o] = 1.0 if blk.state == S_OCC else 0.0
        obs[o + 1] = 1.0 if blk.state == S_FREE else 0.0
        obs[o + 2] = 1.0 if blk.state not in (S_OCC, S_FREE) else 0.0
        obs[o + 3] = blk.level / levels
        bx = (blk.origin[0] + blk.side / 2.0) * cfg.cell_m - own.position[0]
        by = (blk.origin[1] + blk.side / 2.0) * cfg.cell_m - own.position[1]
        obs[o + 4] = (c * bx + s * by) / cfg.extent_m
        obs[o + 5] = (-s * bx + c * by) / cfg.extent_m
        obs[o + 6] = block_value(blk, mu, now)
    o = 7 * len(candidates)
    obs[o] = own.position[0] / cfg.extent_m
    obs[o + 1] = own.position[1] / cfg.extent_m
    obs[o + 2] = own.velocity / cfg.speed_max
    if peer is not None:
        obs[o + 3] = peer.position[0] / cfg.extent_m
        obs[o + 4] = peer.position[1] / cfg.extent_m
        obs[o + 5] = peer.velocity / cfg.speed_max
    return obs


# --- rewards --------------------------------------------------------------------


def vehicle_reward(f_peer: float, cell_m: float) -> float:
    """Partner's satisfaction with what we sent, scaled so one perfect
    finest-cell block is worth 1."""
    return f_peer * cell_m * cell_m


def rsu_reward(frame_rewards: np.ndarray, present: np.ndarray) -> float:
    """Mean over vehicles of their per-frame mean reward (present slots only).

    frame_rewards: (slots, n) per-slot vehicle rewards; present: same-shape bool.
    """
    per_vehicle = []
    for i in range(frame_rewards.shape[1]):
        m = present[:, i]
        if m.any():
            per_vehicle.append(frame_rewards[m, i].mean())
    return float(np.mean(per_vehicle)) if per_vehicle else 0.0
