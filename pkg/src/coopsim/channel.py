"""V2V sidelink channel: LOS classing at a junction, pathloss, fading, rates.

Links are LOS along open streets, weak-LOS diagonally across the open junction
box, and NLOS when a corner building cuts the segment (with an extra penalty
growing with the around-the-corner detour). Rates are Shannon capacity over
the allocated resource blocks, degraded by co-channel interference, expressed
in blocks per slot.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .world import Junction

LOS, WLOS, NLOS = "LOS", "WLOS", "NLOS"


class AllocationError(ValueError):
    """Raised when an association/allocation violates a structural constraint."""


@dataclass
class NetConfig:
    n_rb: int = 10                 # K resource blocks
    rb_bandwidth_hz: float = 180e3
    tx_power_dbm: float = 10.0
    noise_dbm_hz: float = -174.0
    carrier_hz: float = 5.9e9
    block_bits: int = 800          # one quadtree block = one packet
    pl_offset_db: float = 38.77
    pl_exponent_db: float = 16.7   # per decade of distance
    wlos_extra_db: float = 5.0
    nlos_extra_db: float = 15.0
    nlos_corner_db_per_m: float = 0.4
    fading: bool = True

    def validate(self) -> None:
        if self.n_rb < 2:
            raise ValueError("need at least 2 resource blocks")
        if self.rb_bandwidth_hz <= 0:
            raise ValueError("RB bandwidth must be positive")

    @property
    def tx_power_w(self) -> float:
        return 10.0 ** ((self.tx_power_dbm - 30.0) / 10.0)

    @property
    def noise_w(self) -> float:
        return 10.0 ** ((self.noise_dbm_hz - 30.0) / 10.0) * self.rb_bandwidth_hz


def _segment_hits_rect(p, q, rect) -> bool:
    """Liang-Barsky clip: does segment p->q pass through the rectangle interior?"""
    x0, y0, x1, y1 = rect
    dx, dy = q[0] - p[0], q[1] - p[1]
    t0, t1 = 0.0, 1.0
    for dd, lo, hi, pos in ((dx, x0, x1, p[0]), (dy, y0, y1, p[1])):
        if dd == 0.0:
            if pos <= lo or pos >= hi:
                return False
            continue
        ta, tb = (lo - pos) / dd, (hi - pos) / dd
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 >= t1:
            return False
    return True


def classify_los(pos_a, pos_b, junction: Junction) -> str:
    for rect in junction.buildings:
        if _segment_hits_rect(pos_a, pos_b, rect):
            return NLOS
    cx, cy = junction.center
    wns = junction.cfg.road_width_ns_m / 2.0
    wew = junction.cfg.road_width_ew_m / 2.0

    def arm(pos):
        ns = abs(pos[0] - cx) <= wns
        ew = abs(pos[1] - cy) <= wew
        if ns and not ew:
            return "NS"
        if ew and not ns:
            return "EW"
        return "BOX"

    a, b = arm(pos_a), arm(pos_b)
    if {a, b} == {"NS", "EW"}:
        return WLOS
    return LOS


def corner_detour(pos_a, pos_b, junction: Junction) -> float:
    """Shortest extra path length around a junction-box corner, in meters."""
    x0, y0, x1, y1 = junction.box
    d = math.dist(pos_a, pos_b)
    best = math.inf
    for c in ((x0, y0), (x1, y0), (x0, y1), (x1, y1)):
        best = min(best, math.dist(pos_a, c) + math.dist(c, pos_b))
    return max(best - d, 0.0)


def pathloss_db(los_class: str, dist_m: float, detour_m: float, cfg: NetConfig) -> float:
    d = max(dist_m, 1.0)
    pl = cfg.pl_offset_db + cfg.pl_exponent_db * math.log10(d)
    if los_class == WLOS:
        pl += cfg.wlos_extra_db
    elif los_class == NLOS:
        pl += cfg.nlos_extra_db + cfg.nlos_corner_db_per_m * detour_m
    return pl


def link_gains(positions: np.ndarray, present: np.ndarray, junction: Junction,
               cfg: NetConfig, rng: np.random.Generator) -> np.ndarray:
    """Gain h[i, j, k] from transmitter i to receiver j on each RB (linear).

    Pathloss is reciprocal; fading (unit-mean exponential power, i.i.d. per
    link/RB/slot) is not. Absent vehicles get zero gain.
    """
    n = positions.shape[0]
    h = np.zeros((n, n, cfg.n_rb))
    for i in range(n):
        if not present[i]:
            continue
        for j in range(n):
            if j == i or not present[j]:
                continue
            cls = classify_los(positions[i], positions[j], junction)
            det = corner_detour(positions[i], positions[j], junction) if cls == NLOS else 0.0
            pl = pathloss_db(cls, float(math.dist(positions[i], positions[j])), det, cfg)
            h[i, j, :] = 10.0 ** (-pl / 10.0)
    if cfg.fading:
        h *= rng.exponential(1.0, size=h.shape)
    return h


def validate_allocation(assoc: np.ndarray, alloc: np.ndarray) -> None:
    if not np.array_equal(assoc, assoc.T):
        raise AllocationError("association matrix must be symmetric")
    if not np.isin(assoc, (0, 1)).all() or not np.isin(alloc, (0, 1)).all():
        raise AllocationError("association and allocation must be binary")
    if np.diag(assoc).any():
        raise AllocationError("self-association is not allowed")
    if (assoc.sum(axis=1) > 1).any():
        raise AllocationError("a vehicle may associate with at most one partner")
    if (alloc.sum(axis=(1, 2)) > 1).any():
        raise AllocationError("a vehicle may transmit on at most one resource block")
    pair_overlap = (alloc * np.swapaxes(alloc, 0, 1)).sum(axis=2)
    if (pair_overlap * assoc).any():
        raise AllocationError("paired vehicles must use orthogonal resource blocks")
    if ((alloc.sum(axis=2) > 0) & (assoc == 0)).any():
        raise AllocationError("allocation targets a non-associated receiver")


def compute_rates(assoc: np.ndarray, alloc: np.ndarray, gains: np.ndarray,
                  cfg: NetConfig, slot_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Blocks/slot R[n, n'] per Shannon over allocated RBs, plus I[n, n'] watts.

    Interference at receiver n' on RB k aggregates every co-channel
    transmitter other than the pair itself.
    """
    validate_allocation(assoc, alloc)
    n, _, k = gains.shape
    p = cfg.tx_power_w
    tx_on = alloc.sum(axis=1)  # (n, k): transmitter i active on RB k
    rates = np.zeros((n, n))
    interf = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if not assoc[i, j]:
                continue
            ks = np.nonzero(alloc[i, j])[0]
            if ks.size == 0:
                continue
            r = 0.0
            itot = 0.0
            for kk in ks:
                others = tx_on[:, kk].copy()
                others[i] = 0
                others[j] = 0
                inter = float(p * (others * gains[:, j, kk]).sum())
                sinr = p * gains[i, j, kk] / (cfg.noise_w + inter)
                r += cfg.rb_bandwidth_hz * math.log2(1.0 + sinr)
                itot += inter
            rates[i, j] = slot_s / cfg.block_bits * r
            interf[i, j] = itot
    return rates, interf


def build_allocation(pairs: list[tuple[int, int]], rbs: list[tuple[int, int]],
                     n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Association + allocation matrices from (a, b) pairs and their (k_a, k_b)."""
    assoc = np.zeros((n, n), dtype=np.int8)
    alloc = np.zeros((n, n, k), dtype=np.int8)
    for (a, b), (ka, kb) in zip(pairs, rbs):
        assoc[a, b] = assoc[b, a] = 1
        alloc[a, b, ka] = 1
        alloc[b, a, kb] = 1
    return assoc, alloc


def write_channel_trace(path: str, rows: list[tuple]) -> None:
    """rows: (slot, n, n', k, los_class, h_db, i_dbm, rate)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "n", "n_prime", "k", "class", "h_dB", "I_dBm", "R"])
        for r in rows:
            w.writerow(r)
