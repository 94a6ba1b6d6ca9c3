"""Three-state vehicular sensing: reliability noise, occlusion shadows, cell values.

Each vehicle senses cells within radius r, except those occluded by occupied
cells between it and the target. Sensed states age; their worth decays as
mu^age and is nulled by uncertainty. A persistent per-vehicle map fuses own
sensing with received blocks, always keeping the higher-value source per cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .world import VehicleState, WorldConfig

S_OCC, S_FREE, S_UNK = 1, -1, 0


def occupancy_probability(state, lam):
    """Map a three-state reading to occupancy probability under reliability lam."""
    s = np.asarray(state)
    return np.where(s == S_OCC, lam, np.where(s == S_FREE, 1.0 - lam, 0.5))


def cell_value(p, delta, mu):
    """q = |2p-1| * mu^delta: certainty damped by information age."""
    return np.abs(2.0 * np.asarray(p, dtype=float) - 1.0) * mu ** np.asarray(delta, dtype=float)


def modified_interest(w, q):
    """Interest in hearing about a cell: spatial relevance times ignorance."""
    return np.asarray(w) * (1.0 - np.asarray(q))


def _ray_cells(di: int, dj: int) -> list[tuple[int, int]]:
    """Cells strictly between (0,0) and (di,dj) crossed by the center-to-center
    segment. Exact corner crossings step diagonally (neither side cell)."""
    cells = []
    x = y = 0
    sx = (di > 0) - (di < 0)
    sy = (dj > 0) - (dj < 0)
    tmx = 0.5 / abs(di) if di else math.inf
    tmy = 0.5 / abs(dj) if dj else math.inf
    tdx = 1.0 / abs(di) if di else math.inf
    tdy = 1.0 / abs(dj) if dj else math.inf
    while (x, y) != (di, dj):
        if tmx < tmy - 1e-12:
            x += sx
            tmx += tdx
        elif tmy < tmx - 1e-12:
            y += sy
            tmy += tdy
        else:
            x += sx
            y += sy
            tmx += tdx
            tmy += tdy
        if (x, y) != (di, dj):
            cells.append((x, y))
    return cells


@lru_cache(maxsize=8)
def _ray_table(radius_cells: int):
    """Padded intermediate-cell offsets for every target in the window.

    Returns (targets (K,2), rays (K,Lmax,2), mask (K,Lmax)).
    """
    offs = []
    rays = []
    for di in range(-radius_cells, radius_cells + 1):
        for dj in range(-radius_cells, radius_cells + 1):
            offs.append((di, dj))
            rays.append(_ray_cells(di, dj))
    lmax = max(1, max(len(r) for r in rays))
    k = len(offs)
    arr = np.zeros((k, lmax, 2), dtype=np.int64)
    mask = np.zeros((k, lmax), dtype=bool)
    for i, r in enumerate(rays):
        if r:
            arr[i, :len(r)] = r
            mask[i, :len(r)] = True
    return np.array(offs, dtype=np.int64), arr, mask


@dataclass
class SensedGrid:
    """One slot's raw sensor output over the vehicle's 2^L-cell square."""
    owner: int
    origin: tuple[int, int]  # world cell coords of square corner (may be negative)
    side: int
    state: np.ndarray        # (side, side) int8; unsensed cells are S_UNK
    gamma: np.ndarray        # (side, side) seconds; valid where sensed
    sensed: np.ndarray       # (side, side) bool


def sense(vehicle: VehicleState, occupied: np.ndarray, own_cells, cfg: WorldConfig,
          levels: int, t: int, rng: np.random.Generator) -> SensedGrid:
    """Sense the 2^levels square centered on the vehicle.

    A cell is sensed when its center lies within the sensing radius, inside the
    world, and no occupied cell strictly between vehicle and target blocks the
    ray (the vehicle's own footprint never blocks). Sensed cells report ground
    truth with probability `vehicle.reliability`, flipped otherwise.
    """
    n = cfg.cells
    cell = cfg.cell_m
    side = 2 ** levels
    cx = int(vehicle.position[0] // cell)
    cy = int(vehicle.position[1] // cell)
    ox, oy = cx - side // 2, cy - side // 2

    blockers = occupied.copy()
    if own_cells is not None:
        blockers[own_cells[0], own_cells[1]] = False

    rc = int(math.ceil(vehicle.sensing_radius / cell))
    offs, rays, rmask = _ray_table(rc)
    tix = cx + offs[:, 0]
    tiy = cy + offs[:, 1]
    centers_x = (tix + 0.5) * cell
    centers_y = (tiy + 0.5) * cell
    d = np.hypot(centers_x - vehicle.position[0], centers_y - vehicle.position[1])
    in_world = (tix >= 0) & (tix < n) & (tiy >= 0) & (tiy < n)
    in_square = (tix >= ox) & (tix < ox + side) & (tiy >= oy) & (tiy < oy + side)
    cand = (d <= vehicle.sensing_radius) & in_world & in_square
    # occlusion: any blocker on the strictly-intermediate ray cells
    ri = np.clip(cx + rays[:, :, 0], 0, n - 1)
    rj = np.clip(cy + rays[:, :, 1], 0, n - 1)
    blocked = (blockers[ri, rj] & rmask).any(axis=1)
    vis = cand & ~blocked

    vix, viy = tix[vis], tiy[vis]
    truth = occupied[vix, viy]
    correct = rng.random(truth.shape[0]) < vehicle.reliability
    reading = np.where(truth == correct, S_OCC, S_FREE).astype(np.int8)

    grid = SensedGrid(
        owner=vehicle.id, origin=(ox, oy), side=side,
        state=np.zeros((side, side), dtype=np.int8),
        gamma=np.zeros((side, side)),
        sensed=np.zeros((side, side), dtype=bool),
    )
    lx, ly = vix - ox, viy - oy
    grid.state[lx, ly] = reading
    grid.gamma[lx, ly] = t * cfg.slot_s
    grid.sensed[lx, ly] = True
    return grid


class VehicleMap:
    """Persistent fused world view of one vehicle: per-cell (state, p, gamma)."""

    def __init__(self, cfg: WorldConfig, owner: int):
        n = cfg.cells
        self.cfg = cfg
        self.owner = owner
        self.state = np.zeros((n, n), dtype=np.int8)
        self.p = np.full((n, n), 0.5)
        self.gamma = np.zeros((n, n))

    def integrate(self, grid: SensedGrid, reliability: float) -> None:
        """Own fresh sensing always overwrites (it is the newest, lowest-age data)."""
        n = self.cfg.cells
        ox, oy = grid.origin
        lx, ly = np.nonzero(grid.sensed)
        wx, wy = lx + ox, ly + oy
        keep = (wx >= 0) & (wx < n) & (wy >= 0) & (wy < n)
        wx, wy, lx, ly = wx[keep], wy[keep], lx[keep], ly[keep]
        st = grid.state[lx, ly]
        self.state[wx, wy] = st
        self.p[wx, wy] = occupancy_probability(st, reliability)
        self.gamma[wx, wy] = grid.gamma[lx, ly]

    def value_map(self, now: float, mu: float) -> np.ndarray:
        return cell_value(self.p, np.maximum(now - self.gamma, 0.0), mu)

    def fuse_block(self, origin: tuple[int, int], side: int, state: int, p: float,
                   gamma: float, now: float, mu: float) -> int:
        """Adopt a received block's (state, p, gamma) on cells it beats on value.

        Returns the number of cells overwritten.
        """
        n = self.cfg.cells
        x0, y0 = max(origin[0], 0), max(origin[1], 0)
        x1, y1 = min(origin[0] + side, n), min(origin[1] + side, n)
        if x0 >= x1 or y0 >= y1:
            return 0
        q_in = float(cell_value(p, max(now - gamma, 0.0), mu))
        sub = (slice(x0, x1), slice(y0, y1))
        q_loc = cell_value(self.p[sub], np.maximum(now - self.gamma[sub], 0.0), mu)
        win = q_in > q_loc
        self.state[sub][win] = state
        self.p[sub][win] = p
        self.gamma[sub][win] = gamma
        return int(win.sum())

    def interest_map(self, vehicle: VehicleState, t_int: float, mu: float,
                     now: float) -> np.ndarray:
        from .world import roi_weight_map
        w = roi_weight_map(vehicle, self.cfg, t_int)
        return modified_interest(w, self.value_map(now, mu))
