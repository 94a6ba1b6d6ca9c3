"""Three-state region quadtree over a vehicle's sensing square, plus inventories.

A square of 2^L x 2^L cells is split recursively until a block is uniform or
single-cell. Any occupied cell makes a block occupied; an all-free block is
free; anything else is unknown. Every node at levels 0..L-1 is a transmit
candidate (coarsest first); single finest cells are never sent on their own.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .sensing import S_FREE, S_OCC, SensedGrid, cell_value, occupancy_probability

STATE_CHAR = {S_OCC: "#", S_FREE: ".", 0: "?"}


def candidate_cap(levels: int) -> int:
    """Geometric bound on candidate blocks: sum of 4^l for l < levels."""
    return (4 ** levels - 1) // 3


@dataclass
class QuadBlock:
    level: int
    origin: tuple[int, int]    # world cell coords of the block corner
    side: int                  # finest cells per side
    state: int                 # S_OCC / S_FREE / S_UNK
    gamma: float               # seconds at which the block was sensed
    source: int                # vehicle id
    p: float                   # occupancy probability under the source's reliability
    seq: int = 0               # inventory insertion order (eviction tiebreak)


def block_state(cells: np.ndarray) -> int:
    if (cells == S_OCC).any():
        return S_OCC
    if (cells == S_FREE).all():
        return S_FREE
    return 0


def block_value(blk: QuadBlock, mu: float, now: float) -> float:
    return float(cell_value(blk.p, max(now - blk.gamma, 0.0), mu))


def build_quadtree(grid: SensedGrid, levels: int, reliability: float
                   ) -> tuple[list[QuadBlock], list[QuadBlock]]:
    """Decompose a sensing square; returns (leaves, candidate nodes).

    Leaves partition the square (uniform or finest-cell blocks). Candidates are
    every tree node at levels 0..levels-1 in breadth-first order, so coarse
    context precedes fine detail and the list never exceeds candidate_cap.
    """
    if grid.side != 2 ** levels:
        raise ValueError(f"grid side {grid.side} does not match 2^{levels}")
    ox, oy = grid.origin
    now = float(grid.gamma.max(initial=0.0))
    leaves: list[QuadBlock] = []
    nodes: list[QuadBlock] = []

    def make(level, x0, y0, side):
        st = block_state(grid.state[x0:x0 + side, y0:y0 + side])
        return QuadBlock(level=level, origin=(ox + x0, oy + y0), side=side,
                         state=st, gamma=now, source=grid.owner,
                         p=float(occupancy_probability(st, reliability)))

    frontier = [(0, 0, 0, grid.side)]
    while frontier:
        next_frontier = []
        for level, x0, y0, side in frontier:
            blk = make(level, x0, y0, side)
            if level < levels:
                nodes.append(blk)
            sub = grid.state[x0:x0 + side, y0:y0 + side]
            uniform = (sub == sub[0, 0]).all()
            if uniform or level == levels:
                leaves.append(blk)
            else:
                h = side // 2
                for dx in (0, h):
                    for dy in (0, h):
                        next_frontier.append((level + 1, x0 + dx, y0 + dy, h))
        frontier = next_frontier
    assert len(nodes) <= candidate_cap(levels)
    return leaves, nodes


def decompress(leaves: list[QuadBlock], levels: int, origin: tuple[int, int]
               ) -> np.ndarray:
    """Paint leaves back into a 2^levels square; inverse of build_quadtree."""
    side = 2 ** levels
    out = np.zeros((side, side), dtype=np.int8)
    for blk in leaves:
        x0, y0 = blk.origin[0] - origin[0], blk.origin[1] - origin[1]
        out[x0:x0 + blk.side, y0:y0 + blk.side] = blk.state
    return out


def dump_tree(blocks: list[QuadBlock], origin: tuple[int, int]) -> str:
    """JSON dump (level, relative origin, side, state) for golden comparisons."""
    rows = [{"level": b.level, "x": b.origin[0] - origin[0],
             "y": b.origin[1] - origin[1], "side": b.side,
             "state": STATE_CHAR[b.state]} for b in blocks]
    return json.dumps(rows, separators=(",", ":"))


def render_ascii(leaves: list[QuadBlock], levels: int, origin: tuple[int, int]) -> str:
    grid = decompress(leaves, levels, origin)
    return "\n".join("".join(STATE_CHAR[int(s)] for s in grid[:, y])
                     for y in range(grid.shape[1] - 1, -1, -1))


@dataclass
class BlockInventory:
    """Per-vehicle transmit pool: fresh tree nodes plus a capped received backlog."""
    levels: int
    max_past: int = 10
    mu: float = 0.9
    b_c: list[QuadBlock] = field(default_factory=list)
    b_p: list[QuadBlock] = field(default_factory=list)
    _seq: int = 0

    @property
    def width(self) -> int:
        return candidate_cap(self.levels) + self.max_past

    def refresh_current(self, nodes: list[QuadBlock]) -> None:
        self.b_c = list(nodes)

    def apply_received(self, blocks: list[QuadBlock], now: float) -> None:
        """Append to the backlog; evict oldest first (then lowest value) over cap."""
        for blk in blocks:
            blk.seq = self._seq
            self._seq += 1
            self.b_p.append(blk)
        if len(self.b_p) > self.max_past:
            self.b_p.sort(key=lambda b: (b.gamma, block_value(b, self.mu, now), b.seq))
            del self.b_p[:len(self.b_p) - self.max_past]

    def candidates(self) -> list[QuadBlock | None]:
        """Fixed-width candidate list: b_c coarsest-first, then b_p newest-first."""
        out: list[QuadBlock | None] = list(self.b_c[:candidate_cap(self.levels)])
        past = sorted(self.b_p, key=lambda b: (-b.gamma, -b.seq))
        out.extend(past[:self.max_past])
        out.extend([None] * (self.width - len(out)))
        return out
