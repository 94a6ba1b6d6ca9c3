"""Small factories shared across test modules."""

import numpy as np

from coopsim.quadtree import QuadBlock
from coopsim.sensing import SensedGrid
from coopsim.world import VehicleState, WorldConfig


def world_cfg(**kw) -> WorldConfig:
    cfg = WorldConfig(**kw)
    cfg.validate()
    return cfg


def vehicle(vid=0, pos=(64.0, 64.0), v=10.0, heading=0.0, **kw) -> VehicleState:
    return VehicleState(id=vid, position=np.asarray(pos, dtype=float),
                        velocity=v, heading=heading, **kw)


def grid_from(states, origin=(0, 0), owner=0, gamma_s=0.0) -> SensedGrid:
    """Wrap a square int array as a fully-sensed sensor snapshot."""
    arr = np.asarray(states, dtype=np.int8)
    side = arr.shape[0]
    assert arr.shape == (side, side)
    return SensedGrid(owner=owner, origin=tuple(origin), side=side,
                      state=arr.copy(),
                      gamma=np.full((side, side), float(gamma_s)),
                      sensed=np.ones((side, side), dtype=bool))


def block(origin=(0, 0), side=1, state=1, gamma=0.0, p=1.0, level=0,
          source=0, seq=0) -> QuadBlock:
    return QuadBlock(level=level, origin=tuple(origin), side=side, state=state,
                     gamma=gamma, source=source, p=p, seq=seq)
