"""Frame-synchronous federated averaging of vehicle agents' network weights.

At the end of a round the coordinator averages all participants' parameter
vectors elementwise (64-bit accumulation) and broadcasts the result back;
experiences and optimizer moments stay local.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .rlcore import QAgent, ShapeError


@dataclass
class FedConfig:
    enabled: bool = False
    period_frames: int = 1

    def validate(self) -> None:
        if self.period_frames < 1:
            raise ValueError("federation period must be at least 1 frame")


def aggregate(models: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean of same-shaped parameter vectors."""
    if not models:
        raise ValueError("nothing to aggregate")
    shape = models[0].shape
    for m in models[1:]:
        if m.shape != shape:
            raise ShapeError("model parameter shapes differ")
    acc = np.zeros(shape, dtype=np.float64)
    for m in models:
        acc += m
    return (acc / len(models)).astype(models[0].dtype)


def spread(models: list[np.ndarray]) -> float:
    """Max pairwise L2 distance between participants' parameters."""
    worst = 0.0
    for i in range(len(models)):
        for j in range(i + 1, len(models)):
            worst = max(worst, float(np.linalg.norm(
                models[i].astype(np.float64) - models[j].astype(np.float64))))
    return worst


def federate(agents: list[QAgent]) -> tuple[float, float]:
    """Average the participants' online nets and broadcast; returns the
    parameter spread before and after (after is 0 up to float rounding)."""
    vecs = [a.net.get_vector() for a in agents]
    before = spread(vecs)
    merged = aggregate(vecs)
    for a in agents:
        a.net.set_vector(merged)
    after = spread([a.net.get_vector() for a in agents])
    return before, after


def write_round_log(path: str, rows: list[tuple]) -> None:
    """rows: (frame, participants, spread_before, spread_after)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "participants", "spread_before", "spread_after"])
        for r in rows:
            w.writerow(r)
