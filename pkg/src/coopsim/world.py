"""Simulated road junction: geometry, vehicle mobility, and ground-truth occupancy.

The world is a square plane discretized into finest cells. Two perpendicular
roads cross at the center, regulated by a fixed-cycle traffic light, with
rectangular buildings filling the four corners (the occluders that create
blind spots). Vehicle motion is lane-constrained: accelerate to a target
speed, brake for red lights and for the vehicle ahead, cross, exit, respawn.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

ARMS = ("NB", "SB", "EB", "WB")  # north/south/east/west-bound travel
ARM_HEADING = {"NB": math.pi / 2, "SB": -math.pi / 2, "EB": 0.0, "WB": math.pi}

# length, width, sampling weight
VEHICLE_DIMS = ((4.5, 1.8, 0.70), (6.5, 2.0, 0.15), (10.0, 2.4, 0.15))


class ConfigError(ValueError):
    """Raised when a configuration violates a documented invariant."""


@dataclass
class WorldConfig:
    extent_m: float = 128.0
    cell_m: float = 4.0
    road_width_ns_m: float = 10.0
    road_width_ew_m: float = 10.0
    stop_line_setback_m: float = 2.0
    building_margin_m: float = 1.0
    light_phase_s: float = 8.0
    slot_s: float = 0.002
    n_max: int = 4
    seed: int = 0
    # mobility
    speed_min: float = 8.0
    speed_max: float = 14.0
    accel: float = 2.5
    brake: float = 4.0
    min_gap_m: float = 2.0
    respawn_gap_slots: int = 0

    def validate(self) -> None:
        if self.road_width_ns_m <= 0 or self.road_width_ew_m <= 0:
            raise ConfigError("road widths must be positive")
        if self.slot_s <= 0:
            raise ConfigError("slot_s must be positive")
        if self.n_max < 2:
            raise ConfigError("n_max must be at least 2")
        n = self.extent_m / self.cell_m
        if abs(n - round(n)) > 1e-9 or round(n) & (round(n) - 1):
            raise ConfigError("extent_m / cell_m must be a power of two")

    @property
    def cells(self) -> int:
        return int(round(self.extent_m / self.cell_m))


@dataclass
class VehicleState:
    id: int
    position: np.ndarray  # (x, y) meters
    velocity: float  # m/s
    heading: float  # radians
    length: float = 4.5
    width: float = 1.8
    reliability: float = 1.0  # lambda_n in (0.5, 1]
    sensing_radius: float = 16.0

    def __post_init__(self):
        if not (0.5 < self.reliability <= 1.0):
            raise ConfigError("sensor reliability must be in (0.5, 1]")
        if self.sensing_radius <= 0:
            raise ConfigError("sensing radius must be positive")


class Junction:
    """Static junction geometry derived from a WorldConfig."""

    def __init__(self, cfg: WorldConfig):
        cfg.validate()
        self.cfg = cfg
        c = cfg.extent_m / 2.0
        self.center = np.array([c, c])
        wns, wew = cfg.road_width_ns_m, cfg.road_width_ew_m
        # junction box: the overlap of the two road rectangles
        self.box = (c - wns / 2, c - wew / 2, c + wns / 2, c + wew / 2)  # x0,y0,x1,y1
        m = cfg.building_margin_m
        e = cfg.extent_m
        x0, y0, x1, y1 = (c - wns / 2 - m, c - wew / 2 - m,
                          c + wns / 2 + m, c + wew / 2 + m)
        self.buildings = [
            (0.0, 0.0, x0, y0),          # SW corner
            (x1, 0.0, e, y0),            # SE
            (0.0, y1, x0, e),            # NW
            (x1, y1, e, e),              # NE
        ]
        # lane centerline offsets (right-hand traffic)
        self.lane_coord = {
            "NB": c + wns / 4, "SB": c - wns / 4,
            "EB": c - wew / 4, "WB": c + wew / 4,
        }
        s = cfg.stop_line_setback_m
        self.stop_progress = {
            "NB": c - wew / 2 - s, "SB": c - wew / 2 - s,
            "EB": c - wns / 2 - s, "WB": c - wns / 2 - s,
        }

    def ns_green(self, t_slot: int) -> bool:
        phase = int((t_slot * self.cfg.slot_s) // self.cfg.light_phase_s)
        return phase % 2 == 0

    def arm_green(self, arm: str, t_slot: int) -> bool:
        ns = self.ns_green(t_slot)
        return ns if arm in ("NB", "SB") else not ns

    def lane_position(self, arm: str, progress: float) -> tuple[float, float]:
        e = self.cfg.extent_m
        k = self.lane_coord[arm]
        if arm == "NB":
            return k, progress
        if arm == "SB":
            return k, e - progress
        if arm == "EB":
            return progress, k
        return e - progress, k

    def static_occupancy(self) -> np.ndarray:
        """Boolean grid of the corner buildings at finest resolution."""
        n = self.cfg.cells
        cell = self.cfg.cell_m
        xs = (np.arange(n) + 0.5) * cell
        cx, cy = np.meshgrid(xs, xs, indexing="ij")  # [ix, iy]
        occ = np.zeros((n, n), dtype=bool)
        for bx0, by0, bx1, by1 in self.buildings:
            occ |= (cx >= bx0) & (cx < bx1) & (cy >= by0) & (cy < by1)
        return occ


@dataclass
class MobilityTrace:
    n_vehicles: int
    n_slots: int
    present: np.ndarray   # (T, n) bool
    x: np.ndarray         # (T, n)
    y: np.ndarray
    v: np.ndarray
    heading: np.ndarray
    length: np.ndarray
    width: np.ndarray

    def vehicle_state(self, vid: int, t: int, reliability: float = 1.0,
                      sensing_radius: float = 16.0) -> VehicleState:
        return VehicleState(
            id=vid,
            position=np.array([self.x[t, vid], self.y[t, vid]]),
            velocity=float(self.v[t, vid]),
            heading=float(self.heading[t, vid]),
            length=float(self.length[t, vid]),
            width=float(self.width[t, vid]),
            reliability=reliability,
            sensing_radius=sensing_radius,
        )


def save_trace(trace: MobilityTrace, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "id", "x", "y", "v", "heading"])
        for t in range(trace.n_slots):
            for i in range(trace.n_vehicles):
                if trace.present[t, i]:
                    w.writerow([t, i, repr(float(trace.x[t, i])),
                                repr(float(trace.y[t, i])),
                                repr(float(trace.v[t, i])),
                                repr(float(trace.heading[t, i]))])


def load_trace(path: str) -> MobilityTrace:
    """Rebuild a trace from CSV; vehicle dimensions revert to the default car."""
    rows = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["slot"]), int(row["id"]), float(row["x"]),
                         float(row["y"]), float(row["v"]), float(row["heading"])))
    if not rows:
        raise ValueError("empty trace file")
    n_slots = max(r[0] for r in rows) + 1
    n_veh = max(r[1] for r in rows) + 1
    tr = _empty_trace(n_veh, n_slots)
    for t, i, x, y, v, hd in rows:
        tr.present[t, i] = True
        tr.x[t, i], tr.y[t, i], tr.v[t, i], tr.heading[t, i] = x, y, v, hd
        tr.length[t, i], tr.width[t, i] = VEHICLE_DIMS[0][0], VEHICLE_DIMS[0][1]
    return tr


def _empty_trace(n_veh: int, n_slots: int) -> MobilityTrace:
    z = lambda: np.zeros((n_slots, n_veh))
    return MobilityTrace(n_veh, n_slots, np.zeros((n_slots, n_veh), dtype=bool),
                         z(), z(), z(), z(), z(), z())


class _Journey:
    __slots__ = ("arm", "target_v", "length", "width", "progress", "v")

    def __init__(self, arm, target_v, length, width):
        self.arm = arm
        self.target_v = target_v
        self.length = length
        self.width = width
        self.progress = 0.0
        self.v = target_v  # enters at speed


def generate_trace(cfg: WorldConfig, n_vehicles: int, n_slots: int,
                   seed: int | None = None) -> MobilityTrace:
    """Lane-constrained kinematic mobility through the junction.

    Each vehicle index is a persistent roster slot that cycles through
    journeys: enter on a random arm at a random target speed, brake for red
    lights and for the leader, cross, exit, then respawn (after an optional
    gap). Deterministic for a fixed (config, seed).
    """
    if n_vehicles < 2:
        raise ConfigError("need at least 2 vehicles")
    jn = Junction(cfg)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    dt = cfg.slot_s
    e = cfg.extent_m
    dims = np.array([(d[0], d[1]) for d in VEHICLE_DIMS])
    dim_p = np.array([d[2] for d in VEHICLE_DIMS])

    def spawn():
        arm = ARMS[rng.integers(len(ARMS))]
        tv = float(rng.uniform(cfg.speed_min, cfg.speed_max))
        di = rng.choice(len(dims), p=dim_p)
        return _Journey(arm, tv, dims[di][0], dims[di][1])

    tr = _empty_trace(n_vehicles, n_slots)
    journeys: list[_Journey | None] = [None] * n_vehicles
    # stagger initial entries so vehicles do not all start at the arm edges
    wait = [int(rng.integers(0, 50)) for _ in range(n_vehicles)]
    for t in range(n_slots):
        # spawn pending vehicles when their wait elapses and the entry is clear
        for i in range(n_vehicles):
            if journeys[i] is None:
                if wait[i] > 0:
                    wait[i] -= 1
                    continue
                j = spawn()
                blocked = any(
                    jj is not None and jj.arm == j.arm
                    and jj.progress < j.length / 2 + jj.length / 2 + cfg.min_gap_m
                    for jj in journeys)
                if blocked:
                    wait[i] = 10
                else:
                    journeys[i] = j
        # advance, lane by lane, front vehicle first
        for arm in ARMS:
            lane = [(j.progress, i) for i, j in enumerate(journeys)
                    if j is not None and j.arm == arm]
            lane.sort(reverse=True)
            green = jn.arm_green(arm, t)
            p_stop = jn.stop_progress[arm]
            leader: _Journey | None = None
            for _, i in lane:
                j = journeys[i]
                stop_at = math.inf
                if not green and j.progress < p_stop - 1e-9:
                    stop_at = p_stop
                if leader is not None:
                    stop_at = min(stop_at, leader.progress
                                  - (leader.length + j.length) / 2 - cfg.min_gap_m)
                v_new = min(j.v + cfg.accel * dt, j.target_v)
                if math.isfinite(stop_at):
                    dist = max(stop_at - j.progress, 0.0)
                    v_new = min(v_new, math.sqrt(2.0 * cfg.brake * dist))
                p_new = j.progress + v_new * dt
                if p_new >= stop_at:
                    p_new, v_new = stop_at, 0.0
                j.progress, j.v = p_new, v_new
                leader = j
        # record and retire exited vehicles
        for i, j in enumerate(journeys):
            if j is None:
                continue
            x, y = jn.lane_position(j.arm, j.progress)
            if j.progress > e:
                journeys[i] = None
                wait[i] = int(cfg.respawn_gap_slots)
                continue
            tr.present[t, i] = True
            tr.x[t, i], tr.y[t, i] = x, y
            tr.v[t, i] = j.v
            tr.heading[t, i] = ARM_HEADING[j.arm]
            tr.length[t, i], tr.width[t, i] = j.length, j.width
    return tr


@dataclass
class GroundTruth:
    occupied: np.ndarray            # (cells, cells) bool, [ix, iy]
    vehicle_cells: dict = field(default_factory=dict)  # vid -> (ix, iy) index arrays


def footprint_cells(x: float, y: float, heading: float, length: float,
                    width: float, cfg: WorldConfig) -> tuple[np.ndarray, np.ndarray]:
    """Grid cells touched by an oriented vehicle rectangle (point-sampled)."""
    cell = cfg.cell_m
    n = cfg.cells
    ux, uy = math.cos(heading), math.sin(heading)
    step = cell / 2.0
    na = max(int(math.ceil(length / step)), 1) + 1
    nb = max(int(math.ceil(width / step)), 1) + 1
    a = np.linspace(-length / 2, length / 2, na)
    b = np.linspace(-width / 2, width / 2, nb)
    aa, bb = np.meshgrid(a, b, indexing="ij")
    px = x + aa * ux - bb * uy
    py = y + aa * uy + bb * ux
    ix = np.floor(px / cell).astype(int)
    iy = np.floor(py / cell).astype(int)
    keep = (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n)
    idx = np.unique(np.stack([ix[keep], iy[keep]], axis=1), axis=0)
    return idx[:, 0], idx[:, 1]


def step_world(junction: Junction, static_occ: np.ndarray, trace: MobilityTrace,
               t: int) -> GroundTruth:
    """Ground-truth occupancy at slot t: buildings plus vehicle footprints."""
    if not (0 <= t < trace.n_slots):
        raise IndexError(f"slot {t} outside trace of length {trace.n_slots}")
    occ = static_occ.copy()
    cells = {}
    cfg = junction.cfg
    for i in range(trace.n_vehicles):
        if not trace.present[t, i]:
            continue
        ix, iy = footprint_cells(trace.x[t, i], trace.y[t, i], trace.heading[t, i],
                                 trace.length[t, i], trace.width[t, i], cfg)
        occ[ix, iy] = True
        cells[i] = (ix, iy)
    return GroundTruth(occupied=occ, vehicle_cells=cells)


def roi_weight(vehicle: VehicleState, x: np.ndarray, t_int: float) -> float:
    """Forward interest weight for one location; 0 outside the speed-scaled RoI."""
    if t_int <= 0:
        raise ValueError("t_int must be positive")
    reach = vehicle.velocity * t_int
    if reach <= 0.0:
        return 0.0
    dx = float(x[0] - vehicle.position[0])
    dy = float(x[1] - vehicle.position[1])
    d = math.hypot(dx, dy)
    if d == 0.0:
        return 1.0
    cos_th = (dx * math.cos(vehicle.heading) + dy * math.sin(vehicle.heading)) / d
    limit = reach * cos_th
    if d > limit:
        return 0.0
    return (limit - d) / limit


def roi_weight_map(vehicle: VehicleState, cfg: WorldConfig, t_int: float) -> np.ndarray:
    """roi_weight evaluated at every cell center; (cells, cells) array."""
    n = cfg.cells
    reach = vehicle.velocity * t_int
    if reach <= 0.0:
        return np.zeros((n, n))
    xs = (np.arange(n) + 0.5) * cfg.cell_m
    dx = xs[:, None] - vehicle.position[0]
    dy = xs[None, :] - vehicle.position[1]
    d = np.hypot(dx, dy)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_th = (dx * math.cos(vehicle.heading) + dy * math.sin(vehicle.heading)) / d
        limit = reach * cos_th
        w = np.where(d <= limit, (limit - d) / limit, 0.0)
    w[d == 0.0] = 1.0
    return w
