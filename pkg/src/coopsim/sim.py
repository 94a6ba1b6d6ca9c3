"""Per-slot simulation environment tying world, sensing, blocks, and radio together.

Within a frame the pairing and RB allocation are frozen; each slot every
present vehicle senses, rebuilds its quadtree candidates, picks blocks, and
transmits to its partner at the channel's block rate (fractional rate carries
over within the frame). Receiver satisfaction is evaluated against the
receiver's interest before fusing the delivered blocks into its map.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .agents import decode_selection, encode_rsu_obs, encode_vehicle_obs
from .channel import build_allocation, classify_los, compute_rates, link_gains
from .config import ExperimentConfig
from .oracle import oracle_blocks
from .quadtree import BlockInventory, build_quadtree
from .satisfaction import choose_delivered, satisfaction
from .sensing import VehicleMap, sense
from .world import Junction, MobilityTrace, step_world


@dataclasses.dataclass
class TransmitResult:
    f: np.ndarray                  # [sender, receiver] raw satisfaction
    rewards: np.ndarray            # per-vehicle scaled feedback
    rates: np.ndarray              # [sender, receiver] blocks/slot this slot
    sat_rows: list                 # (slot, receiver, sender, f, sent, delivered)
    f_oracle: np.ndarray | None    # budget-matched best f per link, if requested


class SimEnv:
    """One rollout context over a mobility trace window."""

    def __init__(self, cfg: ExperimentConfig, trace: MobilityTrace,
                 seed_seq: np.random.SeedSequence):
        cfg.validate()
        self.cfg = cfg
        self.world_cfg = cfg.world()
        self.net = cfg.net()
        self.junction = Junction(self.world_cfg)
        self.static_occ = self.junction.static_occupancy()
        self.trace = trace
        n = cfg.n_vehicles
        kids = seed_seq.spawn(n + 2)
        self.sensor_rngs = [np.random.default_rng(s) for s in kids[:n]]
        self.fading_rng = np.random.default_rng(kids[n])
        self.delivery_rng = np.random.default_rng(kids[n + 1])
        self.offset = 0
        self.maps: list[VehicleMap] = []
        self.inventories: list[BlockInventory] = []
        self.candidates: list[list] = [[] for _ in range(n)]
        self.states: list = [None] * n
        self.pairs: list[tuple[int, int]] = []
        self.rbs: list[tuple[int, int]] = []
        self.assoc = np.zeros((n, n), dtype=np.int8)
        self.alloc = np.zeros((n, n, self.net.n_rb), dtype=np.int8)
        self.partner = np.full(n, -1, dtype=np.int64)
        self.carry = np.zeros((n, n))
        self.collect_channel_rows = False
        self.channel_rows: list[tuple] = []
        self.reset_episode(0)

    # --- episode / frame management -------------------------------------------

    def reset_episode(self, offset: int) -> None:
        cfg = self.cfg
        if offset + cfg.slots_per_episode > self.trace.n_slots:
            raise ValueError("episode window exceeds trace length")
        self.offset = offset
        n = cfg.n_vehicles
        self.maps = [VehicleMap(self.world_cfg, i) for i in range(n)]
        self.inventories = [BlockInventory(cfg.levels, cfg.max_past_blocks,
                                           cfg.mu_per_s) for _ in range(n)]
        self.candidates = [[] for _ in range(n)]
        self.states = [None] * n
        self.pairs, self.rbs = [], []
        self.assoc[:] = 0
        self.alloc[:] = 0
        self.partner[:] = -1
        self.carry[:] = 0.0

    def begin_frame(self, pairs: list[tuple[int, int]],
                    rbs: list[tuple[int, int]]) -> None:
        n = self.cfg.n_vehicles
        self.pairs, self.rbs = list(pairs), list(rbs)
        self.assoc, self.alloc = build_allocation(pairs, rbs, n, self.net.n_rb)
        self.partner[:] = -1
        for a, b in pairs:
            self.partner[a], self.partner[b] = b, a
        self.carry[:] = 0.0

    # --- per-slot pipeline -----------------------------------------------------

    def t_abs(self, t: int) -> int:
        return self.offset + t

    def now(self, t: int) -> float:
        return self.t_abs(t) * self.cfg.slot_s

    def present(self, t: int) -> np.ndarray:
        return self.trace.present[self.t_abs(t)]

    def positions(self, t: int) -> np.ndarray:
        ta = self.t_abs(t)
        return np.stack([self.trace.x[ta], self.trace.y[ta]], axis=1)

    def rsu_observation(self, t: int) -> np.ndarray:
        ta = self.t_abs(t)
        return encode_rsu_obs(self.positions(t), self.trace.v[ta],
                              self.trace.present[ta], self.world_cfg)

    def step_sense(self, t: int) -> None:
        """Advance ground truth and refresh every present vehicle's view."""
        cfg = self.cfg
        ta = self.t_abs(t)
        gt = step_world(self.junction, self.static_occ, self.trace, ta)
        self.ground_truth = gt
        for i in range(cfg.n_vehicles):
            if not self.trace.present[ta, i]:
                self.states[i] = None
                self.candidates[i] = [None] * self.inventories[i].width
                continue
            st = self.trace.vehicle_state(i, ta, cfg.reliability, cfg.radius)
            self.states[i] = st
            grid = sense(st, gt.occupied, gt.vehicle_cells.get(i), self.world_cfg,
                         cfg.levels, ta, self.sensor_rngs[i])
            self.maps[i].integrate(grid, cfg.reliability)
            _, nodes = build_quadtree(grid, cfg.levels, cfg.reliability)
            self.inventories[i].refresh_current(nodes)
            self.candidates[i] = self.inventories[i].candidates()

    def vehicle_observation(self, i: int, t: int) -> np.ndarray:
        peer = self.states[self.partner[i]] if self.partner[i] >= 0 else None
        return encode_vehicle_obs(self.states[i], peer, self.candidates[i],
                                  self.cfg.levels, self.world_cfg,
                                  self.cfg.mu_per_s, self.now(t))

    def actors(self, t: int) -> list[int]:
        """Vehicles that act this slot: present and paired with a present partner."""
        pres = self.present(t)
        return [i for i in range(self.cfg.n_vehicles)
                if pres[i] and self.partner[i] >= 0]

    def preview_rates(self, t: int) -> np.ndarray:
        """This slot's rates without consuming randomness (fading must be off)."""
        if self.net.fading:
            raise ValueError("rate preview requires fading disabled")
        gains = link_gains(self.positions(t), self.present(t), self.junction,
                           self.net, np.random.default_rng(0))
        rates, _ = compute_rates(self.assoc, self.alloc, gains, self.net,
                                 self.cfg.slot_s)
        return rates

    def transmit(self, t: int, selections: dict[int, np.ndarray],
                 oracle_envelope: bool = False) -> TransmitResult:
        """Deliver selected blocks over the current allocation.

        f[s, r] is receiver r's satisfaction with sender s's delivery (raw);
        rewards are the scaled per-vehicle feedbacks; f_oracle is the per-link
        best achievable satisfaction under the same realized budgets.
        """
        cfg = self.cfg
        n = cfg.n_vehicles
        now = self.now(t)
        pres = self.present(t)
        gains = link_gains(self.positions(t), pres, self.junction, self.net,
                           self.fading_rng)
        rates, interf = compute_rates(self.assoc, self.alloc, gains, self.net,
                                      cfg.slot_s)
        receivers = {r for a, b in self.pairs for r in (a, b) if pres[r]}
        interest = {}
        for r in receivers:
            interest[r] = self.maps[r].interest_map(self.states[r], cfg.t_int_s,
                                                    cfg.mu_per_s, now)
        f = np.zeros((n, n))
        f_oracle = np.zeros((n, n)) if oracle_envelope else None
        sat_rows = []
        pending = []  # fusion deferred so both directions see pre-exchange maps
        for a, b in self.pairs:
            for s, r in ((a, b), (b, a)):
                if not (pres[s] and pres[r]):
                    continue
                self.carry[s, r] += rates[s, r]
                chosen = decode_selection(
                    selections.get(s, np.zeros(len(self.candidates[s]))),
                    self.candidates[s])
                budget = int(math.floor(self.carry[s, r] + 1e-9))
                delivered = choose_delivered(chosen, budget, self.delivery_rng)
                self.carry[s, r] -= len(delivered)
                f[s, r] = satisfaction(delivered, interest[r], cfg.cell_m,
                                       cfg.mu_per_s, now)
                if oracle_envelope:
                    _, f_oracle[s, r] = oracle_blocks(
                        self.candidates[s], interest[r], budget, cfg.cell_m,
                        cfg.mu_per_s, now,
                        max_candidates=len(self.candidates[s]))
                pending.append((s, r, delivered))
                sat_rows.append((self.t_abs(t), r, s, f[s, r],
                                 len(chosen), len(delivered)))
                if self.collect_channel_rows:
                    self._channel_row(t, s, r, gains, rates, interf)
        for s, r, delivered in pending:
            for blk in delivered:
                self.maps[r].fuse_block(blk.origin, blk.side, blk.state, blk.p,
                                        blk.gamma, now, cfg.mu_per_s)
            self.inventories[r].apply_received(
                [dataclasses.replace(blk) for blk in delivered], now)
        rewards = np.zeros(n)
        for i in range(n):
            if pres[i] and self.partner[i] >= 0:
                rewards[i] = f[i, self.partner[i]] * cfg.cell_m ** 2
        return TransmitResult(f, rewards, rates, sat_rows, f_oracle)

    def _channel_row(self, t, s, r, gains, rates, interf) -> None:
        ks = np.nonzero(self.alloc[s, r])[0]
        pos = self.positions(t)
        cls = classify_los(pos[s], pos[r], self.junction)
        for k in ks:
            h = gains[s, r, k]
            h_db = 10.0 * math.log10(h) if h > 0 else float("-inf")
            i_w = interf[s, r]
            i_dbm = 10.0 * math.log10(i_w * 1e3) if i_w > 0 else float("-inf")
            self.channel_rows.append(
                (self.t_abs(t), s, r, int(k), cls,
                 f"{h_db:.3f}", f"{i_dbm:.3f}", f"{rates[s, r]:.6f}"))


def make_env(cfg: ExperimentConfig, trace: MobilityTrace, seed: int) -> SimEnv:
    return SimEnv(cfg, trace, np.random.SeedSequence(seed))
