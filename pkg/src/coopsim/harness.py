"""Training and evaluation drivers: the two-timescale loop, metrics, plot data.

Per episode the RSU re-pairs vehicles and allocates RB pairs once per frame;
vehicles pick send-sets every slot; all agents learn from their own replay
after a warmup, with optional federated averaging of the vehicle nets at frame
boundaries. Evaluation rolls a greedy/random/oracle policy over a freshly
generated trace and reports per-slot vehicular rewards and their CCDF.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .agents import (decode_pairing, decode_rb, rsu_branches, rsu_obs_width,
                     rsu_reward, vehicle_obs_width)
from .config import ExperimentConfig
from .federation import federate
from .oracle import RsuSnapshot, oracle_blocks, oracle_rsu
from .quadtree import candidate_cap
from .rlcore import OutputWidthError, QAgent, flat_action_count, flat_decode
from .satisfaction import objective
from .sim import SimEnv
from .world import generate_trace

log = logging.getLogger("coopsim")


@dataclass
class VehiclePolicy:
    """A vehicle's agent plus the translation between env bits and net actions."""
    agent: QAgent
    width: int
    flat: bool

    def act(self, obs: np.ndarray, greedy: bool = False
            ) -> tuple[np.ndarray, np.ndarray]:
        """Returns (send bits for the env, raw action for replay storage)."""
        raw = self.agent.act(obs, greedy=greedy)
        bits = flat_decode(int(raw[0]), [2] * self.width) if self.flat else raw
        return bits, raw

    def random_bits(self, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, 2, size=self.width)


def candidate_width(cfg: ExperimentConfig) -> int:
    return candidate_cap(cfg.levels) + cfg.max_past_blocks


def build_vehicle_policy(cfg: ExperimentConfig, seed) -> VehiclePolicy:
    width = candidate_width(cfg)
    obs_dim = vehicle_obs_width(width)
    tc = cfg.train(cfg.episodes * cfg.slots_per_episode)
    trunk = tuple(cfg.trunk)
    if cfg.flat_head:
        total = flat_action_count([2] * width)
        if total > cfg.flat_head_guard:
            raise OutputWidthError(
                f"flat head would need {total} outputs for {width} candidate "
                f"slots; guard is {cfg.flat_head_guard}")
        agent = QAgent(obs_dim, [total], tc, seed, trunk, cfg.branch_hidden,
                       dueling=False)
        return VehiclePolicy(agent, width, flat=True)
    agent = QAgent(obs_dim, [2] * width, tc, seed, trunk, cfg.branch_hidden,
                   dueling=True)
    return VehiclePolicy(agent, width, flat=False)


def build_rsu_agent(cfg: ExperimentConfig, seed) -> QAgent:
    tc = cfg.train(cfg.episodes * cfg.frames_per_episode)
    return QAgent(rsu_obs_width(cfg.n_vehicles),
                  rsu_branches(cfg.n_vehicles, cfg.n_rb), tc, seed,
                  tuple(cfg.trunk), cfg.branch_hidden, dueling=True)


def decode_rsu_action(action: np.ndarray, n: int, k: int):
    half = n // 2
    pairs = decode_pairing(action[:half], n)
    rbs = decode_rb(action[half:], pairs, k)
    return pairs, rbs


class Trainer:
    """Owns the env, the agents, and the output files for one training run."""

    def __init__(self, cfg: ExperimentConfig, out_dir: str):
        cfg.validate()
        self.cfg = cfg
        self.out = out_dir
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            fh.write(cfg.to_json())
        ss = np.random.SeedSequence(cfg.seed)
        (self.trace_ss, self.env_ss, self.offset_ss, self.eval_ss,
         self.rsu_ss, *veh_ss) = ss.spawn(5 + cfg.n_vehicles)
        self.trace = generate_trace(cfg.world(), cfg.n_vehicles, cfg.trace_slots,
                                    seed=self.trace_ss)
        self.env = SimEnv(cfg, self.trace, self.env_ss)
        self.offset_rng = np.random.default_rng(self.offset_ss)
        self.rsu = build_rsu_agent(cfg, self.rsu_ss)
        self.vehicles = [build_vehicle_policy(cfg, s) for s in veh_ss]
        self.frame_counter = 0
        self.fed_rows: list[tuple] = []
        # held-out eval suite, fixed for the whole run so consecutive eval
        # points differ only by policy
        child = self.eval_ss.spawn(1)[0]
        self._eval_key = (child.entropy, child.spawn_key)
        hi = self.trace.n_slots - cfg.slots_per_episode
        off_rng = np.random.default_rng(self._eval_ss(0))
        self.eval_offsets = off_rng.integers(0, hi + 1, size=cfg.eval_episodes)

    def _eval_ss(self, k: int) -> np.random.SeedSequence:
        entropy, key = self._eval_key
        return np.random.SeedSequence(entropy=entropy, spawn_key=(*key, k))

    # --- one episode -----------------------------------------------------------

    def play_episode(self, env: SimEnv, offset: int, greedy: bool, learn: bool,
                     metrics: list | None, episode: int) -> dict:
        cfg = self.cfg
        n = cfg.n_vehicles
        env.reset_episode(offset)
        x_slots, z_frames = cfg.slots_per_frame, cfg.frames_per_episode
        pending_v: dict[int, tuple] = {}
        pending_rsu: tuple | None = None
        zero_vobs = np.zeros(vehicle_obs_width(candidate_width(cfg)), np.float32)
        zero_robs = np.zeros(rsu_obs_width(n), np.float32)
        ep_vehicle_rewards: list[float] = []
        ep_rsu_rewards: list[float] = []
        ep_losses: list[float] = []
        last_loss: dict[str, float] = {}

        def fmt_loss(agent_key: str) -> str:
            return f"{last_loss[agent_key]:.6g}" if agent_key in last_loss else ""

        for z in range(z_frames):
            frame_rewards = np.zeros((x_slots, n))
            frame_active = np.zeros((x_slots, n), dtype=bool)
            frame_objs = np.zeros(x_slots)
            rsu_obs = rsu_action = None
            for x in range(x_slots):
                t = z * x_slots + x
                env.step_sense(t)
                if x == 0:
                    rsu_obs = env.rsu_observation(t)
                    if pending_rsu is not None:
                        pobs, pact, prew = pending_rsu
                        if learn:
                            self.rsu.store(pobs, pact, prew, rsu_obs, False)
                            loss = self.rsu.train_if_ready()
                            if loss is not None:
                                ep_losses.append(loss)
                                last_loss["rsu"] = loss
                        pending_rsu = None
                    rsu_action = self.rsu.act(rsu_obs, greedy=greedy)
                    pairs, rbs = decode_rsu_action(rsu_action, n, cfg.n_rb)
                    env.begin_frame(pairs, rbs)
                actors = env.actors(t)
                obs_now = {i: env.vehicle_observation(i, t) for i in actors}
                for i in list(pending_v):
                    pobs, pact, prew = pending_v.pop(i)
                    if learn:
                        pol = self.vehicles[i]
                        if i in obs_now:
                            pol.agent.store(pobs, pact, prew, obs_now[i], False)
                        else:
                            pol.agent.store(pobs, pact, prew, zero_vobs, True)
                        loss = pol.agent.train_if_ready()
                        if loss is not None:
                            ep_losses.append(loss)
                            last_loss[f"v{i}"] = loss
                selections = {}
                raw_actions = {}
                for i in actors:
                    bits, raw = self.vehicles[i].act(obs_now[i], greedy=greedy)
                    selections[i] = bits
                    raw_actions[i] = raw
                res = env.transmit(t, selections)
                rewards = res.rewards
                slot_obj = objective(res.f, env.assoc)
                for i in actors:
                    pending_v[i] = (obs_now[i], raw_actions[i], rewards[i])
                    frame_active[x, i] = True
                frame_rewards[x] = rewards
                frame_objs[x] = slot_obj
                ep_vehicle_rewards.extend(rewards[i] for i in actors)
                if metrics is not None:
                    for i in actors:
                        metrics.append((episode, z, t, f"v{i}",
                                        f"{rewards[i]:.8g}",
                                        f"{self.vehicles[i].agent.epsilon:.6g}",
                                        fmt_loss(f"v{i}"),
                                        f"{res.rates[i, env.partner[i]]:.8g}",
                                        f"{slot_obj:.8g}"))
            r_frame = rsu_reward(frame_rewards, frame_active)
            ep_rsu_rewards.append(r_frame)
            pending_rsu = (rsu_obs, rsu_action, r_frame)
            if metrics is not None:
                metrics.append((episode, z, (z + 1) * x_slots - 1, "rsu",
                                f"{r_frame:.8g}", f"{self.rsu.epsilon:.6g}",
                                fmt_loss("rsu"), "",
                                f"{frame_objs.mean():.8g}"))
            self.frame_counter += 1
            if (learn and cfg.federation
                    and self.frame_counter % cfg.fed_period_frames == 0):
                agents = [p.agent for p in self.vehicles]
                before, after = federate(agents)
                self.fed_rows.append((self.frame_counter, len(agents),
                                      f"{before:.8g}", f"{after:.8g}"))
        # episode ends: close out dangling transitions as terminal
        if learn:
            for i in list(pending_v):
                pobs, pact, prew = pending_v.pop(i)
                self.vehicles[i].agent.store(pobs, pact, prew, zero_vobs, True)
                self.vehicles[i].agent.train_if_ready()
            if pending_rsu is not None:
                pobs, pact, prew = pending_rsu
                self.rsu.store(pobs, pact, prew, zero_robs, True)
                self.rsu.train_if_ready()
        return {
            "vehicle_reward": float(np.mean(ep_vehicle_rewards)) if ep_vehicle_rewards else 0.0,
            "rsu_reward": float(np.mean(ep_rsu_rewards)),
            "loss": float(np.mean(ep_losses)) if ep_losses else math.nan,
        }

    # --- the full run ----------------------------------------------------------

    def train(self) -> dict:
        cfg = self.cfg
        metrics_path = os.path.join(self.out, "metrics.csv")
        eval_path = os.path.join(self.out, "eval.csv")
        hi = self.trace.n_slots - cfg.slots_per_episode
        train_curve = []
        with open(metrics_path, "w", newline="") as mfh, \
                open(eval_path, "w", newline="") as efh:
            mw = csv.writer(mfh)
            mw.writerow(["episode", "frame", "slot", "agent", "reward",
                         "epsilon", "loss", "rate", "objective"])
            ew = csv.writer(efh)
            ew.writerow(["episode", "vehicle", "mean_reward"])
            for ep in range(cfg.episodes):
                offset = int(self.offset_rng.integers(0, hi + 1))
                rows: list[tuple] = []
                stats = self.play_episode(self.env, offset, greedy=False,
                                          learn=True, metrics=rows, episode=ep)
                mw.writerows(rows)
                mfh.flush()
                train_curve.append(stats["vehicle_reward"])
                if (ep + 1) % cfg.eval_period == 0 or ep + 1 == cfg.episodes:
                    per_vehicle = self.evaluate_block()
                    for i, r in enumerate(per_vehicle):
                        ew.writerow([ep, i, f"{r:.8g}"])
                    efh.flush()
                    log.info("episode %d/%d train=%.4f eval=%.4f eps=%.2f",
                             ep + 1, cfg.episodes, stats["vehicle_reward"],
                             float(np.mean(per_vehicle)),
                             self.vehicles[0].agent.epsilon)
                if (ep + 1) % cfg.checkpoint_period == 0 or ep + 1 == cfg.episodes:
                    self.save_checkpoints()
        if self.fed_rows:
            from .federation import write_round_log
            write_round_log(os.path.join(self.out, "fed_rounds.csv"), self.fed_rows)
        return {"train_curve": train_curve, "out": self.out}

    def evaluate_block(self) -> np.ndarray:
        """Greedy episodes over the fixed eval suite; mean reward per vehicle."""
        cfg = self.cfg
        env = SimEnv(cfg, self.trace, self._eval_ss(1))
        totals = np.zeros(cfg.n_vehicles)
        counts = np.zeros(cfg.n_vehicles)
        for offset in self.eval_offsets:
            totals_ep, counts_ep = _greedy_episode(self, env, int(offset))
            totals += totals_ep
            counts += counts_ep
        return totals / np.maximum(counts, 1)

    def save_checkpoints(self) -> None:
        self.rsu.save(os.path.join(self.out, "rsu.ckpt"))
        for i, pol in enumerate(self.vehicles):
            pol.agent.save(os.path.join(self.out, f"vehicle{i}.ckpt"),
                           extra={"flat": pol.flat, "width": pol.width})


def _greedy_episode(tr: Trainer, env: SimEnv, offset: int
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Reward totals/slot counts per vehicle for one greedy episode."""
    cfg = tr.cfg
    n = cfg.n_vehicles
    env.reset_episode(offset)
    totals = np.zeros(n)
    counts = np.zeros(n)
    for t in range(cfg.slots_per_episode):
        env.step_sense(t)
        if t % cfg.slots_per_frame == 0:
            action = tr.rsu.act(env.rsu_observation(t), greedy=True)
            pairs, rbs = decode_rsu_action(action, n, cfg.n_rb)
            env.begin_frame(pairs, rbs)
        actors = env.actors(t)
        selections = {}
        for i in actors:
            bits, _ = tr.vehicles[i].act(env.vehicle_observation(i, t), greedy=True)
            selections[i] = bits
        res = env.transmit(t, selections)
        for i in actors:
            totals[i] += res.rewards[i]
            counts[i] += 1
    return totals, counts


def run_training(cfg: ExperimentConfig, out_dir: str) -> dict:
    return Trainer(cfg, out_dir).train()


# --- standalone evaluation ------------------------------------------------------


def run_eval(cfg: ExperimentConfig, out_dir: str, mode: str,
             checkpoint_dir: str | None = None, slots: int = 20_000,
             seed: int = 1, envelope: bool = False) -> dict:
    """Continuous rollout on a fresh trace; writes rewards.csv + ccdf.csv.

    Modes: trained (greedy from checkpoints), random (uniform actions),
    oracle (exhaustive per-slot content + per-frame pairing/RB search).
    """
    cfg.validate()
    if mode not in ("trained", "random", "oracle"):
        raise ValueError(f"unknown eval mode: {mode}")
    if mode == "oracle" and cfg.fading:
        raise ValueError("oracle evaluation requires fading disabled")
    os.makedirs(out_dir, exist_ok=True)
    n = cfg.n_vehicles
    ss = np.random.SeedSequence(seed)
    trace_ss, env_ss, act_ss = ss.spawn(3)
    n_slots = max(slots, cfg.slots_per_frame)
    trace = generate_trace(cfg.world(), n, n_slots, seed=trace_ss)
    run_cfg = ExperimentConfig(**{**cfg.__dict__,
                                  "trace_slots": n_slots,
                                  "frames_per_episode": n_slots // cfg.slots_per_frame})
    env = SimEnv(run_cfg, trace, env_ss)
    act_rng = np.random.default_rng(act_ss)

    vehicles = rsu = None
    if mode == "trained":
        if checkpoint_dir is None:
            raise ValueError("trained mode needs a checkpoint directory")
        tr_cfg = ExperimentConfig(**{**cfg.__dict__})
        vehicles = [build_vehicle_policy(tr_cfg, s)
                    for s in np.random.SeedSequence(0).spawn(n)]
        rsu = build_rsu_agent(tr_cfg, np.random.SeedSequence(0).spawn(1)[0])
        rsu.load(os.path.join(checkpoint_dir, "rsu.ckpt"))
        for i, pol in enumerate(vehicles):
            pol.agent.load(os.path.join(checkpoint_dir, f"vehicle{i}.ckpt"))
    width = candidate_width(cfg)

    reward_rows: list[tuple] = []
    samples: list[float] = []
    oracle_samples: list[float] = []
    frames = n_slots // cfg.slots_per_frame
    for z in range(frames):
        for x in range(cfg.slots_per_frame):
            t = z * cfg.slots_per_frame + x
            env.step_sense(t)
            if x == 0:
                pairs, rbs = _frame_decision(env, mode, rsu, act_rng, cfg, t)
                env.begin_frame(pairs, rbs)
            actors = env.actors(t)
            rate_preview = env.preview_rates(t) if mode == "oracle" else None
            selections = {}
            for i in actors:
                if mode == "trained":
                    bits, _ = vehicles[i].act(env.vehicle_observation(i, t),
                                              greedy=True)
                elif mode == "random":
                    bits = act_rng.integers(0, 2, size=width)
                else:
                    bits = _oracle_bits(env, i, t, rate_preview)
                selections[i] = bits
            res = env.transmit(t, selections, oracle_envelope=envelope)
            for i in actors:
                r = res.rewards[i]
                samples.append(r)
                row = [t, i, f"{r:.8g}"]
                if envelope:
                    ro = res.f_oracle[i, env.partner[i]] * cfg.cell_m ** 2
                    oracle_samples.append(ro)
                    row.append(f"{ro:.8g}")
                reward_rows.append(tuple(row))
    _write_eval_outputs(out_dir, reward_rows, samples, oracle_samples, envelope)
    summary = {
        "mode": mode, "slots": n_slots,
        "mean_reward": float(np.mean(samples)) if samples else 0.0,
        "reward_samples": len(samples),
    }
    if envelope and oracle_samples:
        summary["mean_oracle_reward"] = float(np.mean(oracle_samples))
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def _frame_decision(env: SimEnv, mode: str, rsu, act_rng, cfg, t):
    n = cfg.n_vehicles
    if mode == "trained":
        action = rsu.act(env.rsu_observation(t), greedy=True)
        return decode_rsu_action(action, n, cfg.n_rb)
    if mode == "random":
        action = np.array([act_rng.integers(j) for j in rsu_branches(n, cfg.n_rb)])
        return decode_rsu_action(action, n, cfg.n_rb)
    snap = RsuSnapshot(positions=env.positions(t), present=env.present(t).copy(),
                       candidates=env.candidates,
                       interest=[env.maps[i].interest_map(env.states[i],
                                                          cfg.t_int_s,
                                                          cfg.mu_per_s,
                                                          env.now(t))
                                 if env.states[i] is not None
                                 else np.zeros_like(env.static_occ, dtype=float)
                                 for i in range(n)],
                       now=env.now(t), mu=cfg.mu_per_s, cell_m=cfg.cell_m,
                       slot_s=cfg.slot_s)
    pairs, rbs, _ = oracle_rsu(snap, env.junction, env.net)
    return pairs, rbs


def _oracle_bits(env: SimEnv, i: int, t: int, rates: np.ndarray) -> np.ndarray:
    cfg = env.cfg
    j = env.partner[i]
    if env.states[j] is None:  # partner absent: nothing will be delivered
        return np.zeros(len(env.candidates[i]), dtype=np.int64)
    budget = int(math.floor(env.carry[i, j] + rates[i, j] + 1e-9))
    interest = env.maps[j].interest_map(env.states[j], cfg.t_int_s, cfg.mu_per_s,
                                        env.now(t))
    bits, _ = oracle_blocks(env.candidates[i], interest, budget, cfg.cell_m,
                            cfg.mu_per_s, env.now(t),
                            max_candidates=len(env.candidates[i]))
    return bits


def _write_eval_outputs(out_dir, reward_rows, samples, oracle_samples, envelope):
    with open(os.path.join(out_dir, "rewards.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["slot", "vehicle", "reward"]
        if envelope:
            header.append("oracle_reward")
        w.writerow(header)
        w.writerows(reward_rows)
    with open(os.path.join(out_dir, "ccdf.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["reward", "ccdf"])
        for val, p in ccdf_table(samples):
            w.writerow([f"{val:.8g}", f"{p:.8g}"])
    if envelope:
        with open(os.path.join(out_dir, "ccdf_oracle.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["reward", "ccdf"])
            for val, p in ccdf_table(oracle_samples):
                w.writerow([f"{val:.8g}", f"{p:.8g}"])


def ccdf_table(samples: list[float]) -> list[tuple[float, float]]:
    """P(X > v) at each distinct sample value v, ascending."""
    if not samples:
        return []
    arr = np.sort(np.asarray(samples))
    n = arr.size
    out = []
    values = np.unique(arr)
    for v in values:
        out.append((float(v), float((arr > v).sum() / n)))
    return out


# --- plot data -------------------------------------------------------------------


def moving_average(series: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean over up to `window` points (shorter at the start)."""
    if window < 1:
        raise ValueError("window must be at least 1")
    out = np.empty(len(series))
    csum = np.cumsum(np.insert(series, 0, 0.0))
    for k in range(len(series)):
        lo = max(0, k - window + 1)
        out[k] = (csum[k + 1] - csum[lo]) / (k + 1 - lo)
    return out


def export_plotdata(metrics_path: str, out_path: str, window: int = 1000) -> None:
    """Smoothed per-episode vehicle reward curve with a 90% across-vehicle band."""
    per_ep: dict[tuple[int, str], list[float]] = {}
    agents = set()
    with open(metrics_path) as fh:
        for row in csv.DictReader(fh):
            if not row["agent"].startswith("v"):
                continue
            key = (int(row["episode"]), row["agent"])
            per_ep.setdefault(key, []).append(float(row["reward"]))
            agents.add(row["agent"])
    if not per_ep:
        raise ValueError(f"{metrics_path}: no vehicle reward rows")
    episodes = sorted({ep for ep, _ in per_ep})
    agents = sorted(agents)
    curves = np.zeros((len(episodes), len(agents)))
    for r, ep in enumerate(episodes):
        for c, ag in enumerate(agents):
            vals = per_ep.get((ep, ag))
            curves[r, c] = np.mean(vals) if vals else 0.0
    smooth = np.column_stack([moving_average(curves[:, c], window)
                              for c in range(len(agents))])
    mean = smooth.mean(axis=1)
    lo = np.percentile(smooth, 5, axis=1)
    hi = np.percentile(smooth, 95, axis=1)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "mean", "p05", "p95"])
        for r, ep in enumerate(episodes):
            w.writerow([ep, f"{mean[r]:.8g}", f"{lo[r]:.8g}", f"{hi[r]:.8g}"])
