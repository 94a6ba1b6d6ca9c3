"""From-scratch branching dueling Q-network with replay, Adam, and checkpoints.

A shared ReLU trunk feeds one state-value head and one advantage branch per
action dimension; branch Q-values aggregate as V + (A - mean A), so output
count grows linearly with dimensions. Branches of equal width are stacked and
evaluated with batched einsums. Backpropagation, Adam, and the replay buffer
are hand-rolled on numpy; no autodiff framework is involved.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

MAGIC = b"BDQ1"


class OutputWidthError(ValueError):
    """A flat action head would need more outputs than the configured guard."""


class ShapeError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 64
    gamma: float = 0.99
    target_sync: int = 1000
    warmup: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.0
    eps_decay_steps: int = 100_000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 10.0
    buffer_capacity: int = 1_000_000
    # multiplies rewards entering the replay buffer; learned Q-values are in
    # scaled units (action ranking is unaffected).  Useful when per-step
    # rewards are orders of magnitude below lr, where Adam's update noise
    # would otherwise swamp the Q-gaps between actions.
    reward_scale: float = 1.0

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        for name in ("lr", "batch", "target_sync", "warmup", "eps_decay_steps",
                     "buffer_capacity", "reward_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def flat_action_count(branches: list[int]) -> int:
    total = 1
    for j in branches:
        total *= j
    return total


def flat_encode(action: np.ndarray, branches: list[int]) -> int:
    """Mixed-radix pack of a per-branch action tuple into one flat index."""
    idx = 0
    for a, j in zip(action, branches):
        idx = idx * j + int(a)
    return idx


def flat_decode(idx: int, branches: list[int]) -> np.ndarray:
    out = np.zeros(len(branches), dtype=np.int64)
    for i in range(len(branches) - 1, -1, -1):
        out[i] = idx % branches[i]
        idx //= branches[i]
    return out


class BdqNetwork:
    """MLP with shared trunk, optional dueling value head, grouped branches."""

    def __init__(self, obs_dim: int, branches: list[int], trunk=(512, 256),
                 branch_hidden: int = 128, dueling: bool = True,
                 dtype=np.float32, rng: np.random.Generator | None = None):
        if not branches:
            raise ShapeError("need at least one action branch")
        self.obs_dim = int(obs_dim)
        self.branches = [int(j) for j in branches]
        self.trunk = tuple(int(w) for w in trunk)
        self.branch_hidden = int(branch_hidden)
        self.dueling = bool(dueling)
        self.dtype = np.dtype(dtype)
        rng = rng or np.random.default_rng(0)

        # group branches by width so same-shaped heads share one stacked tensor
        self.group_widths: list[int] = []
        self.group_members: list[list[int]] = []
        for i, j in enumerate(self.branches):
            if j in self.group_widths:
                self.group_members[self.group_widths.index(j)].append(i)
            else:
                self.group_widths.append(j)
                self.group_members.append([i])

        def init(shape, fan_in, scale=1.0):
            lim = scale / np.sqrt(fan_in)
            return rng.uniform(-lim, lim, size=shape).astype(self.dtype)

        self.params: dict[str, np.ndarray] = {}
        self._order: list[str] = []

        def add(name, arr):
            self.params[name] = arr
            self._order.append(name)

        widths = [self.obs_dim, *self.trunk]
        for li in range(len(self.trunk)):
            add(f"Wt{li}", init((widths[li], widths[li + 1]), widths[li]))
            add(f"bt{li}", np.zeros(widths[li + 1], dtype=self.dtype))
        h = widths[-1]
        bh = self.branch_hidden
        if self.dueling:
            add("Wv0", init((h, bh), h))
            add("bv0", np.zeros(bh, dtype=self.dtype))
            add("Wv1", init((bh, 1), bh, scale=0.01))
            add("bv1", np.zeros(1, dtype=self.dtype))
        for g, (j, members) in enumerate(zip(self.group_widths, self.group_members)):
            gg = len(members)
            add(f"Wa0.{g}", init((gg, h, bh), h))
            add(f"ba0.{g}", np.zeros((gg, bh), dtype=self.dtype))
            add(f"Wa1.{g}", init((gg, bh, j), bh, scale=0.01))
            add(f"ba1.{g}", np.zeros((gg, j), dtype=self.dtype))

    @property
    def n_outputs(self) -> int:
        return (1 if self.dueling else 0) + sum(self.branches)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, x: np.ndarray, want_cache: bool = False):
        """Returns per-group Q arrays [(B, G_g, j_g)] and optionally the cache."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.obs_dim:
            raise ShapeError(f"observation width {x.shape[1]} != {self.obs_dim}")
        p = self.params
        cache = {"x": x, "z": [], "a": []}
        a = x
        for li in range(len(self.trunk)):
            z = a @ p[f"Wt{li}"] + p[f"bt{li}"]
            a = np.maximum(z, 0.0)
            cache["z"].append(z)
            cache["a"].append(a)
        if self.dueling:
            zv = a @ p["Wv0"] + p["bv0"]
            av = np.maximum(zv, 0.0)
            v = av @ p["Wv1"] + p["bv1"]  # (B, 1)
            cache.update(zv=zv, av=av, v=v)
        qs = []
        for g in range(len(self.group_widths)):
            zb = np.einsum("bh,ghk->bgk", a, p[f"Wa0.{g}"]) + p[f"ba0.{g}"]
            ab = np.maximum(zb, 0.0)
            adv = np.einsum("bgk,gkj->bgj", ab, p[f"Wa1.{g}"]) + p[f"ba1.{g}"]
            if self.dueling:
                q = v[:, :, None] + adv - adv.mean(axis=2, keepdims=True)
            else:
                q = adv
            cache[f"zb.{g}"] = zb
            cache[f"ab.{g}"] = ab
            qs.append(q)
        return (qs, cache) if want_cache else qs

    def backward(self, cache, dqs: list[np.ndarray]) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given dL/dQ per group (same shapes as qs)."""
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        a_last = cache["a"][-1] if cache["a"] else cache["x"]
        da = np.zeros_like(a_last)
        dv = None
        if self.dueling:
            dv = np.zeros_like(cache["v"])
        for g, dq in enumerate(dqs):
            if self.dueling:
                dadv = dq - dq.mean(axis=2, keepdims=True)
                dv[:, 0] += dq.sum(axis=(1, 2))
            else:
                dadv = dq
            ab = cache[f"ab.{g}"]
            grads[f"Wa1.{g}"] = np.einsum("bgk,bgj->gkj", ab, dadv)
            grads[f"ba1.{g}"] = dadv.sum(axis=0)
            dab = np.einsum("bgj,gkj->bgk", dadv, p[f"Wa1.{g}"])
            dzb = dab * (cache[f"zb.{g}"] > 0)
            grads[f"Wa0.{g}"] = np.einsum("bh,bgk->ghk", a_last, dzb)
            grads[f"ba0.{g}"] = dzb.sum(axis=0)
            da += np.einsum("bgk,ghk->bh", dzb, p[f"Wa0.{g}"])
        if self.dueling:
            grads["Wv1"] = cache["av"].T @ dv
            grads["bv1"] = dv.sum(axis=0)
            dav = dv @ p["Wv1"].T
            dzv = dav * (cache["zv"] > 0)
            grads["Wv0"] = a_last.T @ dzv
            grads["bv0"] = dzv.sum(axis=0)
            da += dzv @ p["Wv0"].T
        for li in range(len(self.trunk) - 1, -1, -1):
            dz = da * (cache["z"][li] > 0)
            a_prev = cache["a"][li - 1] if li > 0 else cache["x"]
            grads[f"Wt{li}"] = a_prev.T @ dz
            grads[f"bt{li}"] = dz.sum(axis=0)
            da = dz @ p[f"Wt{li}"].T
        return grads

    # --- branch-order helpers -------------------------------------------------

    def gather(self, qs: list[np.ndarray], actions: np.ndarray) -> np.ndarray:
        """Q of the chosen sub-action per branch; (B, J)."""
        b = qs[0].shape[0]
        out = np.zeros((b, len(self.branches)), dtype=qs[0].dtype)
        for g, members in enumerate(self.group_members):
            acts = actions[:, members, None]
            out[:, members] = np.take_along_axis(qs[g], acts, axis=2)[:, :, 0]
        return out

    def argmax_tuple(self, qs: list[np.ndarray]) -> np.ndarray:
        """Per-branch argmax (ties -> lowest index); (B, J)."""
        b = qs[0].shape[0]
        out = np.zeros((b, len(self.branches)), dtype=np.int64)
        for g, members in enumerate(self.group_members):
            out[:, members] = np.argmax(qs[g], axis=2)
        return out

    def scatter(self, actions: np.ndarray, values: np.ndarray) -> list[np.ndarray]:
        """Build dL/dQ group arrays that are `values` at chosen entries, else 0."""
        b = actions.shape[0]
        dqs = [np.zeros((b, len(m), j), dtype=self.dtype)
               for j, m in zip(self.group_widths, self.group_members)]
        for g, members in enumerate(self.group_members):
            np.put_along_axis(dqs[g], actions[:, members, None],
                              values[:, members, None].astype(self.dtype), axis=2)
        return dqs

    # --- parameter plumbing ---------------------------------------------------

    def param_order(self) -> list[str]:
        return list(self._order)

    def get_vector(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self._order])

    def set_vector(self, vec: np.ndarray) -> None:
        off = 0
        for k in self._order:
            p = self.params[k]
            p[...] = vec[off:off + p.size].reshape(p.shape).astype(self.dtype)
            off += p.size
        if off != vec.size:
            raise ShapeError("parameter vector length mismatch")

    def clone(self) -> "BdqNetwork":
        twin = BdqNetwork(self.obs_dim, self.branches, self.trunk,
                          self.branch_hidden, self.dueling, self.dtype)
        twin.copy_from(self)
        return twin

    def copy_from(self, other: "BdqNetwork") -> None:
        for k in self._order:
            self.params[k][...] = other.params[k]


def make_flat_network(obs_dim: int, branches: list[int], max_outputs: int,
                      trunk=(512, 256), branch_hidden: int = 128,
                      dtype=np.float32, rng=None) -> BdqNetwork:
    """Single-head baseline over the joint action space; guarded against blowup."""
    total = flat_action_count(branches)
    if total > max_outputs:
        raise OutputWidthError(
            f"flat head needs {total} outputs for branch widths {branches}; "
            f"guard is {max_outputs}")
    return BdqNetwork(obs_dim, [total], trunk, branch_hidden, dueling=False,
                      dtype=dtype, rng=rng)


# --- loss / targets -----------------------------------------------------------


def td_targets(batch: dict, online: BdqNetwork, target: BdqNetwork,
               gamma: float) -> np.ndarray:
    """Scalar per-sample target: r + gamma * mean_i Q_i^-(s', argmax online)."""
    q_next = online.forward(batch["next_obs"])
    a_star = online.argmax_tuple(q_next)
    q_tgt = target.forward(batch["next_obs"])
    boot = target.gather(q_tgt, a_star).mean(axis=1)
    live = 1.0 - batch["terminal"].astype(np.float64)
    return batch["reward"].astype(np.float64) + gamma * live * boot


def loss_and_grads(net: BdqNetwork, batch: dict, targets: np.ndarray
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """Branch-averaged squared TD error; gradient only through chosen actions."""
    qs, cache = net.forward(batch["obs"], want_cache=True)
    chosen = net.gather(qs, batch["action"])
    err = chosen - targets[:, None].astype(chosen.dtype)
    b, j = err.shape
    loss = float((err ** 2).mean(axis=1).mean())
    dqs = net.scatter(batch["action"], (2.0 / (b * j)) * err)
    return loss, net.backward(cache, dqs)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                        for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


class Adam:
    def __init__(self, net: BdqNetwork, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in net.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in net.params.items()}
        self.t = 0

    def step(self, net: BdqNetwork, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        for k, p in net.params.items():
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            p -= (c.lr * mhat / (np.sqrt(vhat) + c.adam_eps)).astype(p.dtype)


# --- replay -------------------------------------------------------------------


class ReplayBuffer:
    """FIFO ring storing (s, a, r, s', terminal); grows lazily to capacity."""

    def __init__(self, capacity: int, obs_dim: int, n_branches: int):
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.n_branches = n_branches
        self._alloc = 0
        self.count = 0
        self._pos = 0

    def _grow(self, need: int) -> None:
        new = min(max(1024, self._alloc * 2, need), self.capacity)
        if self._alloc == 0:
            self.obs = np.zeros((new, self.obs_dim), dtype=np.float32)
            self.next_obs = np.zeros((new, self.obs_dim), dtype=np.float32)
            self.action = np.zeros((new, self.n_branches), dtype=np.int16)
            self.reward = np.zeros(new, dtype=np.float32)
            self.terminal = np.zeros(new, dtype=bool)
        else:
            for name in ("obs", "next_obs", "action", "reward", "terminal"):
                arr = getattr(self, name)
                grown = np.zeros((new, *arr.shape[1:]), dtype=arr.dtype)
                grown[:self._alloc] = arr
                setattr(self, name, grown)
        self._alloc = new

    def add(self, obs, action, reward, next_obs, terminal) -> None:
        if self._pos >= self._alloc and self._alloc < self.capacity:
            self._grow(self._pos + 1)
        i = self._pos % self.capacity
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.terminal[i] = terminal
        self._pos = (self._pos + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def __len__(self) -> int:
        return self.count

    def sample(self, batch: int, rng: np.random.Generator) -> dict:
        idx = rng.choice(self.count, size=batch, replace=False)
        return {"obs": self.obs[idx], "action": self.action[idx].astype(np.int64),
                "reward": self.reward[idx], "next_obs": self.next_obs[idx],
                "terminal": self.terminal[idx]}


# --- acting -------------------------------------------------------------------


def act_epsilon_greedy(net: BdqNetwork, obs: np.ndarray, eps: float,
                       rng: np.random.Generator) -> np.ndarray:
    """One coin per decision: explore -> uniform per branch, else greedy."""
    if eps > 0.0 and rng.random() < eps:
        return np.array([rng.integers(j) for j in net.branches], dtype=np.int64)
    qs = net.forward(obs)
    return net.argmax_tuple(qs)[0]


# --- checkpoints ----------------------------------------------------------------


def save_checkpoint(net: BdqNetwork, path: str, meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        order = net.param_order()
        fh.write(struct.pack("<I", len(order)))
        for k in order:
            shape = net.params[k].shape
            fh.write(struct.pack("<I", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
        for k in order:
            fh.write(np.ascontiguousarray(net.params[k],
                                          dtype="<f4").tobytes())
    side = {"obs_dim": net.obs_dim, "branches": net.branches,
            "trunk": list(net.trunk), "branch_hidden": net.branch_hidden,
            "dueling": net.dueling, "param_order": net.param_order()}
    side.update(meta or {})
    with open(path + ".json", "w") as fh:
        json.dump(side, fh, indent=1, sort_keys=True)


def load_checkpoint(path: str) -> tuple[BdqNetwork, dict]:
    with open(path + ".json") as fh:
        side = json.load(fh)
    net = BdqNetwork(side["obs_dim"], side["branches"], tuple(side["trunk"]),
                     side["branch_hidden"], side["dueling"])
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ShapeError(f"{path}: not a checkpoint file")
        (count,) = struct.unpack("<I", fh.read(4))
        order = net.param_order()
        if count != len(order):
            raise ShapeError(f"{path}: expected {len(order)} arrays, found {count}")
        shapes = []
        for _ in range(count):
            (nd,) = struct.unpack("<I", fh.read(4))
            shapes.append(struct.unpack(f"<{nd}I", fh.read(4 * nd)))
        for k, shape in zip(order, shapes):
            if tuple(net.params[k].shape) != shape:
                raise ShapeError(f"{path}: shape mismatch on {k}")
            n = int(np.prod(shape))
            data = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
            net.params[k][...] = data
    return net, side


# --- agent wrapper --------------------------------------------------------------


class QAgent:
    """Online/target nets + replay + Adam in one trainable unit."""

    def __init__(self, obs_dim: int, branches: list[int], cfg: TrainConfig,
                 seed: int = 0, trunk=(512, 256), branch_hidden: int = 128,
                 dueling: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.net = BdqNetwork(obs_dim, branches, trunk, branch_hidden, dueling,
                              rng=self.rng)
        self.target = self.net.clone()
        self.buffer = ReplayBuffer(cfg.buffer_capacity, obs_dim, len(branches))
        self.opt = Adam(self.net, cfg)
        self.env_steps = 0
        self.train_steps = 0

    @property
    def epsilon(self) -> float:
        c = self.cfg
        frac = min(self.env_steps / c.eps_decay_steps, 1.0)
        return c.eps_start + (c.eps_end - c.eps_start) * frac

    def act(self, obs: np.ndarray, greedy: bool = False) -> np.ndarray:
        eps = 0.0 if greedy else self.epsilon
        return act_epsilon_greedy(self.net, obs, eps, self.rng)

    def store(self, obs, action, reward, next_obs, terminal) -> None:
        self.buffer.add(obs, action, reward * self.cfg.reward_scale,
                        next_obs, terminal)
        self.env_steps += 1

    def train_if_ready(self) -> float | None:
        c = self.cfg
        if self.env_steps < max(c.warmup, c.batch):
            return None
        batch = self.buffer.sample(c.batch, self.rng)
        y = td_targets(batch, self.net, self.target, c.gamma)
        loss, grads = loss_and_grads(self.net, batch, y)
        clip_grads(grads, c.grad_clip)
        self.opt.step(self.net, grads)
        self.train_steps += 1
        if self.train_steps % c.target_sync == 0:
            self.target.copy_from(self.net)
        return loss

    def save(self, path: str, extra: dict | None = None) -> None:
        meta = {"env_steps": self.env_steps, "train_steps": self.train_steps,
                "train_config": asdict(self.cfg)}
        meta.update(extra or {})
        save_checkpoint(self.net, path, meta)

    def load(self, path: str) -> dict:
        net, side = load_checkpoint(path)
        if net.branches != self.net.branches or net.obs_dim != self.net.obs_dim:
            raise ShapeError("checkpoint dimensions do not match this agent")
        self.net.copy_from(net)
        self.target.copy_from(net)
        self.env_steps = side.get("env_steps", self.env_steps)
        self.train_steps = side.get("train_steps", self.train_steps)
        return side
