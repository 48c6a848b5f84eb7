"""Actor-critic PPO (clipped surrogate) over small feed-forward networks.

The policy is a tanh-squashed Gaussian with a state-independent log-std
vector; the value head shares the trunk.  Everything runs in float64 on CPU
so analytic gradients can be verified against central finite differences.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn

from .envs import (ACTION_LEN, STATE_LEN, EnvConfig, LoadBalanceEnv,
                   encode_action)
from .metrics import RewardConfig
from .nets import load_arrays, save_arrays
from .simcore import LbParams, SimConfig, SectorTopology

POLICY_MAGIC = b"LBPN"
LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
SQUASH_EPS = 1e-9

torch.set_default_dtype(torch.float64)


@dataclass(frozen=True)
class PpoConfig:
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    epochs_per_iter: int = 10
    minibatch_size: int = 64
    rollout_hours: int = 240       # per scenario per iteration
    total_interactions: int = 50_000
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    hidden: tuple[int, int] = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must be in (0, 1]")
        if self.clip_ratio <= 0:
            raise ValueError("clip_ratio must be positive")

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True, default=list).encode()
        ).hexdigest()[:16]


class PolicyNet(nn.Module):
    """Shared trunk -> tanh-squashed Gaussian mean + value head."""

    def __init__(self, obs_dim: int = STATE_LEN, act_dim: int = ACTION_LEN,
                 hidden: tuple[int, int] = (64, 64)):
        super().__init__()
        self.obs_dim, self.act_dim, self.hidden = obs_dim, act_dim, tuple(hidden)
        self.trunk = nn.Sequential(
            nn.Linear(obs_dim, hidden[0]), nn.Tanh(),
            nn.Linear(hidden[0], hidden[1]), nn.Tanh(),
        )
        self.mean_head = nn.Linear(hidden[1], act_dim)
        self.value_head = nn.Linear(hidden[1], 1)
        self.log_std = nn.Parameter(torch.full((act_dim,), -0.5))

    def forward(self, obs: torch.Tensor):
        z = self.trunk(obs)
        mean = self.mean_head(z)
        value = self.value_head(z).squeeze(-1)
        log_std = self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, value

    def log_prob(self, mean, log_std, pre_tanh):
        """Log-density of action tanh(pre_tanh) under the squashed Gaussian."""
        std = log_std.exp()
        gauss = -0.5 * (((pre_tanh - mean) / std) ** 2
                        + 2.0 * log_std + math.log(2.0 * math.pi))
        corr = torch.log(1.0 - torch.tanh(pre_tanh) ** 2 + SQUASH_EPS)
        return (gauss - corr).sum(-1)

    @torch.no_grad()
    def sample_action(self, obs_np: np.ndarray, generator: torch.Generator):
        obs = torch.from_numpy(obs_np)
        mean, log_std, value = self(obs)
        eps = torch.randn(mean.shape, generator=generator)
        pre = mean + log_std.exp() * eps
        logp = self.log_prob(mean, log_std, pre)
        return (torch.tanh(pre).numpy(), pre.numpy(), float(logp), float(value))

    @torch.no_grad()
    def deterministic_action(self, obs_np: np.ndarray) -> np.ndarray:
        obs = torch.from_numpy(obs_np)
        mean, _, _ = self(obs)
        return torch.tanh(mean).numpy()

    # -- serialization -----------------------------------------------------
    def to_arrays(self) -> list[np.ndarray]:
        return [p.detach().numpy().copy() for p in self.parameters()]

    def load_from_arrays(self, arrays: list[np.ndarray]) -> None:
        with torch.no_grad():
            for p, a in zip(self.parameters(), arrays, strict=True):
                p.copy_(torch.from_numpy(np.asarray(a)))

    def save(self, path, metadata: dict | None = None) -> None:
        meta = {"obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "hidden": list(self.hidden)}
        meta.update(metadata or {})
        save_arrays(path, POLICY_MAGIC, self.to_arrays(), meta)

    @classmethod
    def load(cls, path) -> tuple["PolicyNet", dict]:
        arrays, meta = load_arrays(path, POLICY_MAGIC)
        net = cls(meta["obs_dim"], meta["act_dim"], tuple(meta["hidden"]))
        net.load_from_arrays(arrays)
        return net, meta


# ---------------------------------------------------------------------------
# Loss and gradient check
# ---------------------------------------------------------------------------

def ppo_loss(net: PolicyNet, batch: dict, cfg: PpoConfig,
             normalize_adv: bool = True) -> torch.Tensor:
    obs = batch["obs"]
    pre = batch["pre_tanh"]
    old_logp = batch["logp"]
    adv = batch["adv"]
    ret = batch["ret"]
    mean, log_std, value = net(obs)
    logp = net.log_prob(mean, log_std, pre)
    ratio = torch.exp(logp - old_logp)
    if normalize_adv:
        adv = (adv - adv.mean()) / torch.clamp(adv.std(), min=1e-8)
    clipped = torch.clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    policy_loss = -torch.min(ratio * adv, clipped * adv).mean()
    value_loss = ((value - ret) ** 2).mean()
    entropy = (log_std + 0.5 * math.log(2.0 * math.pi * math.e)).sum()
    return policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy


def check_gradients(net: PolicyNet, batch: dict, cfg: PpoConfig = PpoConfig(),
                    n_params: int = 200, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error of autograd vs central finite differences on
    ``n_params`` randomly sampled parameter coordinates."""
    params = [p for p in net.parameters()]
    net.zero_grad()
    loss = ppo_loss(net, batch, cfg, normalize_adv=False)
    loss.backward()
    grads = [p.grad.detach().clone() for p in params]
    rng = np.random.default_rng(seed)
    flat_sizes = [p.numel() for p in params]
    total = sum(flat_sizes)
    idx = rng.choice(total, size=min(n_params, total), replace=False)
    max_rel = 0.0
    with torch.no_grad():
        for flat_i in idx:
            pi, off = 0, int(flat_i)
            while off >= flat_sizes[pi]:
                off -= flat_sizes[pi]
                pi += 1
            p = params[pi].view(-1)
            orig = p[off].item()
            p[off] = orig + h
            lp = ppo_loss(net, batch, cfg, normalize_adv=False).item()
            p[off] = orig - h
            lm = ppo_loss(net, batch, cfg, normalize_adv=False).item()
            p[off] = orig
            fd = (lp - lm) / (2.0 * h)
            an = grads[pi].view(-1)[off].item()
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            max_rel = max(max_rel, rel)
    return max_rel


def gae_advantages(rewards, values, dones, last_value, discount, lam):
    """Generalized advantage estimation over one rollout (numpy arrays)."""
    n = len(rewards)
    adv = np.zeros(n)
    next_adv = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + discount * next_value * nonterminal - values[t]
        adv[t] = delta + discount * lam * nonterminal * next_adv
        next_adv = adv[t]
        next_value = values[t]
    returns = adv + values
    return adv, returns


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class _ScenarioStream:
    """Continuing rollout stream over one scenario: resets day-episodes as
    they end, with per-episode seeds derived from (seed, scenario slot)."""

    env: LoadBalanceEnv
    scenario: object
    seed: int
    slot: int
    episode: int = 0
    state: object = None

    def _reset(self):
        seed = int(np.random.SeedSequence(
            [self.seed, self.slot, self.episode]).generate_state(1)[0])
        start_hour = (self.episode * self.env.env_config.horizon_hours) % 168
        self.state = self.env.reset(self.scenario, start_hour=start_hour, seed=seed)
        self.episode += 1

    def collect(self, net: PolicyNet, n_steps: int, gen: torch.Generator,
                cfg: PpoConfig):
        if self.state is None:
            self._reset()
        obs = np.empty((n_steps, STATE_LEN))
        pre = np.empty((n_steps, ACTION_LEN))
        logp = np.empty(n_steps)
        vals = np.empty(n_steps)
        rews = np.empty(n_steps)
        dones = np.zeros(n_steps, dtype=bool)
        ep_rewards = []
        ep_acc = []
        for t in range(n_steps):
            s = self.state.vector
            a, u, lp, v = net.sample_action(s, gen)
            tr = self.env.step(a)
            obs[t], pre[t], logp[t], vals[t] = s, u, lp, v
            rews[t] = tr.r_t
            dones[t] = tr.done
            ep_acc.append(tr.r_t)
            if tr.done:
                ep_rewards.append(float(np.mean(ep_acc)))
                ep_acc = []
                self._reset()
            else:
                self.state = tr.s_next
        with torch.no_grad():
            _, _, last_v = net(torch.from_numpy(self.state.vector))
        adv, ret = gae_advantages(rews, vals, dones, float(last_v),
                                  cfg.discount, cfg.gae_lambda)
        return {"obs": obs, "pre_tanh": pre, "logp": logp,
                "adv": adv, "ret": ret}, ep_rewards


def train_joint_policy(scenarios, cfg: PpoConfig,
                       topology: SectorTopology | None = None,
                       sim_config: SimConfig | None = None,
                       env_config: EnvConfig = EnvConfig(),
                       reward_config: RewardConfig | None = None,
                       net: PolicyNet | None = None
                       ) -> tuple[PolicyNet, list[float]]:
    """PPO over one or more scenarios; each iteration draws an equal-length
    rollout from every scenario and applies one shared update."""
    if not scenarios:
        raise ValueError("need at least one scenario")
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(1)
    if net is None:
        net = PolicyNet(hidden=cfg.hidden)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    optim = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    streams = [
        _ScenarioStream(
            env=LoadBalanceEnv(topology=topology, sim_config=sim_config,
                               env_config=env_config, reward_config=reward_config),
            scenario=s, seed=cfg.seed, slot=k)
        for k, s in enumerate(scenarios)
    ]
    per_iter = cfg.rollout_hours * len(scenarios)
    n_iters = max(1, math.ceil(cfg.total_interactions / per_iter))
    curve = []
    rng = np.random.default_rng(cfg.seed + 2)
    for _ in range(n_iters):
        batches, iter_ep_rewards = [], []
        for st in streams:
            b, eps = st.collect(net, cfg.rollout_hours, gen, cfg)
            batches.append(b)
            iter_ep_rewards.extend(eps)
        batch = {k: np.concatenate([b[k] for b in batches]) for k in batches[0]}
        tensors = {k: torch.from_numpy(v) for k, v in batch.items()}
        n = per_iter
        for _ in range(cfg.epochs_per_iter):
            order = rng.permutation(n)
            for lo in range(0, n, cfg.minibatch_size):
                sel = torch.from_numpy(order[lo:lo + cfg.minibatch_size])
                mb = {k: v[sel] for k, v in tensors.items()}
                loss = ppo_loss(net, mb, cfg)
                if not torch.isfinite(loss):
                    raise FloatingPointError(
                        "PPO loss diverged (non-finite); try a lower learning rate")
                optim.zero_grad()
                loss.backward()
                optim.step()
        curve.append(float(np.mean(iter_ep_rewards)) if iter_ep_rewards else float("nan"))
    return net, curve


def train_policy(scenario, cfg: PpoConfig, **kwargs) -> tuple[PolicyNet, list[float]]:
    """Train one policy on one scenario (single-scenario joint training)."""
    return train_joint_policy([scenario], cfg, **kwargs)


def evaluate_policy(policy: PolicyNet | None, scenario, days: int, seed: int,
                    topology: SectorTopology | None = None,
                    sim_config: SimConfig | None = None,
                    env_config: EnvConfig = EnvConfig(),
                    reward_config: RewardConfig | None = None,
                    first_day_basic: bool = True):
    """Deterministic (mean-action) week-style evaluation.

    Day 1 runs the fixed rule-based parameters when ``first_day_basic``; the
    policy acts on the remaining days.  ``policy=None`` runs the rule-based
    parameters throughout.  Returns (per-day mean rewards, per-hour records).
    """
    env = LoadBalanceEnv(topology=topology, sim_config=sim_config,
                         env_config=EnvConfig(ue_norm=env_config.ue_norm,
                                              t_ref_mbps=env_config.t_ref_mbps,
                                              horizon_hours=24 * days),
                         reward_config=reward_config)
    state = env.reset(scenario, start_hour=0, seed=seed)
    basic_action = encode_action(LbParams.uniform())
    day_rewards = []
    records = []
    for day in range(days):
        rs = []
        for hour in range(24):
            if policy is None or (first_day_basic and day == 0):
                a = basic_action
            else:
                a = policy.deterministic_action(state.vector)
            tr = env.step(a)
            rs.append(tr.r_t)
            records.append({"day": day + 1, "hour": hour, "reward": tr.r_t,
                            "metrics": tr.metrics, "observations": tr.observations})
            state = tr.s_next
        day_rewards.append(float(np.mean(rs)))
    return day_rewards, records
