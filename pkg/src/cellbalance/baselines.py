"""The five comparison methods: fixed rules, adaptive rules, and the three
bank-based selectors (random, exhaustive-best, train-from-scratch)."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .ppo import PpoConfig, evaluate_policy, train_policy
from .simcore import A_MAX, A_MIN, BG_MAX, BG_MIN, N_CELLS, LbParams


class BaselineKind(Enum):
    BASIC_LB = "BasicLB"
    ADAPT_LB = "AdaptLB"
    RAND_PI = "RandPi"
    BEST_PI = "BestPi"
    NEW_PI = "NewPi"


def basic_lb() -> LbParams:
    """Fixed parameters for every pair: a=0 dB, beta=-100 dBm, gamma=-95 dBm."""
    return LbParams.uniform(a=0.0, beta=-100.0, gamma=-95.0)


@dataclass(frozen=True)
class AdaptLbConfig:
    high_util: float = 0.8
    low_util: float = 0.5
    a_step_db: float = 1.0
    bg_step_dbm: float = 2.0


def adapt_lb(observations, prev: LbParams, cfg: AdaptLbConfig = AdaptLbConfig()
             ) -> LbParams:
    """Threshold rule: when cell i is hot and cell j is cool, ease movement
    i -> j by one step (and the reverse when i is cool and j is hot)."""
    util = [o.mean_prb_util for o in observations]
    if any(not (0.0 <= u <= 1.0 + 1e-9) for u in util):
        raise ValueError("utilizations must be in [0, 1]")
    out = prev.copy()
    for i in range(N_CELLS):
        for j in range(N_CELLS):
            if i == j:
                continue
            if util[i] > cfg.high_util and util[j] < cfg.low_util:
                out.a[i, j] -= cfg.a_step_db
                out.beta[i, j] += cfg.bg_step_dbm
                out.gamma[i, j] -= cfg.bg_step_dbm
            elif util[i] < cfg.low_util and util[j] > cfg.high_util:
                out.a[i, j] += cfg.a_step_db
                out.beta[i, j] -= cfg.bg_step_dbm
                out.gamma[i, j] += cfg.bg_step_dbm
    out.a = np.clip(out.a, A_MIN, A_MAX)
    out.beta = np.clip(out.beta, BG_MIN, BG_MAX)
    out.gamma = np.clip(out.gamma, BG_MIN, BG_MAX)
    return out


def rand_pi(bank, seed: int, day: int) -> int:
    """Uniform policy choice, deterministic per (seed, day)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, day]))
    return int(rng.integers(len(bank)))


def best_pi(bank, scenario, days: int, seed: int, **eval_kwargs
            ) -> tuple[int, np.ndarray]:
    """Oracle baseline (not deployable): evaluate every bank policy over the
    same seeded week and return the argmax of the mean scored-day reward.

    Returns (policy_id, reward table of shape (M, days - 1)); day 1 runs the
    fixed rule-based parameters and is not scored.
    """
    if len(bank) == 0:
        raise ValueError("bank must be non-empty")
    table = np.empty((len(bank), days - 1))
    for pid in range(len(bank)):
        day_rewards, _ = evaluate_policy(bank.get(pid), scenario, days, seed,
                                         **eval_kwargs)
        table[pid] = day_rewards[1:]
    means = table.mean(axis=1)
    return int(np.argmax(means)), table


def new_pi(scenario, cfg: PpoConfig, **train_kwargs):
    """Oracle baseline (not deployable): train a fresh policy on the target
    scenario."""
    return train_policy(scenario, cfg, **train_kwargs)
