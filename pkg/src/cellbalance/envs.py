"""MDP wrapper around the sector simulator.

State: the last 4 hourly frames of per-cell features (active UEs, PRB
utilization, throughput), normalized and flattened to a 48-vector.
Action: 36 values in [-1, 1], one (a, beta, gamma) triple per ordered cell
pair, affinely mapped to the control-parameter bounds.  One env step is one
control interval (one logical hour); episodes default to one day.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import simcore
from .metrics import MetricsRecord, RewardConfig, compute_metrics, compute_reward
from .simcore import (A_MAX, A_MIN, BG_MAX, BG_MIN, N_CELLS, LbParams, SimConfig,
                      SectorTopology, init_state, run_control_interval)

HISTORY_K = 4
FEATURES_PER_CELL = 3
FRAME_LEN = N_CELLS * FEATURES_PER_CELL          # 12
STATE_LEN = HISTORY_K * FRAME_LEN                # 48
ACTION_LEN = (N_CELLS * (N_CELLS - 1)) * 3       # 36

ORDERED_PAIRS = [(i, j) for i in range(N_CELLS) for j in range(N_CELLS) if i != j]


@dataclass(frozen=True)
class EnvConfig:
    ue_norm: float = 30.0
    t_ref_mbps: float = 8.0
    horizon_hours: int = 24


@dataclass(frozen=True)
class EnvState:
    vector: np.ndarray  # length 48, oldest frame first
    hour_of_week: int

    def __post_init__(self):
        if self.vector.shape != (STATE_LEN,):
            raise ValueError(f"state vector must have length {STATE_LEN}")


@dataclass(frozen=True)
class Transition:
    s_t: EnvState
    a_t: np.ndarray
    r_t: float
    s_next: EnvState
    done: bool
    metrics: MetricsRecord
    observations: list


def decode_action(action: np.ndarray) -> LbParams:
    """[-1, 1]^36 -> LbParams; zeros map to the midpoint of every bound."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (ACTION_LEN,):
        raise ValueError(f"action must have length {ACTION_LEN}")
    if not np.all(np.isfinite(action)):
        raise ValueError("action has non-finite entries")
    action = np.clip(action, -1.0, 1.0)
    params = LbParams.uniform(a=0.5 * (A_MIN + A_MAX),
                              beta=0.5 * (BG_MIN + BG_MAX),
                              gamma=0.5 * (BG_MIN + BG_MAX))
    for p, (i, j) in enumerate(ORDERED_PAIRS):
        va, vb, vg = action[3 * p:3 * p + 3]
        params.a[i, j] = A_MIN + (va + 1.0) / 2.0 * (A_MAX - A_MIN)
        params.beta[i, j] = BG_MIN + (vb + 1.0) / 2.0 * (BG_MAX - BG_MIN)
        params.gamma[i, j] = BG_MIN + (vg + 1.0) / 2.0 * (BG_MAX - BG_MIN)
    return params


def encode_action(params: LbParams) -> np.ndarray:
    action = np.empty(ACTION_LEN)
    for p, (i, j) in enumerate(ORDERED_PAIRS):
        action[3 * p] = 2.0 * (params.a[i, j] - A_MIN) / (A_MAX - A_MIN) - 1.0
        action[3 * p + 1] = 2.0 * (params.beta[i, j] - BG_MIN) / (BG_MAX - BG_MIN) - 1.0
        action[3 * p + 2] = 2.0 * (params.gamma[i, j] - BG_MIN) / (BG_MAX - BG_MIN) - 1.0
    return action


def frame_from_observations(observations, env_cfg: EnvConfig) -> np.ndarray:
    """Normalize one hour's per-cell observations into a 12-vector."""
    frame = np.empty(FRAME_LEN)
    for c, o in enumerate(observations):
        frame[3 * c] = o.mean_active_ue / env_cfg.ue_norm
        frame[3 * c + 1] = o.mean_prb_util
        frame[3 * c + 2] = o.throughput_mbps / env_cfg.t_ref_mbps
    return frame


class LoadBalanceEnv:
    """One scenario's control loop: reset, then step once per hour."""

    def __init__(self, topology: SectorTopology | None = None,
                 sim_config: SimConfig | None = None,
                 env_config: EnvConfig = EnvConfig(),
                 reward_config: RewardConfig | None = None):
        self.topology = topology or simcore.default_topology()
        self.sim_config = sim_config or SimConfig()
        self.env_config = env_config
        self.reward_config = reward_config or RewardConfig(
            t_ref_mbps=env_config.t_ref_mbps)
        self._scenario = None
        self._sim = None
        self._history: list[np.ndarray] = []
        self._hour = 0
        self._steps = 0

    def reset(self, scenario, start_hour: int = 0, seed: int = 0) -> EnvState:
        """Seeded reset: 4 warm-up hours under the default rule-based
        parameters fill the history window."""
        if not (0 <= start_hour < scenarios_hours(scenario)):
            raise ValueError("start_hour outside the scenario week")
        self._scenario = scenario
        self._sim = init_state(self.topology, self.sim_config, master_seed=seed)
        self._history = []
        warmup = LbParams.uniform()
        for i in range(HISTORY_K):
            h = (start_hour - HISTORY_K + i) % scenarios_hours(scenario)
            obs, _ = run_control_interval(self._sim, warmup, scenario.hour(h))
            self._history.append(frame_from_observations(obs, self.env_config))
        self._hour = start_hour
        self._steps = 0
        return self._state()

    def _state(self) -> EnvState:
        return EnvState(vector=np.concatenate(self._history),
                        hour_of_week=self._hour % scenarios_hours(self._scenario))

    def step(self, action: np.ndarray) -> Transition:
        if self._sim is None:
            raise RuntimeError("env must be reset before stepping")
        s_t = self._state()
        params = decode_action(action)
        obs, bits = run_control_interval(
            self._sim, params, self._scenario.hour(self._hour))
        m = compute_metrics(bits, self.sim_config.inner_steps_per_hour
                            * self.sim_config.inner_dt_s,
                            self.reward_config.epsilon_mbps)
        r = compute_reward(m, self.reward_config)
        self._history = self._history[1:] + [frame_from_observations(obs, self.env_config)]
        self._hour += 1
        self._steps += 1
        done = self._steps >= self.env_config.horizon_hours
        return Transition(s_t=s_t, a_t=np.asarray(action, dtype=np.float64),
                          r_t=r, s_next=self._state(), done=done,
                          metrics=m, observations=obs)


def scenarios_hours(scenario) -> int:
    return len(scenario.hours)


def run_week_frames(policy, scenario, seed: int,
                    topology: SectorTopology | None = None,
                    sim_config: SimConfig | None = None,
                    env_config: EnvConfig = EnvConfig(),
                    reward_config=None, hours: int = 168) -> np.ndarray:
    """Hourly feature frames from running one acting policy for ``hours``.

    ``policy=None`` runs the fixed rule-based default parameters; otherwise
    ``policy.deterministic_action`` drives every hour.
    """
    env = LoadBalanceEnv(topology=topology, sim_config=sim_config,
                         env_config=EnvConfig(ue_norm=env_config.ue_norm,
                                              t_ref_mbps=env_config.t_ref_mbps,
                                              horizon_hours=hours),
                         reward_config=reward_config)
    state = env.reset(scenario, start_hour=0, seed=seed)
    basic_action = encode_action(LbParams.uniform())
    frames = np.empty((hours, FRAME_LEN))
    for h in range(hours):
        a = basic_action if policy is None else policy.deterministic_action(state.vector)
        tr = env.step(a)
        frames[h] = frame_from_observations(tr.observations, env.env_config)
        state = tr.s_next
    return frames
