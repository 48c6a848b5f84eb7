"""Experiment orchestration: fixed-scenario weeks, the transient multi-segment
run, and report rendering (CSV tables, plots, markdown summary)."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import baselines
from .baselines import AdaptLbConfig, adapt_lb, basic_lb, rand_pi
from .envs import EnvConfig, LoadBalanceEnv, encode_action, frame_from_observations
from .metrics import RewardConfig, compute_reward
from .ppo import evaluate_policy
from .selector import WINDOW_T, SelectionLog, run_selection_loop, select
from .simcore import SimConfig, SectorTopology

FIXED_METHODS = ("BasicLB", "AdaptLB", "RandPi", "BestPi", "Selector",
                 "SelectorFirstDayOnly", "JointPolicy")
TRANSIENT_METHODS = ("BasicLB", "AdaptLB", "Selector", "SelectorFirstDayOnly")
KPI_COLS = ("reward", "g_avg", "g_min", "g_sd", "g_cong")


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple[str, ...] = ("BasicLB", "AdaptLB", "RandPi", "BestPi", "Selector")
    days: int = 7
    segment_length_days: int = 3
    total_days: int = 24
    seeds: tuple[int, ...] = (0,)
    transient_sequence_seed: int = 1234

    def __post_init__(self):
        if not self.methods:
            raise ValueError("methods must be non-empty")
        for m in self.methods:
            if m not in FIXED_METHODS:
                raise ValueError(f"unknown method {m!r}")
        if self.total_days % self.segment_length_days != 0:
            raise ValueError("total_days must divide into whole segments")


@dataclass
class RunContext:
    """Shared artifacts and configuration for one experiment grid."""

    bank: object = None
    selector_net: object = None
    joint_policy: object = None
    topology: SectorTopology | None = None
    sim_config: SimConfig | None = None
    env_config: EnvConfig = EnvConfig()
    reward_config: RewardConfig | None = None

    def eval_kwargs(self) -> dict:
        return {"topology": self.topology, "sim_config": self.sim_config,
                "env_config": self.env_config, "reward_config": self.reward_config}

    def require(self, name: str):
        v = getattr(self, name)
        if v is None:
            raise RuntimeError(
                f"missing artifact {name!r}; build it first (e.g. `cellbalance "
                f"bank build` / `cellbalance selector train`)")
        return v


def _rows_from_records(records, scenario_id, method, seed, policy_id_key=None):
    rows = []
    for r in records:
        m = r["metrics"]
        rows.append({
            "scenario_id": scenario_id, "day": r["day"], "hour": r["hour"],
            "method": method, "policy_id": r.get("policy_id"),
            "g_avg": m.g_avg, "g_min": m.g_min, "g_sd": m.g_sd,
            "g_cong": m.g_cong, "reward": r["reward"], "seed": seed,
        })
    return rows


def _run_rule_week(scenario, days, seed, ctx: RunContext, adaptive: bool,
                   adapt_cfg: AdaptLbConfig = AdaptLbConfig()):
    """BasicLB (fixed) or AdaptLB (hourly threshold adaptation from day 2)."""
    env = LoadBalanceEnv(topology=ctx.topology, sim_config=ctx.sim_config,
                         env_config=EnvConfig(ue_norm=ctx.env_config.ue_norm,
                                              t_ref_mbps=ctx.env_config.t_ref_mbps,
                                              horizon_hours=24 * days),
                         reward_config=ctx.reward_config)
    env.reset(scenario, start_hour=0, seed=seed)
    params = basic_lb()
    day_rewards, records = [], []
    for day in range(days):
        rs = []
        for hour in range(24):
            tr = env.step(encode_action(params))
            rs.append(tr.r_t)
            records.append({"day": day + 1, "hour": hour, "reward": tr.r_t,
                            "policy_id": None, "metrics": tr.metrics,
                            "observations": tr.observations})
            if adaptive and day >= 1:
                params = adapt_lb(tr.observations, params, adapt_cfg)
        day_rewards.append(float(np.mean(rs)))
    return day_rewards, records


def _run_rand_pi_week(bank, scenario, days, seed, ctx: RunContext):
    env = LoadBalanceEnv(topology=ctx.topology, sim_config=ctx.sim_config,
                         env_config=EnvConfig(ue_norm=ctx.env_config.ue_norm,
                                              t_ref_mbps=ctx.env_config.t_ref_mbps,
                                              horizon_hours=24 * days),
                         reward_config=ctx.reward_config)
    state = env.reset(scenario, start_hour=0, seed=seed)
    basic_action = encode_action(basic_lb())
    day_rewards, records = [], []
    for day in range(days):
        pid = rand_pi(bank, seed, day) if day > 0 else None
        policy = bank.get(pid) if pid is not None else None
        rs = []
        for hour in range(24):
            a = basic_action if policy is None else policy.deterministic_action(state.vector)
            tr = env.step(a)
            rs.append(tr.r_t)
            records.append({"day": day + 1, "hour": hour, "reward": tr.r_t,
                            "policy_id": pid, "metrics": tr.metrics,
                            "observations": tr.observations})
            state = tr.s_next
        day_rewards.append(float(np.mean(rs)))
    return day_rewards, records


def run_fixed_experiment(cfg: ExperimentConfig, ctx: RunContext,
                         train_scenarios, test_scenarios) -> pd.DataFrame:
    """Each scenario independently for ``cfg.days``; day 1 is BasicLB for all
    methods; returns the per-hour episode log."""
    rows = []
    for split, scenario_list in (("train", train_scenarios), ("test", test_scenarios)):
        for scenario in scenario_list:
            for seed in cfg.seeds:
                for method in cfg.methods:
                    if method == "BasicLB":
                        _, recs = _run_rule_week(scenario, cfg.days, seed, ctx, False)
                    elif method == "AdaptLB":
                        _, recs = _run_rule_week(scenario, cfg.days, seed, ctx, True)
                    elif method == "RandPi":
                        _, recs = _run_rand_pi_week(ctx.require("bank"), scenario,
                                                    cfg.days, seed, ctx)
                    elif method == "BestPi":
                        bank = ctx.require("bank")
                        pid, _ = baselines.best_pi(bank, scenario, cfg.days, seed,
                                                   **ctx.eval_kwargs())
                        _, eval_recs = evaluate_policy(bank.get(pid), scenario,
                                                       cfg.days, seed,
                                                       **ctx.eval_kwargs())
                        recs = [dict(r, policy_id=(pid if r["day"] > 1 else None))
                                for r in eval_recs]
                    elif method in ("Selector", "SelectorFirstDayOnly"):
                        mode = "daily" if method == "Selector" else "first_day_only"
                        log = run_selection_loop(ctx.require("selector_net"),
                                                 ctx.require("bank"), scenario,
                                                 cfg.days, mode=mode, seed=seed,
                                                 **ctx.eval_kwargs())
                        recs = log.records
                    elif method == "JointPolicy":
                        _, recs = evaluate_policy(ctx.require("joint_policy"),
                                                  scenario, cfg.days, seed,
                                                  **ctx.eval_kwargs())
                    else:  # pragma: no cover
                        raise AssertionError(method)
                    for row in _rows_from_records(recs, scenario.id, method, seed):
                        row["split"] = split
                        rows.append(row)
    return pd.DataFrame(rows)


def summarize_fixed(log: pd.DataFrame) -> dict[str, pd.DataFrame]:
    """Mean of each KPI over scored days (2+), per method, per split."""
    scored = log[log["day"] >= 2]
    out = {}
    for split, grp in scored.groupby("split"):
        out[split] = grp.groupby("method")[list(KPI_COLS)].mean().round(6)
    return out


def per_scenario_rewards(log: pd.DataFrame) -> pd.DataFrame:
    scored = log[log["day"] >= 2]
    return (scored.groupby(["split", "scenario_id", "method"])["reward"]
            .mean().reset_index())


# ---------------------------------------------------------------------------
# Transient experiment
# ---------------------------------------------------------------------------

def sample_transient_sequence(scenario_pool, n_segments: int, seed: int):
    rng = np.random.default_rng(seed)
    return [scenario_pool[int(i)] for i in
            rng.integers(len(scenario_pool), size=n_segments)]


def segment_reference_ids(net, segments, ctx: RunContext, seed: int = 0) -> list[int]:
    """Selector choice given one clean BasicLB day of each segment's scenario,
    used as the switch-recovery reference."""
    from .selector import _run_week_frames
    refs = []
    for scenario in segments:
        frames = _run_week_frames(None, scenario, seed, ctx.topology,
                                  ctx.sim_config, ctx.env_config,
                                  ctx.reward_config, hours=WINDOW_T)
        refs.append(select(net, frames))
    return refs


def run_transient_experiment(cfg: ExperimentConfig, ctx: RunContext,
                             scenario_pool) -> tuple[pd.DataFrame, dict]:
    """Scenario switched every ``segment_length_days``; the simulator resets
    at each boundary (paired seeds across methods); selection state carries
    across segments.  Returns (per-hour log, switch-recovery report)."""
    n_segments = cfg.total_days // cfg.segment_length_days
    rows = []
    recovery = {"per_seed": [], "recovered": 0, "switches": 0}
    methods = tuple(m for m in cfg.methods if m in TRANSIENT_METHODS) or TRANSIENT_METHODS
    for seed in cfg.seeds:
        segments = sample_transient_sequence(
            scenario_pool, n_segments,
            int(np.random.SeedSequence([cfg.transient_sequence_seed, seed])
                .generate_state(1)[0]))
        refs = (segment_reference_ids(ctx.require("selector_net"), segments, ctx)
                if ("Selector" in methods or "SelectorFirstDayOnly" in methods)
                else [None] * n_segments)
        for method in methods:
            log_rows, selections = _run_transient_method(
                method, segments, cfg, ctx, seed)
            rows.extend(log_rows)
            if method == "Selector":
                seed_rec = []
                for s in range(1, n_segments):
                    if segments[s].id == segments[s - 1].id:
                        continue
                    first_day = s * cfg.segment_length_days  # 0-based global day
                    # recovered if the selection on the day after the switch
                    # matches the new segment's reference id
                    ok = (first_day + 1 < cfg.total_days
                          and selections[first_day + 1] == refs[s])
                    seed_rec.append({"segment": s, "scenario_id": segments[s].id,
                                     "reference_id": refs[s],
                                     "selected_next_day":
                                         selections[first_day + 1]
                                         if first_day + 1 < cfg.total_days else None,
                                     "recovered": bool(ok)})
                    recovery["switches"] += 1
                    recovery["recovered"] += int(ok)
                recovery["per_seed"].append({"seed": seed, "switches": seed_rec})
    recovery["recovery_rate"] = (recovery["recovered"] / recovery["switches"]
                                 if recovery["switches"] else None)
    return pd.DataFrame(rows), recovery


def _run_transient_method(method, segments, cfg: ExperimentConfig,
                          ctx: RunContext, seed):
    """One method over the whole transient run.  Returns per-hour log rows and
    the per-global-day selected policy ids (None for rule-based days)."""
    basic_action = encode_action(basic_lb())
    frames: list[np.ndarray] = []
    selections: list[int | None] = []
    rows = []
    params = basic_lb()
    frozen_pid = None
    global_day = 0
    for s, scenario in enumerate(segments):
        env = LoadBalanceEnv(topology=ctx.topology, sim_config=ctx.sim_config,
                             env_config=EnvConfig(
                                 ue_norm=ctx.env_config.ue_norm,
                                 t_ref_mbps=ctx.env_config.t_ref_mbps,
                                 horizon_hours=24 * cfg.segment_length_days),
                             reward_config=ctx.reward_config)
        seg_seed = int(np.random.SeedSequence([seed, 77, s]).generate_state(1)[0])
        state = env.reset(scenario, start_hour=0, seed=seg_seed)
        for _ in range(cfg.segment_length_days):
            pid = None
            if global_day == 0:
                policy = None
            elif method == "BasicLB":
                policy = None
            elif method == "AdaptLB":
                policy = None
            elif method == "Selector":
                pid = select(ctx.require("selector_net"), np.stack(frames[-WINDOW_T:]))
                policy = ctx.require("bank").get(pid)
            elif method == "SelectorFirstDayOnly":
                if frozen_pid is None:
                    frozen_pid = select(ctx.require("selector_net"),
                                        np.stack(frames[-WINDOW_T:]))
                pid = frozen_pid
                policy = ctx.require("bank").get(pid)
            else:  # pragma: no cover
                raise AssertionError(method)
            selections.append(pid)
            for hour in range(24):
                if policy is not None:
                    a = policy.deterministic_action(state.vector)
                elif method == "AdaptLB" and global_day >= 1:
                    a = encode_action(params)
                else:
                    a = basic_action
                tr = env.step(a)
                frames.append(frame_from_observations(tr.observations,
                                                      env.env_config))
                if method == "AdaptLB" and global_day >= 1:
                    params = adapt_lb(tr.observations, params)
                rows.append({"scenario_id": scenario.id, "day": global_day + 1,
                             "hour": hour, "method": method, "policy_id": pid,
                             "g_avg": tr.metrics.g_avg, "g_min": tr.metrics.g_min,
                             "g_sd": tr.metrics.g_sd, "g_cong": tr.metrics.g_cong,
                             "reward": tr.r_t, "seed": seed, "split": "transient"})
                state = tr.s_next
            global_day += 1
    return rows, selections


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def render_report(fixed_log: pd.DataFrame | None, transient_log: pd.DataFrame | None,
                  out_dir: str, recovery: dict | None = None,
                  config_hash: str = "") -> list[str]:
    """Deterministic CSVs, plots, and a markdown summary under out_dir."""
    for sub in ("logs", "tables", "plots"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    written = []

    def _csv(df: pd.DataFrame, rel: str):
        path = os.path.join(out_dir, rel)
        df.to_csv(path, index=False)
        written.append(path)

    summary_lines = ["# Load-balancing experiment report", ""]
    if config_hash:
        summary_lines += [f"Config hash: `{config_hash}`", ""]

    if fixed_log is not None and len(fixed_log):
        _csv(fixed_log, "logs/fixed_episode_log.csv")
        for split, table in summarize_fixed(fixed_log).items():
            _csv(table.reset_index(), f"tables/fixed_summary_{split}.csv")
            summary_lines += [f"## Fixed scenarios ({split})", "",
                              "```", table.to_string(), "```", ""]
            if "Selector" in table.index:
                for base in ("BasicLB", "AdaptLB"):
                    if base in table.index and table.loc[base, "reward"] > 0:
                        imp = 100.0 * (table.loc["Selector", "reward"]
                                       / table.loc[base, "reward"] - 1.0)
                        summary_lines.append(
                            f"- Selector vs {base} ({split}): {imp:+.2f}% reward")
                summary_lines.append("")
        _csv(per_scenario_rewards(fixed_log), "tables/fixed_per_scenario.csv")
        _plot_per_scenario(fixed_log, os.path.join(out_dir, "plots",
                                                   "fixed_per_scenario.png"), written)

    if transient_log is not None and len(transient_log):
        _csv(transient_log, "logs/transient_episode_log.csv")
        daily = (transient_log.groupby(["method", "day"])["reward"]
                 .mean().reset_index())
        _csv(daily, "tables/transient_daily_reward.csv")
        _plot_transient(daily, os.path.join(out_dir, "plots",
                                            "transient_daily_reward.png"), written)
        summary_lines += ["## Transient run: mean reward per day", "", "```",
                          daily.pivot(index="day", columns="method",
                                      values="reward").round(4).to_string(),
                          "```", ""]
        if recovery is not None and recovery.get("switches"):
            summary_lines += [
                f"Switch recovery: {recovery['recovered']}/{recovery['switches']}"
                f" ({100.0 * recovery['recovery_rate']:.0f}%) recovered within one day",
                ""]

    md = os.path.join(out_dir, "summary.md")
    with open(md, "w") as fh:
        fh.write("\n".join(summary_lines))
    written.append(md)
    return written


def _plot_per_scenario(fixed_log, path, written):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    data = per_scenario_rewards(fixed_log)
    methods = sorted(data["method"].unique())
    scenarios = sorted(data["scenario_id"].unique())
    fig, ax = plt.subplots(figsize=(max(6, len(scenarios)), 4))
    width = 0.8 / len(methods)
    for k, m in enumerate(methods):
        sub = data[data["method"] == m].set_index("scenario_id")["reward"]
        vals = [sub.get(s, np.nan) for s in scenarios]
        ax.bar(np.arange(len(scenarios)) + k * width, vals, width, label=m)
    ax.set_xticks(np.arange(len(scenarios)) + 0.4)
    ax.set_xticklabels(scenarios)
    ax.set_xlabel("scenario")
    ax.set_ylabel("mean scored-day reward")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)


def _plot_transient(daily, path, written):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(8, 4))
    for m, grp in daily.groupby("method"):
        ax.plot(grp["day"], grp["reward"], marker="o", markersize=3, label=m)
    ax.set_xlabel("day")
    ax.set_ylabel("mean reward")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
