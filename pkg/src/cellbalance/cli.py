"""Command-line pipeline: scenario generation/clustering, bank building,
selector training, and the two experiments.

Artifacts live under the output directory: scenarios.json, cluster.json,
bank.lbnk, dataset.lbsd, selector.lbsn, then logs/ tables/ plots/.

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numerical failure.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import baselines, scenarios as scn
from .bank import PolicyBank, build_bank
from .config import AppConfig, load_app_config
from .harness import (RunContext, render_report, run_fixed_experiment,
                      run_transient_experiment)
from .ppo import train_joint_policy
from .selector import (SelectorDataset, SelectorNet, collect_dataset,
                       run_selection_loop, train_selector)

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


class Workspace:
    def __init__(self, cfg: AppConfig, out: str, seed: int | None):
        self.cfg = cfg
        self.out = out
        self.seed = seed
        os.makedirs(out, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def need(self, name: str) -> str:
        p = self.path(name)
        if not os.path.exists(p):
            raise FileNotFoundError(
                f"missing artifact {name}; run the earlier pipeline stage first")
        return p

    def load_split(self):
        with open(self.need("cluster.json")) as fh:
            doc = json.load(fh)
        all_s = scn.load_scenarios(self.need("scenarios.json"))
        by_id = {s.id: s for s in all_s}
        train = [by_id[i] for i in doc["train_ids"]]
        test = [by_id[i] for i in doc["test_ids"]]
        return train, test

    def context(self) -> RunContext:
        ctx = RunContext(**self.cfg.run_context_kwargs())
        if os.path.exists(self.path("bank.lbnk")):
            ctx.bank = PolicyBank.load(self.path("bank.lbnk"))
        if os.path.exists(self.path("selector.lbsn")):
            ctx.selector_net, _ = SelectorNet.load(self.path("selector.lbsn"))
        return ctx


pass_ws = click.make_pass_decorator(Workspace)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="JSON configuration file")
@click.option("--seed", type=int, default=None, help="override pipeline seed")
@click.option("--out", type=click.Path(), default="out", help="output directory")
@click.pass_context
def main(ctx, config_path, seed, out):
    """Cellular load-balancing testbed pipeline."""
    try:
        cfg = load_app_config(config_path)
    except (ValueError, TypeError, KeyError, json.JSONDecodeError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    ctx.obj = Workspace(cfg, out, seed)


def _handle(ws_fn):
    """Shared error-to-exit-code mapping for subcommands."""
    def wrapper(ws, *a, **kw):
        try:
            return ws_fn(ws, *a, **kw)
        except FileNotFoundError as e:
            click.echo(f"missing artifact: {e}", err=True)
            sys.exit(EXIT_MISSING)
        except (ValueError, TypeError) as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except (FloatingPointError, ArithmeticError) as e:
            click.echo(f"numerical failure: {e}", err=True)
            sys.exit(EXIT_NUMERIC)
    wrapper.__name__ = ws_fn.__name__
    return wrapper


# -- scenario ----------------------------------------------------------------

@main.group()
def scenario():
    """Generate, validate, and cluster traffic scenarios."""


@scenario.command("generate")
@pass_ws
@_handle
def scenario_generate(ws):
    g = ws.cfg.scenario_gen
    seed = ws.seed if ws.seed is not None else g.generation_seed
    scenarios = scn.generate_scenario_set(count_per_group=g.count_per_group,
                                          seed=seed)
    scn.save_scenarios(scenarios, ws.path("scenarios.json"))
    click.echo(f"wrote {len(scenarios)} scenarios to {ws.path('scenarios.json')}")


@scenario.command("validate")
@click.argument("file", type=click.Path(exists=True))
@pass_ws
@_handle
def scenario_validate(ws, file):
    scenarios = scn.load_scenarios(file)
    for s in scenarios:
        s.validate()
    click.echo(f"{len(scenarios)} scenarios valid")


@scenario.command("cluster")
@pass_ws
@_handle
def scenario_cluster(ws):
    g = ws.cfg.scenario_gen
    scenarios = scn.load_scenarios(ws.need("scenarios.json"))
    sigs = scn.compute_signatures(scenarios, seed=g.signature_seed,
                                  **ws.cfg.run_context_kwargs())
    labels = scn.cluster_scenarios(sigs, k=g.k_clusters, seed=g.clustering_seed)
    train, test = scn.split_train_test(scenarios, labels, g.per_group_train,
                                       seed=g.split_seed)
    doc = {"labels": {int(s.id): int(l) for s, l in zip(scenarios, labels)},
           "train_ids": [s.id for s in train], "test_ids": [s.id for s in test]}
    with open(ws.path("cluster.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    click.echo(f"clustered into {g.k_clusters} groups; "
               f"train={doc['train_ids']} test={doc['test_ids']}")


# -- bank --------------------------------------------------------------------

@main.group()
def bank():
    """Build and inspect the policy bank."""


@bank.command("build")
@pass_ws
@_handle
def bank_build(ws):
    train, _ = ws.load_split()
    b = build_bank(train, ws.cfg.ppo,
                   recovery_path=ws.path("bank.partial.lbnk"),
                   **ws.cfg.run_context_kwargs())
    b.save(ws.path("bank.lbnk"))
    click.echo(f"trained {len(b)} policies -> {ws.path('bank.lbnk')}")


@bank.command("inspect")
@pass_ws
@_handle
def bank_inspect(ws):
    b = PolicyBank.load(ws.need("bank.lbnk"))
    for e in b.entries:
        tail = e.reward_curve[-1] if e.reward_curve else float("nan")
        click.echo(f"policy {e.policy_id}: scenario {e.scenario_id} "
                   f"group {e.group_label} cfg {e.config_hash} "
                   f"final-iter reward {tail:.4f}")


# -- selector ----------------------------------------------------------------

@main.group()
def selector():
    """Collect data for, train, and evaluate the policy selector."""


@selector.command("collect")
@pass_ws
@_handle
def selector_collect(ws):
    b = PolicyBank.load(ws.need("bank.lbnk"))
    train, _ = ws.load_split()
    ds = collect_dataset(b, train, seed=ws.cfg.selector_seed,
                         **ws.cfg.run_context_kwargs())
    ds.save(ws.path("dataset.lbsd"))
    click.echo(f"{ds.n_raw_samples} raw samples, {len(ds.y)} windows "
               f"-> {ws.path('dataset.lbsd')}")


@selector.command("train")
@pass_ws
@_handle
def selector_train(ws):
    ds = SelectorDataset.load(ws.need("dataset.lbsd"))
    net, report = train_selector(ds, seed=ws.cfg.selector_seed)
    net.save(ws.path("selector.lbsn"), metadata={"report": report})
    with open(ws.path("selector_report.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    click.echo(f"validation accuracy {report['val_accuracy']:.3f} "
               f"-> {ws.path('selector.lbsn')}")


@selector.command("eval")
@click.option("--scenario-id", type=int, required=True)
@click.option("--days", type=int, default=7)
@click.option("--mode", type=click.Choice(["daily", "first_day_only"]),
              default="daily")
@pass_ws
@_handle
def selector_eval(ws, scenario_id, days, mode):
    ctx = ws.context()
    if ctx.bank is None or ctx.selector_net is None:
        raise FileNotFoundError("bank.lbnk and selector.lbsn")
    all_s = scn.load_scenarios(ws.need("scenarios.json"))
    target = next((s for s in all_s if s.id == scenario_id), None)
    if target is None:
        raise ValueError(f"scenario {scenario_id} not found")
    seed = ws.seed if ws.seed is not None else 0
    log = run_selection_loop(ctx.selector_net, ctx.bank, target, days,
                             mode=mode, seed=seed, **ws.cfg.run_context_kwargs())
    click.echo(f"selected ids per day: {log.selected}")
    click.echo(f"per-day mean reward: {[round(r, 4) for r in log.day_rewards]}")
    click.echo(f"scored-day mean: {log.scored_mean_reward:.4f}")


# -- experiment / report -----------------------------------------------------

@main.group()
def experiment():
    """Run the fixed-scenario and transient experiments."""


@experiment.command("fixed")
@pass_ws
@_handle
def experiment_fixed(ws):
    ctx = ws.context()
    train, test = ws.load_split()
    log = run_fixed_experiment(ws.cfg.experiment, ctx, train, test)
    os.makedirs(ws.path("logs"), exist_ok=True)
    log.to_csv(ws.path("logs/fixed_episode_log.csv"), index=False)
    render_report(log, None, ws.out, config_hash=ws.cfg.config_hash())
    click.echo(f"fixed experiment done; report under {ws.out}")


@experiment.command("transient")
@pass_ws
@_handle
def experiment_transient(ws):
    ctx = ws.context()
    train, test = ws.load_split()
    log, recovery = run_transient_experiment(ws.cfg.experiment, ctx, train + test)
    os.makedirs(ws.path("logs"), exist_ok=True)
    log.to_csv(ws.path("logs/transient_episode_log.csv"), index=False)
    with open(ws.path("logs/switch_recovery.json"), "w") as fh:
        json.dump(recovery, fh, indent=1, sort_keys=True, default=str)
    render_report(None, log, ws.out, recovery=recovery,
                  config_hash=ws.cfg.config_hash())
    click.echo(f"transient experiment done; report under {ws.out}")


@main.group()
def report():
    """Re-render reports from stored logs."""


@report.command("render")
@pass_ws
@_handle
def report_render(ws):
    import pandas as pd
    fixed = transient = None
    fp = ws.path("logs/fixed_episode_log.csv")
    tp = ws.path("logs/transient_episode_log.csv")
    if os.path.exists(fp):
        fixed = pd.read_csv(fp)
    if os.path.exists(tp):
        transient = pd.read_csv(tp)
    if fixed is None and transient is None:
        raise FileNotFoundError("no episode logs under logs/")
    written = render_report(fixed, transient, ws.out,
                            config_hash=ws.cfg.config_hash())
    click.echo("\n".join(written))


if __name__ == "__main__":
    main()
