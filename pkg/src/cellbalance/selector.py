"""Policy selector: dataset collection, classifier training, and the online
day-by-day selection loop.

The classifier maps the previous day's traffic (24 hourly frames of the same
normalized per-cell features the control policy sees) to the index of the
most similar training scenario, whose bank policy is then executed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .envs import (FRAME_LEN, EnvConfig, LoadBalanceEnv, encode_action,
                   frame_from_observations, run_week_frames)
from .metrics import RewardConfig
from .nets import load_arrays, save_arrays
from .simcore import LbParams, SimConfig, SectorTopology

SELECTOR_MAGIC = b"LBSN"
DATASET_MAGIC = b"LBSD"
WINDOW_T = 24
SELECTOR_INPUT = WINDOW_T * FRAME_LEN  # 288

torch.set_default_dtype(torch.float64)


@dataclass(frozen=True)
class SelectorSample:
    features: np.ndarray  # length 288
    label: int
    scenario_id: int
    acting_policy: str    # "BasicLB" or "pi<k>"
    window_start_hour: int


@dataclass
class SelectorDataset:
    x: np.ndarray  # (n, 288)
    y: np.ndarray  # (n,)
    provenance: list[tuple[int, str, int]]
    n_raw_samples: int
    ue_norm: float
    t_ref_mbps: float

    def save(self, path) -> None:
        manifest = {
            "n_raw_samples": self.n_raw_samples,
            "ue_norm": self.ue_norm,
            "t_ref_mbps": self.t_ref_mbps,
            "samples_per_label": {int(k): int(v) for k, v in
                                  zip(*np.unique(self.y, return_counts=True))},
            "provenance": [list(p) for p in self.provenance],
        }
        save_arrays(path, DATASET_MAGIC, [self.x, self.y.astype(np.float64)], manifest)

    @classmethod
    def load(cls, path) -> "SelectorDataset":
        (x, y), manifest = load_arrays(path, DATASET_MAGIC)
        return cls(x=x, y=y.astype(np.int64),
                   provenance=[tuple(p) for p in manifest["provenance"]],
                   n_raw_samples=manifest["n_raw_samples"],
                   ue_norm=manifest["ue_norm"], t_ref_mbps=manifest["t_ref_mbps"])


def sample_counts(n_policies: int, n_scenarios: int, hours: int = 168,
                  window: int = WINDOW_T) -> tuple[int, int]:
    """(raw hourly samples, sliding windows) for (bank policies + BasicLB)
    runs over every scenario; windows never span two runs."""
    runs = (n_policies + 1) * n_scenarios
    return runs * hours, runs * (hours - window + 1)


class SelectorNet(nn.Module):
    """288 -> 128 -> 64 -> 32 -> M classifier; every hidden layer is preceded
    by batch normalization and followed by ReLU; the output is a softmax."""

    HIDDEN = (128, 64, 32)

    def __init__(self, n_classes: int, input_dim: int = SELECTOR_INPUT):
        super().__init__()
        self.n_classes = n_classes
        self.input_dim = input_dim
        dims = (input_dim,) + self.HIDDEN
        layers = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            layers += [nn.BatchNorm1d(d_in), nn.Linear(d_in, d_out), nn.ReLU()]
        layers.append(nn.Linear(self.HIDDEN[-1], n_classes))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    @torch.no_grad()
    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        self.eval()
        x = torch.from_numpy(np.atleast_2d(np.asarray(features, dtype=np.float64)))
        return torch.softmax(self(x), dim=-1).numpy()

    def save(self, path, metadata: dict | None = None) -> None:
        meta = {"n_classes": self.n_classes, "input_dim": self.input_dim,
                "state_keys": list(self.state_dict().keys())}
        meta.update(metadata or {})
        arrays = [v.detach().numpy().astype(np.float64)
                  for v in self.state_dict().values()]
        save_arrays(path, SELECTOR_MAGIC, arrays, meta)

    @classmethod
    def load(cls, path) -> tuple["SelectorNet", dict]:
        arrays, meta = load_arrays(path, SELECTOR_MAGIC)
        net = cls(meta["n_classes"], meta["input_dim"])
        sd = net.state_dict()
        for key, arr in zip(meta["state_keys"], arrays, strict=True):
            sd[key] = torch.from_numpy(arr).to(sd[key].dtype)
        net.load_state_dict(sd)
        return net, meta


# ---------------------------------------------------------------------------
# Dataset collection
# ---------------------------------------------------------------------------

def _run_week_frames(policy, scenario, seed: int, topology, sim_config,
                     env_config, reward_config, hours: int = 168) -> np.ndarray:
    """One week of hourly feature frames under one acting policy
    (``policy=None`` means the fixed rule-based parameters)."""
    return run_week_frames(policy, scenario, seed, topology=topology,
                           sim_config=sim_config, env_config=env_config,
                           reward_config=reward_config, hours=hours)


def collect_dataset(bank, train_set, seed: int = 0,
                    topology: SectorTopology | None = None,
                    sim_config: SimConfig | None = None,
                    env_config: EnvConfig = EnvConfig(),
                    reward_config: RewardConfig | None = None,
                    hours: int = 168) -> SelectorDataset:
    """Run every bank policy plus BasicLB on every training scenario for one
    week; label every sliding window with the scenario's index."""
    actors = [("BasicLB", None)] + [
        (f"pi{pid}", bank.get(pid)) for pid in range(len(bank))
    ]
    xs, ys, prov = [], [], []
    n_raw = 0
    run_idx = 0
    for label, scenario in enumerate(train_set):
        for name, policy in actors:
            run_seed = int(np.random.SeedSequence([seed, run_idx]).generate_state(1)[0])
            run_idx += 1
            frames = _run_week_frames(policy, scenario, run_seed, topology,
                                      sim_config, env_config, reward_config, hours)
            n_raw += frames.shape[0]
            for w in range(hours - WINDOW_T + 1):
                xs.append(frames[w:w + WINDOW_T].ravel())
                ys.append(label)
                prov.append((scenario.id, name, w))
    return SelectorDataset(x=np.array(xs), y=np.array(ys, dtype=np.int64),
                           provenance=prov, n_raw_samples=n_raw,
                           ue_norm=env_config.ue_norm,
                           t_ref_mbps=env_config.t_ref_mbps)


# ---------------------------------------------------------------------------
# Training and inference
# ---------------------------------------------------------------------------

def train_selector(dataset: SelectorDataset, val_fraction: float = 0.3,
                   seed: int = 0, max_epochs: int = 200, batch_size: int = 256,
                   learning_rate: float = 1e-3, patience: int = 10
                   ) -> tuple[SelectorNet, dict]:
    """Cross-entropy training with a random validation split and early
    stopping on the validation-accuracy plateau."""
    x, y = dataset.x, dataset.y
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("dataset must contain at least two classes")
    n = len(y)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(round(val_fraction * n))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if (len(np.unique(y[train_idx])) != len(classes)
            or len(np.unique(y[val_idx])) != len(classes)):
        raise ValueError("every label must appear in both splits")

    torch.manual_seed(seed)
    torch.set_num_threads(1)
    net = SelectorNet(n_classes=int(classes.max()) + 1)
    optim = torch.optim.Adam(net.parameters(), lr=learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    xt = torch.from_numpy(x[train_idx])
    yt = torch.from_numpy(y[train_idx])
    xv = torch.from_numpy(x[val_idx])
    yv = torch.from_numpy(y[val_idx])

    best_val, best_state, best_epoch = -1.0, None, 0
    epochs_run = 0
    for epoch in range(max_epochs):
        epochs_run = epoch + 1
        net.train()
        perm = torch.from_numpy(rng.permutation(len(train_idx)))
        for lo in range(0, len(train_idx), batch_size):
            sel = perm[lo:lo + batch_size]
            optim.zero_grad()
            loss = loss_fn(net(xt[sel]), yt[sel])
            loss.backward()
            optim.step()
        net.eval()
        with torch.no_grad():
            val_acc = float((net(xv).argmax(-1) == yv).to(torch.float64).mean())
        if val_acc > best_val + 1e-12:
            best_val = val_acc
            best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
            best_epoch = epoch
        elif epoch - best_epoch >= patience:
            break
    if best_state is not None:
        net.load_state_dict(best_state)
    net.eval()
    with torch.no_grad():
        train_acc = float((net(xt).argmax(-1) == yt).to(torch.float64).mean())
    report = {"train_accuracy": train_acc, "val_accuracy": best_val,
              "epochs_run": epochs_run, "n_train": len(train_idx),
              "n_val": len(val_idx)}
    return net, report


def check_gradients(net: SelectorNet, x: np.ndarray, y: np.ndarray,
                    n_params: int = 200, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error of autograd vs central finite differences of the
    cross-entropy loss on ``n_params`` randomly sampled parameter coordinates.

    Runs in inference mode so batch-norm statistics are frozen and the loss is
    a pure function of the parameters.
    """
    net.eval()
    xt = torch.from_numpy(np.asarray(x, dtype=np.float64))
    yt = torch.from_numpy(np.asarray(y, dtype=np.int64))
    loss_fn = nn.CrossEntropyLoss()

    def loss_value() -> float:
        with torch.no_grad():
            return float(loss_fn(net(xt), yt))

    net.zero_grad()
    loss_fn(net(xt), yt).backward()
    params = list(net.parameters())
    grads = [p.grad.detach().clone() for p in params]
    sizes = [p.numel() for p in params]
    rng = np.random.default_rng(seed)
    idx = rng.choice(sum(sizes), size=min(n_params, sum(sizes)), replace=False)
    max_rel = 0.0
    with torch.no_grad():
        for flat_i in idx:
            pi, off = 0, int(flat_i)
            while off >= sizes[pi]:
                off -= sizes[pi]
                pi += 1
            p = params[pi].view(-1)
            orig = p[off].item()
            p[off] = orig + h
            lp = loss_value()
            p[off] = orig - h
            lm = loss_value()
            p[off] = orig
            fd = (lp - lm) / (2.0 * h)
            an = grads[pi].view(-1)[off].item()
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            max_rel = max(max_rel, rel)
    return max_rel


def select(net: SelectorNet, last_day_frames: np.ndarray) -> int:
    """Argmax of the softmax over the last 24 hourly frames; ties break to
    the lowest policy id."""
    feats = np.asarray(last_day_frames, dtype=np.float64).ravel()
    if feats.shape != (SELECTOR_INPUT,):
        raise ValueError(f"expected {WINDOW_T} frames of {FRAME_LEN} features")
    if not np.all(np.isfinite(feats)):
        raise ValueError("non-finite selector features")
    probs = net.predict_proba(feats)[0]
    return int(np.argmax(probs))


# ---------------------------------------------------------------------------
# Online selection loop
# ---------------------------------------------------------------------------

@dataclass
class SelectionLog:
    day_rewards: list[float]
    selected: list[int | None]   # per day; None = BasicLB
    records: list[dict]          # per-hour rows

    @property
    def scored_mean_reward(self) -> float:
        return float(np.mean(self.day_rewards[1:]))


def run_selection_loop(net: SelectorNet, bank, scenario, days: int,
                       mode: str = "daily", seed: int = 0,
                       topology: SectorTopology | None = None,
                       sim_config: SimConfig | None = None,
                       env_config: EnvConfig = EnvConfig(),
                       reward_config: RewardConfig | None = None) -> SelectionLog:
    """Day 1 under BasicLB; each later day runs the policy chosen from the
    previous day's 24 frames.  ``first_day_only`` freezes the day-2 choice."""
    if days < 2:
        raise ValueError("selection loop needs at least 2 days")
    if mode not in ("daily", "first_day_only"):
        raise ValueError(f"unknown mode {mode!r}")
    env = LoadBalanceEnv(topology=topology, sim_config=sim_config,
                         env_config=EnvConfig(ue_norm=env_config.ue_norm,
                                              t_ref_mbps=env_config.t_ref_mbps,
                                              horizon_hours=24 * days),
                         reward_config=reward_config)
    state = env.reset(scenario, start_hour=0, seed=seed)
    basic_action = encode_action(LbParams.uniform())
    frames: list[np.ndarray] = []
    day_rewards, selected, records = [], [], []
    current_pid: int | None = None
    for day in range(days):
        if day > 0 and (mode == "daily" or current_pid is None):
            current_pid = select(net, np.stack(frames[-WINDOW_T:]))
        selected.append(current_pid if day > 0 else None)
        policy = None if day == 0 else bank.get(current_pid)
        rs = []
        for hour in range(24):
            a = basic_action if policy is None else policy.deterministic_action(state.vector)
            tr = env.step(a)
            frames.append(frame_from_observations(tr.observations, env.env_config))
            rs.append(tr.r_t)
            records.append({"day": day + 1, "hour": hour, "reward": tr.r_t,
                            "policy_id": selected[-1], "metrics": tr.metrics,
                            "observations": tr.observations})
            state = tr.s_next
        day_rewards.append(float(np.mean(rs)))
    return SelectionLog(day_rewards=day_rewards, selected=selected, records=records)
