"""Synthetic traffic scenarios: generation, daily signatures, clustering, splits.

Scenarios are one-week (168 hour) profiles drawn from three archetypes:
group 1 concentrates load in the near band where cell 0 is the strongest
server, group 2 in the far band where cell 3 is strongest, and group 3 is
light traffic throughout.  Each scenario carries its own fixed per-hour
jitter so that its weekly fingerprint is identifiable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

INTERARRIVAL_MS_RANGE = (10.0, 320.0)
PACKET_SIZE_KB_RANGE = (50.0, 2000.0)
HOURS_PER_WEEK = 168
SIGNATURE_LEN = 24 * 4 * 3


@dataclass(frozen=True)
class HourProfile:
    ue_count: int
    hotspot_regions: tuple  # ((x, y), radius_m, ue_fraction) tuples
    mean_interarrival_ms: float
    packet_size_range_kb: tuple[float, float]

    def validate(self) -> None:
        if self.ue_count < 0:
            raise ValueError("ue_count must be nonnegative")
        lo, hi = INTERARRIVAL_MS_RANGE
        if not (lo <= self.mean_interarrival_ms <= hi):
            raise ValueError(f"mean_interarrival_ms outside [{lo}, {hi}]")
        plo, phi = self.packet_size_range_kb
        if not (PACKET_SIZE_KB_RANGE[0] <= plo <= phi <= PACKET_SIZE_KB_RANGE[1]):
            raise ValueError("packet_size_range_kb outside allowed range")
        total_frac = sum(frac for _, _, frac in self.hotspot_regions)
        if total_frac > 1.0 + 1e-9:
            raise ValueError("hotspot fractions sum above 1")


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    hours: tuple  # 168 HourProfiles
    rng_seed: int
    group_hint: int | None = None

    def __post_init__(self):
        if len(self.hours) != HOURS_PER_WEEK:
            raise ValueError(f"a scenario must define {HOURS_PER_WEEK} hourly profiles")

    def validate(self) -> None:
        for h in self.hours:
            h.validate()

    def hour(self, global_hour: int) -> HourProfile:
        return self.hours[global_hour % HOURS_PER_WEEK]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "group_hint": self.group_hint,
            "rng_seed": self.rng_seed,
            "hours": [
                {
                    "ue_count": h.ue_count,
                    "hotspots": [
                        {"center_m": list(c), "radius_m": r, "ue_fraction": f}
                        for c, r, f in h.hotspot_regions
                    ],
                    "mean_interarrival_ms": h.mean_interarrival_ms,
                    "packet_size_range_kb": list(h.packet_size_range_kb),
                }
                for h in self.hours
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ScenarioSpec":
        hours = tuple(
            HourProfile(
                ue_count=h["ue_count"],
                hotspot_regions=tuple(
                    (tuple(s["center_m"]), s["radius_m"], s["ue_fraction"])
                    for s in h["hotspots"]
                ),
                mean_interarrival_ms=h["mean_interarrival_ms"],
                packet_size_range_kb=tuple(h["packet_size_range_kb"]),
            )
            for h in doc["hours"]
        )
        return cls(id=doc["id"], hours=hours, rng_seed=doc["rng_seed"],
                   group_hint=doc.get("group_hint"))


def save_scenarios(scenarios, path) -> None:
    with open(path, "w") as fh:
        json.dump([s.to_json() for s in scenarios], fh)


def load_scenarios(path) -> list[ScenarioSpec]:
    with open(path) as fh:
        return [ScenarioSpec.from_json(d) for d in json.load(fh)]


@dataclass(frozen=True)
class DailyTrafficSignature:
    scenario_id: int
    features: np.ndarray  # length 288: 24 h x 4 cells x 3 features

    def __post_init__(self):
        if self.features.shape != (SIGNATURE_LEN,):
            raise ValueError(f"signature must have length {SIGNATURE_LEN}")


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupArchetype:
    """Traffic shape of one scenario group."""

    name: str
    ue_base: float             # overnight population
    ue_peak: float             # additional population at the daily peak
    hotspot_band_m: tuple[float, float]   # radial band for the hotspot center
    hotspot_radius_m: float
    hotspot_fraction: float
    interarrival_peak_ms: float   # busiest-hour mean inter-arrival
    interarrival_night_ms: float
    packet_size_range_kb: tuple[float, float]


def default_archetypes() -> tuple[GroupArchetype, ...]:
    return (
        GroupArchetype("high-traffic-near-cell0", 8.0, 26.0, (15.0, 55.0), 30.0,
                       0.6, 140.0, 320.0, (50.0, 300.0)),
        GroupArchetype("high-traffic-near-cell3", 8.0, 26.0, (350.0, 550.0), 80.0,
                       0.6, 140.0, 320.0, (50.0, 300.0)),
        GroupArchetype("low-traffic", 3.0, 6.0, (60.0, 300.0), 60.0,
                       0.3, 280.0, 320.0, (50.0, 200.0)),
    )


def _diurnal(hour_of_day: int) -> float:
    """0 at night, 1 at the early-evening peak."""
    return 0.5 * (1.0 - math.cos(2.0 * math.pi * (hour_of_day - 4) / 24.0))


def generate_scenario(scenario_id: int, group: int, arch: GroupArchetype,
                      seed: int) -> ScenarioSpec:
    rng = np.random.default_rng(seed)
    # per-scenario identity, drawn once: scenarios of one group share the
    # archetype but differ in daily phase, magnitude, and hotspot placement,
    # so each has a recognizable weekly fingerprint
    phase_h = rng.uniform(-4.0, 4.0)
    ue_scale = rng.uniform(0.75, 1.3)
    ia_scale = rng.uniform(0.85, 1.2)
    r = rng.uniform(*arch.hotspot_band_m)
    th = rng.uniform(0.1, math.pi / 2 - 0.1)  # keep the center inside the arena
    center = (r * math.cos(th), r * math.sin(th))
    hours = []
    for h in range(HOURS_PER_WEEK):
        level = _diurnal((h - phase_h) % 24)
        level = min(1.0, max(0.0, level + rng.normal(0.0, 0.05)))
        ue = max(1, int(round(ue_scale * (arch.ue_base + arch.ue_peak * level))))
        ia = arch.interarrival_night_ms + (arch.interarrival_peak_ms
                                           - arch.interarrival_night_ms) * level
        ia = float(np.clip(ia * ia_scale * (1.0 + rng.normal(0.0, 0.03)),
                           *INTERARRIVAL_MS_RANGE))
        hours.append(HourProfile(
            ue_count=ue,
            hotspot_regions=(((center, arch.hotspot_radius_m, arch.hotspot_fraction),)
                             if arch.hotspot_fraction > 0 else ()),
            mean_interarrival_ms=ia,
            packet_size_range_kb=arch.packet_size_range_kb,
        ))
    return ScenarioSpec(id=scenario_id, hours=tuple(hours), rng_seed=seed,
                        group_hint=group)


def generate_scenario_set(archetypes=None, count_per_group: int = 7,
                          seed: int = 0) -> list[ScenarioSpec]:
    """One list of scenarios, ``count_per_group`` per archetype, ids dense."""
    if archetypes is None:
        archetypes = default_archetypes()
    if count_per_group < 1:
        raise ValueError("count_per_group must be >= 1")
    ss = np.random.SeedSequence(seed)
    child_seeds = ss.generate_state(len(archetypes) * count_per_group)
    out = []
    sid = 0
    for g, arch in enumerate(archetypes, start=1):
        for _ in range(count_per_group):
            out.append(generate_scenario(sid, g, arch, int(child_seeds[sid])))
            sid += 1
    return out


def compute_signatures(scenario_list, seed: int = 0, hours: int = HOURS_PER_WEEK,
                       **run_kwargs) -> list[DailyTrafficSignature]:
    """Daily traffic signature per scenario: one simulated week under the
    default rule-based parameters, hourly frames averaged over the days."""
    from .envs import run_week_frames  # deferred: scenarios is also sim-free

    sigs = []
    for k, scenario in enumerate(scenario_list):
        run_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
        frames = run_week_frames(None, scenario, run_seed, hours=hours, **run_kwargs)
        days = frames.reshape(hours // 24, 24, -1)
        sigs.append(DailyTrafficSignature(
            scenario_id=scenario.id, features=days.mean(axis=0).ravel()))
    return sigs


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------

def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator,
                 max_iter: int = 100) -> tuple[np.ndarray, float]:
    n = x.shape[0]
    # k-means++ seeding
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centers[c] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1))
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dist, axis=1)
        for c in range(k):
            mask = new_labels == c
            if mask.any():
                centers[c] = x[mask].mean(axis=0)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    inertia = float(np.sum((x - centers[labels]) ** 2))
    return labels, inertia


def cluster_scenarios(signatures: list[DailyTrafficSignature], k: int,
                      n_restarts: int = 20, seed: int = 0) -> np.ndarray:
    """Lloyd's K-means with k-means++ init over z-scored signatures.

    The best of ``n_restarts`` runs by inertia wins; ties go to the lowest
    restart index, which makes the result deterministic given the seed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(signatures) < k:
        raise ValueError("need at least k signatures")
    x = np.stack([s.features for s in signatures])
    if not np.all(np.isfinite(x)):
        raise ValueError("signatures contain non-finite values")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd < 1e-12] = 1.0
    x = (x - mu) / sd
    best_labels, best_inertia = None, np.inf
    ss = np.random.SeedSequence(seed)
    for child in ss.spawn(n_restarts):
        labels, inertia = _kmeans_once(x, k, np.random.default_rng(child))
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels, inertia
    return best_labels


def split_train_test(scenarios: list[ScenarioSpec], labels: np.ndarray,
                     per_group_train: int, seed: int = 0
                     ) -> tuple[list[ScenarioSpec], list[ScenarioSpec]]:
    """Randomly pick ``per_group_train`` scenarios from each cluster for the
    training set; everything else is the disjoint test set."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train_ids: set[int] = set()
    for c in np.unique(labels):
        members = [s.id for s, l in zip(scenarios, labels) if l == c]
        if len(members) <= per_group_train:
            raise ValueError(
                f"cluster {c} has {len(members)} members; needs more than "
                f"{per_group_train} to leave a nonempty test set")
        picked = rng.choice(members, size=per_group_train, replace=False)
        train_ids.update(int(i) for i in picked)
    train = [s for s in scenarios if s.id in train_ids]
    test = [s for s in scenarios if s.id not in train_ids]
    return train, test
