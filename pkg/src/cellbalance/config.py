"""Single JSON configuration document for the CLI pipeline.

Every section is optional; omitted fields take the library defaults.  The
config hash recorded in reports covers the resolved document, so every output
is traceable to exact inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .envs import EnvConfig
from .harness import ExperimentConfig
from .metrics import RewardConfig
from .ppo import PpoConfig
from .simcore import SectorTopology, SimConfig, default_topology


@dataclass(frozen=True)
class ScenarioGenConfig:
    count_per_group: int = 7
    k_clusters: int = 3
    per_group_train: int = 3
    generation_seed: int = 0
    clustering_seed: int = 0
    split_seed: int = 0
    signature_seed: int = 0


@dataclass
class AppConfig:
    topology: SectorTopology
    sim: SimConfig
    env: EnvConfig
    reward: RewardConfig
    ppo: PpoConfig
    scenario_gen: ScenarioGenConfig
    experiment: ExperimentConfig
    selector_seed: int = 0
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]

    def run_context_kwargs(self) -> dict:
        return {"topology": self.topology, "sim_config": self.sim,
                "env_config": self.env, "reward_config": self.reward}


def load_app_config(path: str | None = None) -> AppConfig:
    doc = {}
    if path is not None:
        with open(path) as fh:
            doc = json.load(fh)
    topo = (SectorTopology.from_json(doc["topology"]) if "topology" in doc
            else default_topology())
    sim = SimConfig(**doc.get("sim", {}))
    env = EnvConfig(**doc.get("env", {}))
    reward = RewardConfig(**doc.get("reward", {}))
    ppo_doc = dict(doc.get("ppo", {}))
    if "hidden" in ppo_doc:
        ppo_doc["hidden"] = tuple(ppo_doc["hidden"])
    ppo = PpoConfig(**ppo_doc)
    gen = ScenarioGenConfig(**doc.get("scenario_gen", {}))
    exp_doc = dict(doc.get("experiment", {}))
    for key in ("methods", "seeds"):
        if key in exp_doc:
            exp_doc[key] = tuple(exp_doc[key])
    exp = ExperimentConfig(**exp_doc)
    return AppConfig(topology=topo, sim=sim, env=env, reward=reward, ppo=ppo,
                     scenario_gen=gen, experiment=exp,
                     selector_seed=doc.get("selector_seed", 0), raw=doc)
