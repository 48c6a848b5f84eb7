"""The policy bank: one trained policy per training scenario, persisted as a
single file (header + concatenated policy records + JSON index trailer)."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .nets import CorruptFileError, atomic_write, pack_arrays, unpack_arrays
from .ppo import POLICY_MAGIC, PolicyNet, PpoConfig, train_policy

BANK_MAGIC = b"LBNK"
BANK_VERSION = 1


@dataclass(frozen=True)
class BankEntry:
    policy_id: int
    net: PolicyNet
    scenario_id: int
    group_label: int | None
    config_hash: str
    reward_curve: tuple[float, ...] = ()


@dataclass
class PolicyBank:
    entries: list[BankEntry]
    version: int = BANK_VERSION

    def __post_init__(self):
        ids = [e.policy_id for e in self.entries]
        if ids != list(range(len(ids))):
            raise ValueError("policy ids must be dense and unique from 0")

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, policy_id: int) -> PolicyNet:
        if not (0 <= policy_id < len(self.entries)):
            raise KeyError(f"policy id {policy_id} out of range 0..{len(self.entries) - 1}")
        return self.entries[policy_id].net

    def scenario_id(self, policy_id: int) -> int:
        return self.entries[policy_id].scenario_id

    # -- persistence -------------------------------------------------------
    def save(self, path) -> None:
        records = []
        index = []
        for e in self.entries:
            blob = pack_arrays(POLICY_MAGIC, e.net.to_arrays(), {
                "obs_dim": e.net.obs_dim, "act_dim": e.net.act_dim,
                "hidden": list(e.net.hidden),
            })
            records.append(struct.pack("<Q", len(blob)) + blob)
            index.append({
                "policy_id": e.policy_id,
                "scenario_id": e.scenario_id,
                "group_label": e.group_label,
                "config_hash": e.config_hash,
                "reward_curve": list(e.reward_curve),
            })
        trailer = json.dumps({"version": self.version, "entries": index},
                             sort_keys=True).encode()
        blob = (BANK_MAGIC + struct.pack("<II", BANK_VERSION, len(records))
                + b"".join(records) + trailer + struct.pack("<Q", len(trailer)))
        atomic_write(path, blob)

    @classmethod
    def load(cls, path) -> "PolicyBank":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < 20 or blob[:4] != BANK_MAGIC:
            raise CorruptFileError("not a policy bank file")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != BANK_VERSION:
            raise CorruptFileError(f"unsupported bank version {version}")
        (trailer_len,) = struct.unpack_from("<Q", blob, len(blob) - 8)
        trailer_start = len(blob) - 8 - trailer_len
        if trailer_start < 12:
            raise CorruptFileError("truncated bank file")
        try:
            index = json.loads(blob[trailer_start:len(blob) - 8].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorruptFileError("corrupt bank index") from e
        off = 12
        entries = []
        for meta in index["entries"]:
            if off + 8 > trailer_start:
                raise CorruptFileError("truncated bank record")
            (rec_len,) = struct.unpack_from("<Q", blob, off)
            off += 8
            if off + rec_len > trailer_start:
                raise CorruptFileError("truncated bank record")
            arrays, net_meta = unpack_arrays(blob[off:off + rec_len], POLICY_MAGIC)
            off += rec_len
            net = PolicyNet(net_meta["obs_dim"], net_meta["act_dim"],
                            tuple(net_meta["hidden"]))
            net.load_from_arrays(arrays)
            entries.append(BankEntry(
                policy_id=meta["policy_id"], net=net,
                scenario_id=meta["scenario_id"], group_label=meta["group_label"],
                config_hash=meta["config_hash"],
                reward_curve=tuple(meta["reward_curve"]),
            ))
        if len(entries) != count:
            raise CorruptFileError("bank index/record count mismatch")
        return cls(entries=entries, version=version)


def build_bank(train_set, cfg: PpoConfig, recovery_path=None, **train_kwargs) -> PolicyBank:
    """Train one policy per scenario in 𝑋 order.  On a per-entry failure,
    previously trained entries are saved to ``recovery_path`` before re-raising."""
    if not train_set:
        raise ValueError("training set must be non-empty")
    entries = []
    for k, scenario in enumerate(train_set):
        try:
            net, curve = train_policy(scenario, cfg, **train_kwargs)
        except Exception:
            if recovery_path is not None and entries:
                PolicyBank(entries=list(entries)).save(recovery_path)
            raise
        entries.append(BankEntry(
            policy_id=k, net=net, scenario_id=scenario.id,
            group_label=getattr(scenario, "group_hint", None),
            config_hash=cfg.config_hash(), reward_curve=tuple(curve)))
    return PolicyBank(entries=entries)
