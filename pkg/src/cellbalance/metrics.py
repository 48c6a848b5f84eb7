"""Throughput KPIs and the scalar reward used by the control loop.

All four KPIs are computed from the per-cell delivered bits of one control
interval.  Throughputs are in Mbps, the interval length in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_CELLS = 4


@dataclass(frozen=True)
class MetricsRecord:
    per_cell_throughput_mbps: np.ndarray  # shape (4,)
    g_avg: float
    g_min: float
    g_sd: float
    g_cong: float
    delta_t: float

    def as_row(self) -> dict:
        return {
            "g_avg": self.g_avg,
            "g_min": self.g_min,
            "g_sd": self.g_sd,
            "g_cong": self.g_cong,
        }


@dataclass(frozen=True)
class RewardConfig:
    """Weights and normalizers for the scalar reward.

    Each KPI is mapped to [0, 1] before weighting: throughputs divide by
    ``t_ref``, the standard deviation enters through a capped reciprocal so
    that fairer (lower spread) intervals score higher, and the uncongested
    ratio is already a fraction.
    """

    w_avg: float = 0.25
    w_min: float = 0.25
    w_sd: float = 0.25
    w_cong: float = 0.25
    t_ref_mbps: float = 8.0
    sd_reciprocal_cap: float = 10.0
    sd_tiny: float = 1e-6
    epsilon_mbps: float = 1.0

    def __post_init__(self):
        weights = (self.w_avg, self.w_min, self.w_sd, self.w_cong)
        if any(w < 0 for w in weights):
            raise ValueError("reward weights must be nonnegative")
        if not any(w > 0 for w in weights):
            raise ValueError("at least one reward weight must be positive")
        if self.t_ref_mbps <= 0:
            raise ValueError("t_ref_mbps must be positive")


def compute_metrics(per_cell_bits: np.ndarray, delta_t: float,
                    epsilon_mbps: float = 1.0) -> MetricsRecord:
    """KPIs of one interval from total delivered bits per cell.

    g_sd uses the population standard deviation (divide by the number of
    cells).  g_cong is the fraction of cells whose throughput strictly
    exceeds ``epsilon_mbps``.
    """
    bits = np.asarray(per_cell_bits, dtype=np.float64)
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    if bits.shape != (N_CELLS,):
        raise ValueError(f"expected {N_CELLS} per-cell values, got {bits.shape}")
    thr = bits / delta_t / 1e6
    g_avg = float(np.mean(thr))
    g_min = float(np.min(thr))
    g_sd = float(np.sqrt(np.mean((thr - g_avg) ** 2)))
    g_cong = float(np.mean(thr > epsilon_mbps))
    return MetricsRecord(
        per_cell_throughput_mbps=thr,
        g_avg=g_avg,
        g_min=g_min,
        g_sd=g_sd,
        g_cong=g_cong,
        delta_t=float(delta_t),
    )


def compute_reward(m: MetricsRecord, cfg: RewardConfig = RewardConfig()) -> float:
    """Weighted average of the normalized KPIs, in [0, 1] when g_avg <= t_ref."""
    sd_term = min(1.0 / max(m.g_sd, cfg.sd_tiny), cfg.sd_reciprocal_cap) / cfg.sd_reciprocal_cap
    total_w = cfg.w_avg + cfg.w_min + cfg.w_sd + cfg.w_cong
    r = (
        cfg.w_avg * (m.g_avg / cfg.t_ref_mbps)
        + cfg.w_min * (m.g_min / cfg.t_ref_mbps)
        + cfg.w_sd * sd_term
        + cfg.w_cong * m.g_cong
    ) / total_w
    return float(r)
