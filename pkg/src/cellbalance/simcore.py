"""Discrete-time microsimulation of one controlled sector (4 cells).

One logical "hour" of the control loop is ``inner_steps_per_hour`` microsteps
of ``inner_dt_s`` simulated seconds each.  Within a microstep: UEs random-walk
with a reflective arena boundary, Poisson packet arrivals fill their buffers,
each cell splits its PRBs equally among its active UEs, and the two
load-balancing triggers move UEs between cells (handover for active UEs,
cell-reselection for idle UEs).

The hot loop is compiled with numba and operates on flat arrays; the
dataclasses here are the configuration/inspection surface around it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

N_CELLS = 4
N_BASE_STATIONS = 7
SECTORS_PER_BS = 3

# Control-parameter bounds (dB / dBm).
A_MIN, A_MAX = -6.0, 6.0
BG_MIN, BG_MAX = -110.0, -80.0

REFERENCE_DISTANCE_M = 10.0
PRB_BANDWIDTH_HZ = 180e3
MAX_SPECTRAL_EFF = 6.0  # bit/s/Hz cap


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    id: int
    carrier_freq_mhz: float
    bandwidth_prb: int
    tx_power_dbm: float
    position: tuple[float, float]
    pathloss_exponent: float

    def __post_init__(self):
        if self.bandwidth_prb < 1:
            raise ValueError("bandwidth_prb must be >= 1")
        if self.pathloss_exponent < 2.0:
            raise ValueError("pathloss_exponent must be >= 2")
        if self.carrier_freq_mhz <= 0:
            raise ValueError("carrier_freq_mhz must be positive")


@dataclass(frozen=True)
class SectorTopology:
    cells: tuple[Cell, ...]              # the controlled group, exactly 4
    base_station_positions: tuple[tuple[float, float], ...]
    sector_azimuths_deg: tuple[float, ...]
    controlled_sector: tuple[int, float]  # (base station index, azimuth)

    def __post_init__(self):
        if len(self.cells) != N_CELLS:
            raise ValueError(f"controlled sector must have {N_CELLS} cells")
        if sorted(c.id for c in self.cells) != list(range(N_CELLS)):
            raise ValueError("cell ids must be unique and contiguous from 0")
        if len(self.base_station_positions) != N_BASE_STATIONS:
            raise ValueError(f"expected {N_BASE_STATIONS} base stations")
        if len(self.sector_azimuths_deg) != SECTORS_PER_BS:
            raise ValueError(f"expected {SECTORS_PER_BS} sector azimuths")
        bs, az = self.controlled_sector
        if not (0 <= bs < N_BASE_STATIONS) or az not in self.sector_azimuths_deg:
            raise ValueError("controlled_sector must reference a valid sector")

    def to_json(self) -> dict:
        return {
            "cells": [
                {
                    "id": c.id,
                    "carrier_freq_mhz": c.carrier_freq_mhz,
                    "bandwidth_prb": c.bandwidth_prb,
                    "tx_power_dbm": c.tx_power_dbm,
                    "position_m": list(c.position),
                    "pathloss_exponent": c.pathloss_exponent,
                }
                for c in self.cells
            ],
            "base_station_positions_m": [list(p) for p in self.base_station_positions],
            "sector_azimuths_deg": list(self.sector_azimuths_deg),
            "controlled_sector": list(self.controlled_sector),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SectorTopology":
        cells = tuple(
            Cell(
                id=c["id"],
                carrier_freq_mhz=c["carrier_freq_mhz"],
                bandwidth_prb=c["bandwidth_prb"],
                tx_power_dbm=c["tx_power_dbm"],
                position=tuple(c["position_m"]),
                pathloss_exponent=c["pathloss_exponent"],
            )
            for c in doc["cells"]
        )
        return cls(
            cells=cells,
            base_station_positions=tuple(tuple(p) for p in doc["base_station_positions_m"]),
            sector_azimuths_deg=tuple(doc["sector_azimuths_deg"]),
            controlled_sector=tuple(doc["controlled_sector"]),
        )


def default_topology() -> SectorTopology:
    """Seven base stations (center + hexagonal ring); the controlled sector is
    the north-east sector of the center station.  The four co-sited cells are
    parameterized so that each one is the strongest server in a distinct
    distance band of the arena (near to far as id increases)."""
    ring_r = 1200.0
    bs = [(0.0, 0.0)] + [
        (ring_r * math.cos(math.radians(60 * k)), ring_r * math.sin(math.radians(60 * k)))
        for k in range(6)
    ]
    cells = (
        Cell(0, 3500.0, 25, 33.3, (0.0, 0.0), 3.8),
        Cell(1, 2600.0, 25, 25.2, (0.0, 0.0), 3.1),
        Cell(2, 1800.0, 25, 16.2, (0.0, 0.0), 2.6),
        Cell(3, 800.0, 25, 3.1, (0.0, 0.0), 2.2),
    )
    return SectorTopology(
        cells=cells,
        base_station_positions=tuple(bs),
        sector_azimuths_deg=(45.0, 165.0, 285.0),
        controlled_sector=(0, 45.0),
    )


@dataclass(frozen=True)
class SimConfig:
    hysteresis_h_db: float = 3.0
    inner_steps_per_hour: int = 300
    inner_dt_s: float = 1.0
    noise_floor_dbm: float = -90.0
    rng_seed: int = 0
    arena_size_m: float = 600.0
    heading_noise_rad: float = 0.5
    shadowing_sigma_db: float = 0.0  # optional log-normal shadowing, off by default

    def __post_init__(self):
        if self.hysteresis_h_db < 0:
            raise ValueError("hysteresis must be >= 0")
        if self.inner_steps_per_hour < 1 or self.inner_dt_s <= 0:
            raise ValueError("inner_steps_per_hour and inner_dt_s must be positive")

    @classmethod
    def from_json(cls, doc: dict) -> "SimConfig":
        return cls(**doc)

    def to_json(self) -> dict:
        return {
            "hysteresis_h_db": self.hysteresis_h_db,
            "inner_steps_per_hour": self.inner_steps_per_hour,
            "inner_dt_s": self.inner_dt_s,
            "noise_floor_dbm": self.noise_floor_dbm,
            "rng_seed": self.rng_seed,
            "arena_size_m": self.arena_size_m,
            "heading_noise_rad": self.heading_noise_rad,
            "shadowing_sigma_db": self.shadowing_sigma_db,
        }


@dataclass
class LbParams:
    """Per-ordered-cell-pair control surface: CIO ``a`` (dB) and the two
    reselection thresholds ``beta``/``gamma`` (dBm).  Diagonals are ignored."""

    a: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    @classmethod
    def uniform(cls, a: float = 0.0, beta: float = -100.0, gamma: float = -95.0) -> "LbParams":
        full = lambda v: np.full((N_CELLS, N_CELLS), v, dtype=np.float64)
        return cls(a=full(a), beta=full(beta), gamma=full(gamma))

    def validate(self) -> None:
        for name, mat, lo, hi in (
            ("a", self.a, A_MIN, A_MAX),
            ("beta", self.beta, BG_MIN, BG_MAX),
            ("gamma", self.gamma, BG_MIN, BG_MAX),
        ):
            m = np.asarray(mat, dtype=np.float64)
            if m.shape != (N_CELLS, N_CELLS):
                raise ValueError(f"{name} must be {N_CELLS}x{N_CELLS}")
            off = ~np.eye(N_CELLS, dtype=bool)
            if not np.all(np.isfinite(m[off])):
                raise ValueError(f"{name} has non-finite entries")
            if np.any(m[off] < lo) or np.any(m[off] > hi):
                raise ValueError(f"{name} outside [{lo}, {hi}]")

    def copy(self) -> "LbParams":
        return LbParams(a=self.a.copy(), beta=self.beta.copy(), gamma=self.gamma.copy())


@dataclass(frozen=True)
class UserEquipment:
    """Inspection view of one UE (internals are flat arrays)."""

    id: int
    position: tuple[float, float]
    heading: float
    speed: float
    mode: str  # "Active" or "Idle"
    attached_cell: int
    buffer_bits: float
    next_arrival_time: float


@dataclass(frozen=True)
class CellObservation:
    cell_id: int
    mean_active_ue: float
    mean_prb_util: float
    throughput_mbps: float


@dataclass(frozen=True)
class LinkMeasurement:
    ue_id: int
    rsrp_dbm: np.ndarray  # shape (4,)


# ---------------------------------------------------------------------------
# Radio primitives
# ---------------------------------------------------------------------------

def pathloss_at_reference(freq_mhz: float) -> float:
    """Free-space loss at the 10 m reference distance, dB."""
    return 20.0 * math.log10(freq_mhz) - 7.56


@njit(cache=True)
def _rsrp_dbm(dx, dy, tx_dbm, pl0_db, eta):
    d = math.sqrt(dx * dx + dy * dy)
    if d < REFERENCE_DISTANCE_M:
        d = REFERENCE_DISTANCE_M
    return tx_dbm - (pl0_db + 10.0 * eta * math.log10(d / REFERENCE_DISTANCE_M))


@njit(cache=True)
def _rate_per_prb(rsrp_dbm, noise_floor_dbm):
    snr = 10.0 ** ((rsrp_dbm - noise_floor_dbm) / 10.0)
    se = math.log2(1.0 + snr)
    if se > MAX_SPECTRAL_EFF:
        se = MAX_SPECTRAL_EFF
    return PRB_BANDWIDTH_HZ * se


def compute_rsrp(ue_position, cell: Cell, config: SimConfig) -> float:
    """Log-distance path-loss RSRP, deterministic, clamped at the reference
    distance so co-location is finite."""
    dx = ue_position[0] - cell.position[0]
    dy = ue_position[1] - cell.position[1]
    return float(
        _rsrp_dbm(dx, dy, cell.tx_power_dbm,
                  pathloss_at_reference(cell.carrier_freq_mhz),
                  cell.pathloss_exponent)
    )


def rate_per_prb(rsrp_dbm: float, config: SimConfig) -> float:
    """Shannon-style bits/s per PRB, capped at MAX_SPECTRAL_EFF."""
    return float(_rate_per_prb(rsrp_dbm, config.noise_floor_dbm))


def handover_triggered(f_i: float, f_j: float, a_ij: float, h: float) -> bool:
    """Active-UE handover trigger: neighbor beats serving plus offset and
    hysteresis, strictly."""
    return f_j > f_i + a_ij + h


def reselection_triggered(f_i: float, f_j: float, beta_ij: float, gamma_ij: float) -> bool:
    """Idle-UE cell-reselection trigger: serving below beta AND neighbor above
    gamma, both strictly."""
    return f_i < beta_ij and f_j > gamma_ij


# ---------------------------------------------------------------------------
# Simulation state
# ---------------------------------------------------------------------------

@dataclass
class HourTraffic:
    """Per-hour traffic parameters the inner loop consumes directly."""

    mean_interarrival_s: float
    pkt_min_bits: float
    pkt_max_bits: float


@dataclass
class SimState:
    topology: SectorTopology
    config: SimConfig
    pos: np.ndarray           # (N, 2)
    heading: np.ndarray       # (N,)
    speed: np.ndarray         # (N,)
    buffer_bits: np.ndarray   # (N,)
    attached: np.ndarray      # (N,) int64
    next_arrival: np.ndarray  # (N,)
    clock_s: float
    traffic: HourTraffic
    master_seed: int
    call_counter: int = 0

    @property
    def n_ues(self) -> int:
        return self.pos.shape[0]

    def ues(self) -> list[UserEquipment]:
        out = []
        for i in range(self.n_ues):
            out.append(UserEquipment(
                id=i,
                position=(float(self.pos[i, 0]), float(self.pos[i, 1])),
                heading=float(self.heading[i]),
                speed=float(self.speed[i]),
                mode="Active" if self.buffer_bits[i] > 0 else "Idle",
                attached_cell=int(self.attached[i]),
                buffer_bits=float(self.buffer_bits[i]),
                next_arrival_time=float(self.next_arrival[i]),
            ))
        return out

    def link_measurement(self, ue_id: int) -> LinkMeasurement:
        rsrp = np.array([
            compute_rsrp(self.pos[ue_id], c, self.config) for c in self.topology.cells
        ])
        return LinkMeasurement(ue_id=ue_id, rsrp_dbm=rsrp)

    def _next_seed(self) -> int:
        seed = np.random.SeedSequence([self.master_seed, self.call_counter]).generate_state(1)[0]
        self.call_counter += 1
        return int(seed)


def _cell_arrays(topology: SectorTopology):
    cells = topology.cells
    cx = np.array([c.position[0] for c in cells])
    cy = np.array([c.position[1] for c in cells])
    tx = np.array([c.tx_power_dbm for c in cells])
    pl0 = np.array([pathloss_at_reference(c.carrier_freq_mhz) for c in cells])
    eta = np.array([c.pathloss_exponent for c in cells])
    prb = np.array([float(c.bandwidth_prb) for c in cells])
    return cx, cy, tx, pl0, eta, prb


def best_server(topology: SectorTopology, config: SimConfig, position) -> int:
    rsrp = [compute_rsrp(position, c, config) for c in topology.cells]
    return int(np.argmax(rsrp))


def init_state(topology: SectorTopology, config: SimConfig,
               master_seed: int | None = None) -> SimState:
    """Empty-population state; populate with :func:`spawn_population`."""
    seed = config.rng_seed if master_seed is None else master_seed
    return SimState(
        topology=topology,
        config=config,
        pos=np.zeros((0, 2)),
        heading=np.zeros(0),
        speed=np.zeros(0),
        buffer_bits=np.zeros(0),
        attached=np.zeros(0, dtype=np.int64),
        next_arrival=np.zeros(0),
        clock_s=0.0,
        traffic=HourTraffic(0.1, 50e3, 2e6),
        master_seed=int(seed),
    )


def spawn_population(state: SimState, profile) -> None:
    """Re-instantiate the UE population for a new hour profile.

    A fraction of UEs is placed uniformly inside each hotspot disk, the
    remainder uniformly in the arena.  Every UE camps on its strongest cell.
    """
    cfg = state.config
    rng = np.random.default_rng(np.random.SeedSequence(
        [state.master_seed, state.call_counter, 1]))
    state.call_counter += 1
    n = int(profile.ue_count)
    size = cfg.arena_size_m

    pos = np.empty((n, 2))
    placed = 0
    for (hx, hy), radius, frac in profile.hotspot_regions:
        k = min(int(round(frac * n)), n - placed)
        if k <= 0:
            continue
        r = radius * np.sqrt(rng.uniform(0, 1, k))
        th = rng.uniform(0, 2 * np.pi, k)
        px = np.clip(hx + r * np.cos(th), 0.0, size)
        py = np.clip(hy + r * np.sin(th), 0.0, size)
        pos[placed:placed + k, 0] = px
        pos[placed:placed + k, 1] = py
        placed += k
    if placed < n:
        pos[placed:] = rng.uniform(0, size, (n - placed, 2))

    state.pos = pos
    state.heading = rng.uniform(0, 2 * np.pi, n)
    state.speed = rng.uniform(2.0, 4.0, n)  # mean 3 m/s
    state.buffer_bits = np.zeros(n)
    mean_ia = profile.mean_interarrival_ms / 1e3
    state.next_arrival = state.clock_s + rng.exponential(mean_ia, n)
    cx, cy, tx, pl0, eta, _ = _cell_arrays(state.topology)
    rsrp = tx[None, :] - (pl0[None, :] + 10.0 * eta[None, :] * np.log10(
        np.maximum(np.hypot(pos[:, 0:1] - cx[None, :], pos[:, 1:2] - cy[None, :]),
                   REFERENCE_DISTANCE_M) / REFERENCE_DISTANCE_M))
    state.attached = np.argmax(rsrp, axis=1).astype(np.int64)
    lo, hi = profile.packet_size_range_kb
    state.traffic = HourTraffic(mean_interarrival_s=mean_ia,
                                pkt_min_bits=lo * 1e3, pkt_max_bits=hi * 1e3)


# ---------------------------------------------------------------------------
# Inner loop (numba)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _run_steps(n_steps, dt, seed,
               pos, heading, speed, buffer_bits, attached, next_arrival, clock,
               cx, cy, tx, pl0, eta, prb,
               a_mat, beta_mat, gamma_mat, hyst,
               noise_dbm, heading_sigma, arena_size,
               mean_ia_s, pkt_min_bits, pkt_max_bits,
               acc_active, acc_util, acc_bits):
    """Advance n_steps microsteps in place; accumulate per-cell sums of
    active-UE count, PRB utilization, and delivered bits.  Returns the clock."""
    np.random.seed(seed)
    n = pos.shape[0]
    n_cells = cx.shape[0]
    rsrp = np.empty((n, n_cells))
    n_act = np.empty(n_cells, dtype=np.int64)
    used_prb = np.empty(n_cells)
    for _ in range(n_steps):
        t_end = clock + dt
        for u in range(n):
            # random walk, reflective boundary
            heading[u] += np.random.normal(0.0, heading_sigma)
            x = pos[u, 0] + speed[u] * dt * math.cos(heading[u])
            y = pos[u, 1] + speed[u] * dt * math.sin(heading[u])
            if x < 0.0:
                x = -x
                heading[u] = math.pi - heading[u]
            elif x > arena_size:
                x = 2.0 * arena_size - x
                heading[u] = math.pi - heading[u]
            if y < 0.0:
                y = -y
                heading[u] = -heading[u]
            elif y > arena_size:
                y = 2.0 * arena_size - y
                heading[u] = -heading[u]
            pos[u, 0] = x
            pos[u, 1] = y
            # Poisson packet arrivals
            while next_arrival[u] <= t_end:
                buffer_bits[u] += pkt_min_bits + np.random.uniform(0.0, 1.0) * (
                    pkt_max_bits - pkt_min_bits)
                next_arrival[u] += np.random.exponential(mean_ia_s)
            for c in range(n_cells):
                rsrp[u, c] = _rsrp_dbm(pos[u, 0] - cx[c], pos[u, 1] - cy[c],
                                       tx[c], pl0[c], eta[c])

        # scheduling: equal PRB split among the active UEs of each cell
        for c in range(n_cells):
            n_act[c] = 0
            used_prb[c] = 0.0
        for u in range(n):
            if buffer_bits[u] > 0.0:
                n_act[attached[u]] += 1
        for c in range(n_cells):
            acc_active[c] += n_act[c]
        for u in range(n):
            if buffer_bits[u] > 0.0:
                c = attached[u]
                share = prb[c] / n_act[c]
                rate = _rate_per_prb(rsrp[u, c], noise_dbm)
                cap_bits = share * rate * dt
                drained = buffer_bits[u] if buffer_bits[u] < cap_bits else cap_bits
                buffer_bits[u] -= drained
                if buffer_bits[u] < 1e-9:
                    buffer_bits[u] = 0.0
                acc_bits[c] += drained
                used_prb[c] += drained / (rate * dt)
        for c in range(n_cells):
            acc_util[c] += used_prb[c] / prb[c]

        # load-balancing triggers; at most one move per UE per microstep,
        # ties broken by strongest target RSRP then lowest cell id
        for u in range(n):
            i = attached[u]
            best = -1
            best_f = -1e30
            if buffer_bits[u] > 0.0:  # active: handover
                for j in range(n_cells):
                    if j == i:
                        continue
                    if rsrp[u, j] > rsrp[u, i] + a_mat[i, j] + hyst:
                        if rsrp[u, j] > best_f:
                            best_f = rsrp[u, j]
                            best = j
            else:  # idle: cell-reselection
                for j in range(n_cells):
                    if j == i:
                        continue
                    if rsrp[u, i] < beta_mat[i, j] and rsrp[u, j] > gamma_mat[i, j]:
                        if rsrp[u, j] > best_f:
                            best_f = rsrp[u, j]
                            best = j
            if best >= 0:
                attached[u] = best
        clock = t_end
    return clock


def step_inner(state: SimState, params: LbParams, config: SimConfig | None = None,
               n_steps: int = 1) -> None:
    """Advance ``n_steps`` microsteps in place under fixed control parameters."""
    cfg = state.config if config is None else config
    params.validate()
    if state.n_ues == 0:
        state.clock_s += n_steps * cfg.inner_dt_s
        state.call_counter += 1
        return
    cx, cy, tx, pl0, eta, prb = _cell_arrays(state.topology)
    acc = np.zeros(N_CELLS), np.zeros(N_CELLS), np.zeros(N_CELLS)
    state.clock_s = _run_steps(
        n_steps, cfg.inner_dt_s, state._next_seed(),
        state.pos, state.heading, state.speed, state.buffer_bits,
        state.attached, state.next_arrival, state.clock_s,
        cx, cy, tx, pl0, eta, prb,
        np.asarray(params.a, dtype=np.float64),
        np.asarray(params.beta, dtype=np.float64),
        np.asarray(params.gamma, dtype=np.float64),
        cfg.hysteresis_h_db, cfg.noise_floor_dbm, cfg.heading_noise_rad,
        cfg.arena_size_m,
        state.traffic.mean_interarrival_s, state.traffic.pkt_min_bits,
        state.traffic.pkt_max_bits,
        acc[0], acc[1], acc[2],
    )


def run_control_interval(state: SimState, params: LbParams, hour_profile,
                         config: SimConfig | None = None
                         ) -> tuple[list[CellObservation], np.ndarray]:
    """Run one control interval (one logical hour) under fixed parameters.

    Respawns the UE population per the hour profile, runs the inner loop, and
    returns per-cell observations averaged over the interval plus the total
    delivered bits per cell (for the KPI computation).
    """
    cfg = state.config if config is None else config
    params.validate()
    spawn_population(state, hour_profile)
    n_steps = cfg.inner_steps_per_hour
    acc_active = np.zeros(N_CELLS)
    acc_util = np.zeros(N_CELLS)
    acc_bits = np.zeros(N_CELLS)
    if state.n_ues > 0:
        cx, cy, tx, pl0, eta, prb = _cell_arrays(state.topology)
        state.clock_s = _run_steps(
            n_steps, cfg.inner_dt_s, state._next_seed(),
            state.pos, state.heading, state.speed, state.buffer_bits,
            state.attached, state.next_arrival, state.clock_s,
            cx, cy, tx, pl0, eta, prb,
            np.asarray(params.a, dtype=np.float64),
            np.asarray(params.beta, dtype=np.float64),
            np.asarray(params.gamma, dtype=np.float64),
            cfg.hysteresis_h_db, cfg.noise_floor_dbm, cfg.heading_noise_rad,
            cfg.arena_size_m,
            state.traffic.mean_interarrival_s, state.traffic.pkt_min_bits,
            state.traffic.pkt_max_bits,
            acc_active, acc_util, acc_bits,
        )
    else:
        state.clock_s += n_steps * cfg.inner_dt_s
        state.call_counter += 1
    delta_t = n_steps * cfg.inner_dt_s
    obs = [
        CellObservation(
            cell_id=c,
            mean_active_ue=float(acc_active[c] / n_steps),
            mean_prb_util=float(acc_util[c] / n_steps),
            throughput_mbps=float(acc_bits[c] / delta_t / 1e6),
        )
        for c in range(N_CELLS)
    ]
    return obs, acc_bits
