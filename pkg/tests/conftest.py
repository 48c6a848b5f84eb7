"""Shared fixtures: a fast simulator configuration and small scenario sets.

Unit tests run the inner loop at 60 microsteps per logical hour so the whole
suite stays within CI budgets; the library default (300) is exercised only
through configuration tests.
"""

import numpy as np
import pytest

from cellbalance.scenarios import (HourProfile, ScenarioSpec,
                                   generate_scenario_set)
from cellbalance.simcore import SimConfig

FAST_STEPS_PER_HOUR = 60


@pytest.fixture(scope="session")
def fast_sim():
    return SimConfig(inner_steps_per_hour=FAST_STEPS_PER_HOUR)


@pytest.fixture(scope="session")
def small_scenarios():
    """One scenario per archetype (ids 0..2: near-hotspot, far-hotspot, low)."""
    return generate_scenario_set(count_per_group=1, seed=1)


@pytest.fixture(scope="session")
def hotspot_scenario(small_scenarios):
    return small_scenarios[0]


def flat_scenario(ue_count: int, interarrival_ms: float = 100.0,
                  packet_range_kb=(50.0, 300.0), hotspots=(),
                  scenario_id: int = 900) -> ScenarioSpec:
    """A scenario with the same profile every hour (used for edge cases)."""
    prof = HourProfile(ue_count=ue_count, hotspot_regions=tuple(hotspots),
                      mean_interarrival_ms=interarrival_ms,
                      packet_size_range_kb=packet_range_kb)
    return ScenarioSpec(id=scenario_id, hours=(prof,) * 168, rng_seed=0)
