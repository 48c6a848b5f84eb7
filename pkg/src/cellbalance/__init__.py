"""Cellular load-balancing testbed: sector simulator, KPIs, PPO policy bank,
neural policy selector, rule-based baselines, and experiment harness."""

__version__ = "0.1.0"
