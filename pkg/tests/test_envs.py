"""MDP wrapper: action codec, state window semantics, horizon, rewards."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellbalance.envs import (ACTION_LEN, FRAME_LEN, HISTORY_K, STATE_LEN,
                              EnvConfig, LoadBalanceEnv, decode_action,
                              encode_action, frame_from_observations)
from cellbalance.metrics import compute_metrics, compute_reward
from cellbalance.simcore import (A_MAX, A_MIN, BG_MAX, BG_MIN, LbParams,
                                 CellObservation)
from tests.conftest import flat_scenario

in_bounds = st.tuples(st.floats(A_MIN, A_MAX),
                      st.floats(BG_MIN, BG_MAX),
                      st.floats(BG_MIN, BG_MAX))


class TestActionCodec:
    def test_zero_action_midpoints(self):
        p = decode_action(np.zeros(ACTION_LEN))
        off = ~np.eye(4, dtype=bool)
        assert np.allclose(p.a[off], 0.5 * (A_MIN + A_MAX))
        assert np.allclose(p.beta[off], 0.5 * (BG_MIN + BG_MAX))
        assert np.allclose(p.gamma[off], 0.5 * (BG_MIN + BG_MAX))

    def test_extremes(self):
        p = decode_action(-np.ones(ACTION_LEN))
        off = ~np.eye(4, dtype=bool)
        assert np.allclose(p.a[off], A_MIN)
        assert np.allclose(p.beta[off], BG_MIN)
        p = decode_action(np.ones(ACTION_LEN))
        assert np.allclose(p.a[off], A_MAX)
        assert np.allclose(p.gamma[off], BG_MAX)

    def test_out_of_range_clipped(self):
        p = decode_action(np.full(ACTION_LEN, 5.0))
        p.validate()

    def test_rejects_bad_actions(self):
        with pytest.raises(ValueError):
            decode_action(np.zeros(10))
        a = np.zeros(ACTION_LEN)
        a[0] = np.nan
        with pytest.raises(ValueError):
            decode_action(a)

    @given(triples=st.lists(in_bounds, min_size=12, max_size=12))
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, triples):
        from cellbalance.envs import ORDERED_PAIRS
        p = LbParams.uniform()
        for (i, j), (a, b, g) in zip(ORDERED_PAIRS, triples):
            p.a[i, j], p.beta[i, j], p.gamma[i, j] = a, b, g
        q = decode_action(encode_action(p))
        for (i, j) in ORDERED_PAIRS:
            assert q.a[i, j] == pytest.approx(p.a[i, j], abs=1e-9)
            assert q.beta[i, j] == pytest.approx(p.beta[i, j], abs=1e-9)
            assert q.gamma[i, j] == pytest.approx(p.gamma[i, j], abs=1e-9)


class TestEnv:
    def make_env(self, fast_sim, horizon=24):
        return LoadBalanceEnv(sim_config=fast_sim,
                              env_config=EnvConfig(horizon_hours=horizon))

    def test_reset_determinism_and_shape(self, fast_sim, hotspot_scenario):
        env = self.make_env(fast_sim)
        s0 = env.reset(hotspot_scenario, start_hour=0, seed=4)
        s1 = self.make_env(fast_sim).reset(hotspot_scenario, start_hour=0, seed=4)
        assert s0.vector.shape == (STATE_LEN,)
        np.testing.assert_array_equal(s0.vector, s1.vector)
        s2 = self.make_env(fast_sim).reset(hotspot_scenario, start_hour=0, seed=5)
        assert not np.array_equal(s0.vector, s2.vector)

    def test_reset_rejects_bad_start_hour(self, fast_sim, hotspot_scenario):
        env = self.make_env(fast_sim)
        with pytest.raises(ValueError):
            env.reset(hotspot_scenario, start_hour=168, seed=0)

    def test_step_before_reset(self, fast_sim):
        with pytest.raises(RuntimeError):
            self.make_env(fast_sim).step(np.zeros(ACTION_LEN))

    def test_zero_traffic_features(self, fast_sim):
        env = self.make_env(fast_sim)
        s = env.reset(flat_scenario(0), start_hour=0, seed=0)
        np.testing.assert_array_equal(s.vector, np.zeros(STATE_LEN))
        tr = env.step(np.zeros(ACTION_LEN))
        assert tr.metrics.g_avg == 0.0
        # all-zero throughput: only the fairness term contributes
        assert tr.r_t == pytest.approx(0.25)

    def test_horizon(self, fast_sim, hotspot_scenario):
        env = self.make_env(fast_sim, horizon=24)
        env.reset(hotspot_scenario, start_hour=0, seed=0)
        for t in range(24):
            tr = env.step(np.zeros(ACTION_LEN))
            assert tr.done == (t == 23)

    def test_window_semantics(self, fast_sim, hotspot_scenario):
        """After n steps the history holds exactly the last 4 steps' frames."""
        env = self.make_env(fast_sim, horizon=48)
        state = env.reset(hotspot_scenario, start_hour=0, seed=0)
        frames = []
        for _ in range(6):
            tr = env.step(np.zeros(ACTION_LEN))
            frames.append(frame_from_observations(tr.observations, env.env_config))
            state = tr.s_next
        expect = np.concatenate(frames[-HISTORY_K:])
        np.testing.assert_array_equal(state.vector, expect)

    def test_same_actions_same_transitions(self, fast_sim, hotspot_scenario):
        rng = np.random.default_rng(0)
        actions = rng.uniform(-1, 1, (5, ACTION_LEN))

        def run():
            env = self.make_env(fast_sim, horizon=24)
            env.reset(hotspot_scenario, start_hour=0, seed=11)
            return [env.step(a) for a in actions]

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a.s_next.vector, b.s_next.vector)
            assert a.r_t == b.r_t

    def test_reward_cross_module(self, fast_sim, hotspot_scenario):
        env = self.make_env(fast_sim)
        env.reset(hotspot_scenario, start_hour=0, seed=0)
        tr = env.step(np.zeros(ACTION_LEN))
        dt = fast_sim.inner_steps_per_hour * fast_sim.inner_dt_s
        bits = tr.metrics.per_cell_throughput_mbps * dt * 1e6
        m = compute_metrics(bits, dt, env.reward_config.epsilon_mbps)
        assert tr.r_t == pytest.approx(compute_reward(m, env.reward_config), abs=1e-12)

    def test_state_matches_newest_observations(self, fast_sim, hotspot_scenario):
        env = self.make_env(fast_sim)
        env.reset(hotspot_scenario, start_hour=0, seed=0)
        tr = env.step(np.zeros(ACTION_LEN))
        newest = tr.s_next.vector[-FRAME_LEN:]
        np.testing.assert_array_equal(
            newest, frame_from_observations(tr.observations, env.env_config))


class TestFrames:
    def test_normalization(self):
        obs = [CellObservation(c, mean_active_ue=15.0, mean_prb_util=0.5,
                               throughput_mbps=4.0) for c in range(4)]
        f = frame_from_observations(obs, EnvConfig())
        np.testing.assert_allclose(f.reshape(4, 3),
                                   np.tile([0.5, 0.5, 0.5], (4, 1)))
