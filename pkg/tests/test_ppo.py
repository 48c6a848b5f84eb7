"""PPO internals: gradient checks, GAE reductions, the clipped surrogate,
log-probability integrity, serialization, and training determinism."""

import math

import numpy as np
import pytest
import torch

from cellbalance.nets import CorruptFileError
from cellbalance.ppo import (PolicyNet, PpoConfig, check_gradients,
                             evaluate_policy, gae_advantages, ppo_loss,
                             train_joint_policy, train_policy)

torch.set_default_dtype(torch.float64)


def random_batch(net, n=32, seed=0):
    rng = np.random.default_rng(seed)
    obs = rng.normal(0, 1, (n, net.obs_dim))
    pre = rng.normal(0, 1, (n, net.act_dim))
    with torch.no_grad():
        mean, log_std, _ = net(torch.from_numpy(obs))
        logp = net.log_prob(mean, log_std, torch.from_numpy(pre)).numpy()
    return {
        "obs": torch.from_numpy(obs),
        "pre_tanh": torch.from_numpy(pre),
        "logp": torch.from_numpy(logp + rng.normal(0, 0.1, n)),
        "adv": torch.from_numpy(rng.normal(0, 1, n)),
        "ret": torch.from_numpy(rng.normal(0, 1, n)),
    }


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference_agreement(self, seed):
        torch.manual_seed(seed)
        net = PolicyNet(obs_dim=6, act_dim=3, hidden=(8, 8))
        batch = random_batch(net, n=16, seed=seed)
        assert check_gradients(net, batch, seed=seed) < 1e-4

    def test_value_bias_closed_form(self):
        torch.manual_seed(0)
        net = PolicyNet(obs_dim=4, act_dim=2, hidden=(6, 6))
        with torch.no_grad():
            net.value_head.weight.zero_()
            net.value_head.bias.fill_(0.3)
        cfg = PpoConfig()
        batch = random_batch(net, n=8, seed=1)
        batch["ret"] = torch.full((8,), 1.7)
        net.zero_grad()
        ppo_loss(net, batch, cfg, normalize_adv=False).backward()
        expect = cfg.value_coef * 2.0 * (0.3 - 1.7)
        assert float(net.value_head.bias.grad) == pytest.approx(expect, rel=1e-10)

    def test_duplicated_batch_same_gradients(self):
        torch.manual_seed(2)
        net = PolicyNet(obs_dim=4, act_dim=2, hidden=(6, 6))
        batch = random_batch(net, n=8, seed=2)
        double = {k: torch.cat([v, v]) for k, v in batch.items()}
        grads = []
        for b in (batch, double):
            net.zero_grad()
            ppo_loss(net, b, PpoConfig(), normalize_adv=False).backward()
            grads.append([p.grad.clone() for p in net.parameters()])
        for a, b in zip(*grads):
            assert torch.allclose(a, b, atol=1e-12)


class TestClippedSurrogate:
    def test_scalar_reference(self):
        torch.manual_seed(3)
        net = PolicyNet(obs_dim=5, act_dim=3, hidden=(8, 8))
        cfg = PpoConfig(value_coef=0.0, entropy_coef=0.0)
        batch = random_batch(net, n=64, seed=3)
        loss = float(ppo_loss(net, batch, cfg, normalize_adv=False).detach())
        with torch.no_grad():
            mean, log_std, _ = net(batch["obs"])
            logp = net.log_prob(mean, log_std, batch["pre_tanh"]).numpy()
        ratio = np.exp(logp - batch["logp"].numpy())
        adv = batch["adv"].numpy()
        rho = cfg.clip_ratio
        per = [min(r * a, min(max(r, 1 - rho), 1 + rho) * a)
               for r, a in zip(ratio, adv)]
        assert loss == pytest.approx(-float(np.mean(per)), abs=1e-12)


class TestGae:
    rewards = np.array([1.0, 0.5, -0.2, 2.0, 0.3])
    values = np.array([0.4, 0.1, 0.9, -0.5, 0.6])
    last_value = 0.7

    def test_lambda_one_is_discounted_mc(self):
        g = 0.9
        dones = np.zeros(5, dtype=bool)
        adv, ret = gae_advantages(self.rewards, self.values, dones,
                                  self.last_value, g, 1.0)
        for t in range(5):
            mc = sum(g ** (k - t) * self.rewards[k] for k in range(t, 5))
            mc += g ** (5 - t) * self.last_value
            assert adv[t] == pytest.approx(mc - self.values[t], abs=1e-12)
            assert ret[t] == pytest.approx(mc, abs=1e-12)

    def test_lambda_zero_is_td_error(self):
        g = 0.8
        dones = np.zeros(5, dtype=bool)
        adv, _ = gae_advantages(self.rewards, self.values, dones,
                                self.last_value, g, 0.0)
        nxt = np.append(self.values[1:], self.last_value)
        for t in range(5):
            delta = self.rewards[t] + g * nxt[t] - self.values[t]
            assert adv[t] == pytest.approx(delta, abs=1e-12)

    def test_done_blocks_bootstrap(self):
        dones = np.array([False, False, True, False, False])
        adv, _ = gae_advantages(self.rewards, self.values, dones,
                                self.last_value, 0.9, 1.0)
        # episode ending at t=2: no value bootstrap, no propagation from t=3
        mc2 = self.rewards[2] - self.values[2]
        assert adv[2] == pytest.approx(mc2, abs=1e-12)
        mc0 = (self.rewards[0] + 0.9 * self.rewards[1] + 0.81 * self.rewards[2]
               - self.values[0])
        assert adv[0] == pytest.approx(mc0, abs=1e-12)


class TestLogProb:
    def test_density_integrates_to_one(self):
        torch.manual_seed(4)
        net = PolicyNet(obs_dim=3, act_dim=1, hidden=(6, 6))
        obs = torch.from_numpy(np.array([0.2, -0.4, 0.9]))
        mean, log_std, _ = net(obs)
        a = np.linspace(-1 + 1e-9, 1 - 1e-9, 200001)
        pre = torch.from_numpy(np.arctanh(a)).unsqueeze(-1)
        with torch.no_grad():
            logp = net.log_prob(mean, log_std, pre).numpy()
        integral = np.trapezoid(np.exp(logp), a)
        assert 0.99 <= integral <= 1.01

    def test_actions_within_bounds(self):
        torch.manual_seed(5)
        net = PolicyNet()
        gen = torch.Generator().manual_seed(0)
        obs = np.random.default_rng(0).normal(0, 1, net.obs_dim)
        a, pre, logp, v = net.sample_action(obs, gen)
        assert a.shape == (net.act_dim,) and np.all(np.abs(a) <= 1.0)
        assert np.isfinite(logp) and np.isfinite(v)
        d = net.deterministic_action(obs)
        assert d.shape == (net.act_dim,) and np.all(np.abs(d) <= 1.0)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        torch.manual_seed(6)
        net = PolicyNet(obs_dim=5, act_dim=2, hidden=(4, 4))
        path = tmp_path / "p.lbpn"
        net.save(path, metadata={"scenario_id": 3})
        loaded, meta = PolicyNet.load(path)
        assert meta["scenario_id"] == 3
        obs = np.random.default_rng(1).normal(0, 1, 5)
        np.testing.assert_array_equal(net.deterministic_action(obs),
                                      loaded.deterministic_action(obs))

    def test_truncated_file(self, tmp_path):
        net = PolicyNet(obs_dim=5, act_dim=2, hidden=(4, 4))
        path = tmp_path / "p.lbpn"
        net.save(path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(CorruptFileError):
            PolicyNet.load(path)


TINY = PpoConfig(rollout_hours=24, total_interactions=96, epochs_per_iter=2,
                 minibatch_size=24, hidden=(16, 16), seed=0)


class TestTraining:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            PpoConfig(discount=0.0)
        with pytest.raises(ValueError):
            PpoConfig(clip_ratio=0.0)
        assert PpoConfig().config_hash() != TINY.config_hash()

    def test_determinism_and_accounting(self, fast_sim, hotspot_scenario):
        net1, curve1 = train_policy(hotspot_scenario, TINY, sim_config=fast_sim)
        net2, curve2 = train_policy(hotspot_scenario, TINY, sim_config=fast_sim)
        assert curve1 == curve2
        for a, b in zip(net1.parameters(), net2.parameters()):
            assert torch.equal(a, b)
        # steps consumed = iterations x rollout = ceil(96 / 24) x 24
        assert len(curve1) == math.ceil(TINY.total_interactions / TINY.rollout_hours)

    def test_joint_accounting(self, fast_sim, small_scenarios):
        cfg = PpoConfig(rollout_hours=24, total_interactions=144,
                        epochs_per_iter=1, minibatch_size=72, hidden=(16, 16))
        _, curve = train_joint_policy(small_scenarios, cfg, sim_config=fast_sim)
        # 3 scenarios x 24 hours = 72 transitions per iteration
        assert len(curve) == math.ceil(144 / 72)

    def test_joint_single_scenario_matches_train_policy(self, fast_sim,
                                                        hotspot_scenario):
        n1, c1 = train_policy(hotspot_scenario, TINY, sim_config=fast_sim)
        n2, c2 = train_joint_policy([hotspot_scenario], TINY, sim_config=fast_sim)
        assert c1 == c2
        for a, b in zip(n1.parameters(), n2.parameters()):
            assert torch.equal(a, b)

    def test_empty_scenarios_rejected(self):
        with pytest.raises(ValueError):
            train_joint_policy([], TINY)


class TestEvaluate:
    def test_protocol_and_determinism(self, fast_sim, hotspot_scenario):
        torch.manual_seed(7)
        net = PolicyNet(hidden=(16, 16))
        days1, recs1 = evaluate_policy(net, hotspot_scenario, 3, seed=0,
                                       sim_config=fast_sim)
        days2, _ = evaluate_policy(net, hotspot_scenario, 3, seed=0,
                                   sim_config=fast_sim)
        assert len(days1) == 3 and len(recs1) == 72
        assert days1 == days2
        assert {r["day"] for r in recs1} == {1, 2, 3}

    def test_first_day_is_rule_based(self, fast_sim, hotspot_scenario):
        torch.manual_seed(8)
        net = PolicyNet(hidden=(16, 16))
        d_pol, _ = evaluate_policy(net, hotspot_scenario, 2, seed=3,
                                   sim_config=fast_sim)
        d_ref, _ = evaluate_policy(None, hotspot_scenario, 2, seed=3,
                                   sim_config=fast_sim)
        assert d_pol[0] == d_ref[0]
