"""Selector: counting formulas, classifier properties, training behavior,
gradient check, and the day-by-day selection loop."""

import numpy as np
import pytest
import torch

from cellbalance.bank import BankEntry, PolicyBank
from cellbalance.nets import CorruptFileError
from cellbalance.ppo import PolicyNet
from cellbalance.selector import (SELECTOR_INPUT, WINDOW_T, SelectorDataset,
                                  SelectorNet, check_gradients, collect_dataset,
                                  run_selection_loop, sample_counts, select,
                                  train_selector)

torch.set_default_dtype(torch.float64)


class TestCounting:
    def test_paper_scale(self):
        assert sample_counts(9, 9) == (15_120, 13_050)

    def test_minimal(self):
        assert sample_counts(1, 1) == (336, 290)

    def test_general_formula(self):
        for m in (1, 3, 9):
            for x in (1, 4, 9):
                raw, win = sample_counts(m, x)
                assert raw == (m + 1) * x * 168
                assert win == (m + 1) * x * (168 - 24 + 1)


def blob_dataset(n_per_class=200, n_classes=3, seed=0, spread=0.1,
                 shuffle_labels=False):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 1, (n_classes, SELECTOR_INPUT))
    x = np.concatenate([centers[c] + rng.normal(0, spread, (n_per_class, SELECTOR_INPUT))
                        for c in range(n_classes)])
    y = np.repeat(np.arange(n_classes), n_per_class)
    if shuffle_labels:
        y = rng.permutation(y)
    return SelectorDataset(x=x, y=y, provenance=[(0, "BasicLB", 0)] * len(y),
                           n_raw_samples=len(y), ue_norm=30.0, t_ref_mbps=8.0)


class TestSelectorNet:
    def test_softmax_probability_vector(self):
        torch.manual_seed(0)
        net = SelectorNet(n_classes=5)
        x = np.random.default_rng(0).normal(0, 1, (7, SELECTOR_INPUT))
        p = net.predict_proba(x)
        assert p.shape == (7, 5)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_inference_independent_of_batch(self):
        torch.manual_seed(1)
        net = SelectorNet(n_classes=3)
        rng = np.random.default_rng(1)
        a = rng.normal(0, 1, SELECTOR_INPUT)
        b = rng.normal(0, 1, SELECTOR_INPUT)
        solo = net.predict_proba(a)[0]
        batched = net.predict_proba(np.stack([a, b]))[0]
        np.testing.assert_array_equal(solo, batched)

    def test_zeroed_head_ties_break_low(self):
        torch.manual_seed(2)
        net = SelectorNet(n_classes=4)
        with torch.no_grad():
            net.net[-1].weight.zero_()
            net.net[-1].bias.zero_()
        frames = np.zeros((WINDOW_T, 12))
        assert select(net, frames) == 0

    def test_select_validates_input(self):
        net = SelectorNet(n_classes=2)
        with pytest.raises(ValueError):
            select(net, np.zeros((10, 12)))
        bad = np.zeros((WINDOW_T, 12))
        bad[0, 0] = np.inf
        with pytest.raises(ValueError):
            select(net, bad)

    def test_round_trip(self, tmp_path):
        torch.manual_seed(3)
        net = SelectorNet(n_classes=3)
        net.eval()
        path = tmp_path / "sel.lbsn"
        net.save(path, metadata={"note": 1})
        loaded, meta = SelectorNet.load(path)
        assert meta["note"] == 1
        x = np.random.default_rng(2).normal(0, 1, (4, SELECTOR_INPUT))
        np.testing.assert_array_equal(net.predict_proba(x), loaded.predict_proba(x))

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "sel.lbsn"
        path.write_bytes(b"LBSNgarbage")
        with pytest.raises(CorruptFileError):
            SelectorNet.load(path)


class TestDataset:
    def test_round_trip(self, tmp_path):
        ds = blob_dataset(20, 3)
        path = tmp_path / "d.lbsd"
        ds.save(path)
        loaded = SelectorDataset.load(path)
        np.testing.assert_array_equal(ds.x, loaded.x)
        np.testing.assert_array_equal(ds.y, loaded.y)
        assert loaded.n_raw_samples == ds.n_raw_samples
        assert loaded.provenance == ds.provenance


class TestTraining:
    def test_separable_blobs(self):
        net, report = train_selector(blob_dataset(120, 3), seed=0)
        assert report["val_accuracy"] >= 0.90

    def test_shuffled_labels_at_chance(self):
        net, report = train_selector(blob_dataset(120, 4, shuffle_labels=True),
                                     seed=0, max_epochs=30)
        assert abs(report["val_accuracy"] - 0.25) < 0.1

    def test_deterministic(self):
        _, r1 = train_selector(blob_dataset(60, 3), seed=5, max_epochs=15)
        _, r2 = train_selector(blob_dataset(60, 3), seed=5, max_epochs=15)
        assert r1 == r2

    def test_single_class_rejected(self):
        ds = blob_dataset(50, 3)
        ds.y[:] = 0
        with pytest.raises(ValueError):
            train_selector(ds)

    def test_split_coverage_enforced(self):
        ds = blob_dataset(50, 3)
        ds.y[ds.y == 2] = 1
        ds.y[0] = 2  # a class with one sample cannot reach both splits
        with pytest.raises(ValueError):
            train_selector(ds)


class TestGradientCheck:
    @pytest.mark.parametrize("seed", range(5))
    def test_cross_entropy_fd_agreement(self, seed):
        torch.manual_seed(seed)
        net = SelectorNet(n_classes=3, input_dim=12)
        rng = np.random.default_rng(seed)
        x = rng.normal(0, 1, (16, 12))
        y = rng.integers(0, 3, 16)
        assert check_gradients(net, x, y, seed=seed) < 1e-4


def trained_small(fast_sim, scenarios):
    """A 2-policy bank of untrained nets over 2 scenarios plus a selector
    trained on the collected windows."""
    torch.manual_seed(9)
    bank = PolicyBank(entries=[
        BankEntry(policy_id=k, net=PolicyNet(hidden=(8, 8)), scenario_id=s.id,
                  group_label=None, config_hash="x")
        for k, s in enumerate(scenarios)])
    ds = collect_dataset(bank, scenarios, seed=0, sim_config=fast_sim, hours=48)
    net, report = train_selector(ds, seed=0, max_epochs=40)
    return bank, net, ds


class TestCollectionAndLoop:
    def test_collect_counts_and_labels(self, fast_sim, small_scenarios):
        scens = small_scenarios[:2]
        bank, net, ds = trained_small(fast_sim, scens)
        raw, win = sample_counts(2, 2, hours=48)
        assert ds.n_raw_samples == raw
        assert len(ds.y) == win
        assert set(ds.y) == {0, 1}
        # windows never cross runs: every window starts within one run
        assert all(0 <= w <= 48 - WINDOW_T for (_, _, w) in ds.provenance)
        actors = {a for (_, a, _) in ds.provenance}
        assert actors == {"BasicLB", "pi0", "pi1"}

    def test_loop_protocol(self, fast_sim, small_scenarios):
        scens = [small_scenarios[0], small_scenarios[2]]
        bank, net, _ = trained_small(fast_sim, scens)
        log = run_selection_loop(net, bank, scens[0], days=3, seed=0,
                                 sim_config=fast_sim)
        assert len(log.day_rewards) == 3
        assert log.selected[0] is None
        assert all(p in (0, 1) for p in log.selected[1:])
        assert len(log.records) == 72
        assert log.scored_mean_reward == pytest.approx(np.mean(log.day_rewards[1:]))

    def test_first_day_only_freezes(self, fast_sim, small_scenarios):
        scens = [small_scenarios[0], small_scenarios[2]]
        bank, net, _ = trained_small(fast_sim, scens)
        log = run_selection_loop(net, bank, scens[0], days=4, seed=0,
                                 mode="first_day_only", sim_config=fast_sim)
        assert len(set(log.selected[1:])) == 1

    def test_loop_validation(self, fast_sim, small_scenarios):
        scens = [small_scenarios[0], small_scenarios[2]]
        bank, net, _ = trained_small(fast_sim, scens)
        with pytest.raises(ValueError):
            run_selection_loop(net, bank, scens[0], days=1, sim_config=fast_sim)
        with pytest.raises(ValueError):
            run_selection_loop(net, bank, scens[0], days=3, mode="weekly",
                               sim_config=fast_sim)

    def test_loop_determinism(self, fast_sim, small_scenarios):
        scens = [small_scenarios[0], small_scenarios[2]]
        bank, net, _ = trained_small(fast_sim, scens)
        a = run_selection_loop(net, bank, scens[1], days=3, seed=2,
                               sim_config=fast_sim)
        b = run_selection_loop(net, bank, scens[1], days=3, seed=2,
                               sim_config=fast_sim)
        assert a.day_rewards == b.day_rewards and a.selected == b.selected
