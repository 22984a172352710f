import numpy as np
import pytest

from twoswitch.channel import (
    ChannelSchedule,
    PuTopology,
    probabilities,
    sample,
    sample_batch,
    shared_inactive_given_sr,
    step_probabilities,
)
from twoswitch.errors import ValidationError


def topo(h, m, o, ps):
    return PuTopology(h=h, m=m, o=o, inactivity=tuple(ps))


FIG2 = topo(1, 1, 1, [0.8, 0.8, 0.8])          # one PU per region
FIG2_P1_HALF = topo(1, 1, 1, [0.5, 0.8, 0.8])  # busier transmitter-side PU


class TestProbabilities:
    def test_three_pu_layout(self):
        pr = probabilities(FIG2)
        assert pr.p == pytest.approx(0.8)
        assert pr.q == pytest.approx(0.64)
        assert pr.gamma == pytest.approx(0.64)

    def test_empty_transmitter_region_gives_p_one(self):
        pr = probabilities(topo(0, 2, 1, [0.9, 0.8, 0.7]))
        assert pr.p == 1.0
        assert 0.0 < pr.p_d0 < 1.0

    def test_no_receiver_only_pus_forces_p_d0_zero(self):
        # with o = 0, s_r = 0 requires an active shared PU, so s_t = 0 too
        pr = probabilities(topo(0, 2, 0, [0.9, 0.8]))
        assert pr.p_d0 == 0.0

    def test_p_d0_worked_value(self):
        pr = probabilities(FIG2_P1_HALF)
        assert pr.p == pytest.approx(0.5)
        assert pr.p_d0 == pytest.approx((0.5 * 0.8 * 0.2) / (1.0 - 0.64), rel=1e-12)

    def test_q_one_convention(self):
        pr = probabilities(topo(1, 1, 1, [0.5, 1.0, 1.0]))
        assert pr.q == 1.0
        assert pr.p_d0 == 0.0

    def test_total_probability_identity_random_topologies(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            h, m, o = rng.integers(0, 4, size=3)
            ps = rng.uniform(0.05, 0.95, size=int(h + m + o))
            pr = probabilities(topo(int(h), int(m), int(o), ps))
            if pr.q < 1.0:
                assert pr.gamma == pytest.approx(pr.p * pr.q + pr.p_d0 * (1 - pr.q), abs=1e-12)

    def test_p_ignores_shared_and_receiver_pus(self):
        base = probabilities(topo(2, 2, 2, [0.7, 0.6, 0.5, 0.4, 0.3, 0.2])).p
        perturbed = probabilities(topo(2, 2, 2, [0.7, 0.6, 0.9, 0.8, 0.7, 0.6])).p
        assert base == pytest.approx(perturbed, abs=1e-15)

    def test_joint_weights_sum_to_one(self):
        w = probabilities(FIG2_P1_HALF).joint_weights()
        assert sum(w) == pytest.approx(1.0, abs=1e-12)


class TestSampling:
    def test_all_inactive_prob_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = sample(topo(1, 1, 1, [1.0, 1.0, 1.0]), rng)
            assert (s.s_t, s.s_r) == (1, 1)

    def test_all_active_prob_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = sample(topo(1, 1, 1, [0.0, 0.0, 0.0]), rng)
            assert (s.s_t, s.s_r) == (0, 0)

    def test_joint_frequency_matches_product(self):
        rng = np.random.default_rng(123)
        n = 1_000_000
        s_t, s_r = sample_batch(FIG2, rng, n)
        p_joint = 0.8 ** 3
        freq = np.mean((s_t == 1) & (s_r == 1))
        sigma = np.sqrt(p_joint * (1 - p_joint) / n)
        assert abs(freq - p_joint) < 3 * sigma

    def test_conditional_frequency_matches_p(self):
        rng = np.random.default_rng(7)
        n = 1_000_000
        s_t, s_r = sample_batch(FIG2_P1_HALF, rng, n)
        mask = s_r == 1
        p_hat = np.mean(s_t[mask] == 1)
        sigma = np.sqrt(0.5 * 0.5 / mask.sum())
        assert abs(p_hat - 0.5) < 3 * sigma

    def test_conditional_p_d0_frequency(self):
        rng = np.random.default_rng(11)
        n = 1_000_000
        s_t, s_r = sample_batch(FIG2_P1_HALF, rng, n)
        mask = s_r == 0
        pr = probabilities(FIG2_P1_HALF)
        p_hat = np.mean(s_t[mask] == 1)
        sigma = np.sqrt(pr.p_d0 * (1 - pr.p_d0) / mask.sum())
        assert abs(p_hat - pr.p_d0) < 3 * sigma

    def test_no_receiver_only_pus_invariant(self):
        rng = np.random.default_rng(3)
        s_t, s_r = sample_batch(topo(1, 2, 0, [0.7, 0.6, 0.5]), rng, 10_000)
        assert not np.any((s_r == 0) & (s_t == 1) & (np.ones_like(s_t, bool)))

    def test_batch_matches_sequential(self):
        t = FIG2_P1_HALF
        batch = sample_batch(t, np.random.default_rng(99), 64)
        seq_rng = np.random.default_rng(99)
        seq = [sample(t, seq_rng) for _ in range(64)]
        assert np.array_equal(batch[0], [s.s_t for s in seq])
        assert np.array_equal(batch[1], [s.s_r for s in seq])


class TestSchedule:
    def test_single_channel_matches_probabilities(self):
        sched = ChannelSchedule(channels=(FIG2,), selection=(1, 1, 1))
        assert step_probabilities(sched, 2) == probabilities(FIG2)

    def test_alternating_lookup(self):
        sched = ChannelSchedule(channels=(FIG2, FIG2_P1_HALF), selection=(1, 2, 1, 2))
        assert step_probabilities(sched, 1).p == pytest.approx(0.8)
        assert step_probabilities(sched, 2).p == pytest.approx(0.5)
        assert step_probabilities(sched, 3).p == pytest.approx(0.8)

    def test_random_schedule_matches_per_channel_oracle(self):
        rng = np.random.default_rng(17)
        channels = (FIG2, FIG2_P1_HALF, topo(2, 0, 1, [0.9, 0.7, 0.6]))
        selection = tuple(int(i) for i in rng.integers(1, 4, size=50))
        sched = ChannelSchedule(channels=channels, selection=selection)
        for k, i in enumerate(selection, start=1):
            assert step_probabilities(sched, k) == probabilities(channels[i - 1])

    def test_out_of_range_step(self):
        sched = ChannelSchedule(channels=(FIG2,), selection=(1,))
        with pytest.raises(ValidationError):
            step_probabilities(sched, 2)

    def test_bad_selection_rejected(self):
        with pytest.raises(ValidationError):
            ChannelSchedule(channels=(FIG2,), selection=(2,))


class TestValidation:
    def test_probability_out_of_range(self):
        with pytest.raises(ValidationError, match="inactivity"):
            topo(1, 0, 0, [1.2])

    def test_count_mismatch(self):
        with pytest.raises(ValidationError):
            topo(1, 1, 1, [0.5, 0.5])

    def test_negative_count(self):
        with pytest.raises(ValidationError):
            PuTopology(h=-1, m=1, o=1, inactivity=(0.5,))


class TestSharedInactiveGivenSr:
    def test_sr_one_forces_shared_quiet(self):
        assert shared_inactive_given_sr(FIG2)[1] == 1.0

    def test_given_sr_zero_matches_monte_carlo(self):
        t = FIG2_P1_HALF
        given0, _ = shared_inactive_given_sr(t)
        rng = np.random.default_rng(21)
        n = 500_000
        u = rng.random((n, 3))
        inactive = u < np.array(t.inactivity)
        s_r = inactive[:, 1] & inactive[:, 2]
        shared_quiet = inactive[:, 1]
        p_hat = np.mean(shared_quiet[~s_r])
        sigma = np.sqrt(given0 * (1 - given0) / (~s_r).sum())
        assert abs(p_hat - given0) < 3 * sigma
