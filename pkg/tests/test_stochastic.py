import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parksim.domain import ConfigError
from parksim.stochastic import (
    DEFAULT_HOURLY_RATES,
    NO_MORE_ARRIVALS,
    QueueReport,
    TrafficProfile,
    analyze,
    littles_law,
    next_arrival,
    p_full,
    poisson_pmf,
    vent_response,
)

# frozen from a 50-digit mpmath evaluation of 4^4 e^-4 / 4!
P_FULL_4_4 = 0.19536681481316456


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


class TestPoissonPmf:
    def test_empty_process(self):
        assert poisson_pmf(0, 0) == 1.0
        assert poisson_pmf(0, 3) == 0.0

    def test_against_high_precision_oracle(self):
        assert poisson_pmf(4, 4) == pytest.approx(P_FULL_4_4, abs=1e-12)
        assert abs(poisson_pmf(4, 4) - 0.19537) < 1e-5

    def test_log_space_branch_continuous_at_cutover(self):
        # direct formula at k=20 vs log-space at k=21 on the same distribution
        direct = 12.0**20 * math.exp(-12.0) / math.factorial(20)
        assert poisson_pmf(12.0, 20) == pytest.approx(direct, rel=1e-12)
        ratio = poisson_pmf(12.0, 21) / poisson_pmf(12.0, 20)
        assert ratio == pytest.approx(12.0 / 21.0, rel=1e-9)

    def test_large_k_no_overflow(self):
        value = poisson_pmf(500.0, 500)
        assert 0.0 < value < 1.0

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            poisson_pmf(-1.0, 0)

    @pytest.mark.parametrize("lam", [0.5, 4.0, 30.0, 200.0])
    def test_partial_sums_reach_one(self, lam):
        k_max = int(lam + 10 * math.sqrt(lam) + 20)
        total = sum(poisson_pmf(lam, k) for k in range(k_max + 1))
        assert total <= 1.0 + 1e-12
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_montecarlo_agreement_light(self):
        draws = rng(5).poisson(4.0, size=100_000)
        empirical = np.mean(draws == 4)
        assert abs(empirical - p_full(4.0, 4)) < 0.01


class TestPFull:
    def test_matches_pmf(self):
        assert p_full(4.0, 4) == poisson_pmf(4.0, 4)

    def test_zero_slots_is_e_to_minus_lambda(self):
        assert p_full(3.0, 0) == pytest.approx(math.exp(-3.0), rel=1e-12)

    def test_zero_rate_never_full(self):
        assert p_full(0.0, 4) == 0.0


class TestLittlesLaw:
    def test_direct_products(self):
        assert littles_law(10, 0.5) == 5
        assert littles_law(0, 2) == 0
        assert littles_law(100, 0.25) == 25

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            littles_law(-1, 1)


class TestVentResponse:
    def test_quotients(self):
        assert vent_response(10, 2) == 5
        assert vent_response(0, 3) == 0

    def test_zero_rate_rejected(self):
        with pytest.raises(ValueError):
            vent_response(5, 0)


class TestNextArrival:
    def test_constant_rate_mean_gap(self):
        profile = TrafficProfile(hourly_rates=(60.0,) * 24, dwell_mean_s=600)
        gen = rng(17)
        t = 0.0
        gaps = []
        for _ in range(100_000):
            nxt = next_arrival(profile, t, gen)
            gaps.append(nxt - t)
            t = nxt
        mean_gap = sum(gaps) / len(gaps)
        assert abs(mean_gap - 60.0) / 60.0 < 0.02

    def test_all_zero_profile_sentinel(self):
        profile = TrafficProfile(hourly_rates=(0.0,) * 24, dwell_mean_s=600)
        assert next_arrival(profile, 0.0, rng()) == NO_MORE_ARRIVALS

    def test_fixed_seed_reproducible(self):
        profile = TrafficProfile()
        seq_a = []
        t = 0.0
        gen = rng(123)
        for _ in range(50):
            t = next_arrival(profile, t, gen)
            seq_a.append(t)
        seq_b = []
        t = 0.0
        gen = rng(123)
        for _ in range(50):
            t = next_arrival(profile, t, gen)
            seq_b.append(t)
        assert seq_a == seq_b

    def test_skips_zero_rate_hours(self):
        rates = [0.0] * 24
        rates[2] = 60.0
        profile = TrafficProfile(hourly_rates=tuple(rates), dwell_mean_s=600)
        nxt = next_arrival(profile, 0.0, rng(1))
        assert 7200.0 <= nxt < 10800.0

    def test_piecewise_rate_honored_across_boundary(self):
        # hour 0 nearly silent, hour 1 busy: arrivals cluster after 3600 s
        rates = [0.001] + [120.0] + [0.001] * 22
        profile = TrafficProfile(hourly_rates=tuple(rates), dwell_mean_s=600)
        gen = rng(2)
        first_hour = 0
        second_hour = 0
        for _ in range(500):
            t = next_arrival(profile, 0.0, gen)
            if t < 3600:
                first_hour += 1
            elif t < 7200:
                second_hour += 1
        assert second_hour > first_hour

    @given(seed=st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=50)
    def test_strictly_advances(self, seed):
        profile = TrafficProfile()
        t = next_arrival(profile, 100.0, rng(seed))
        assert t > 100.0


class TestProfileAndReport:
    def test_default_profile_peaks_at_noon(self):
        assert max(DEFAULT_HOURLY_RATES) == 100.0
        assert DEFAULT_HOURLY_RATES.index(100.0) == 12

    def test_profile_validation(self):
        with pytest.raises(ConfigError):
            TrafficProfile(hourly_rates=(1.0,) * 23).validate()
        with pytest.raises(ConfigError):
            TrafficProfile(hourly_rates=(-1.0,) * 24).validate()
        with pytest.raises(ConfigError):
            TrafficProfile(dwell_mean_s=0).validate()

    def test_queue_report_bounds(self):
        with pytest.raises(ValueError):
            QueueReport(p_full=1.5, expected_occupancy=1.0, vent_response_s=0.0)

    def test_analyze_per_dwell(self):
        report = analyze(4.0, 4, None, 10.0, 2.0, lam_is_per_hour=False)
        assert report.p_full == pytest.approx(P_FULL_4_4, abs=1e-12)
        assert report.expected_occupancy == 4.0
        assert report.vent_response_s == 5.0

    def test_analyze_per_hour_needs_dwell(self):
        with pytest.raises(ConfigError):
            analyze(20.0, 4, None, 0.0, 1.0, lam_is_per_hour=True)
        report = analyze(20.0, 1000, 0.5, 0.0, 1.0, lam_is_per_hour=True)
        assert report.expected_occupancy == 10.0
