import numpy as np
import pytest

from zapslab.schedule import (
    SubSchedule,
    build_irregular_subschedule,
    build_linear_schedule,
    build_uniform_subschedule,
    parse_segment_spec,
    schedule_from_betas,
    subschedule_from_spec,
)

# exact products of (1 - beta_t), computed with 40-digit arithmetic
ALPHA_BAR_GOLDEN = {
    10: 0.99810520478583461889,
    500: 0.078587242881778237343,
    1000: 0.000040358297653756833148,
}

TAU_15_10_5 = [1, 23, 45, 67, 90, 112, 134, 156, 179, 201, 223, 245, 268, 290, 312,
               335, 368, 401, 434, 468, 501, 534, 568, 601, 634,
               668, 734, 801, 867, 934]


class TestLinearSchedule:
    def test_first_alpha_bar(self, schedule):
        assert schedule.alpha_bar(1) == pytest.approx(0.9999, abs=1e-15)

    def test_alpha_bar_zero_is_one(self, schedule):
        assert schedule.alpha_bar(0) == 1.0

    def test_small_betas(self):
        sch = build_linear_schedule(4)
        np.testing.assert_allclose(sch.betas, [1e-4, 0.0067333333333333333, 0.013366666666666667, 0.02],
                                   rtol=1e-14)

    def test_small_alpha_bar_running_product(self):
        sch = build_linear_schedule(4)
        prod = 1.0
        for t in range(1, 5):
            prod *= 1.0 - sch.beta(t)
        assert sch.alpha_bar(4) == pytest.approx(prod, rel=1e-14)
        assert sch.alpha_bar(4) == pytest.approx(0.96029416315756, rel=1e-13)

    @pytest.mark.parametrize("t", sorted(ALPHA_BAR_GOLDEN))
    def test_alpha_bar_golden(self, schedule, t):
        assert schedule.alpha_bar(t) == pytest.approx(ALPHA_BAR_GOLDEN[t], rel=1e-11)

    def test_monotone(self, schedule):
        ab = np.array([schedule.alpha_bar(t) for t in range(0, 1001)])
        assert np.all(np.diff(ab) < 0)

    def test_posterior_sigma(self, schedule):
        t = 200
        expected = np.sqrt((1 - schedule.alpha_bar(t - 1)) / (1 - schedule.alpha_bar(t)) * schedule.beta(t))
        assert schedule.posterior_sigma(t) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("T,lo,hi", [(1, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.02, 0.01), (10, 1e-4, 1.0)])
    def test_rejects_bad_arguments(self, T, lo, hi):
        with pytest.raises(ValueError):
            build_linear_schedule(T, lo, hi)

    def test_from_betas(self):
        sch = schedule_from_betas([0.1, 0.2])
        assert sch.alpha_bar(2) == pytest.approx(0.9 * 0.8)

    @pytest.mark.parametrize("t", [-1, 1001])
    def test_index_out_of_range(self, schedule, t):
        with pytest.raises((IndexError, ValueError)):
            schedule.alpha_bar(t)


class TestSegmentSpec:
    @pytest.mark.parametrize("spec,counts", [("15,10,5", [15, 10, 5]), ("10,7,3", [10, 7, 3]), ("4", [4])])
    def test_parse(self, spec, counts):
        assert parse_segment_spec(spec) == counts

    @pytest.mark.parametrize("spec", ["", "a,b", "3,0", "-1", "2,,3"])
    def test_parse_rejects(self, spec):
        with pytest.raises(ValueError):
            parse_segment_spec(spec)


class TestIrregular:
    def test_hand_enumerated(self):
        assert list(build_irregular_subschedule(12, [2, 2, 2]).tau) == [1, 3, 5, 7, 9, 11]

    def test_full_coverage(self):
        assert list(build_irregular_subschedule(6, [6]).tau) == [1, 2, 3, 4, 5, 6]

    def test_default_schedule(self):
        sub = build_irregular_subschedule(1000, [15, 10, 5])
        assert list(sub.tau) == TAU_15_10_5
        assert sub.S == 30
        assert sum(t <= 334 for t in sub.tau) == 15

    def test_single_segment_is_uniform(self):
        assert build_irregular_subschedule(10, [5]).tau == build_uniform_subschedule(10, 5).tau

    def test_too_many_steps(self):
        with pytest.raises(ValueError):
            build_irregular_subschedule(10, [8, 8])

    def test_segment_overflow(self):
        with pytest.raises(ValueError):
            build_irregular_subschedule(12, [5, 1, 1])

    def test_previous(self):
        sub = build_irregular_subschedule(12, [2, 2, 2])
        assert sub.previous(0) == 0
        assert sub.previous(3) == 5


class TestUniform:
    def test_identity(self):
        assert list(build_uniform_subschedule(1000, 1000).tau) == list(range(1, 1001))

    def test_small(self):
        assert list(build_uniform_subschedule(10, 5).tau) == [1, 3, 5, 7, 9]

    def test_gaps_balanced(self):
        tau = np.array(build_uniform_subschedule(1000, 30).tau)
        gaps = np.diff(tau)
        assert np.all(gaps > 0)
        assert gaps.max() - gaps.min() <= 1

    def test_from_spec(self):
        assert subschedule_from_spec(1000, "15,10,5", "uniform").S == 30
        with pytest.raises(ValueError):
            subschedule_from_spec(1000, "15,10,5", "cosine")

    def test_subschedule_validation(self):
        with pytest.raises(ValueError):
            SubSchedule(10, (3, 2), "irregular", (2,))
