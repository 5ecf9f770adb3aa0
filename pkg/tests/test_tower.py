"""Tower construction, exact measure arithmetic, sampling laws, interval map."""

import numpy as np
import pytest

from slowmix.towers import (
    LsvParams,
    ReturnTimeOverflow,
    TailLaw,
    TowerPoint,
    birkhoff_sum,
    build_tower,
    build_tower_from_probs,
    lsv_map,
    lsv_return_time,
    lsv_return_times,
)
from slowmix.observables import base_indicator_observable, constant_observable


class TestTailLaw:
    def test_validation(self):
        with pytest.raises(ValueError):
            TailLaw(q=1.0)
        with pytest.raises(ValueError):
            TailLaw(q=0.5)
        with pytest.raises(ValueError):
            TailLaw(q=2, C=0.0)
        with pytest.raises(ValueError):
            TailLaw(q=2, h_max=0)
        with pytest.raises(ValueError):
            TailLaw(q=2, C2=0.5)  # correction term without epsilon

    def test_tau_monotone_and_normalized(self):
        law = TailLaw(q=1.5, C=2.0, epsilon=0.5, C2=1.0, h_max=2000)
        n = np.arange(1, law.h_max + 1)
        t = law.tau(n)
        assert t[0] == 1.0
        assert np.all(np.diff(t) <= 0)
        assert np.all((t >= 0) & (t <= 1))
        p = law.probs()
        assert p[0] == 0.0
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) < 1e-12

    def test_crossover_and_realized_constant(self):
        law = TailLaw(q=2.0, C=100.0, h_max=10**4)
        # raw(10) = 100/100 = 1 still saturates; raw(11) < 1.
        assert law.crossover == 11
        pure = TailLaw(q=2.0, C=1.0, h_max=10**4)
        assert pure.crossover == 2
        assert pure.realized_constant() == pytest.approx(1.0, abs=1e-12)

    def test_lumped_mass(self):
        law = TailLaw(q=1.5, C=1.0, h_max=10**4)
        assert law.lumped_mass() == pytest.approx((10**4 + 1) ** -1.5, rel=1e-12)


class TestBuildTower:
    def test_q2_base_measure_matches_zeta(self):
        # E[phi] = sum_{n<=h_max} tau(n) is a partial zeta(2) sum; the missing
        # tail is about 1/h_max, so mu_Y sits within 1e-6 of 6/pi^2.
        model = build_tower(TailLaw(q=2.0, C=1.0, h_max=10**6))
        assert abs(model.mu_Y - 6.0 / np.pi**2) < 1e-6

    def test_degenerate_single_branch(self):
        model = build_tower_from_probs([1], [1.0])
        assert model.mu_Y == 1.0
        assert model.mean_return == 1.0

    def test_two_point_law(self):
        model = build_tower_from_probs([1, 2], [0.5, 0.5])
        assert model.mean_return == pytest.approx(1.5, abs=1e-15)
        assert model.mu_Y == pytest.approx(2.0 / 3.0, abs=1e-15)

    def test_mean_return_is_tau_sum(self):
        law = TailLaw(q=1.5, C=1.0, h_max=5000)
        model = build_tower(law)
        n = np.arange(1, law.h_max + 1)
        assert model.mean_return == pytest.approx(float(law.tau(n).sum()), rel=1e-13)

    def test_bad_probs_rejected(self):
        with pytest.raises(ValueError):
            build_tower_from_probs([1, 2], [0.5, 0.6])
        with pytest.raises(ValueError):
            build_tower_from_probs([0, 2], [0.5, 0.5])

    def test_finite_base_stationary_vector(self):
        rows = np.array([[0.0, 1.0], [1.0, 0.0]])
        model = build_tower_from_probs([1, 2], [0.5, 0.5], base_states=2, transition_rule=rows)
        assert np.allclose(model.nu, [0.5, 0.5], atol=1e-12)
        P = model.base_transition_matrix()
        assert np.allclose(model.nu @ P, model.nu, atol=1e-12)

    def test_nonstochastic_rows_rejected(self):
        rows = np.array([[0.3, 0.3], [0.5, 0.5]])
        with pytest.raises(ValueError):
            build_tower_from_probs([1, 2], [0.5, 0.5], base_states=2, transition_rule=rows)


class TestMeasureArithmetic:
    def test_level_and_column_masses(self):
        model = build_tower_from_probs([1, 5], [0.9, 0.1])
        assert model.mean_return == pytest.approx(1.4, abs=1e-15)
        mu_Y = 1.0 / 1.4
        assert model.level_mass(5, 3) == pytest.approx(0.1 * mu_Y, rel=1e-14)
        assert model.column_mass(5) == pytest.approx(0.5 * mu_Y, rel=1e-14)
        assert model.mass_height_ge(2) == pytest.approx(0.5 / 1.4, rel=1e-14)
        # total mass: levels >= 0 is everything.
        assert model.mass_level_ge(0) == pytest.approx(1.0, rel=1e-14)

    def test_mass_level_ge_matches_direct_sum(self):
        model = build_tower(TailLaw(q=1.5, C=1.0, h_max=300))
        h = model.heights
        for m in (0, 1, 2, 10, 50):
            direct = model.mu_Y * float(np.sum(np.maximum(h - m, 0) * model.p[h]))
            assert model.mass_level_ge(m) == pytest.approx(direct, rel=1e-12, abs=1e-15)


class TestSampling:
    def test_point_mass_height(self):
        model = build_tower_from_probs([3], [1.0])
        rng = np.random.default_rng(0)
        assert np.all(model.sample_return_time(rng, size=100) == 3)

    def test_two_point_frequency(self):
        model = build_tower_from_probs([1, 2], [0.5, 0.5])
        rng = np.random.default_rng(1)
        h = model.sample_return_time(rng, size=10**6)
        assert abs(np.mean(h == 1) - 0.5) < 0.002

    def test_heavy_tail_fraction(self):
        law = TailLaw(q=1.5, C=1.0, h_max=10**5)
        model = build_tower(law)
        rng = np.random.default_rng(2)
        h = model.sample_return_time(rng, size=10**6)
        expect = float(law.tau(100))
        assert abs(np.mean(h >= 100) / expect - 1.0) < 0.1

    def test_conditional_sampling_renormalizes(self):
        model = build_tower_from_probs([1, 2, 8], [0.5, 0.3, 0.2])
        rng = np.random.default_rng(3)
        h = model.sample_return_time(rng, size=4000, lo=2)
        assert set(np.unique(h)) == {2, 8}
        assert abs(np.mean(h == 2) - 0.6) < 0.03
        assert np.all(model.sample_return_time(rng, size=50, lo=8) == 8)
        with pytest.raises(ValueError):
            model.sample_return_time(rng, size=5, lo=3, hi=7)

    def test_stationary_law(self):
        model = build_tower_from_probs([1, 5], [0.9, 0.1])
        rng = np.random.default_rng(4)
        h, i, s = model.sample_stationary(rng, size=10**5)
        assert np.all(i < h)
        target = model.column_mass(5)
        assert abs(np.mean(h == 5) - target) < 0.005
        # levels uniform within the tall column
        lv = i[h == 5]
        counts = np.bincount(lv, minlength=5) / lv.size
        assert np.max(np.abs(counts - 0.2)) < 0.01


class TestIterate:
    def test_climbing_rule(self):
        model = build_tower_from_probs([3], [1.0])
        rng = np.random.default_rng(5)
        pt = TowerPoint(3, 0)
        pt = model.iterate(pt, rng)
        assert (pt.height, pt.level) == (3, 1)
        pt = model.iterate(pt, rng)
        assert (pt.height, pt.level) == (3, 2)
        pt = model.iterate(pt, rng)
        assert (pt.height, pt.level) == (3, 0)

    def test_single_branch_fixed_class(self):
        model = build_tower_from_probs([1], [1.0])
        rng = np.random.default_rng(6)
        pt = TowerPoint(1, 0)
        for _ in range(10):
            pt = model.iterate(pt, rng)
            assert (pt.height, pt.level) == (1, 0)

    def test_invalid_point_rejected(self):
        model = build_tower_from_probs([2], [1.0])
        rng = np.random.default_rng(7)
        with pytest.raises(ValueError):
            model.iterate(TowerPoint(2, 2), rng)
        with pytest.raises(ValueError):
            model.iterate(TowerPoint(3, 0), rng)

    def test_levels_stay_below_height(self):
        model = build_tower(TailLaw(q=1.5, C=1.0, h_max=50))
        rng = np.random.default_rng(8)
        pt = model.sample_stationary_point(rng)
        for _ in range(5000):
            pt = model.iterate(pt, rng)
            assert 0 <= pt.level < pt.height


class TestOccupationLaws:
    """Ergodic fractions along one long orbit versus exact level masses.

    The climb is deterministic, so the orbit is simulated by excursions: draw
    the height sequence, then count time in each level set in closed form.
    """

    def _height_stream(self, model, total_time, seed):
        rng = np.random.default_rng(seed)
        out = []
        t = 0
        while t < total_time:
            h = model.sample_return_time(rng, size=200_000)
            out.append(h)
            t += int(h.sum())
        return np.concatenate(out)

    def test_occupation_of_deep_levels(self):
        model = build_tower(TailLaw(q=2.0, C=1.0, h_max=10**5))
        hs = self._height_stream(model, 3 * 10**7, seed=9)
        total = float(hs.sum())
        for m in (1, 4, 10):
            # time at levels i >= m-1 during one column = (h - m + 1)^+
            frac = float(np.maximum(hs - (m - 1), 0).sum()) / total
            expect = model.mass_level_ge(m - 1)
            assert abs(frac / expect - 1.0) < 0.02

    def test_kac_base_fraction(self):
        model = build_tower(TailLaw(q=2.0, C=1.0, h_max=10**5))
        hs = self._height_stream(model, 10**7, seed=10)
        frac = hs.size / float(hs.sum())
        assert abs(frac / model.mu_Y - 1.0) < 0.01


class TestLsv:
    def test_params_validation(self):
        with pytest.raises(ValueError):
            LsvParams(gamma=0.0)
        with pytest.raises(ValueError):
            LsvParams(gamma=1.2)
        with pytest.raises(ValueError):
            LsvParams(gamma=0.5, precision="double")
        assert LsvParams(gamma=1.0).q == 1.0  # boundary case kept for map arithmetic

    def test_map_branches(self):
        p = LsvParams(gamma=1.0)
        assert lsv_map(0.75, p) == pytest.approx(0.5, abs=1e-15)
        assert lsv_map(0.25, p) == pytest.approx(0.375, abs=1e-15)
        with pytest.raises(ValueError):
            lsv_map(1.5, p)

    def test_known_orbit_and_return_time(self):
        p = LsvParams(gamma=1.0)
        orbit = [0.6]
        for _ in range(4):
            orbit.append(float(lsv_map(orbit[-1], p)))
        assert orbit[1] == pytest.approx(0.2, abs=1e-12)
        assert orbit[2] == pytest.approx(0.28, abs=1e-12)
        assert orbit[3] == pytest.approx(0.4368, abs=1e-12)
        assert orbit[4] >= 0.5
        assert lsv_return_time(0.6, p) == 4

    def test_immediate_return(self):
        assert lsv_return_time(0.9, LsvParams(gamma=0.5)) == 1

    def test_overflow_surfaces(self):
        with pytest.raises(ReturnTimeOverflow):
            lsv_return_time(0.5 + 1e-13, LsvParams(gamma=0.9), cap=3)

    def test_vectorized_matches_scalar(self):
        p = LsvParams(gamma=0.7)
        rng = np.random.default_rng(11)
        xs = 0.5 + 0.5 * rng.random(200)
        vec = lsv_return_times(xs, p)
        ref = np.array([lsv_return_time(float(x), p) for x in xs])
        assert np.array_equal(vec, ref)

    def test_tail_exponent(self):
        # gamma = 0.5 means tail index 2; the empirical survival law over
        # uniform starts should fit a slope near -2 on [10, 100].
        p = LsvParams(gamma=0.5)
        rng = np.random.default_rng(12)
        xs = 0.5 + 0.5 * rng.random(10**6)
        phi = lsv_return_times(xs, p, cap=10**7)
        ns = np.arange(10, 101)
        surv = np.array([np.mean(phi >= n) for n in ns])
        slope = np.polyfit(np.log(ns), np.log(surv), 1)[0]
        assert -2.2 < slope < -1.8

    def test_extended_precision_survives_deep_orbit(self):
        p = LsvParams(gamma=0.9, precision="extended")
        t = lsv_return_time(0.500005, p, cap=10**7)
        assert t > 100


class TestBirkhoffSum:
    def test_zero_cases(self):
        model = build_tower_from_probs([1, 2], [0.5, 0.5])
        rng = np.random.default_rng(13)
        zero = constant_observable(model)
        assert birkhoff_sum(model, zero, 50, rng) == 0.0
        f = base_indicator_observable(model)
        assert birkhoff_sum(model, f, 0, rng) == 0.0

    def test_scripted_closed_form(self):
        # return sequence (2, 3) from the base, n = 5, f = 1 - 1_Y/mu(Y):
        # S_5 f = 5 - (#base visits)/mu(Y) = 5 - 2/0.4 = 0.
        model = build_tower_from_probs([2, 3], [0.5, 0.5])
        f = base_indicator_observable(model)
        got = birkhoff_sum(model, f, 5, start=TowerPoint(2, 0), script=[3])
        assert got == pytest.approx(5.0 - 2.0 / model.mu_Y, abs=1e-12)
