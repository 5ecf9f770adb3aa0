import numpy as np
import pytest

from slowmix.sequences import (
    DecaySequence,
    check_ineq_q_gt_2,
    check_ineq_q_lt_2,
    convolve,
    critical_window_probe,
    karamata_check,
    maximal_function,
    stable_power_check,
)


def exact_tail_sequence(length):
    """c_h = h^-2 - (h+1)^-2 for h >= 1: the tail sum past n is exactly
    (n+1)^-2, so the tail exponent is 2 while the terms decay like 2 h^-3."""
    h = np.arange(length, dtype=float)
    vals = np.zeros(length)
    vals[1:] = h[1:] ** -2.0 - (h[1:] + 1.0) ** -2.0
    return DecaySequence(values=vals, q=3.0)


class TestDecaySequence:
    def test_realized_constant_of_pure_power(self):
        c = DecaySequence.power_tail(2.5, 500, constant=1.7)
        assert c.realized_constant == pytest.approx(1.7, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            DecaySequence(values=np.array([1.0, -0.1]), q=2.0)
        with pytest.raises(ValueError):
            DecaySequence(values=np.array([np.nan]), q=2.0)
        with pytest.raises(ValueError):
            DecaySequence(values=np.array([]), q=2.0)

    def test_tail_sum_constant_exact_tail(self):
        c = exact_tail_sequence(10**4)
        # sum_{h>n} c_h = (n+1)^-2 exactly, so n^2 * tail < 1 and -> 1
        t = c.tail_sum_constant(2.0)
        assert 0.9 < t < 1.0


class TestConvolve:
    def test_delta_identity(self):
        c = DecaySequence.power_tail(2.0, 300)
        delta = DecaySequence(values=np.eye(1, 300, 0).ravel(), q=10.0)
        out = convolve(c, delta)
        assert np.array_equal(out.values, c.values)

    def test_commutativity(self):
        rng = np.random.default_rng(11)
        c = DecaySequence(values=rng.random(257), q=0.0)
        d = DecaySequence(values=rng.random(257), q=0.0)
        x, y = convolve(c, d).values, convolve(d, c).values
        assert np.max(np.abs(x - y)) <= 1e-15 * np.max(np.abs(x))

    def test_associativity(self):
        rng = np.random.default_rng(12)
        c, d, e = (DecaySequence(values=rng.random(1000), q=0.0) for _ in range(3))
        x = convolve(convolve(c, d), e).values
        y = convolve(c, convolve(d, e)).values
        assert np.max(np.abs(x - y)) <= 5e-15 * np.max(np.abs(x))
        # unit-scale decaying inputs stay at absolute machine level
        p = DecaySequence.power_tail(2.0, 1000)
        x = convolve(convolve(p, p), p).values
        y = convolve(p, convolve(p, p)).values
        assert np.max(np.abs(x - y)) <= 1e-15

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            convolve(DecaySequence.power_tail(2.0, 10), DecaySequence.power_tail(2.0, 11))

    def test_square_of_quadratic_tail_stays_quadratic(self):
        # self-convolution keeps the decay class; the constant at most squares
        # times a fixed factor (computed value 3.517 at n = 19)
        c = DecaySequence.power_tail(2.0, 10**4)
        out = convolve(c, c)
        assert out.q == 2.0
        r = out.realized_constant
        assert 3.4 < r < 8.0 * c.realized_constant**2


class TestKaramata:
    def test_zero_sequence(self):
        c = DecaySequence(values=np.zeros(100), q=2.0)
        for alpha in (1.0, 2.0, 3.0):
            assert karamata_check(c, alpha, 2.0).sup_constant == 0.0

    def test_tail_branch_exact_quadratic_tail(self):
        c = exact_tail_sequence(10**5)
        rep = karamata_check(c, 1.0, 2.0)
        assert rep.branch == "tail"
        assert 1.0 < rep.sup_constant < 3.0
        assert rep.input_tail_constant < 1.0

    def test_critical_branch(self):
        c = exact_tail_sequence(10**5)
        rep = karamata_check(c, 2.0, 2.0)
        assert rep.branch == "critical"
        assert 0.5 < rep.sup_constant < 3.0

    def test_head_branch(self):
        c = exact_tail_sequence(10**4)
        rep = karamata_check(c, 3.0, 2.0)
        assert rep.branch == "head"
        # sum_{h<n} h^3 c_h ~ 2n, normalized by n^{q-alpha} = n^-1
        assert 1.0 < rep.sup_constant < 4.0

    def test_branch_mismatch_rejected(self):
        c = exact_tail_sequence(100)
        with pytest.raises(ValueError):
            karamata_check(c, 1.0, 2.0, branch="head")
        with pytest.raises(ValueError):
            karamata_check(c, 2.0, 2.0, branch="tail")


class TestMaximalFunction:
    def test_spike(self):
        m = maximal_function(np.array([1.0]), pad=50)
        expected = 1.0 / (2.0 * np.abs(m.n) + 1.0)
        assert np.array_equal(m.values, expected)

    def test_constant_block(self):
        m = maximal_function(np.full(40, 0.7))
        support = (m.n >= 0) & (m.n < 40)
        # the h = 0 window pins the value exactly; wider windows only dilute,
        # up to cumulative-sum round-off
        assert np.all(m.values[support] >= 0.7)
        assert np.all(m.values[support] <= 0.7 + 5e-15)

    def test_dominates_input(self):
        rng = np.random.default_rng(3)
        u = rng.normal(size=200)
        m = maximal_function(u)
        support = (m.n >= 0) & (m.n < 200)
        assert np.all(m.values[support] >= np.abs(u))

    def test_norm_requires_p_above_one(self):
        m = maximal_function(np.ones(4))
        with pytest.raises(ValueError):
            m.norm(1.0)

    def test_out_of_range_lookup(self):
        m = maximal_function(np.ones(4), pad=2)
        with pytest.raises(IndexError):
            m(100)

    def test_l2_ratio_stable_under_doubling(self):
        rng = np.random.default_rng(21)
        maxima = {}
        for L in (256, 512):
            ratios = []
            for _ in range(150):
                u = rng.normal(size=L)
                m = maximal_function(u, pad=64)
                ratios.append(m.norm(2.0) / np.linalg.norm(u))
            maxima[L] = max(ratios)
            assert maxima[L] < 4.0
        assert maxima[512] <= 1.25 * maxima[256]


def brute_gt2_lhs(a, u, q):
    H, L = len(a), u.size
    P = 2.0 * q - 2.0
    total = 0.0
    for h in range(H):
        for n in range(-h, L + h):
            w = u[max(n - h, 0) : min(n + h + 1, L)].sum()
            total += a.values[h] * abs(w) ** P
    return total


class TestIneqGt2:
    def test_spike_closed_form(self):
        a = DecaySequence.power_tail(3.5, 200)
        rep = check_ineq_q_gt_2(a, np.array([1.0]), 2.5)
        h = np.arange(200, dtype=float)
        expected = np.sum(a.values * (2.0 * h + 1.0))
        assert rep.rhs == 1.0
        assert rep.lhs_core == pytest.approx(expected, rel=1e-14)
        assert rep.ratio_upper > rep.ratio

    def test_zero_input(self):
        a = DecaySequence.power_tail(3.5, 50)
        rep = check_ineq_q_gt_2(a, np.zeros(30), 2.5)
        assert rep.ratio == 0.0 and rep.ratio_upper == 0.0

    def test_domain_rejections(self):
        a = DecaySequence.power_tail(3.5, 50)
        with pytest.raises(ValueError):
            check_ineq_q_gt_2(a, np.ones(4), 2.0)
        light = DecaySequence.power_tail(2.5, 50)
        with pytest.raises(ValueError):
            check_ineq_q_gt_2(light, np.ones(4), 2.5)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        a = DecaySequence.power_tail(3.5, 6)
        u = rng.normal(size=12)
        rep = check_ineq_q_gt_2(a, u, 2.5)
        assert rep.lhs_core == pytest.approx(brute_gt2_lhs(a, u, 2.5), rel=1e-13)

    def test_homogeneity_and_translation(self):
        rng = np.random.default_rng(6)
        a = DecaySequence.power_tail(3.5, 64)
        u = rng.normal(size=40)
        base = check_ineq_q_gt_2(a, u, 2.5)
        for lam in (2.0, 3.7, 0.013):
            scaled = check_ineq_q_gt_2(a, lam * u, 2.5)
            assert scaled.ratio == pytest.approx(base.ratio, rel=1e-12)
        shifted = np.concatenate((np.zeros(17), u, np.zeros(5)))
        moved = check_ineq_q_gt_2(a, shifted, 2.5)
        assert moved.lhs_core == base.lhs_core and moved.rhs == base.rhs

    def test_ladder_drift(self):
        rng = np.random.default_rng(7)
        a = DecaySequence.power_tail(3.5, 128)
        worst = {}
        for L in (64, 128, 256):
            worst[L] = max(
                check_ineq_q_gt_2(a, rng.normal(size=L), 2.5).ratio for _ in range(60)
            )
        assert worst[256] <= 1.5 * worst[64]

    def test_tail_bound_shrinks_with_stored_length(self):
        rng = np.random.default_rng(8)
        u = rng.normal(size=32)
        short = check_ineq_q_gt_2(DecaySequence.power_tail(3.5, 64), u, 2.5)
        long = check_ineq_q_gt_2(DecaySequence.power_tail(3.5, 2048), u, 2.5)
        assert long.lhs_tail_bound < short.lhs_tail_bound
        assert long.lhs_tail_bound < 1e-3 * long.lhs_core


def kernel_value(h, m, eps):
    return min((h + 1.0) / (1.0 + abs(m) ** (1.0 + eps)), 1.0 / (1.0 + abs(m) ** eps))


def brute_lt2_lhs(a, u, q, eps):
    H, L = len(a), u.size
    total = 0.0
    for h in range(H):
        M = h + L
        for n in range(-M, L + M):
            v = sum(u[i] * kernel_value(h, n - i, eps) for i in range(L))
            total += a.values[h] * abs(v) ** q
    return total


class TestIneqLt2:
    def test_spike_against_direct_kernel_sums(self):
        a = DecaySequence.power_tail(3.5, 30)
        rep = check_ineq_q_lt_2(a, np.array([1.0]), 1.5, 0.5)
        direct = 0.0
        for h in range(30):
            m = np.arange(-(h + 1), h + 2, dtype=float)
            row = np.minimum((h + 1.0) / (1.0 + np.abs(m) ** 1.5), 1.0 / (1.0 + np.abs(m) ** 0.5))
            direct += a.values[h] * np.sum(row * np.sqrt(row))
        assert rep.rhs == 1.0
        assert rep.lhs_core == pytest.approx(direct, rel=1e-13)
        assert np.isfinite(rep.ratio_upper)

    def test_zero_input(self):
        a = DecaySequence.power_tail(3.5, 20)
        rep = check_ineq_q_lt_2(a, np.zeros(10), 1.5, 0.5)
        assert rep.ratio == 0.0

    def test_domain_rejections(self):
        a = DecaySequence.power_tail(3.5, 20)
        with pytest.raises(ValueError):
            check_ineq_q_lt_2(a, np.ones(4), 1.0, 0.5)
        with pytest.raises(ValueError):
            check_ineq_q_lt_2(a, np.ones(4), 1.5, 1.5)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        a = DecaySequence.power_tail(3.5, 4)
        u = rng.normal(size=5)
        rep = check_ineq_q_lt_2(a, u, 1.5, 0.5)
        assert rep.lhs_core == pytest.approx(brute_lt2_lhs(a, u, 1.5, 0.5), rel=1e-12)

    def test_homogeneity_and_translation(self):
        rng = np.random.default_rng(10)
        a = DecaySequence.power_tail(3.5, 48)
        u = rng.normal(size=33)
        base = check_ineq_q_lt_2(a, u, 1.5, 0.5)
        for lam in (2.0, 0.73):
            scaled = check_ineq_q_lt_2(a, lam * u, 1.5, 0.5)
            assert scaled.ratio == pytest.approx(base.ratio, rel=1e-12)
        shifted = np.concatenate((np.zeros(9), u))
        moved = check_ineq_q_lt_2(a, shifted, 1.5, 0.5)
        assert moved.lhs_core == base.lhs_core and moved.rhs == base.rhs

    def test_ladder_drift(self):
        rng = np.random.default_rng(13)
        a = DecaySequence.power_tail(2.5, 64)
        worst = {}
        for L in (64, 128):
            worst[L] = max(
                check_ineq_q_lt_2(a, rng.normal(size=L), 1.5, 0.5).ratio
                for _ in range(40)
            )
        assert worst[128] <= 1.5 * worst[64]

    def test_enclosure_orders(self):
        rng = np.random.default_rng(14)
        a = DecaySequence.power_tail(3.5, 256)
        u = rng.normal(size=64)
        rep = check_ineq_q_lt_2(a, u, 1.5, 0.5)
        assert rep.ratio_upper >= rep.ratio
        assert np.isfinite(rep.ratio_upper)


class TestCriticalProbe:
    def test_ratio_grows_with_length(self):
        # at the failure endpoint the slowly decaying profile drives the
        # ratio up with length (computed: 4.15 -> 4.56 -> 4.79)
        a = DecaySequence.power_tail(3.5, 256)
        ratios = []
        for L in (64, 256, 1024):
            u = (np.arange(L) + 1.0) ** -0.5
            ratios.append(critical_window_probe(a, u).ratio)
        assert ratios[0] < ratios[1] < ratios[2]
        assert ratios[2] > 1.1 * ratios[0]


class TestStablePower:
    def test_arithmetic_example(self):
        lhs, rhs = stable_power_check(np.array([1.0, 1.0]), np.array([1.0, 2.0]), 2.0)
        assert lhs == 9.0 and rhs == 10.0

    def test_p_one_equality_iff_common_sign(self):
        c = np.array([0.5, 2.0, 1.0])
        same = np.array([1.0, 3.0, 0.25])
        lhs, rhs = stable_power_check(c, same, 1.0)
        assert lhs == pytest.approx(rhs, rel=1e-15)
        mixed = np.array([1.0, -3.0, 0.25])
        lhs, rhs = stable_power_check(c, mixed, 1.0)
        assert lhs < rhs

    def test_rejections(self):
        with pytest.raises(ValueError):
            stable_power_check(np.ones(3), np.ones(3), 0.5)
        with pytest.raises(ValueError):
            stable_power_check(np.array([-1.0, 1.0]), np.ones(2), 2.0)
        with pytest.raises(ValueError):
            stable_power_check(np.ones(3), np.ones(4), 2.0)

    def test_fuzz_never_violated(self):
        rng = np.random.default_rng(99)
        for _ in range(10**4):
            n = rng.integers(1, 9)
            c = rng.random(n)
            u = rng.normal(size=n) * 10.0 ** rng.integers(-3, 4)
            p = 1.0 + 3.0 * rng.random()
            stable_power_check(c, u, p)  # raises on violation
