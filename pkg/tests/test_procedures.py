import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhobh.baselines import bh
from rhobh.core import (
    DegenerateInputError,
    InvalidInputError,
    ProcedureConfig,
    SplitAssignment,
    TestInstance,
    split_data,
)
from rhobh.dist import (
    ClosedFormNullCdf,
    EmpiricalNullCdf,
    EmpiricalNullCdfBatch,
    Normal,
    NormalLocationNullCdf,
    NormalLocationNullCdfBatch,
)
from rhobh.procedures import (
    RhoProblem,
    compute_rho,
    harmonic,
    rho_bh,
    rho_bh_by,
    rho_bh_dd,
    rho_bh_side_dd,
    side_info_rho_bh,
    side_info_threshold_form,
    weighted_rho_bh,
    weighted_rho_bh_dd,
    zap_variant,
)
from rhobh.simulation import fdp, gen_null_only, power_prop

CLIP = ClosedFormNullCdf(lambda t: np.minimum(np.asarray(t, dtype=float), 1.0), descriptor="min(t,1)")


def _uniform_cdf_from_rho():
    return ClosedFormNullCdf(lambda t: np.clip(np.asarray(t, dtype=float), 0.0, 1.0), descriptor="identity")


# ---------------------------------------------------------------------------
# compute_rho
# ---------------------------------------------------------------------------


class TestComputeRho:
    def test_at_one(self):
        assert compute_rho([1.0], Normal(0, 1), Normal(2, 1))[0] == pytest.approx(1.0, rel=1e-14)

    def test_at_zero(self):
        oracle = float(mpmath.e ** 2)
        assert compute_rho([0.0], Normal(0, 1), Normal(2, 1))[0] == pytest.approx(oracle, rel=1e-13)

    @given(st.floats(-30, 30))
    @settings(max_examples=50, deadline=None)
    def test_matches_mpmath_ratio(self, x):
        got = compute_rho([x], Normal(0, 1), Normal(2, 1))[0]
        want = float(mpmath.exp(-mpmath.mpf(x) ** 2 / 2 + (mpmath.mpf(x) - 2) ** 2 / 2))
        assert got == pytest.approx(want, rel=1e-12)

    def test_identical_densities(self):
        x = np.linspace(-5, 5, 41)
        assert np.allclose(compute_rho(x, Normal(0, 1), Normal(0, 1)), 1.0)

    def test_far_tail_does_not_overflow_to_nan(self):
        # both densities underflow in double precision at x=-60, ratio stays exact
        r = compute_rho([-60.0], Normal(0, 1), Normal(2, 1))[0]
        assert r == pytest.approx(math.exp(2 - 2 * -60.0), rel=1e-12)

    def test_g_zero_gives_inf(self):
        class Box(Normal):
            def logpdf(self, x, s=None):
                x = np.asarray(x, dtype=float)
                return np.where(np.abs(x) <= 1, 0.0, -np.inf)

        r = compute_rho([0.5, 3.0], Normal(0, 1), Box())
        assert np.isfinite(r[0]) and r[1] == np.inf

    def test_both_zero_is_degenerate(self):
        class Box(Normal):
            def logpdf(self, x, s=None):
                return np.where(np.abs(np.asarray(x, dtype=float)) <= 1, 0.0, -np.inf)

        with pytest.raises(DegenerateInputError):
            compute_rho([3.0], Box(), Box())


# ---------------------------------------------------------------------------
# rho_bh and rho_bh_by
# ---------------------------------------------------------------------------


class TestRhoBH:
    def test_hand_example(self):
        d = rho_bh([0.05, 0.2, 5.0], CLIP, 0.5, 0.2)
        assert d.reject.tolist() == [True, True, False]
        assert d.k == 2 and d.threshold == 0.2

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=80), st.floats(0.01, 0.5))
    @settings(max_examples=100, deadline=None)
    def test_pi_zero_identity_equals_bh(self, c, alpha):
        c = np.array(c)
        assert np.array_equal(rho_bh(c, _uniform_cdf_from_rho(), 0.0, alpha).reject, bh(c, alpha).reject)

    def test_all_c_one(self):
        d = rho_bh(np.full(10, 3.0), CLIP, 0.0, 0.5)
        assert d.k == 0 and d.threshold == -np.inf

    def test_infinite_rho_never_rejected(self):
        d = rho_bh([0.0, np.inf], CLIP, 0.0, 0.99)
        assert d.reject.tolist() == [True, False]

    @given(st.integers(1, 200), st.integers(0, 10**6), st.floats(0.01, 0.5), st.floats(0.0, 0.9))
    @settings(max_examples=100, deadline=None)
    def test_threshold_sharpness(self, m, seed, alpha, pi):
        rho = np.random.default_rng(seed).exponential(1.0, m) ** 2
        d = rho_bh(rho, CLIP, pi, alpha)
        rs = np.sort(rho)
        k = d.k
        if k < m:
            # every index above k fails the bound (step-up maximality)
            c = np.minimum(rs[k:], 1.0)
            j = np.arange(k + 1, m + 1)
            assert np.all(c > alpha * j / (m * (1 - pi)))
        if k:
            assert min(rs[k - 1], 1.0) <= alpha * k / (m * (1 - pi))

    @given(st.integers(1, 100), st.integers(0, 10**6), st.floats(0.01, 0.45), st.floats(0.01, 0.45))
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_alpha(self, m, seed, a1, a2):
        lo, hi = sorted((a1, a2))
        rho = np.random.default_rng(seed).exponential(0.2, m)
        small, big = rho_bh(rho, CLIP, 0.2, lo), rho_bh(rho, CLIP, 0.2, hi)
        assert not np.any(small.reject & ~big.reject)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_bad_alpha(self, alpha):
        with pytest.raises(InvalidInputError):
            rho_bh([0.1], CLIP, 0.0, alpha)


class TestRhoBY:
    def test_harmonic(self):
        assert Fraction(harmonic(4)).limit_denominator(100) == Fraction(25, 12)
        assert harmonic(1) == 1.0

    def test_m1_equals_rho_bh(self):
        for r in (0.01, 0.04, 0.06, 2.0):
            assert rho_bh_by([r], CLIP, 0.0, 0.05).reject.tolist() == rho_bh([r], CLIP, 0.0, 0.05).reject.tolist()

    def test_m4_effective_level(self):
        rho = np.array([0.001, 0.02, 0.03, 0.5])
        d = rho_bh_by(rho, CLIP, 0.0, 0.1)
        assert d.diagnostics["level"] == pytest.approx(0.1 * 12 / 25, rel=1e-15)
        assert d.reject.tolist() == rho_bh(rho, CLIP, 0.0, 0.1 * 12 / 25).reject.tolist()

    @given(st.integers(1, 200), st.integers(0, 10**6), st.floats(0.01, 0.5))
    @settings(max_examples=80, deadline=None)
    def test_subset_of_rho_bh(self, m, seed, alpha):
        rho = np.random.default_rng(seed).exponential(0.1, m)
        by, plain = rho_bh_by(rho, CLIP, 0.1, alpha), rho_bh(rho, CLIP, 0.1, alpha)
        assert not np.any(by.reject & ~plain.reject)


# ---------------------------------------------------------------------------
# Weighted and side-information step-up
# ---------------------------------------------------------------------------


def _random_side_problem(rng, m, shared):
    rho = rng.exponential(rng.uniform(0.05, 2.0), m)
    if rng.random() < 0.1:
        rho[rng.integers(m)] = np.inf
    pi = rng.uniform(0, 0.8, m)
    eta = rng.uniform(0.02, 0.98, m)
    if shared:
        cdf = EmpiricalNullCdf(rng.exponential(1.0, 300), plus_one=bool(rng.integers(2)))
    else:
        cdf = EmpiricalNullCdfBatch(rng.exponential(rng.uniform(0.2, 3.0, (m, 1)), (m, 64)))
    return rho, pi, eta, cdf


class TestWeighted:
    def test_unit_weights_equal_rho_bh(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            rho = rng.exponential(rng.uniform(0.05, 1.0), 50)
            pi = rng.uniform(0, 0.8)
            alpha = rng.uniform(0.01, 0.4)
            cdf = EmpiricalNullCdf(rng.exponential(1.0, 200))
            a = weighted_rho_bh(rho, np.ones(50), cdf, pi, alpha)
            b = rho_bh(rho, cdf, pi, alpha)
            assert np.array_equal(a.reject, b.reject)

    def test_hand_example(self):
        d = weighted_rho_bh([0.1, 0.3], [1.0, 0.5], CLIP, 0.5, 0.1)
        assert d.diagnostics["q"].tolist() == pytest.approx([0.1, 0.6])
        assert d.reject.tolist() == [True, False]

    def test_alpha_near_one_rejects_everything(self):
        # (1 - pi) * sum c <= (1 - pi) m < alpha j for j = m when alpha > 1 - pi
        rng = np.random.default_rng(3)
        rho = rng.exponential(5.0, 30)
        d = weighted_rho_bh(rho, rng.uniform(0.1, 3, 30), CLIP, 0.05, 0.999)
        assert d.k == 30

    def test_nonpositive_weight(self):
        with pytest.raises(InvalidInputError):
            weighted_rho_bh([0.1, 0.2], [1.0, 0.0], CLIP, 0.0, 0.1)


class TestSideInfo:
    def test_homogeneous_equals_weighted(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            rho = rng.exponential(0.5, 40)
            eta = rng.uniform(0.05, 0.95)
            cdf = EmpiricalNullCdf(rng.exponential(1.0, 150))
            a = side_info_rho_bh(rho, 0.3, eta, cdf, 0.1)
            b = weighted_rho_bh(rho, np.full(40, eta / (1 - eta)), cdf, 0.3, 0.1)
            assert np.array_equal(a.reject, b.reject)

    def test_half_eta_equals_rho_bh(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            rho = rng.exponential(0.3, 40)
            cdf = EmpiricalNullCdf(rng.exponential(1.0, 150))
            a = side_info_rho_bh(rho, 0.2, 0.5, cdf, 0.1)
            assert np.array_equal(a.reject, rho_bh(rho, cdf, 0.2, 0.1).reject)

    def test_hand_example_via_eta(self):
        d = side_info_rho_bh([0.1, 0.3], 0.5, [0.5, 1 / 3], CLIP, 0.1)
        assert d.diagnostics["w"] == pytest.approx([1.0, 0.5], rel=1e-15)
        assert d.reject.tolist() == [True, False]

    def test_list_of_cdfs_matches_batch(self):
        rng = np.random.default_rng(8)
        rho, pi, eta, batch = _random_side_problem(rng, 60, shared=False)
        as_list = [batch[i] for i in range(60)]
        a = side_info_rho_bh(rho, pi, eta, batch, 0.2)
        b = side_info_rho_bh(rho, pi, eta, as_list, 0.2)
        assert np.array_equal(a.reject, b.reject)

    @pytest.mark.parametrize("eta", [0.0, 1.0])
    def test_eta_bounds(self, eta):
        with pytest.raises(InvalidInputError):
            side_info_rho_bh([0.1, 0.2], 0.0, eta, CLIP, 0.1)

    def test_problem_wrapper(self):
        prob = RhoProblem([0.1, 0.3], CLIP, 0.5, [0.5, 1 / 3])
        assert prob.side_info(0.1).reject.tolist() == [True, False]
        assert prob.threshold_form(0.1).reject.tolist() == [True, False]
        with pytest.raises(InvalidInputError):
            RhoProblem([0.1, 0.3], CLIP, [0.1, 0.2, 0.3])

    @given(st.integers(1, 80), st.integers(0, 10**6), st.floats(0.01, 0.45), st.floats(0.01, 0.45))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_alpha(self, m, seed, a1, a2):
        lo, hi = sorted((a1, a2))
        rho, pi, eta, cdf = _random_side_problem(np.random.default_rng(seed), m, shared=False)
        small = side_info_rho_bh(rho, pi, eta, cdf, lo)
        big = side_info_rho_bh(rho, pi, eta, cdf, hi)
        assert not np.any(small.reject & ~big.reject)


class TestThresholdForm:
    @pytest.mark.parametrize("m", [10, 100, 1000])
    def test_equivalence(self, m):
        rng = np.random.default_rng(1000 + m)
        n = {10: 100, 100: 70, 1000: 30}[m]
        for i in range(n):
            rho, pi, eta, cdf = _random_side_problem(rng, m, shared=bool(i % 2))
            alpha = rng.uniform(0.01, 0.5)
            a = side_info_rho_bh(rho, pi, eta, cdf, alpha)
            b = side_info_threshold_form(rho, pi, eta, cdf, alpha)
            assert np.array_equal(a.reject, b.reject)

    def test_no_candidate_passes(self):
        d = side_info_threshold_form(np.full(5, 10.0), 0.0, 0.5, CLIP, 0.1)
        assert d.k == 0

    def test_hand_example(self):
        d = side_info_threshold_form([0.1, 0.3], 0.5, [0.5, 1 / 3], CLIP, 0.1)
        assert d.threshold == pytest.approx(0.1) and d.reject.tolist() == [True, False]


# ---------------------------------------------------------------------------
# ZAP variant
# ---------------------------------------------------------------------------


class TestZap:
    def test_hand_example(self):
        c = np.r_[np.full(10, 0.001), np.full(10, 0.9)]
        d = zap_variant(c, 0.2)
        assert d.k == 10 and d.reject[:10].all()

    def test_all_high(self):
        assert zap_variant(np.full(20, 0.99), 0.2).k == 0

    def test_alpha_one(self):
        assert zap_variant([0.0, 1.0], 1.0).k == 0

    def test_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            m = int(rng.integers(1, 40))
            c = np.round(rng.beta(0.3, 1.0, m), 2)
            alpha = rng.uniform(0.05, 0.9)
            cs = np.sort(c)
            k = 0
            for j in range(1, m + 1):
                if 1 + sum(ci >= 1 - cs[j - 1] for ci in c) <= alpha * j:
                    k = j
            got = zap_variant(c, alpha)
            want = c <= cs[k - 1] if k else np.zeros(m, bool)
            assert np.array_equal(got.reject, want)

    def test_range(self):
        with pytest.raises(InvalidInputError):
            zap_variant([0.5, 1.5], 0.1)


# ---------------------------------------------------------------------------
# Oracle statistical properties
# ---------------------------------------------------------------------------


class TestOracleProperties:
    def test_fdr_with_badly_misspecified_g(self):
        # g = N(-5, 1) while the truth is N(3, 1); c is the exact null CDF of rho
        m, pi, alpha, reps = 2000, 0.1, 0.05, 500
        cdf = NormalLocationNullCdf(-5.0)
        f0, g = Normal(0, 1), Normal(-5, 1)
        rng = np.random.default_rng(2024)
        fdps = []
        for _ in range(reps):
            theta = rng.random(m) < pi
            x = rng.normal(size=m) + 3.0 * theta
            d = rho_bh(compute_rho(x, f0, g), cdf, pi, alpha)
            fdps.append(fdp(d, theta))
        fdps = np.array(fdps)
        assert fdps.mean() <= alpha + 3 * fdps.std(ddof=1) / math.sqrt(reps)

    @pytest.mark.parametrize("mu_g", [0.5, 2.0, -1.0])
    def test_inverse_rho_is_e_value(self, mu_g):
        x = np.random.default_rng(17).normal(size=100_000)
        e = 1.0 / compute_rho(x, Normal(0, 1), Normal(mu_g, 1))
        assert abs(e.mean() - 1.0) <= 0.05

    def test_optimal_threshold_floor(self):
        # oracle g = f1 and known pi: the rejected rho threshold sits above
        # alpha*pi / ((1-pi)(1-alpha))
        m, alpha, pi, mu = 5000, 0.05, 0.2, 2.5
        floor = alpha * pi / ((1 - pi) * (1 - alpha))
        rng = np.random.default_rng(99)
        cdf = NormalLocationNullCdf(mu)
        seen = 0
        for _ in range(20):
            theta = rng.random(m) < pi
            x = rng.normal(size=m) + mu * theta
            d = rho_bh(compute_rho(x, Normal(0, 1), Normal(mu, 1)), cdf, pi, alpha)
            if d.k:
                seen += 1
                assert d.threshold >= floor - 1e-6
        assert seen == 20


# ---------------------------------------------------------------------------
# Data-driven procedures
# ---------------------------------------------------------------------------


def _signal_data(m, seed, pi=0.2, mu=3.0, with_cov=True):
    rng = np.random.default_rng(seed)
    theta = rng.random(m) < pi
    x = rng.normal(size=m) + mu * theta
    s = rng.normal(size=m)
    return [TestInstance(float(a), (float(b),) if with_cov else (), int(t)) for a, b, t in zip(x, s, theta)], theta


class TestDataDriven:
    def test_deterministic(self):
        inst, _ = _signal_data(400, 1)
        cfg = ProcedureConfig(seed=5)
        assert rho_bh_dd(inst, 0.1, cfg) == rho_bh_dd(inst, 0.1, cfg)
        assert rho_bh_side_dd(inst, 0.1, cfg) == rho_bh_side_dd(inst, 0.1, cfg)

    def test_seed_matters(self):
        inst, _ = _signal_data(400, 1)
        a = rho_bh_dd(inst, 0.1, ProcedureConfig(seed=5))
        b = rho_bh_dd(inst, 0.1, ProcedureConfig(seed=6))
        assert not np.array_equal(a.diagnostics["half"], b.diagnostics["half"])

    def test_finds_signal(self):
        inst, theta = _signal_data(2000, 2)
        for proc in (rho_bh_dd, rho_bh_side_dd):
            d = proc(inst, 0.05, ProcedureConfig(seed=2))
            assert power_prop(d, theta) > 0.4 and fdp(d, theta) < 0.15

    def test_empty_halves_combine_to_nothing(self):
        inst = gen_null_only(300, seed=3)
        d = rho_bh_dd(inst, 0.05, ProcedureConfig(seed=3))
        assert d.diagnostics["k_halves"] == (0, 0) and d.k == 0

    def test_unit_weights_equal_dd(self):
        inst, _ = _signal_data(600, 4)
        cfg = ProcedureConfig(seed=9)
        a = rho_bh_dd(inst, 0.1, cfg)
        b = weighted_rho_bh_dd(inst, np.ones(600), 0.1, cfg)
        assert np.array_equal(a.reject, b.reject)

    def test_permutation_equivariance(self):
        # permuting hypotheses together with their split labels permutes decisions
        inst, _ = _signal_data(500, 7)
        rng = np.random.default_rng(7)
        weights = rng.uniform(0.5, 2.0, 500)
        cfg = ProcedureConfig(seed=1)
        split = split_data(500, 1)
        perm = rng.permutation(500)
        base = weighted_rho_bh_dd(inst, weights, 0.1, cfg, split=split)
        moved = weighted_rho_bh_dd([inst[i] for i in perm], weights[perm], 0.1, cfg,
                                   split=SplitAssignment(split.half[perm]))
        assert base.k > 0
        assert np.array_equal(moved.reject, base.reject[perm])

    def test_split_override_checked(self):
        inst, _ = _signal_data(40, 1)
        with pytest.raises(InvalidInputError):
            rho_bh_dd(inst, 0.1, split=split_data(41, 0))

    def test_monotone_in_alpha(self):
        inst, _ = _signal_data(800, 12)
        cfg = ProcedureConfig(seed=12)
        for proc in (rho_bh_dd, rho_bh_side_dd):
            prev = None
            for alpha in (0.01, 0.05, 0.1, 0.2):
                d = proc(inst, alpha, cfg)
                if prev is not None:
                    assert not np.any(prev & ~d.reject)
                prev = d.reject

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            rho_bh_dd([TestInstance(0.0)] * 3, 0.1)

    def test_side_needs_covariates(self):
        with pytest.raises(InvalidInputError):
            rho_bh_side_dd([TestInstance(float(i)) for i in range(10)], 0.1)

    def test_side_eta_is_clamped_pi(self):
        inst, _ = _signal_data(400, 13)
        cfg = ProcedureConfig(seed=13)
        d = rho_bh_side_dd(inst, 0.1, cfg)
        eta = d.diagnostics["eta"]
        lo, hi = cfg.eta_clamp
        assert eta.shape == (400,) and np.all((eta >= lo) & (eta <= hi))


@pytest.mark.slow
class TestDataDrivenFdr:
    """Zero-signal Monte Carlo checks (100 replicates at m=2000)."""

    REPS, M, ALPHA = 100, 2000, 0.05

    def _fdr(self, run):
        fdps = []
        for r in range(self.REPS):
            inst = gen_null_only(self.M, seed=10_000 + r)
            fdps.append(fdp(run(inst, ProcedureConfig(seed=r)), np.zeros(self.M, bool)))
        return float(np.mean(fdps))

    def test_rho_bh_dd(self):
        assert self._fdr(lambda inst, cfg: rho_bh_dd(inst, self.ALPHA, cfg)) <= self.ALPHA + 0.02

    def test_side_dd(self):
        assert self._fdr(lambda inst, cfg: rho_bh_side_dd(inst, self.ALPHA, cfg)) <= 0.07

    def test_weighted_dd(self):
        w = np.random.default_rng(0).uniform(0.5, 2.0, self.M)
        assert self._fdr(lambda inst, cfg: weighted_rho_bh_dd(inst, w, self.ALPHA, cfg)) <= 0.07

    def test_noise_covariates_do_not_cost_power(self):
        diffs = []
        for r in range(30):
            inst, theta = _signal_data(self.M, 500 + r)
            cfg = ProcedureConfig(seed=r)
            diffs.append(power_prop(rho_bh_side_dd(inst, self.ALPHA, cfg), theta)
                         - power_prop(rho_bh_dd(inst, self.ALPHA, cfg), theta))
        diffs = np.array(diffs)
        assert abs(diffs.mean()) <= 3 * diffs.std(ddof=1) / math.sqrt(diffs.size)
