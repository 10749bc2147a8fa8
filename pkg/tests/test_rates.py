import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subgeo.rates import (
    PsiSpec,
    RateSpec,
    SeqSpec,
    big_phi,
    big_phi_inverse,
    check_g_membership,
    h_psi,
    log_big_phi_inverse,
    n_r_delta,
    psi_times_h,
    rate_sequence,
    submultiplicativity_constant,
)


# closed forms used as independent oracles ----------------------------------


def phi_poly_closed(alpha, scale=1.0):
    """Phi, Phi^-1 and r_phi for phi(v) = scale * v**alpha."""

    def Phi(v):
        return (v ** (1 - alpha) - 1.0) / (scale * (1 - alpha))

    def Phi_inv(u):
        return (1.0 + scale * (1 - alpha) * u) ** (1.0 / (1 - alpha))

    def r(k):
        return (1.0 + scale * (1 - alpha) * k) ** (alpha / (1 - alpha))

    return Phi, Phi_inv, r


class TestBigPhi:
    def test_sqrt_closed_form(self):
        rate = RateSpec.polynomial(0.5)
        assert big_phi(rate, 4.0) == pytest.approx(2.0, rel=1e-10)

    def test_empty_integral(self):
        rate = RateSpec.polynomial(0.7)
        assert big_phi(rate, 1.0) == 0.0

    def test_power_06(self):
        rate = RateSpec.polynomial(0.6)
        expected = (10.0**0.4 - 1.0) / 0.4
        assert big_phi(rate, 10.0) == pytest.approx(expected, rel=1e-10)

    def test_strictly_increasing(self):
        rate = RateSpec.polynomial(0.8)
        vs = np.logspace(0.001, 10, 40)
        vals = [big_phi(rate, v) for v in vs]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_domain_error(self):
        rate = RateSpec.polynomial(0.5)
        with pytest.raises(ValueError):
            big_phi(rate, 0.5)

    def test_scaled_polynomial(self):
        rate = RateSpec.polynomial(0.6, scale=2.0)
        Phi, _, _ = phi_poly_closed(0.6, 2.0)
        for v in [1.5, 7.0, 123.0, 1e6]:
            assert big_phi(rate, v) == pytest.approx(Phi(v), rel=1e-9)

    def test_log_perturbed_against_quad_oracle(self):
        # brute-force trapezoid refinement as an independent oracle
        rate = RateSpec.log_perturbed(c=1.0, alpha=1.0)
        d = rate.params["d"]
        v = 50.0
        xs = np.linspace(1.0, v, 400001)
        ys = np.log(xs + d) / (xs + d)
        oracle = np.trapezoid(ys, xs)
        assert big_phi(rate, v) == pytest.approx(oracle, rel=1e-7)


class TestBigPhiInverse:
    def test_sqrt(self):
        rate = RateSpec.polynomial(0.5)
        assert big_phi_inverse(rate, 2.0) == pytest.approx(4.0, rel=1e-9)

    def test_zero(self):
        rate = RateSpec.polynomial(0.9)
        assert big_phi_inverse(rate, 0.0) == 1.0

    def test_round_trip_of_example(self):
        rate = RateSpec.polynomial(0.6)
        u = (10.0**0.4 - 1.0) / 0.4
        assert big_phi_inverse(rate, u) == pytest.approx(10.0, rel=1e-8)

    def test_domain_error(self):
        rate = RateSpec.polynomial(0.5)
        with pytest.raises(ValueError):
            big_phi_inverse(rate, -1.0)

    def test_round_trip_random(self):
        # invariant: |Phi(Phi^-1(u)) - u| <= 1e-8 max(1, u) over [0, 1e6]
        rate = RateSpec.polynomial(0.75)
        rng = np.random.default_rng(42)
        for u in rng.uniform(0.0, 1e6, size=100):
            v = big_phi_inverse(rate, float(u))
            assert abs(big_phi(rate, v) - u) <= 1e-8 * max(1.0, u)

    def test_log_inverse_subexponential_scale(self):
        # the log-space inverse stays finite where exp would overflow
        rate = RateSpec.log_perturbed(c=1.0, alpha=1.0)
        t = log_big_phi_inverse(rate, 1e10)
        assert t > 709.0
        assert math.isinf(big_phi_inverse(rate, 1e10))
        # closed-form check: Phi(v) ~ log^(1+a)(v+d)/(c(1+a)) for this family
        d, c, a = rate.params["d"], rate.params["c"], rate.params["alpha"]
        # exact: d/dv [log^2(v+d)/2] = log(v+d)/(v+d) = 1/phi, so
        # Phi(v) = (log^2(v+d) - log^2(1+d)) / (2c)
        t_expected = math.sqrt(2.0 * c * 1e10 + math.log(1.0 + d) ** 2)
        # t solves log(e^t + d) = t_expected, i.e. t ~ t_expected for large t
        assert t == pytest.approx(t_expected, rel=1e-6)


class TestRateSequence:
    @pytest.mark.parametrize("alpha", [0.5, 0.6, 0.75])
    def test_closed_form_small(self, alpha):
        rate = RateSpec.polynomial(alpha)
        _, _, r = phi_poly_closed(alpha)
        for k in [0, 1, 2, 4, 10, 100]:
            assert rate_sequence(rate, k) == pytest.approx(r(k), rel=1e-8)

    def test_normalisation(self):
        for rate in [RateSpec.polynomial(0.3), RateSpec.log_perturbed(1.0, 0.5)]:
            assert rate_sequence(rate, 0) == pytest.approx(1.0, abs=1e-12)

    def test_alpha_half_k2(self):
        rate = RateSpec.polynomial(0.5)
        assert rate_sequence(rate, 2) == pytest.approx(2.0, rel=1e-9)

    def test_alpha_075_k4(self):
        rate = RateSpec.polynomial(0.75)
        assert rate_sequence(rate, 4) == pytest.approx(8.0, rel=1e-8)

    @pytest.mark.parametrize("alpha", [0.5, 0.6, 0.75])
    def test_closed_form_to_1000(self, alpha):
        # acceptance-level check at full range k <= 1e3
        rate = RateSpec.polynomial(alpha)
        _, _, r = phi_poly_closed(alpha)
        ks = list(range(0, 1001, 7)) + [1000]
        for k in ks:
            assert rate_sequence(rate, k) == pytest.approx(r(k), rel=1e-8)

    def test_log_concavity(self):
        rate = RateSpec.polynomial(0.6)
        logs = np.log([rate_sequence(rate, k) for k in range(0, 1001)])
        inc = np.diff(logs)
        assert np.all(np.diff(inc) <= 1e-10)

    def test_subgeometric_gap(self):
        rate = RateSpec.polynomial(0.6)
        seq = SeqSpec.from_rate(rate)

        def ratio(n):
            vals = [seq(k) for k in range(n + 1)]
            return vals[-1] / sum(vals)

        assert ratio(10**4) < ratio(10**2)


class TestHPsi:
    def test_quarter_power(self):
        rate = RateSpec.polynomial(0.5)
        psi = PsiSpec.power(0.25)
        assert h_psi(rate, psi, 16.0) == pytest.approx(28.0 / 3.0, rel=1e-9)

    def test_empty(self):
        rate = RateSpec.polynomial(0.5)
        assert h_psi(rate, PsiSpec.power(0.2), 1.0) == 0.0

    def test_general_power_closed_form(self):
        # H_psi(v) = (v^(1+b-a) - 1)/(1+b-a) for psi=u^b, phi=u^a
        for alpha, beta in [(0.8, 0.25), (0.6, 0.1), (0.5, 0.3)]:
            rate = RateSpec.polynomial(alpha)
            psi = PsiSpec.power(beta)
            e = 1.0 + beta - alpha
            for v in [2.0, 10.0, 1e4]:
                assert h_psi(rate, psi, v) == pytest.approx((v**e - 1.0) / e, rel=1e-9)

    def test_linear_bound(self):
        rate = RateSpec.polynomial(0.7)
        psi = PsiSpec.power(0.3)
        c = psi(1.0) / rate(1.0)
        for v in np.logspace(0.01, 8, 30):
            assert h_psi(rate, psi, v) <= c * (v - 1.0) * (1.0 + 1e-9) + 1e-12


class TestGMembership:
    def test_easy_member(self):
        rep = check_g_membership(RateSpec.polynomial(0.8), PsiSpec.power(0.3))
        assert rep.member and rep.mode == "exact"

    def test_non_member(self):
        rep = check_g_membership(RateSpec.polynomial(0.5), PsiSpec.power(0.7))
        assert not rep.member

    def test_non_member_sampled(self):
        # force the sampled path with a custom psi equal to u^0.7
        rep = check_g_membership(
            RateSpec.polynomial(0.5), PsiSpec.custom(lambda u: u**0.7), mode="strict"
        )
        assert not rep.member
        assert any("increasing" in v[2] for v in rep.violations)

    def test_log_perturbed_with_log_psi(self):
        rate = RateSpec.log_perturbed(c=1.0, alpha=1.0, d=math.exp(4.0))
        psi = PsiSpec.log_power(2.0)
        rep = check_g_membership(rate, psi)
        assert rep.member and rep.mode == "dominated"

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            check_g_membership(RateSpec.polynomial(0.5), PsiSpec.one(), grid=[])

    def test_dominated_mode_accepts_composite(self):
        rate = RateSpec.polynomial(0.8)
        psi = PsiSpec.power(0.25)
        comp = psi_times_h(rate, psi)
        assert not check_g_membership(rate, comp, mode="strict").member
        rep = check_g_membership(rate, comp, mode="dominated")
        assert rep.member
        assert rep.envelope_factor is not None and rep.envelope_factor >= 1.0

    def test_dominated_mode_rejects_growth(self):
        rate = RateSpec.polynomial(0.6)
        comp = psi_times_h(rate, PsiSpec.power(0.3))
        assert not check_g_membership(rate, comp, mode="dominated").member


class TestSeqUtils:
    def test_submult_linear(self):
        seq = SeqSpec.polynomial(1.0)
        assert submultiplicativity_constant(seq, 50) == pytest.approx(1.0, abs=1e-12)

    def test_submult_rphi(self):
        seq = SeqSpec.from_rate(RateSpec.polynomial(0.5))
        assert submultiplicativity_constant(seq, 100) == pytest.approx(1.0, abs=1e-7)

    def test_submult_geometric(self):
        seq = SeqSpec.geometric(2.0)
        assert submultiplicativity_constant(seq, 10) == pytest.approx(1.0, abs=1e-12)

    def test_n_r_delta_constant(self):
        assert n_r_delta(SeqSpec.constant(), 0.25) == 4
        assert n_r_delta(SeqSpec.constant(), 0.999) == 1

    def test_n_r_delta_linear(self):
        assert n_r_delta(SeqSpec.polynomial(1.0), 0.9) == 1

    def test_n_r_delta_direct_scan_oracle(self):
        # independent oracle: direct scan without the early-stop machinery
        seq = SeqSpec.from_rate(RateSpec.polynomial(0.6))
        delta = 0.2
        total, best = 0.0, 0
        for n in range(1, 3000):
            total += seq(n)
            if seq(n) / total >= delta:
                best = n
        assert n_r_delta(seq, delta) == best

    def test_validate_geometric_not_lambda0(self):
        seq = SeqSpec.geometric(2.0)
        seq.validate_on_range(50)  # fine: claim flag is off
        bad = SeqSpec(lambda k: 2.0**k, in_lambda0=True)
        with pytest.raises(ValueError):
            bad.validate_on_range(50)


@settings(max_examples=25, deadline=None)
@given(
    alpha=st.floats(0.3, 0.9),
    u=st.floats(0.0, 1e5),
)
def test_round_trip_property(alpha, u):
    rate = RateSpec.polynomial(alpha)
    v = big_phi_inverse(rate, u)
    assert abs(big_phi(rate, v) - u) <= 1e-8 * max(1.0, u)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 200), st.integers(0, 200))
def test_rphi_submultiplicative_property(n, m):
    rate = RateSpec.polynomial(0.7)
    rn, rm = rate_sequence(rate, n), rate_sequence(rate, m)
    assert rate_sequence(rate, n + m) <= rn * rm * (1.0 + 1e-8)
