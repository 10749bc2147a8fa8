import json

import numpy as np
import pytest

from subgeo.oracle import (
    FiniteChain,
    enumerate_paths,
    exact_hitting_moment,
    exact_regen_time_functional,
    exact_split_moment,
    exact_stationary,
    split_kernel_matrix,
)
from subgeo.rates import RateSpec, SeqSpec


THREE_STATE_P = np.array(
    [[0.2, 0.5, 0.3], [0.4, 0.1, 0.5], [0.6, 0.2, 0.2]]
)


@pytest.fixture
def three_state():
    return FiniteChain(
        P=THREE_STATE_P,
        C=np.array([0]),
        epsilon=0.2,
        nu=np.array([1.0, 0.0, 0.0]),
        name="three-state-default",
    )


def hitting_sum_oracle(K, C_mask, g, weight="one"):
    """Independent linear-solve oracle for E_x[sum_{k=1}^tau w(k) g(X_k)].

    weight="one" solves h = K(g + 1_{C^c} h); weight="linear" additionally
    solves the k-weighted system for E_x[sum k g(X_k)] so that r(k)=1+k
    moments follow as h1 + hk.
    """
    n = K.shape[0]
    outC = np.diag((~C_mask).astype(float))
    h1 = np.linalg.solve(np.eye(n) - K @ outC, K @ g)
    if weight == "one":
        return h1
    hk = np.linalg.solve(np.eye(n) - K @ outC, K @ (g + outC @ h1))
    return h1, hk


class TestFiniteChainValidation:
    def test_valid(self, three_state):
        assert three_state.n == 3

    def test_row_sum_rejected(self):
        P = THREE_STATE_P.copy()
        P[0, 0] += 1e-6
        with pytest.raises(ValueError):
            FiniteChain(P, [0], 0.2, [1, 0, 0])

    def test_minorisation_rejected(self):
        with pytest.raises(ValueError):
            FiniteChain(THREE_STATE_P, [0], 0.25, [1.0, 0.0, 0.0])

    def test_nu_outside_C_rejected(self):
        with pytest.raises(ValueError):
            FiniteChain(THREE_STATE_P, [0], 0.2, [0.5, 0.5, 0.0])

    def test_periodic_rejected(self):
        P = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ValueError, match="periodic"):
            FiniteChain(P, [0], 0.5, [1.0, 0.0])

    def test_json_round_trip(self, three_state, tmp_path):
        three_state.rate = RateSpec.polynomial(0.5, scale=2.0)
        three_state.V = np.array([1.0, 64.0, 76.8])
        three_state.b = 56.24
        doc = three_state.to_json()
        path = tmp_path / "chain.json"
        path.write_text(json.dumps(doc))
        back = FiniteChain.from_json(path)
        np.testing.assert_allclose(back.P, three_state.P)
        assert back.rate.params["alpha"] == 0.5
        assert back.rate.params["scale"] == 2.0
        np.testing.assert_allclose(back.V, three_state.V)


class TestStationary:
    def test_symmetric_two_state(self):
        P = np.array([[0.5, 0.5], [0.5, 0.5]])
        np.testing.assert_allclose(exact_stationary(P), [0.5, 0.5], atol=1e-14)

    def test_two_state_closed_form(self):
        p, q = 0.3, 0.4
        P = np.array([[1 - p, p], [q, 1 - q]])
        np.testing.assert_allclose(
            exact_stationary(P), [q / (p + q), p / (p + q)], atol=1e-14
        )

    def test_doubly_stochastic_uniform(self):
        P = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
        np.testing.assert_allclose(exact_stationary(P), np.ones(3) / 3, atol=1e-14)

    def test_residual_below_tolerance(self, three_state):
        pi = exact_stationary(three_state)
        assert np.abs(pi @ three_state.P - pi).sum() < 1e-12


class TestHittingMoment:
    def test_w_constant_weights_vs_linear_solve(self, three_state):
        g = np.array([1.0, 2.0, 0.5])
        for kernel in ("P", "Q"):
            K = three_state.kernel_matrix(kernel)
            h = hitting_sum_oracle(K, three_state.in_C, g)
            for x in range(3):
                res = exact_hitting_moment(
                    three_state, SeqSpec.constant(), g, x, kernel=kernel
                )
                assert res.value == pytest.approx(h[x], rel=1e-9)
                assert res.remainder <= 1e-9 * max(1.0, h[x])

    def test_w_linear_weights_vs_linear_solve(self, three_state):
        g = np.ones(3)
        K = three_state.Q
        h1, hk = hitting_sum_oracle(K, three_state.in_C, g, weight="linear")
        for x in range(3):
            res = exact_hitting_moment(
                three_state, SeqSpec.polynomial(1.0), g, x, kernel="Q"
            )
            assert res.value == pytest.approx(h1[x] + hk[x], rel=1e-8)

    def test_immediate_return(self):
        # from a C state that returns to C surely in one step, tau = 1
        P = np.array([[0.5, 0.5, 0.0], [0.3, 0.3, 0.4], [0.5, 0.25, 0.25]])
        chain = FiniteChain(P, [0, 1], 0.25, [1.0, 0.0, 0.0])
        res = exact_hitting_moment(chain, SeqSpec.constant(), np.ones(3), 0, kernel="P")
        assert res.value == pytest.approx(1.0, abs=1e-12)

    def test_hitting_convention_in_C(self, three_state):
        g = np.array([3.0, 1.0, 1.0])
        res = exact_hitting_moment(
            three_state, SeqSpec.polynomial(1.0), g, 0, convention="hitting"
        )
        assert res.value == pytest.approx(3.0, abs=1e-12)

    def test_pre_return_vs_direct(self, three_state):
        # E_x[sum_{k=0}^{tau-1} g] = g(x) + E_x[sum_{k=1}^{tau} g 1_Cc(X_k)]
        g = np.array([0.3, 1.7, 2.2])
        K = three_state.P
        gc = g * (~three_state.in_C)
        h = hitting_sum_oracle(K, three_state.in_C, gc)
        for x in range(3):
            res = exact_hitting_moment(
                three_state, SeqSpec.constant(), g, x, kernel="P", convention="pre_return"
            )
            assert res.value == pytest.approx(g[x] + h[x], rel=1e-9)


class TestSplitMoment:
    def omega_oracle(self, chain, seq, g, x, n_steps=4000):
        # independent route: value = sum_k r(k) E~_x[g(X_k) (1-eps)^{N_{k-1}}]
        D = np.where(chain.in_C, 1.0 - chain.epsilon, 1.0)
        omega = np.zeros(chain.n) if isinstance(x, str) else None
        omega = chain.nu.copy() if x == "nu" else np.eye(chain.n)[x]
        total = 0.0
        for k in range(n_steps):
            total += seq(k) * float(omega @ g)
            omega = (omega * D) @ chain.Q
            if omega.sum() < 1e-16:
                break
        return total

    def test_vs_omega_recursion(self, three_state):
        g = np.array([1.0, 2.0, 3.0])
        seq = SeqSpec.polynomial(1.0)
        for x in range(3):
            res = exact_split_moment(three_state, seq, g, x)
            assert res.value == pytest.approx(
                self.omega_oracle(three_state, seq, g, x), rel=1e-8
            )

    def test_nu_start(self, three_state):
        seq = SeqSpec.constant()
        g = np.ones(3)
        res = exact_split_moment(three_state, seq, g, "nu")
        assert res.value == pytest.approx(
            self.omega_oracle(three_state, seq, g, "nu"), rel=1e-8
        )

    def test_epsilon_one_reduces_to_hitting(self):
        # eps = 1 with nu(C) = 1 closes C, so irreducibility forces C = X:
        # the iid chain, where sigma_check = 0 and only the j = 0 term
        # survives.  The hitting-convention moment under Q agrees.
        nu = np.array([0.3, 0.45, 0.25])
        P = np.tile(nu, (3, 1))
        chain_eps1 = FiniteChain(P, [0, 1, 2], 1.0, nu)
        seq = SeqSpec.polynomial(1.0)
        g = np.array([1.0, 0.5, 2.0])
        for x in range(3):
            res = exact_split_moment(chain_eps1, seq, g, x)
            assert res.value == pytest.approx(g[x], abs=1e-12)
            hit = exact_hitting_moment(
                chain_eps1, seq, g, x, kernel="Q", convention="hitting"
            )
            assert res.value == pytest.approx(hit.value, rel=1e-12)

    def test_jmax_stability(self, three_state):
        seq = SeqSpec.from_rate(RateSpec.polynomial(0.5))
        g = np.ones(3)
        res = exact_split_moment(three_state, seq, g, 1, j_max=60)
        res2 = exact_split_moment(three_state, seq, g, 1, j_max=68)
        assert abs(res.value - res2.value) <= res.remainder_j + res2.remainder_j + 1e-12

    def test_kac_consistency(self, three_state):
        # mean cycle length from nu-check times eps pi(C) equals 1
        pi = exact_stationary(three_state)
        res = exact_split_moment(three_state, SeqSpec.constant(), np.ones(3), "nu")
        kac = res.value * three_state.epsilon * pi[three_state.in_C].sum()
        assert kac == pytest.approx(1.0, abs=1e-8)


class TestRegenFunctional:
    def test_total_probability(self, three_state):
        res = exact_regen_time_functional(three_state, lambda k: 1.0, start=0)
        assert res.value == pytest.approx(1.0, abs=1e-10)

    def test_sigma_mean_consistency(self, three_state):
        # E[sigma_check + 1] from the law vs the split-moment with r = g = 1
        for x in range(3):
            law = exact_regen_time_functional(three_state, lambda k: k + 1.0, start=x)
            mom = exact_split_moment(three_state, SeqSpec.constant(), np.ones(3), x)
            assert law.value == pytest.approx(mom.value, rel=1e-8)

    def test_epsilon_one_from_C(self):
        nu = np.array([0.3, 0.45, 0.25])
        chain = FiniteChain(np.tile(nu, (3, 1)), [0, 1, 2], 1.0, nu)
        res = exact_regen_time_functional(chain, lambda k: float(k), start=0)
        assert res.value == pytest.approx(0.0, abs=1e-12)


class TestSplitKernelMatrix:
    def test_rows_stochastic(self, three_state):
        pc = split_kernel_matrix(three_state)
        np.testing.assert_allclose(pc.sum(axis=1), 1.0, atol=1e-12)

    def test_marginal_is_P(self, three_state):
        # mixing the d = 0/1 rows with weights (1 - eps 1_C(x), eps 1_C(x))
        # and summing over the landing coin recovers P exactly
        pc = split_kernel_matrix(three_state)
        n = three_state.n
        head = three_state.epsilon * three_state.in_C.astype(float)
        marg = np.zeros((n, n))
        for x in range(n):
            row = (1 - head[x]) * pc[2 * x] + head[x] * pc[2 * x + 1]
            marg[x] = row[0::2] + row[1::2]
        np.testing.assert_allclose(marg, three_state.P, atol=1e-12)

    def test_mixture_identity(self, three_state):
        # eps nu + (1 - eps) Q(x,.) = P(x,.) exactly on C
        eps, nu = three_state.epsilon, three_state.nu
        for x in three_state.C:
            np.testing.assert_allclose(
                eps * nu + (1 - eps) * three_state.Q[x], three_state.P[x], atol=1e-14
            )

    def test_residual_row_example(self, three_state):
        np.testing.assert_allclose(
            three_state.Q[0], [0.0, 0.625, 0.375], atol=1e-14
        )


class TestEnumeratePaths:
    def test_keyrelation_identity_multiple_horizons(self, three_state):
        seq = SeqSpec.polynomial(1.0)
        g = np.array([0.7, 1.3, 2.1])
        for S in (0, 1, 3, 5):
            enum = enumerate_paths(three_state, S, mu=1)
            lhs, rhs = enum.keyrelation_sides(seq, g)
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_horizon_zero_reduces_to_split_mass(self, three_state):
        # both sides = integral (1 - eps 1_C) xi_0 dmu
        g = np.array([1.0, 2.0, 4.0])
        mu = np.array([0.2, 0.5, 0.3])
        enum = enumerate_paths(three_state, 0, mu=mu)
        lhs, rhs = enum.keyrelation_sides(SeqSpec.constant(), g)
        head = three_state.epsilon * three_state.in_C
        expected = float(((1.0 - head) * g) @ mu)
        assert lhs == pytest.approx(expected, abs=1e-14)
        assert rhs == pytest.approx(expected, abs=1e-14)

    def test_epsilon_one_lhs_zero(self):
        # start in C with eps = 1: sigma_check = 0, so {S < sigma_check} is null
        nu = np.array([0.3, 0.45, 0.25])
        chain = FiniteChain(np.tile(nu, (3, 1)), [0, 1, 2], 1.0, nu)
        enum = enumerate_paths(chain, 3, mu=0)
        lhs, rhs = enum.keyrelation_sides(SeqSpec.constant(), np.ones(3))
        assert lhs == pytest.approx(0.0, abs=1e-14)
        assert rhs == pytest.approx(0.0, abs=1e-14)

    def test_path_cap(self, three_state):
        with pytest.raises(ValueError, match="exceeds"):
            enumerate_paths(three_state, 20)

    def test_keyrelation_on_six_states(self):
        rng = np.random.default_rng(7)
        P = rng.dirichlet(np.ones(6) * 2.0, size=6)
        nu = np.zeros(6)
        nu[2] = 1.0
        eps = 0.8 * float(P[:, 2][[1, 2]].min())
        chain = FiniteChain(P, [1, 2], eps, nu)
        enum = enumerate_paths(chain, 6, mu=4)
        lhs, rhs = enum.keyrelation_sides(SeqSpec.polynomial(0.5), np.ones(6))
        assert lhs == pytest.approx(rhs, abs=1e-12)
