import numpy as np
import pytest
from scipy import stats

from subgeo.chain import Kernel, SmallSetSpec, SplitState
from subgeo.oracle import FiniteChain, enumerate_paths, exact_split_moment
from subgeo.rates import PsiSpec, RateSpec, SeqSpec
from subgeo.simulate import (
    cycle_rng,
    estimate_modulated_moment,
    estimate_tail,
    excursion_blocks,
    finite_path_sums,
    finite_split_path_stats,
    simulate_split_path,
    simulate_until_regeneration,
)

THREE_STATE_P = np.array([[0.2, 0.5, 0.3], [0.4, 0.1, 0.5], [0.6, 0.2, 0.2]])


@pytest.fixture
def chain():
    return FiniteChain(THREE_STATE_P, [0], 0.2, [1.0, 0.0, 0.0], name="three-state")


@pytest.fixture
def kernel():
    return Kernel.from_matrix(THREE_STATE_P)


@pytest.fixture
def ss():
    return SmallSetSpec.finite([0], 0.2, np.array([1.0, 0.0, 0.0]))


def descent_fixture(n_top=50, kappa=3.5, theta=0.9):
    """Minimal countable house-of-cards: j -> j-1, resets from 0."""
    j = np.arange(n_top + 1)
    p = (1.0 + j) ** -(1.0 + kappa)
    p /= p.sum()
    cum = np.cumsum(p)
    eps = theta * p[0]
    q0 = p.copy()
    q0[0] -= eps
    q0 /= q0.sum()
    cum_q0 = np.cumsum(q0)

    def sample(x, rng):
        if x > 0:
            return x - 1
        return int(np.searchsorted(cum, rng.random(), side="right"))

    def residual_sampler(x, rng):
        return int(np.searchsorted(cum_q0, rng.random(), side="right"))

    kernel = Kernel(sample, space="countable")
    ss = SmallSetSpec(
        contains=lambda x: x == 0,
        epsilon=eps,
        nu_sample=lambda rng: 0,
        residual_sampler=residual_sampler,
    )
    return kernel, ss


class TestTrajectories:
    def test_eps_one_regenerates_immediately(self):
        nu = np.array([0.3, 0.45, 0.25])
        k = Kernel.from_matrix(np.tile(nu, (3, 1)))
        spec = SmallSetSpec.finite([0, 1, 2], 1.0, nu)
        traj = simulate_until_regeneration(k, spec, 1, cap=100, rng=cycle_rng(0, 0))
        assert traj.sigma_check == 0 and not traj.censored

    def test_descent_chain_lower_bound(self):
        kernel, ss = descent_fixture()
        for i in range(30):
            traj = simulate_until_regeneration(kernel, ss, 5, cap=10**5, rng=cycle_rng(1, i))
            assert traj.sigma_check >= 5

    def test_censoring_flag(self, kernel, ss):
        traj = simulate_until_regeneration(kernel, ss, 1, cap=1, rng=cycle_rng(2, 0))
        assert traj.censored or traj.sigma_check is not None

    def test_invariants_on_path(self, kernel, ss):
        traj = simulate_split_path(kernel, ss, 0, 500, cycle_rng(3, 0))
        traj.check_invariants(ss)

    def test_sigma_check_mean_vs_oracle(self, chain, kernel, ss):
        reps = 30_000
        vals = []
        for i in range(reps):
            traj = simulate_until_regeneration(kernel, ss, 1, cap=10**5, rng=cycle_rng(4, i))
            vals.append(traj.sigma_check)
        vals = np.array(vals, dtype=float)
        oracle = exact_split_moment(chain, SeqSpec.constant(), np.ones(3), 1).value - 1.0
        se = vals.std(ddof=1) / np.sqrt(reps)
        assert abs(vals.mean() - oracle) <= 3 * se


class TestModulatedMoment:
    def test_counting_case(self, chain, kernel, ss):
        est = estimate_modulated_moment(
            kernel, ss, SeqSpec.constant(), lambda x: 1.0, 1, reps=20_000, seed=11
        )
        oracle = exact_split_moment(chain, SeqSpec.constant(), np.ones(3), 1).value
        assert abs(est.mean - oracle) <= 3 * est.std_error

    def test_linear_weights_vs_oracle(self, chain, kernel, ss):
        seq = SeqSpec.polynomial(1.0)
        est = estimate_modulated_moment(kernel, ss, seq, lambda x: 1.0, 2, reps=20_000, seed=12)
        oracle = exact_split_moment(chain, seq, np.ones(3), 2).value
        assert abs(est.mean - oracle) <= 3 * est.std_error

    def test_deterministic_across_workers(self, kernel, ss):
        kwargs = dict(seq=SeqSpec.constant(), g=lambda x: 1.0, x=0, reps=500, seed=13)
        a = estimate_modulated_moment(kernel, ss, workers=1, **kwargs)
        b = estimate_modulated_moment(kernel, ss, workers=4, **kwargs)
        assert a.mean == b.mean and a.std_error == b.std_error

    def test_reps_floor(self, kernel, ss):
        with pytest.raises(ValueError):
            estimate_modulated_moment(
                kernel, ss, SeqSpec.constant(), lambda x: 1.0, 0, reps=10, seed=0
            )


class TestExcursionBlocks:
    def test_zero_function(self, kernel, ss):
        blocks = excursion_blocks(kernel, ss, lambda x: 0.0, 500, seed=20)
        assert np.all(blocks.xi == 0.0)

    def test_counting_function(self, kernel, ss):
        blocks = excursion_blocks(kernel, ss, lambda x: 1.0, 500, seed=21)
        np.testing.assert_array_equal(blocks.xi, blocks.lengths)

    def test_mean_vs_oracle(self, chain, kernel, ss):
        f = lambda x: 1.0 if x == 2 else 0.0
        blocks = excursion_blocks(kernel, ss, f, 20_000, seed=22)
        oracle = exact_split_moment(
            chain, SeqSpec.constant(), np.array([0.0, 0.0, 1.0]), "nu"
        ).value
        se = blocks.xi.std(ddof=1) / np.sqrt(blocks.n_blocks)
        assert abs(blocks.xi.mean() - oracle) <= 3 * se

    def test_blocks_iid_ks(self, kernel, ss):
        blocks = excursion_blocks(kernel, ss, lambda x: float(x), 10_000, seed=23)
        stat = stats.ks_2samp(blocks.xi[0::2], blocks.xi[1::2])
        assert stat.pvalue > 1e-3


class TestTailEstimate:
    def test_prob_one_at_low_M(self, kernel, ss):
        V = lambda x: 1.0 + x
        est = estimate_tail(
            kernel, ss, V, PsiSpec.power(0.3), [1e-9, 1.0], 1, reps=2000, seed=30
        )
        assert est.prob[0] == 1.0

    def test_monotone(self, kernel, ss):
        V = lambda x: 1.0 + x
        est = estimate_tail(
            kernel, ss, V, PsiSpec.power(0.3), [1.0, 2.0, 4.0, 8.0], 1, reps=4000, seed=31
        )
        assert np.all(np.diff(est.prob) <= 0)

    def test_zero_beyond_max(self, kernel, ss):
        V = lambda x: 1.0 + x
        est = estimate_tail(
            kernel, ss, V, PsiSpec.power(0.3), [1e9], 1, reps=1000, seed=32
        )
        assert est.prob[0] == 0.0 and est.ci_high[0] == 0.0


class TestKeyRelationMonteCarlo:
    def test_fixed_time_identity(self, chain, kernel, ss):
        # E-check[xi_S 1{S < sigma_check}] (split-chain MC) against the
        # exact enumeration value of E~[xi_S (1-eps)^{N_S}]
        S = 5
        seq = SeqSpec.polynomial(1.0)
        g = np.array([0.7, 1.3, 2.1])
        enum = enumerate_paths(chain, S, mu=1)
        _, rhs = enum.keyrelation_sides(seq, g)
        reps = 200_000
        vals = np.empty(reps)
        for i in range(reps):
            rng = cycle_rng(40, i)
            traj = simulate_split_path(kernel, ss, 1, S, rng)
            if any(s.d == 1 for s in traj.states):
                vals[i] = 0.0
            else:
                vals[i] = sum(seq(k) * g[traj.states[k].x] for k in range(S + 1))
        se = vals.std(ddof=1) / np.sqrt(reps)
        assert abs(vals.mean() - rhs) <= 3 * se


class TestVectorisedFinite:
    def test_path_sums_match_scalar_law(self, chain):
        # mean of S_n from the vectorised simulator vs exact value
        # E[S_n] = sum_k (delta_x P^k) f
        f = np.array([0.0, 1.0, 0.0])
        n_steps, reps = 64, 40_000
        S = finite_path_sums(chain.P, f, 1, n_steps, reps, seed=50)
        mu = np.zeros(3)
        mu[1] = 1.0
        expected = 0.0
        v = mu.copy()
        for _ in range(n_steps):
            expected += v @ f
            v = v @ chain.P
        se = S.std(ddof=1) / np.sqrt(reps)
        assert abs(S.mean() - expected) <= 3 * se

    def test_split_stats_heads_rate(self, chain):
        # i(n)/n converges to eps pi(C)
        from subgeo.oracle import exact_stationary

        pi = exact_stationary(chain)
        n_steps, reps = 512, 20_000
        st = finite_split_path_stats(
            chain.P, chain.C, chain.epsilon, chain.nu, np.zeros(3), 1, n_steps, reps, seed=51
        )
        target = chain.epsilon * pi[0] * n_steps
        se = st.i_n.std(ddof=1) / np.sqrt(reps)
        assert abs(st.i_n.mean() - target) <= 4 * se + 1.0

    def test_split_stats_sigma0_law(self, chain, kernel, ss):
        # first-head time from the vectorised path vs the exact law
        from subgeo.oracle import exact_regen_time_functional

        n_steps, reps = 256, 30_000
        st = finite_split_path_stats(
            chain.P, chain.C, chain.epsilon, chain.nu, np.zeros(3), 2, n_steps, reps, seed=52
        )
        capped = st.sigma0[st.sigma0 < n_steps].astype(float)
        oracle = exact_regen_time_functional(chain, lambda k: float(k), start=2).value
        se = capped.std(ddof=1) / np.sqrt(len(capped))
        assert abs(capped.mean() - oracle) <= 3 * se + 1e-6

    def test_decomposition_bookkeeping(self, chain):
        # S_first + (S - S_first - S_tail) + S_tail reproduces S, and the
        # trackers are consistent: sigma0 <= last_regen when any head,
        # i_n = 0 iff sigma0 capped
        n_steps, reps = 128, 5000
        f = np.array([1.0, -2.0, 0.5])
        st = finite_split_path_stats(
            chain.P, chain.C, chain.epsilon, chain.nu, f, 0, n_steps, reps, seed=53
        )
        has_head = st.i_n > 0
        assert np.all((st.sigma0 < n_steps) == has_head)
        assert np.all(st.last_regen[has_head] >= st.sigma0[has_head])
        assert np.all(st.last_regen[~has_head] == -1)

    def test_deterministic(self, chain):
        f = np.array([0.0, 1.0, 0.0])
        a = finite_path_sums(chain.P, f, 0, 32, 2000, seed=54)
        b = finite_path_sums(chain.P, f, 0, 32, 2000, seed=54)
        np.testing.assert_array_equal(a, b)
