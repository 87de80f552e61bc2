import numpy as np
import pytest

from sbmvi.core import Hyperparams, compute_stats
from sbmvi.evaluation import cocluster_from_trace
from sbmvi.mcmc import (McmcConfig, McmcState, gibbs_sweep, gibbs_update_theta, gibbs_update_w,
                        gibbs_update_xi, init_state, run_chain, run_chains, xi_conditional)
from sbmvi.netgen import GeneratorSpec, generate, sample_dyads
from sbmvi.netio import Network

from conftest import random_network
from oracles import exact_cocluster


def _state(net, labels, theta, w, K):
    labels = np.asarray(labels)
    return McmcState(labels.copy(), np.asarray(theta, float), np.asarray(w, float),
                     compute_stats(net, labels, K))


def _conditional_literal(net, labels, theta, w, i):
    """Literal product over j != i of Bernoulli terms times w_k, normalised."""
    A, O = net.dense(), net.observed_dense()
    K = len(w)
    p = np.array(w, float)
    for k in range(K):
        for j in range(net.n_nodes):
            if j != i and O[i, j]:
                t = theta[k, labels[j]]
                p[k] *= t if A[i, j] else 1 - t
    return p / p.sum()


class TestConfig:
    def test_retained_count(self):
        cfg = McmcConfig(iterations=105, burn_in=20, thin=4)
        assert cfg.n_retained == 21

    def test_default_burn_in(self):
        assert McmcConfig(iterations=10).burn_in == 5

    @pytest.mark.parametrize("kw", [dict(iterations=10, burn_in=10), dict(iterations=10, thin=0),
                                    dict(iterations=10, burn_in=8, thin=5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            McmcConfig(**kw)


class TestXiConditional:
    def test_single_block(self, rng):
        net = random_network(6, rng)
        state = _state(net, np.zeros(6, int), [[0.4]], [1.0], 1)
        np.testing.assert_allclose(xi_conditional(net, state, 2, Hyperparams(K=1)), [1.0])
        assert gibbs_update_xi(net, state, 2, Hyperparams(K=1), rng) == 0

    def test_two_nodes(self):
        net = Network(2, [(0, 1)])
        tw, tb = 0.8, 0.2
        state = _state(net, [0, 0], [[tw, tb], [tb, tw]], [0.5, 0.5], 2)
        p = xi_conditional(net, state, 1, Hyperparams(K=2))
        assert p[0] == pytest.approx(tw / (tw + tb))

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_literal_product(self, seed):
        rng = np.random.default_rng(seed)
        net = random_network(9, rng, density=0.4, missing_fraction=0.2)
        K = 3
        th = rng.uniform(0.05, 0.95, (K, K))
        th = np.triu(th) + np.triu(th, 1).T
        w = rng.dirichlet(np.ones(K))
        labels = rng.integers(0, K, 9)
        state = _state(net, labels, th, w, K)
        for i in range(9):
            np.testing.assert_allclose(xi_conditional(net, state, i, Hyperparams(K=K)),
                                       _conditional_literal(net, labels, th, w, i), rtol=1e-12)

    def test_sampled_frequencies(self):
        """10^5 draws of one label match the normalised conditional within 3 SE."""
        rng = np.random.default_rng(7)
        net = Network(5, [(0, 1), (1, 2), (3, 4), (0, 2)])
        th = np.array([[0.7, 0.2], [0.2, 0.6]])
        w = np.array([0.45, 0.55])
        labels = np.array([0, 0, 1, 1, 1])
        exact = _conditional_literal(net, labels, th, w, 2)
        hp = Hyperparams(K=2)
        state = _state(net, labels, th, w, 2)
        draws = np.empty(100_000, int)
        for t in range(len(draws)):
            draws[t] = gibbs_update_xi(net, state, 2, hp, rng)
        freq = np.bincount(draws, minlength=2) / len(draws)
        se = np.sqrt(exact * (1 - exact) / len(draws))
        assert np.all(np.abs(freq - exact) <= 3 * se)
        ref = compute_stats(net, state.labels, 2)
        np.testing.assert_array_equal(state.stats.s, ref.s)


class TestBlockUpdates:
    def test_theta_posterior_mean(self):
        """a=b=1, s=3, n=10 gives Beta(4, 8); empty pairs fall back to Beta(1, 1)."""
        rng = np.random.default_rng(1)
        net = Network(5, [(0, 1), (0, 2), (1, 2)])
        labels = np.array([0, 0, 0, 0, 0])
        state = _state(net, labels, np.full((2, 2), 0.5), [0.5, 0.5], 2)
        hp = Hyperparams(K=2)
        draws = np.array([gibbs_update_theta(state, hp, rng) for _ in range(20_000)])
        assert draws[:, 0, 0].mean() == pytest.approx(4 / 12, abs=3 * np.sqrt(4 * 8 / (144 * 13) / 20_000))
        assert draws[:, 1, 1].mean() == pytest.approx(0.5, abs=0.01)
        assert draws[:, 0, 1].var() == pytest.approx(1 / 12, abs=0.005)
        np.testing.assert_array_equal(draws[:, 0, 1], draws[:, 1, 0])

    def test_w_posterior(self):
        """All four nodes in block 0 with alpha=1, K=2 gives Dirichlet(4.5, 0.5)."""
        rng = np.random.default_rng(2)
        net = Network(4)
        state = _state(net, np.zeros(4, int), np.full((2, 2), 0.5), [0.5, 0.5], 2)
        hp = Hyperparams(K=2)
        draws = np.array([gibbs_update_w(state, hp, rng) for _ in range(20_000)])
        np.testing.assert_allclose(draws.sum(axis=1), 1.0)
        sd = np.sqrt(4.5 * 0.5 / (25 * 6) / 20_000)
        assert draws[:, 0].mean() == pytest.approx(4.5 / 5, abs=4 * sd)


class TestChain:
    def test_incremental_stats_stay_exact(self, rng):
        net = random_network(25, rng, density=0.3, missing_fraction=0.1)
        hp = Hyperparams(K=4)
        state = init_state(net, hp, rng)
        for _ in range(30):
            gibbs_sweep(net, state, hp, rng)
            ref = compute_stats(net, state.labels, 4)
            np.testing.assert_array_equal(state.stats.s, ref.s)
            np.testing.assert_array_equal(state.stats.n, ref.n)
            np.testing.assert_array_equal(state.stats.m, ref.m)

    def test_deterministic(self, rng):
        net = random_network(20, rng)
        cfg = McmcConfig(iterations=60, seed=4)
        a = run_chain(net, Hyperparams(K=3), cfg)
        b = run_chain(net, Hyperparams(K=3), cfg)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.log_joint, b.log_joint)
        assert a.labels.shape == (30, 20) and a.theta.shape == (30, 3, 3)

    def test_best_chain_selection(self, rng):
        net = random_network(20, rng)
        best, traces = run_chains(net, Hyperparams(K=3), McmcConfig(iterations=40, n_chains=3))
        assert len(traces) == 3
        assert best.mean_post_burnin_log_joint() == max(t.mean_post_burnin_log_joint() for t in traces)
        seeds = {int(t.labels.sum()) for t in traces}
        assert len(seeds) > 1  # independent streams

    def test_cocluster_matches_enumeration(self):
        """Four-node network: co-clustering within 0.02 of the exact posterior."""
        spec = GeneratorSpec(4, np.array([[0.9, 0.1], [0.1, 0.8]]), [2, 2], seed=3)
        net, _ = generate(spec)
        trace = run_chain(net, Hyperparams(K=2), McmcConfig(iterations=60_000, burn_in=2000,
                                                            seed=1, keep_theta=False))
        C = cocluster_from_trace(trace).matrix
        np.testing.assert_allclose(C, exact_cocluster(net, 2), atol=0.02)


def test_geweke_joint_distribution():
    """Marginal-conditional and successive-conditional simulators agree (I=4, K=2)."""
    rng = np.random.default_rng(11)
    hp = Hyperparams(K=2, a=1.0, b=1.0, alpha=1.0)
    I, n_draws = 4, 20_000

    def forward():
        st = init_state(Network(I), hp, rng)
        st.labels = rng.choice(2, size=I, p=st.w)  # prior draw, not the uniform start
        edges = sample_dyads(st.labels, st.theta, rng)
        return st, Network(I, edges)

    def summaries(st, net):
        return [net.n_edges, st.theta[0, 0], st.theta[0, 1], st.w[0],
                float(st.labels[0] == st.labels[1])]

    mc = np.array([summaries(*forward()) for _ in range(n_draws)])
    state, net = forward()
    sc = np.empty_like(mc)
    for t in range(n_draws):
        gibbs_sweep(net, state, hp, rng)
        net = Network(I, sample_dyads(state.labels, state.theta, rng))
        state.stats = compute_stats(net, state.labels, 2)
        sc[t] = summaries(state, net)
    # successive draws are autocorrelated: inflate the SE with batch means
    batches = sc.reshape(100, -1).mean(axis=1)
    se = np.sqrt(mc.var(axis=0) / n_draws + batches.var(axis=0) / 100)
    z = (mc.mean(axis=0) - sc.mean(axis=0)) / se
    assert np.all(np.abs(z) < 4), z
