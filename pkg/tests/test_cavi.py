import mpmath as mp
import numpy as np
import pytest
from scipy.special import digamma, polygamma

from sbmvi.cavi import (CaviConfig, VarState, cavi_sweep, elbo, expected_block_stats,
                        init_var_state, responsibility, run_cavi, update_global, update_local)
from sbmvi.core import Hyperparams, compute_stats
from sbmvi.evaluation import adjusted_rand_index
from sbmvi.netgen import generate, load_preset
from sbmvi.netio import Network

from conftest import random_network, random_rows
from oracles import enumerate_posterior, log_evidence


def _global_brute(net, Q, hp):
    A, O = net.dense(), net.observed_dense()
    K = Q.shape[1]
    a = np.full((K, K), hp.a)
    b = np.full((K, K), hp.b)
    for i in range(net.n_nodes):
        for j in range(i + 1, net.n_nodes):
            if not O[i, j]:
                continue
            for k in range(K):
                for l in range(k, K):
                    r = responsibility(Q[i], Q[j], k, l)
                    a[k, l] += r * A[i, j]
                    b[k, l] += r * (1 - A[i, j])
    iu = np.triu_indices(K, 1)
    a[iu[1], iu[0]] = a[iu]
    b[iu[1], iu[0]] = b[iu]
    return a, b


def _local_update_literal(net, Q, var_a, var_b, hp, i):
    """Per-pair transcription of the local update, evaluated with mpmath at 30 digits."""
    mp.mp.dps = 30
    A, O = net.dense(), net.observed_dense()
    I, K = Q.shape
    logits = []
    for k in range(K):
        acc = mp.mpf(0)
        for j in range(I):
            if j == i or not O[i, j]:
                continue
            chi1 = mp.fsum((mp.digamma(var_a[k, l]) - mp.digamma(var_a[k, l] + var_b[k, l])) * Q[j, l]
                           for l in range(K))
            chi2 = mp.fsum((mp.digamma(var_b[k, l]) - mp.digamma(var_a[k, l] + var_b[k, l])) * Q[j, l]
                           for l in range(K))
            acc += chi1 if A[i, j] else chi2
        ex = mp.fsum(mp.mpf(Q[j, k]) for j in range(I) if j != i)
        var = mp.fsum(mp.mpf(Q[j, k]) * (1 - mp.mpf(Q[j, k])) for j in range(I) if j != i)
        acc += mp.log(ex + mp.mpf(hp.alpha) / hp.K) - var / (2 * ex ** 2)
        logits.append(acc)
    top = max(logits)
    w = [mp.exp(x - top) for x in logits]
    tot = mp.fsum(w)
    return np.array([float(x / tot) for x in w])


class TestResponsibility:
    def test_point_masses(self):
        assert responsibility(np.array([1.0, 0]), np.array([1.0, 0]), 0, 0) == 1.0

    def test_uniform_rows(self):
        q = np.array([0.5, 0.5])
        assert [responsibility(q, q, *kl) for kl in [(0, 0), (0, 1), (1, 1)]] == [0.25, 0.5, 0.25]

    def test_sums_to_one(self, rng):
        for _ in range(50):
            K = int(rng.integers(1, 7))
            qi, qj = rng.dirichlet(np.ones(K), size=2)
            total = sum(responsibility(qi, qj, k, l) for k in range(K) for l in range(k, K))
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_rejects_lower_triangle(self):
        with pytest.raises(ValueError):
            responsibility(np.ones(2) / 2, np.ones(2) / 2, 1, 0)


class TestGlobal:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        net = random_network(10, rng, density=0.4, missing_fraction=0.2)
        hp = Hyperparams(K=3, a=1.5, b=0.7)
        Q = random_rows(10, 3, rng)
        a, b = update_global(net, Q, hp)
        ra, rb = _global_brute(net, Q, hp)
        np.testing.assert_allclose(a, ra, rtol=1e-12)
        np.testing.assert_allclose(b, rb, rtol=1e-12)
        iu = np.triu_indices(3)
        assert (a + b - hp.a - hp.b)[iu].sum() == pytest.approx(net.n_observed)

    def test_hard_rows_give_gibbs_conditional(self, rng):
        net = random_network(15, rng, missing_fraction=0.1)
        hp = Hyperparams(K=3)
        z = rng.integers(0, 3, 15)
        a, b = update_global(net, np.eye(3)[z], hp)
        st = compute_stats(net, z, 3)
        np.testing.assert_allclose(a, hp.a + st.s)
        np.testing.assert_allclose(b, hp.b + st.n - st.s)

    def test_empty_network(self, rng):
        a, _ = update_global(Network(6), random_rows(6, 2, rng), Hyperparams(K=2))
        np.testing.assert_allclose(a, 1.0)


class TestLocal:
    def test_single_block(self, rng):
        net = random_network(5, rng)
        st = init_var_state(net, Hyperparams(K=1), rng)
        np.testing.assert_allclose(update_local(2, net, st, Hyperparams(K=1)), [1.0])

    def test_symmetric_pair(self):
        net = Network(2, [(0, 1)])
        st = VarState(np.full((2, 2), 0.5), np.full((2, 2), 2.0), np.full((2, 2), 3.0))
        np.testing.assert_allclose(update_local(0, net, st, Hyperparams(K=2)), [0.5, 0.5])

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_literal_transcription(self, seed):
        rng = np.random.default_rng(seed)
        net = random_network(8, rng, density=0.4, missing_fraction=0.15)
        hp = Hyperparams(K=3, alpha=1.3)
        Q = random_rows(8, 3, rng)
        va = rng.uniform(0.5, 6, (3, 3))
        vb = rng.uniform(0.5, 6, (3, 3))
        va, vb = np.triu(va) + np.triu(va, 1).T, np.triu(vb) + np.triu(vb, 1).T
        st = VarState(Q, va, vb)
        for i in range(8):
            row = update_local(i, net, st, hp)
            np.testing.assert_allclose(row, _local_update_literal(net, Q, va, vb, hp, i), rtol=1e-10)
            assert row.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(st.q, Q)  # the state is not mutated

    def test_empty_block_guard(self):
        """A block nobody else occupies keeps only the log(alpha/K) prior term."""
        net = Network(3, [(0, 1)])
        Q = np.array([[1.0, 0.0], [1.0, 0.0], [0.5, 0.5]])
        st = VarState(Q, np.ones((2, 2)), np.ones((2, 2)))
        row = update_local(2, net, st, Hyperparams(K=2))
        assert np.all(np.isfinite(row)) and row.sum() == pytest.approx(1.0)
        assert row[1] < row[0]

    def test_sweep_keeps_rows_stochastic(self, rng):
        net = random_network(30, rng)
        hp = Hyperparams(K=5)
        st = init_var_state(net, hp, rng)
        for _ in range(5):
            cavi_sweep(net, st, hp)
            np.testing.assert_allclose(st.q.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(st.var_a > 0) and np.all(st.var_b > 0)


class TestSpecialFunctions:
    def test_digamma_trigamma_against_mpmath(self):
        mp.mp.dps = 40
        for x in np.geomspace(1e-3, 1e6, 60):
            assert digamma(x) == pytest.approx(float(mp.digamma(x)), rel=1e-10)
            assert polygamma(1, x) == pytest.approx(float(mp.polygamma(1, x)), rel=1e-10)


class TestElbo:
    def test_hard_state_equals_collapsed_log_joint(self, rng):
        """Point-mass rows with optimal Beta factors: the bound is log p(Y, xi) exactly."""
        net = random_network(5, rng, density=0.5)
        hp = Hyperparams(K=2, a=1.2, b=0.8, alpha=1.5)
        labs, logp = enumerate_posterior(net, 2, a=1.2, b=0.8, alpha=1.5)
        for z, lp in list(zip(labs, logp))[::5]:
            Q = np.eye(2)[z]
            a, b = update_global(net, Q, hp)
            parts = elbo(net, VarState(Q, a, b), hp, parts=True)
            assert parts.entropy_labels == 0.0
            assert parts.total == pytest.approx(lp, abs=1e-10)

    def test_label_permutation_invariance(self, rng):
        net = random_network(12, rng)
        hp = Hyperparams(K=3)
        st = init_var_state(net, hp, rng)
        perm = np.array([1, 2, 0])
        other = VarState(st.q[:, perm], st.var_a[np.ix_(perm, perm)], st.var_b[np.ix_(perm, perm)])
        assert elbo(net, st, hp) == pytest.approx(elbo(net, other, hp), abs=1e-10)

    def test_parts_add_up(self, rng):
        net = random_network(12, rng)
        hp = Hyperparams(K=3)
        st = init_var_state(net, hp, rng)
        p = elbo(net, st, hp, parts=True)
        assert p.total == pytest.approx(p.loglik + p.theta_term + p.label_prior + p.entropy_labels)
        assert p.expected_log_joint == pytest.approx(p.total - p.entropy_labels - p.entropy_theta)

    @pytest.mark.parametrize("seed", range(5))
    def test_lower_bound_on_tiny_networks(self, seed):
        rng = np.random.default_rng(seed)
        net = random_network(int(rng.integers(3, 6)), rng, density=0.5)
        res = run_cavi(net, Hyperparams(K=2), CaviConfig(seed=seed, n_restarts=3))
        assert res.record.final_elbo <= log_evidence(net, 2)


class TestRun:
    def test_single_block_converges_immediately(self, rng):
        net = random_network(20, rng, density=0.2, missing_fraction=0.1)
        hp = Hyperparams(K=1)
        res = run_cavi(net, hp, CaviConfig())
        assert res.record.n_iterations == 1 and res.record.converged
        assert res.state.var_a[0, 0] == pytest.approx(hp.a + net.n_edges)
        assert res.state.var_b[0, 0] == pytest.approx(hp.b + net.n_observed - net.n_edges)

    def test_deterministic(self, rng):
        net = random_network(30, rng)
        a = run_cavi(net, Hyperparams(K=4), CaviConfig(seed=3, n_restarts=2))
        b = run_cavi(net, Hyperparams(K=4), CaviConfig(seed=3, n_restarts=2))
        np.testing.assert_array_equal(a.state.q, b.state.q)
        assert [r.final_elbo for r in a.restarts] == [r.final_elbo for r in b.restarts]

    def test_best_restart_is_returned(self, rng):
        net = random_network(30, rng)
        res = run_cavi(net, Hyperparams(K=4), CaviConfig(seed=1, n_restarts=4))
        assert res.record.final_elbo == max(r.final_elbo for r in res.restarts)

    def test_max_sweeps_flags_not_converged(self, rng):
        net = random_network(30, rng)
        res = run_cavi(net, Hyperparams(K=4), CaviConfig(max_sweeps=1, rel_tol=1e-15))
        assert res.record.status == "max_sweeps" and not res.state.converged

    def test_trace_rows(self, rng):
        net = random_network(20, rng)
        res = run_cavi(net, Hyperparams(K=3), CaviConfig())
        rows = res.record.trace
        assert set(rows[0]) == {"sweep", "elbo", "elapsed_seconds"}
        assert [r["sweep"] for r in rows] == list(range(len(rows)))

    def test_sim7_easy_recovers_seven_blocks(self):
        net, z = generate(load_preset("sim7-easy"))
        res = run_cavi(net, Hyperparams(K=20), CaviConfig(seed=0, n_restarts=32))
        hard = res.state.q.argmax(axis=1)
        assert len(np.unique(hard)) == 7
        assert adjusted_rand_index(hard, z) == pytest.approx(1.0)


def test_expected_stats_symmetric(rng):
    net = random_network(15, rng, missing_fraction=0.1)
    S, F = expected_block_stats(net, random_rows(15, 4, rng))
    np.testing.assert_allclose(S, S.T)
    np.testing.assert_allclose(F, F.T)
    iu = np.triu_indices(4)
    assert (S + F)[iu].sum() == pytest.approx(net.n_observed)
