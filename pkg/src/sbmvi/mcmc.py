"""Gibbs sampler over labels, block probabilities and block weights."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._kernels import gibbs_label_sweep
from .core import compute_stats, log_joint, triu_index
from .parallel import map_jobs

__all__ = [
    "McmcConfig",
    "McmcState",
    "McmcTrace",
    "DegenerateConditionalError",
    "init_state",
    "xi_conditional",
    "gibbs_update_xi",
    "gibbs_update_theta",
    "gibbs_update_w",
    "gibbs_sweep",
    "run_chain",
    "run_chains",
]

_W_FLOOR = np.finfo(float).tiny


class DegenerateConditionalError(FloatingPointError):
    pass


@dataclass
class McmcConfig:
    iterations: int = 10_000
    burn_in: int | None = None  # None means iterations // 2
    thin: int = 1
    seed: int = 0
    n_chains: int = 1
    keep_theta: bool = True

    def __post_init__(self):
        if self.burn_in is None:
            self.burn_in = self.iterations // 2
        if self.burn_in < 0 or self.thin < 1:
            raise ValueError("need burn_in >= 0 and thin >= 1")
        if self.iterations <= self.burn_in:
            raise ValueError("iterations must exceed burn_in")
        if self.n_retained == 0:
            raise ValueError("no samples would be retained after burn-in and thinning")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")

    @property
    def n_retained(self):
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class McmcState:
    labels: np.ndarray
    theta: np.ndarray
    w: np.ndarray
    stats: object

    def copy(self):
        return McmcState(self.labels.copy(), self.theta.copy(), self.w.copy(),
                         self.stats.copy())


@dataclass
class McmcTrace:
    """Retained samples plus the per-iteration log joint of one chain."""

    labels: np.ndarray          # (n_retained, I)
    theta: np.ndarray | None    # (n_retained, K, K)
    w: np.ndarray | None        # (n_retained, K)
    log_joint: np.ndarray       # (iterations,)
    burn_in: int
    seed: object
    elapsed: float
    final_state: McmcState = field(repr=False)
    chain: int = 0

    @property
    def n_retained(self):
        return len(self.labels)

    def mean_post_burnin_log_joint(self):
        return float(np.mean(self.log_joint[self.burn_in:]))


def init_state(net, hp, rng):
    """Uniform labels, block probabilities and weights drawn from their priors."""
    K = hp.K
    labels = rng.integers(0, K, size=net.n_nodes)
    theta = _symmetric_beta(rng, np.full((K, K), hp.a), np.full((K, K), hp.b))
    w = _dirichlet(rng, np.full(K, hp.alpha / K))
    return McmcState(labels, theta, w, compute_stats(net, labels, K))


def _symmetric_beta(rng, a, b):
    K = a.shape[0]
    iu = triu_index(K)
    draws = rng.beta(a[iu], b[iu])
    theta = np.empty((K, K))
    theta[iu] = draws
    theta[iu[1], iu[0]] = draws
    return theta


def _dirichlet(rng, conc):
    w = rng.dirichlet(conc)
    # exact zeros make the Dirichlet log density infinite
    w = np.maximum(w, _W_FLOOR)
    return w / w.sum()


def _log_tables(state):
    with np.errstate(divide="ignore"):
        return np.log(state.theta), np.log1p(-state.theta), np.log(state.w)


def xi_conditional(net, state, i, hp):
    """Normalised full conditional ``Pr(xi_i = k | rest)`` for every ``k``."""
    K = hp.K
    labels = state.labels
    adj, madj = net.adjacency, net.missing_adjacency
    nbr = adj.indices[adj.indptr[i]:adj.indptr[i + 1]]
    mnbr = madj.indices[madj.indptr[i]:madj.indptr[i + 1]]
    others = np.bincount(np.delete(labels, i), minlength=K)
    e_cnt = np.bincount(labels[nbr], minlength=K)
    x_cnt = np.bincount(labels[mnbr], minlength=K)
    non = others - e_cnt - x_cnt
    log_th, log_1m, log_w = _log_tables(state)
    with np.errstate(invalid="ignore"):
        logp = (log_w + np.where(e_cnt > 0, log_th * e_cnt, 0.0).sum(axis=1)
                + np.where(non > 0, log_1m * non, 0.0).sum(axis=1))
    if not np.isfinite(logp.max()):
        raise DegenerateConditionalError(f"all label probabilities vanish for node {i}")
    p = np.exp(logp - logp.max())
    return p / p.sum()


def gibbs_update_xi(net, state, i, hp, rng):
    """Redraw the label of node ``i``; sufficient statistics follow incrementally."""
    _sweep_labels(net, state, np.array([i], dtype=np.int64), rng.random(1))
    return int(state.labels[i])


def _sweep_labels(net, state, order, uniforms):
    adj, madj = net.adjacency, net.missing_adjacency
    log_th, log_1m, log_w = _log_tables(state)
    st = state.stats
    bad = gibbs_label_sweep(order, state.labels, adj.indptr, adj.indices,
                            madj.indptr, madj.indices, log_th, log_1m, log_w,
                            st.m, st.s, st.masked, uniforms)
    if bad >= 0:
        raise DegenerateConditionalError(f"all label probabilities vanish for node {bad}")
    m = st.m
    tot = np.outer(m, m)
    np.fill_diagonal(tot, m * (m - 1) // 2)
    st.n = tot - st.masked


def gibbs_update_theta(state, hp, rng):
    """theta_kl ~ Beta(a + s_kl, b + n_kl - s_kl); empty pairs draw from the prior."""
    st = state.stats
    state.theta = _symmetric_beta(rng, hp.a + st.s, hp.b + st.n - st.s)
    return state.theta


def gibbs_update_w(state, hp, rng):
    """w ~ Dirichlet(alpha/K + m)."""
    state.w = _dirichlet(rng, hp.alpha / hp.K + state.stats.m)
    return state.w


def gibbs_sweep(net, state, hp, rng):
    """One systematic scan: weights, then block probabilities, then labels in index order."""
    gibbs_update_w(state, hp, rng)
    gibbs_update_theta(state, hp, rng)
    order = np.arange(net.n_nodes, dtype=np.int64)
    _sweep_labels(net, state, order, rng.random(net.n_nodes))


def run_chain(net, hp, cfg, seed=None, chain=0, callback=None):
    """Run one chain; ``seed`` defaults to ``cfg.seed``."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    state = init_state(net, hp, rng)
    n_ret = cfg.n_retained
    I, K = net.n_nodes, hp.K
    labels = np.empty((n_ret, I), dtype=np.int32)
    theta = np.empty((n_ret, K, K)) if cfg.keep_theta else None
    w = np.empty((n_ret, K)) if cfg.keep_theta else None
    lj = np.empty(cfg.iterations)
    r = 0
    for t in range(1, cfg.iterations + 1):
        gibbs_sweep(net, state, hp, rng)
        lj[t - 1] = log_joint(net, state.labels, state.theta, state.w, hp, stats=state.stats)
        if t > cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0:
            labels[r] = state.labels
            if theta is not None:
                theta[r] = state.theta
                w[r] = state.w
            r += 1
        if callback is not None:
            callback(t, state)
    return McmcTrace(labels, theta, w, lj, cfg.burn_in, seed,
                     time.perf_counter() - t0, state, chain)


def _chain_job(args):
    net, hp, cfg, seed, chain = args
    return run_chain(net, hp, cfg, seed=seed, chain=chain)


def run_chains(net, hp, cfg, jobs=1):
    """Run ``cfg.n_chains`` independent chains; returns ``(best, all_traces)``.

    The best chain has the highest mean post-burn-in log joint.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    args = [(net, hp, cfg, s, c) for c, s in enumerate(seeds)]
    traces = map_jobs(_chain_job, args, jobs)
    best = max(traces, key=lambda tr: tr.mean_post_burnin_log_joint())
    return best, traces
