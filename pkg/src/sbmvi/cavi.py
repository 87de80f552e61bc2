"""Coordinate-ascent variational Bayes for the collapsed blockmodel.

The variational family is q(theta, xi) = prod Beta(a*_kl, b*_kl) prod q(xi_i)
with the block weights integrated out of the model.  The label prior enters
the local update and the bound through a second-order Delta expansion.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, digamma, gammaln, polygamma

from ._kernels import local_sweep
from .parallel import map_jobs

__all__ = [
    "VarState",
    "CaviConfig",
    "RunRecord",
    "FitResult",
    "ElboParts",
    "DELTA_EPS",
    "responsibility",
    "expected_block_stats",
    "update_global",
    "local_terms",
    "update_local",
    "elbo",
    "elbo_from_stats",
    "init_var_state",
    "cavi_sweep",
    "run_cavi",
]

# below this expected block size the Delta correction is dropped
DELTA_EPS = 1e-8


@dataclass
class VarState:
    q: np.ndarray        # (I, K) label marginals, rows sum to one
    var_a: np.ndarray    # (K, K) symmetric Beta shapes
    var_b: np.ndarray
    elbo_trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def soft_marginals(self):
        return self.q

    @property
    def K(self):
        return self.q.shape[1]

    def theta_mean(self):
        return self.var_a / (self.var_a + self.var_b)

    def copy(self):
        return VarState(self.q.copy(), self.var_a.copy(), self.var_b.copy(),
                        list(self.elbo_trace), self.converged)


@dataclass
class CaviConfig:
    rel_tol: float = 1e-6
    max_sweeps: int = 500
    seed: int = 0
    n_restarts: int = 1

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.max_sweeps < 1 or self.n_restarts < 1:
            raise ValueError("max_sweeps and n_restarts must be >= 1")


@dataclass
class RunRecord:
    """Outcome of one restart: status, timing, score and per-step trace rows."""

    engine: str
    seed: int
    restart: int
    status: str
    elapsed: float
    n_iterations: int
    final_elbo: float
    trace: list = field(default_factory=list, repr=False)
    epochs: int | None = None

    @property
    def converged(self):
        return self.status == "converged"

    def summary(self):
        return {"engine": self.engine, "seed": self.seed, "restart": self.restart,
                "status": self.status, "elapsed_seconds": self.elapsed,
                "iterations": self.n_iterations, "epochs": self.epochs,
                "final_elbo": self.final_elbo}


@dataclass
class FitResult:
    state: VarState
    record: RunRecord
    restarts: list
    states: list | None = None  # every restart's final state, if kept


@dataclass
class ElboParts:
    loglik: float          # E_q log p(Y | theta, xi)
    theta_term: float      # E_q log p(theta) + H[q(theta)]
    label_prior: float     # Delta approximation of E_q log p(xi)
    entropy_labels: float  # H[q(xi)]
    entropy_theta: float   # H[q(theta)]

    @property
    def total(self):
        return self.loglik + self.theta_term + self.label_prior + self.entropy_labels

    @property
    def expected_log_joint(self):
        """E_q log p(Y, theta, xi), i.e. the bound minus the full entropy."""
        return self.total - self.entropy_labels - self.entropy_theta


def responsibility(qi, qj, k, l):
    """Probability under q that dyad (i, j) is governed by block pair (k, l), k <= l."""
    if k > l:
        raise ValueError("responsibilities are indexed by k <= l")
    if k == l:
        return qi[k] * qj[l]
    return qi[k] * qj[l] + qi[l] * qj[k]


def expected_block_stats(net, Q):
    """Responsibility-weighted edge and non-edge totals over observed dyads.

    Returns symmetric ``K x K`` arrays ``S`` and ``F`` whose ``k <= l``
    entries are ``sum_{i<j} r_kl^{ij} y_ij`` and ``sum_{i<j} r_kl^{ij} (1 - y_ij)``.
    """
    M = Q.T @ (net.adjacency @ Q)
    X = Q.T @ (net.missing_adjacency @ Q) if net.n_missing else 0.0
    c = Q.sum(axis=0)
    N = np.outer(c, c) - Q.T @ Q - M - X
    # ordered-pair sums count each unordered within-block pair twice
    S = M.copy()
    F = np.array(N, copy=True)
    np.fill_diagonal(S, np.diag(M) / 2)
    np.fill_diagonal(F, np.diag(N) / 2)
    F = np.maximum(F, 0.0)
    return S, F


def update_global(net, Q, hp):
    """Optimal Beta parameters given the label marginals."""
    S, F = expected_block_stats(net, Q)
    return hp.a + S, hp.b + F


def local_terms(var_a, var_b):
    """Expected log theta and log(1 - theta) under the Beta factors."""
    dsum = digamma(var_a + var_b)
    return digamma(var_a) - dsum, digamma(var_b) - dsum


def _run_local(net, Q, nodes, member, scale, var_a, var_b, hp, colsum=None, colvar=None):
    e_edge, e_non = local_terms(var_a, var_b)
    if colsum is None:
        colsum = Q.sum(axis=0)
        colvar = (Q * (1.0 - Q)).sum(axis=0)
    batchsum = Q[member].sum(axis=0)
    adj, madj = net.adjacency, net.missing_adjacency
    local_sweep(np.asarray(nodes, dtype=np.int64), member, adj.indptr, adj.indices,
                madj.indptr, madj.indices, Q, colsum, colvar, batchsum,
                e_edge, e_non, float(scale), hp.alpha / hp.K, DELTA_EPS)
    return colsum, colvar


def update_local(i, net, state, hp):
    """Updated marginal row for node ``i``; ``state`` is left untouched."""
    Q = state.q.copy()
    member = np.ones(net.n_nodes, dtype=np.bool_)
    _run_local(net, Q, [i], member, 1.0, state.var_a, state.var_b, hp)
    return Q[i]


def elbo_from_stats(S, F, Q, var_a, var_b, hp):
    """Bound from precomputed expected statistics (possibly rescaled estimates)."""
    iu = np.triu_indices(hp.K)
    A, B = var_a[iu], var_b[iu]
    e_edge, e_non = local_terms(A, B)
    loglik = float((S[iu] * e_edge + F[iu] * e_non).sum())
    theta_term = float(((hp.a - A) * e_edge + (hp.b - B) * e_non
                        + betaln(A, B) - betaln(hp.a, hp.b)).sum())
    ent_theta = float((betaln(A, B) - (A - 1) * digamma(A) - (B - 1) * digamma(B)
                       + (A + B - 2) * digamma(A + B)).sum())
    I = Q.shape[0]
    c = hp.alpha / hp.K
    x = Q.sum(axis=0) + c
    v = (Q * (1.0 - Q)).sum(axis=0)
    label_prior = float(gammaln(hp.alpha) - gammaln(I + hp.alpha) - hp.K * gammaln(c)
                        + (gammaln(x) + 0.5 * polygamma(1, x) * v).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        ent_labels = float(-np.where(Q > 0, Q * np.log(Q), 0.0).sum())
    return ElboParts(loglik, theta_term, label_prior, ent_labels, ent_theta)


def elbo(net, state, hp, parts=False):
    """Evidence lower bound of ``state`` on ``net``."""
    S, F = expected_block_stats(net, state.q)
    out = elbo_from_stats(S, F, state.q, state.var_a, state.var_b, hp)
    return out if parts else out.total


def init_var_state(net, hp, rng):
    """Dirichlet(1, ..., 1) label rows followed by one global update."""
    Q = rng.dirichlet(np.ones(hp.K), size=net.n_nodes)
    var_a, var_b = update_global(net, Q, hp)
    return VarState(Q, var_a, var_b)


def cavi_sweep(net, state, hp):
    """Local updates in node order, then the global update; returns the bound."""
    member = np.ones(net.n_nodes, dtype=np.bool_)
    _run_local(net, state.q, np.arange(net.n_nodes), member, 1.0,
               state.var_a, state.var_b, hp)
    S, F = expected_block_stats(net, state.q)
    state.var_a, state.var_b = hp.a + S, hp.b + F
    return elbo_from_stats(S, F, state.q, state.var_a, state.var_b, hp).total


def _run_one(net, hp, cfg, seed, restart, callback=None, state=None):
    t0 = time.perf_counter()
    if state is None:
        state = init_var_state(net, hp, np.random.default_rng(seed))
    prev = elbo(net, state, hp)
    state.elbo_trace = [prev]
    trace = [{"sweep": 0, "elbo": prev, "elapsed_seconds": time.perf_counter() - t0}]
    status = "max_sweeps"
    sweep = 0
    for sweep in range(1, cfg.max_sweeps + 1):
        cur = cavi_sweep(net, state, hp)
        state.elbo_trace.append(cur)
        trace.append({"sweep": sweep, "elbo": cur,
                      "elapsed_seconds": time.perf_counter() - t0})
        if callback is not None:
            callback(sweep, state)
        if abs(cur - prev) <= cfg.rel_tol * abs(prev):
            status = "converged"
            break
        prev = cur
    state.converged = status == "converged"
    rec = RunRecord("cavi", _seed_int(seed), restart, status, time.perf_counter() - t0,
                    sweep, state.elbo_trace[-1], trace)
    return state, rec


def _seed_int(seed):
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1)[0])
    return int(seed)


def _restart_job(args):
    return _run_one(*args)


def run_cavi(net, hp, cfg, jobs=1, callback=None, keep_states=False):
    """Best of ``cfg.n_restarts`` CAVI runs by final bound."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_restarts)
    if callback is not None:
        runs = [_run_one(net, hp, cfg, s, r, callback) for r, s in enumerate(seeds)]
    else:
        runs = map_jobs(_restart_job, [(net, hp, cfg, s, r) for r, s in enumerate(seeds)], jobs)
    best = max(runs, key=lambda sr: sr[1].final_elbo)
    states = [st for st, _ in runs] if keep_states else None
    return FitResult(best[0], best[1], [r for _, r in runs], states)
