"""Stochastic-gradient variational Bayes with node-block minibatches.

Each iteration takes a block S of nodes and refreshes q(xi_i) for i in S
from the dyads inside S, with the likelihood scaled by (I-1)/(|S|-1).  The
same dyads give intermediate Beta parameters (data sums scaled by C), and
the global parameters move towards them by rho_t = (t + tau)^-kappa.
Nodes are partitioned into blocks once per epoch.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .cavi import (FitResult, RunRecord, VarState, _run_local, _seed_int,
                   elbo, elbo_from_stats, expected_block_stats, init_var_state)
from .netio import Network
from .parallel import map_jobs

__all__ = [
    "SgvbConfig",
    "DegenerateBatchError",
    "batch_size",
    "epoch_blocks",
    "step_size",
    "scaling_factor",
    "induced_subnetwork",
    "local_minibatch_update",
    "intermediate_global",
    "sgvb_step",
    "Monitor",
    "noisy_elbo",
    "run_sgvb",
]


class DegenerateBatchError(ValueError):
    """The node block contains no observed dyad."""


@dataclass
class SgvbConfig:
    omega: float = 0.25
    kappa: float = 0.6
    tau: float = 1.0
    min_epochs: int = 3
    rel_tol: float = 1e-4
    max_epochs: int | None = 200
    time_budget_seconds: float | None = None
    n_restarts: int = 1
    elbo_monitor_fraction: float = 0.25
    seed: int = 0
    reshuffle: bool = True
    rho_override: float | None = None  # constant step, for diagnostics

    def __post_init__(self):
        if not 0.5 < self.kappa <= 1.0:
            raise ValueError("kappa must lie in (0.5, 1]")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not 0 < self.omega <= 1:
            raise ValueError("omega must lie in (0, 1]")
        if not 0 < self.elbo_monitor_fraction <= 1:
            raise ValueError("elbo_monitor_fraction must lie in (0, 1]")
        if self.max_epochs is None and self.time_budget_seconds is None:
            raise ValueError("need max_epochs, time_budget_seconds, or both")
        if self.rho_override is not None and not 0 < self.rho_override <= 1:
            raise ValueError("rho_override must lie in (0, 1]")
        if self.min_epochs < 1 or self.n_restarts < 1:
            raise ValueError("min_epochs and n_restarts must be >= 1")


def batch_size(n_nodes, omega):
    """|S| = max(2, round(omega * I)), capped at I."""
    return min(n_nodes, max(2, int(round(omega * n_nodes))))


def epoch_blocks(perm, size):
    """Split a node permutation into ceil(I/|S|) blocks, each sorted."""
    n_blocks = math.ceil(len(perm) / size)
    return [np.sort(b) for b in np.array_split(perm, n_blocks)]


def step_size(t, tau, kappa):
    """Robbins-Monro step (t + tau)^-kappa for iteration t >= 1 (scalar or array)."""
    if np.any(np.asarray(t) < 1):
        raise ValueError("iterations are counted from 1")
    return (np.asarray(t, dtype=float) + tau) ** (-kappa) if np.ndim(t) else (t + tau) ** (-kappa)


def induced_subnetwork(net, nodes):
    """Network on ``nodes`` (sorted) keeping the edges and mask among them."""
    nodes = np.asarray(nodes, dtype=np.int64)
    pos = np.full(net.n_nodes, -1, dtype=np.int64)
    pos[nodes] = np.arange(len(nodes))

    def keep(pairs):
        a, b = pos[pairs[:, 0]], pos[pairs[:, 1]]
        ok = (a >= 0) & (b >= 0)
        return np.column_stack([a[ok], b[ok]])

    return Network(len(nodes), keep(net.edges), keep(net.missing))


def _observed_in_block(net, nodes):
    n = len(nodes)
    sub_missing = net.missing_adjacency[nodes][:, nodes].nnz // 2 if net.n_missing else 0
    return n * (n - 1) // 2 - sub_missing


def scaling_factor(net, nodes):
    """Observed dyads in the full network over observed dyads inside ``nodes``."""
    inside = _observed_in_block(net, nodes)
    if inside == 0:
        raise DegenerateBatchError("node block has no observed dyad")
    return net.n_observed / inside


def local_minibatch_update(net, state, nodes, hp, colsum=None, colvar=None):
    """Refresh q(xi_i) for i in ``nodes`` from the dyads inside the block."""
    nodes = np.sort(np.asarray(nodes, dtype=np.int64))
    member = np.zeros(net.n_nodes, dtype=np.bool_)
    member[nodes] = True
    scale = (net.n_nodes - 1) / (len(nodes) - 1)
    return _run_local(net, state.q, nodes, member, scale, state.var_a, state.var_b, hp,
                      colsum, colvar)


def intermediate_global(net, state, nodes, hp, C=None):
    """Beta parameters implied by the block's dyads, data sums scaled by C."""
    nodes = np.sort(np.asarray(nodes, dtype=np.int64))
    if C is None:
        C = scaling_factor(net, nodes)
    sub = induced_subnetwork(net, nodes)
    S, F = expected_block_stats(sub, state.q[nodes])
    return hp.a + C * S, hp.b + C * F


def sgvb_step(old_a, old_b, hat_a, hat_b, rho):
    """Convex combination (1 - rho) * old + rho * intermediate."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    return (1.0 - rho) * old_a + rho * hat_a, (1.0 - rho) * old_b + rho * hat_b


class Monitor:
    """Fixed random node subset whose dyads give a cheap estimate of the bound."""

    def __init__(self, net, nodes):
        self.nodes = np.sort(np.asarray(nodes, dtype=np.int64))
        self.full = len(self.nodes) == net.n_nodes
        self.sub = net if self.full else induced_subnetwork(net, self.nodes)
        inside = self.sub.n_observed
        self.ratio = net.n_observed / inside if inside else 0.0

    @classmethod
    def random(cls, net, fraction, rng):
        size = max(2, int(round(fraction * net.n_nodes)))
        size = min(size, net.n_nodes)
        return cls(net, rng.choice(net.n_nodes, size=size, replace=False))


def noisy_elbo(state, monitor, hp):
    """Bound with the data terms estimated on the monitor subnetwork."""
    q_sub = state.q if monitor.full else state.q[monitor.nodes]
    S, F = expected_block_stats(monitor.sub, q_sub)
    return elbo_from_stats(monitor.ratio * S, monitor.ratio * F, state.q,
                           state.var_a, state.var_b, hp).total


def _run_one(net, hp, cfg, seed, restart, callback=None, state=None):
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    if state is None:
        state = init_var_state(net, hp, rng)
    else:
        state = state.copy()
    monitor = Monitor.random(net, cfg.elbo_monitor_fraction, rng)
    size = batch_size(net.n_nodes, cfg.omega)
    colsum = state.q.sum(axis=0)
    colvar = (state.q * (1.0 - state.q)).sum(axis=0)

    def out_of_time():
        return (cfg.time_budget_seconds is not None
                and time.perf_counter() - t0 >= cfg.time_budget_seconds)

    prev = noisy_elbo(state, monitor, hp)
    state.elbo_trace = [prev]
    trace = [{"epoch": 0, "t": 0, "noisy_elbo": prev, "elapsed_seconds": time.perf_counter() - t0}]
    t = 0
    epoch = 0
    status = "max_epochs"
    perm = rng.permutation(net.n_nodes)
    while True:
        if cfg.max_epochs is not None and epoch >= cfg.max_epochs:
            break
        if cfg.reshuffle and epoch > 0:
            perm = rng.permutation(net.n_nodes)
        finished = True
        for nodes in epoch_blocks(perm, size):
            if out_of_time():
                finished = False
                break
            t += 1
            try:
                C = scaling_factor(net, nodes)
            except DegenerateBatchError:
                nodes = np.sort(rng.choice(net.n_nodes, size=len(nodes), replace=False))
                try:
                    C = scaling_factor(net, nodes)
                except DegenerateBatchError:
                    continue
            colsum, colvar = local_minibatch_update(net, state, nodes, hp, colsum, colvar)
            hat_a, hat_b = intermediate_global(net, state, nodes, hp, C)
            rho = cfg.rho_override if cfg.rho_override is not None else step_size(t, cfg.tau, cfg.kappa)
            state.var_a, state.var_b = sgvb_step(state.var_a, state.var_b, hat_a, hat_b, rho)
            if callback is not None:
                callback(t, state)
        if not finished:
            status = "time_budget" if epoch > 0 else "partial"
            break
        epoch += 1
        # refresh the running column sums so rounding never accumulates across epochs
        colsum = state.q.sum(axis=0)
        colvar = (state.q * (1.0 - state.q)).sum(axis=0)
        cur = noisy_elbo(state, monitor, hp)
        state.elbo_trace.append(cur)
        trace.append({"epoch": epoch, "t": t, "noisy_elbo": cur,
                      "elapsed_seconds": time.perf_counter() - t0})
        if epoch >= cfg.min_epochs and abs(cur - prev) <= cfg.rel_tol * abs(prev):
            status = "converged"
            break
        prev = cur
        if out_of_time():
            status = "time_budget"
            break
    elapsed = time.perf_counter() - t0
    state.converged = status == "converged"
    final = elbo(net, state, hp)
    rec = RunRecord("sgvb", _seed_int(seed), restart, status, elapsed, t, final, trace, epoch)
    return state, rec


def _restart_job(args):
    return _run_one(*args)


def run_sgvb(net, hp, cfg, jobs=1, callback=None, init=None, keep_states=False):
    """Best of ``cfg.n_restarts`` runs, scored by the full-network bound.

    ``init`` (a :class:`VarState`) replaces the random start of every restart.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_restarts)
    if callback is not None or init is not None:
        runs = [_run_one(net, hp, cfg, s, r, callback, init) for r, s in enumerate(seeds)]
    else:
        runs = map_jobs(_restart_job, [(net, hp, cfg, s, r) for r, s in enumerate(seeds)], jobs)
    best = max(runs, key=lambda sr: sr[1].final_elbo)
    states = [st for st, _ in runs] if keep_states else None
    return FitResult(best[0], best[1], [r for _, r in runs], states)
