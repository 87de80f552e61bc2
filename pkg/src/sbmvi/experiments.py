"""Experiment drivers shared by the command line and the demo scripts.

``fit_engine`` runs any of the three engines behind one call, ``crossval``
compares engines on paired holdout folds and ``sweep`` runs the
time-budgeted SGVB grid against a CAVI runtime budget.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import cavi, mcmc, sgvb
from .evaluation import predict_links, roc_auc
from .netio import make_holdout
from .parallel import map_jobs

__all__ = [
    "ENGINES",
    "EngineRun",
    "fit_engine",
    "fit_status",
    "crossval",
    "measure_cavi_budget",
    "sweep",
    "SWEEP_COLUMNS",
]

ENGINES = ("mcmc", "cavi", "sgvb")


@dataclass
class EngineRun:
    """What ``fit_engine`` hands back: the fit object and its run summaries."""

    engine: str
    fit: object                 # McmcTrace or FitResult
    records: list = field(default_factory=list)
    traces: list | None = None  # every MCMC chain

    @property
    def status(self):
        return fit_status(self)


def fit_engine(net, engine, hp, config, jobs=1, keep_states=False):
    """Run ``engine`` with its config object (McmcConfig, CaviConfig or SgvbConfig)."""
    if engine == "mcmc":
        best, traces = mcmc.run_chains(net, hp, config, jobs=jobs)
        records = [{"engine": "mcmc", "chain": tr.chain, "elapsed_seconds": tr.elapsed,
                    "mean_post_burnin_log_joint": tr.mean_post_burnin_log_joint(),
                    "status": "completed"} for tr in traces]
        return EngineRun("mcmc", best, records, traces)
    if engine == "cavi":
        res = cavi.run_cavi(net, hp, config, jobs=jobs, keep_states=keep_states)
    elif engine == "sgvb":
        res = sgvb.run_sgvb(net, hp, config, jobs=jobs, keep_states=keep_states)
    else:
        raise ValueError(f"unknown engine {engine!r}; choose from {', '.join(ENGINES)}")
    return EngineRun(engine, res, [r.summary() for r in res.restarts])


def fit_status(run):
    """``"converged"`` / ``"completed"`` or the reason the best run stopped early."""
    if run.engine == "mcmc":
        return "completed"
    return run.fit.record.status


def _fold_job(args):
    split, engine, hp, config = args
    run = fit_engine(split.train, engine, hp, config)
    pairs = split.test_pairs[:, :2]
    truth = split.test_pairs[:, 2]
    scores = predict_links(run.fit, pairs, train=split.train)
    roc = roc_auc(scores, truth)
    return {"fold": split.fold_id, "engine": engine, "auc": roc.auc,
            "n_test": int(len(truth)), "n_positive": int(truth.sum()),
            "status": run.status}, roc


def crossval(net, hp, configs, folds=20, seed=0, balanced=False, jobs=1):
    """K-fold link prediction for each engine in ``configs`` (name -> config).

    Every engine sees the same folds.  Returns ``(rows, rocs, splits)``,
    where ``rocs[(fold, engine)]`` is the ROC curve of that fit.
    """
    if folds < 2:
        raise ValueError("cross-validation needs at least two folds")
    splits = make_holdout(net, folds=folds, seed=seed, balanced=balanced)
    jobs_args = [(sp, eng, hp, cfg) for sp in splits for eng, cfg in configs.items()]
    out = map_jobs(_fold_job, jobs_args, jobs)
    rows = [row for row, _ in out]
    rocs = {(row["fold"], row["engine"]): roc for row, roc in out}
    return rows, rocs, splits


def measure_cavi_budget(net, hp, cfg, runs=3):
    """Mean wall-clock time of ``runs`` independent CAVI runs and their bound parts."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(runs)
    times, parts = [], []
    for r, s in enumerate(seeds):
        state, rec = cavi._run_one(net, hp, cfg, s, r)
        times.append(rec.elapsed)
        parts.append(cavi.elbo(net, state, hp, parts=True))
    return float(np.mean(times)), parts


SWEEP_COLUMNS = ("kappa", "tau", "omega", "restart", "seed", "status", "epochs",
                 "iterations", "elapsed_seconds", "full_elbo", "f_minus_h")


def _sweep_job(args):
    net, hp, cfg, seed, restart = args
    state, rec = sgvb._run_one(net, hp, cfg, seed, restart)
    parts = cavi.elbo(net, state, hp, parts=True)
    return rec, parts


def sweep(net, hp, kappas, taus, omegas, n_restarts, budget_seconds, seed=0,
          monitor_fraction=0.25, min_epochs=3, rel_tol=1e-4, jobs=1):
    """Time-budgeted SGVB runs over the (kappa, tau, omega) grid.

    Each run stops at convergence or when ``budget_seconds`` of compute is
    used up, and is scored on the full network.  Restart ``r`` of every
    cell starts from the same seed, so cells differ only in their tuning.
    Returns one dict per run with the keys in ``SWEEP_COLUMNS``.
    """
    if not (kappas and taus and omegas) or n_restarts < 1:
        raise ValueError("every grid axis needs at least one value")
    restart_seeds = np.random.SeedSequence(seed).spawn(n_restarts)
    cells = list(itertools.product(kappas, taus, omegas))
    args = []
    for kappa, tau, omega in cells:
        cfg = sgvb.SgvbConfig(omega=omega, kappa=kappa, tau=tau, min_epochs=min_epochs,
                              rel_tol=rel_tol, max_epochs=None,
                              time_budget_seconds=budget_seconds,
                              elbo_monitor_fraction=monitor_fraction)
        args += [(net, hp, cfg, s, r) for r, s in enumerate(restart_seeds)]
    results = map_jobs(_sweep_job, args, jobs)
    rows = []
    for (_, _, cfg, _, r), (rec, parts) in zip(args, results):
        rows.append({"kappa": cfg.kappa, "tau": cfg.tau, "omega": cfg.omega,
                     "restart": r, "seed": rec.seed, "status": rec.status,
                     "epochs": rec.epochs, "iterations": rec.n_iterations,
                     "elapsed_seconds": rec.elapsed, "full_elbo": parts.total,
                     "f_minus_h": parts.expected_log_joint})
    return rows
