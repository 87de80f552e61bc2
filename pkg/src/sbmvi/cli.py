"""Command-line driver: ``sbmvi {generate,fit,sweep,crossval,evaluate}``.

Every command writes ``config.json`` (the fully resolved arguments plus the
RNG algorithm and package version) into its output directory before doing
any work.

Exit codes: 0 success, 2 usage error, 3 a fit stopped on its iteration or
time budget before converging, 4 an input file could not be read.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import experiments
from .cavi import CaviConfig, VarState, _seed_int
from .core import Hyperparams, load_checkpoint, save_checkpoint
from .evaluation import (adjusted_rand_index, canonical_labels, cocluster_from_trace,
                         cocluster_from_variational, heatmap_order, point_estimate,
                         write_cocluster, write_roc)
from .mcmc import McmcConfig
from .netgen import (PRESETS, generate, load_preset, load_spec, resimulate_from_fit,
                     rng_algorithm, save_spec)
from .netio import load_edge_list, save_splits, write_edge_list
from .sgvb import SgvbConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BUDGET = 3
EXIT_FILE = 4

_BUDGET_STATUSES = {"max_sweeps", "max_epochs", "time_budget", "partial"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument groups


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _add_dataset(p):
    g = p.add_argument_group("dataset (exactly one source)")
    g.add_argument("--preset", choices=PRESETS)
    g.add_argument("--edges", type=Path, help="edge-list file, one 'i j' pair per line")
    g.add_argument("--spec", type=Path, help="generator spec TOML")
    g.add_argument("--zero-indexed", action="store_true",
                   help="node ids in --edges start at 0 rather than 1")
    g.add_argument("--data-seed", type=int, default=None,
                   help="override the generator seed of --preset/--spec")
    g.add_argument("--truth", type=Path, help="true labels, one integer per line")


def _add_hyper(p):
    g = p.add_argument_group("model")
    g.add_argument("-K", "--K", type=int, default=20, help="number of blocks (default 20)")
    g.add_argument("--a", type=float, default=1.0)
    g.add_argument("--b", type=float, default=1.0)
    g.add_argument("--alpha", type=float, default=1.0)


def _add_mcmc(p):
    g = p.add_argument_group("mcmc")
    g.add_argument("--iters", type=int, default=10_000)
    g.add_argument("--burnin", type=int, default=None, help="default: iters // 2")
    g.add_argument("--thin", type=int, default=1)
    g.add_argument("--chains", type=int, default=1)


def _add_cavi(p):
    g = p.add_argument_group("cavi")
    g.add_argument("--max-sweeps", type=int, default=500)
    g.add_argument("--cavi-rel-tol", type=float, default=1e-6)


def _add_sgvb(p, with_stopping=True):
    g = p.add_argument_group("sgvb")
    g.add_argument("--omega", type=float, default=0.25)
    g.add_argument("--kappa", type=float, default=0.6)
    g.add_argument("--tau", type=float, default=1.0)
    g.add_argument("--monitor-frac", type=float, default=0.25)
    g.add_argument("--no-reshuffle", action="store_true",
                   help="keep the first epoch's node blocks for every epoch")
    if with_stopping:
        g.add_argument("--min-epochs", type=int, default=None, help="default 3")
        g.add_argument("--rel-tol", type=float, default=None, help="default 1e-4")
        g.add_argument("--max-epochs", type=int, default=200)
        stop = g.add_mutually_exclusive_group()
        stop.add_argument("--time-budget-secs", type=float, default=None,
                          help="stop a restart after this much compute time")
        stop.add_argument("--fixed-epochs", type=int, default=None,
                          help="run exactly this many epochs, no convergence test")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sbmvi", description="Bayesian stochastic blockmodels: MCMC, CAVI and SGVB.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a synthetic network")
    g = p.add_argument_group("source (exactly one)")
    g.add_argument("--preset", choices=PRESETS)
    g.add_argument("--spec", type=Path)
    g.add_argument("--from-fit", type=Path,
                   help="checkpoint whose partition and block means become the ground truth")
    p.add_argument("--seed", type=int, default=None, help="generator seed override")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("fit", help="fit one engine, with restarts or chains")
    _add_dataset(p)
    _add_hyper(p)
    p.add_argument("--engine", choices=experiments.ENGINES, required=True)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--point", choices=("lau-green", "argmax"), default="lau-green",
                   help="hard partition used for ARI (variational engines)")
    _add_mcmc(p)
    _add_cavi(p)
    _add_sgvb(p)
    _add_common(p)

    p = sub.add_parser("sweep", help="time-budgeted SGVB grid over kappa, tau and omega")
    _add_dataset(p)
    _add_hyper(p)
    p.add_argument("--kappas", type=_float_list, default=[0.6, 0.8, 1.0])
    p.add_argument("--taus", type=_float_list, default=[1.0, 4.0, 16.0, 64.0])
    p.add_argument("--omegas", type=_float_list, default=[0.05, 0.1, 0.15, 0.25, 0.5])
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--budget-secs", type=float, default=None,
                   help="per-run budget; default: measured mean CAVI runtime")
    p.add_argument("--cavi-runs", type=int, default=3,
                   help="CAVI runs used to measure the budget")
    p.add_argument("--monitor-frac", type=float, default=0.25)
    p.add_argument("--min-epochs", type=int, default=3)
    p.add_argument("--rel-tol", type=float, default=1e-4)
    _add_cavi(p)
    _add_common(p)

    p = sub.add_parser("crossval", help="k-fold held-out link prediction")
    _add_dataset(p)
    _add_hyper(p)
    p.add_argument("--folds", type=int, default=20)
    p.add_argument("--engines", default="mcmc,sgvb",
                   help="comma-separated subset of mcmc,cavi,sgvb")
    p.add_argument("--balanced", action="store_true",
                   help="stratify folds by edges and non-edges")
    p.add_argument("--restarts", type=int, default=1)
    _add_mcmc(p)
    _add_cavi(p)
    _add_sgvb(p)
    _add_common(p)

    p = sub.add_parser("evaluate", help="ARI and co-clustering exports for saved fits")
    p.add_argument("checkpoints", nargs="+", type=Path, help="one or two checkpoints")
    p.add_argument("--truth", type=Path)
    p.add_argument("--preset", choices=PRESETS, help="take the true labels from a preset")
    p.add_argument("--network", type=Path,
                   help="edge list used to order the heatmap export by degree")
    p.add_argument("--zero-indexed", action="store_true")
    p.add_argument("--point", choices=("lau-green", "argmax"), default="lau-green")
    p.add_argument("--triplet-threshold", type=float, default=None,
                   help="export (i,j,p) triplets above this value instead of a dense CSV")
    p.add_argument("--out", type=Path, required=True)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _version():
    try:
        return metadata.version("sbmvi")
    except metadata.PackageNotFoundError:
        return "unknown"


def _jsonable(obj):
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_jsonable, sort_keys=True) + "\n")


def _echo_config(args, out, **extra):
    out.mkdir(parents=True, exist_ok=True)
    cfg = {k: v for k, v in vars(args).items() if not k.startswith("_")}
    cfg.update(extra)
    cfg["rng_algorithm"] = rng_algorithm()
    cfg["version"] = _version()
    _write_json(out / "config.json", cfg)
    return cfg


def _write_csv(path, rows, columns, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def _read_labels(path):
    return np.loadtxt(path, dtype=np.int64, ndmin=1)


def _load_dataset(args):
    """``(network, truth or None, spec or None)`` from the dataset flags."""
    sources = [s for s in ("preset", "edges", "spec") if getattr(args, s, None) is not None]
    if len(sources) != 1:
        raise UsageError("give exactly one of --preset, --edges or --spec")
    spec = None
    truth = None
    if args.edges is not None:
        net = load_edge_list(args.edges, one_indexed=not args.zero_indexed)
    else:
        spec = load_preset(args.preset) if args.preset else load_spec(args.spec)
        if args.data_seed is not None:
            spec = spec.with_seed(args.data_seed)
        net, truth = generate(spec)
    if args.truth is not None:
        truth = _read_labels(args.truth)
        if len(truth) != net.n_nodes:
            raise UsageError(f"--truth has {len(truth)} labels for {net.n_nodes} nodes")
    return net, truth, spec


def _hyper(args):
    return Hyperparams(K=args.K, a=args.a, b=args.b, alpha=args.alpha)


def _mcmc_cfg(args):
    return McmcConfig(iterations=args.iters, burn_in=args.burnin, thin=args.thin,
                      seed=args.seed, n_chains=args.chains)


def _cavi_cfg(args, restarts=1):
    return CaviConfig(rel_tol=args.cavi_rel_tol, max_sweeps=args.max_sweeps,
                      seed=args.seed, n_restarts=restarts)


def _sgvb_cfg(args):
    min_epochs = 3 if args.min_epochs is None else args.min_epochs
    rel_tol = 1e-4 if args.rel_tol is None else args.rel_tol
    max_epochs = args.max_epochs
    if args.fixed_epochs is not None:
        if args.min_epochs is not None or args.rel_tol is not None:
            raise UsageError("--fixed-epochs cannot be combined with --min-epochs or --rel-tol")
        # convergence can only be declared on the last epoch, where the run stops anyway
        min_epochs = max_epochs = args.fixed_epochs
    return SgvbConfig(omega=args.omega, kappa=args.kappa, tau=args.tau,
                      min_epochs=min_epochs, rel_tol=rel_tol, max_epochs=max_epochs,
                      time_budget_seconds=args.time_budget_secs, n_restarts=args.restarts,
                      elbo_monitor_fraction=args.monitor_frac, seed=args.seed,
                      reshuffle=not args.no_reshuffle)


def _engine_cfg(args, engine):
    if engine == "mcmc":
        return _mcmc_cfg(args)
    if engine == "cavi":
        return _cavi_cfg(args, args.restarts)
    return _sgvb_cfg(args)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args):
    sources = [s for s in ("preset", "spec", "from_fit") if getattr(args, s) is not None]
    if len(sources) != 1:
        raise UsageError("give exactly one of --preset, --spec or --from-fit")
    _echo_config(args, args.out)
    if args.from_fit is not None:
        ck = load_checkpoint(args.from_fit)
        labels, theta = _fit_truth(ck)
        seed = 0 if args.seed is None else args.seed
        net = resimulate_from_fit(labels, theta, seed)
        truth = labels
        meta = {"source": str(args.from_fit), "seed": seed, "n_blocks": int(labels.max() + 1)}
        _write_json(args.out / "spec.json", {**meta, "theta": theta})
    else:
        spec = load_preset(args.preset) if args.preset else load_spec(args.spec)
        if args.seed is not None:
            spec = spec.with_seed(args.seed)
        net, truth = generate(spec)
        save_spec(spec, args.out / "spec.toml")
    write_edge_list(net, args.out / "network.txt")
    np.savetxt(args.out / "truth.txt", truth, fmt="%d")
    _write_json(args.out / "summary.json", {"n_nodes": net.n_nodes, "n_edges": net.n_edges,
                                            "density": net.density})
    print(f"wrote {net.n_nodes} nodes and {net.n_edges} edges to {args.out}")
    return EXIT_OK


def _fit_truth(ck):
    """Hard partition and block means from a checkpoint, relabelled 0..K*-1."""
    if "point_partition" in ck:
        labels = np.asarray(ck["point_partition"], dtype=np.int64)
    elif ck.get("labels") is not None:
        labels = canonical_labels(ck["labels"])
    else:
        labels = canonical_labels(ck["soft_marginals"].argmax(axis=1))
    if ck.get("var_a") is not None:
        mean = ck["var_a"] / (ck["var_a"] + ck["var_b"])
        Q = ck["soft_marginals"]
        # block means of the fitted blocks that the hard partition actually uses
        occupied = [np.flatnonzero(labels == k) for k in range(labels.max() + 1)]
        src = np.array([np.argmax(Q[idx].sum(axis=0)) for idx in occupied])
        theta = mean[np.ix_(src, src)]
    else:
        theta_full = ck["theta"]
        src = np.array([np.bincount(ck["labels"][labels == k]).argmax()
                        for k in range(labels.max() + 1)])
        theta = theta_full[np.ix_(src, src)]
    return labels, theta


def _write_trace(path, rows):
    if not rows:
        return
    _write_csv(path, rows, rows[0].keys())


def cmd_fit(args):
    net, truth, _ = _load_dataset(args)
    hp = _hyper(args)
    cfg = _engine_cfg(args, args.engine)
    _echo_config(args, args.out, engine_config=vars(cfg), hyperparams=hp.to_dict())
    keep = truth is not None and args.engine != "mcmc"
    run = experiments.fit_engine(net, args.engine, hp, cfg, jobs=args.jobs, keep_states=keep)
    out = args.out
    metrics = {"engine": args.engine, "status": run.status, "runs": run.records}
    if args.engine == "mcmc":
        best = run.fit
        for tr in run.traces:
            _write_trace(out / f"trace_chain{tr.chain}.csv",
                         [{"iteration": t + 1, "log_joint": v} for t, v in enumerate(tr.log_joint)])
        partition = point_estimate(best)
        np.savez_compressed(out / "samples.npz", labels=best.labels)
        save_checkpoint(out / "checkpoint.json", "mcmc", hp, _seed_int(best.seed),
                        len(best.log_joint), labels=best.final_state.labels,
                        theta=best.final_state.theta, w=best.final_state.w,
                        point_partition=partition, samples_file="samples.npz",
                        chain=best.chain)
        metrics["best_chain"] = best.chain
    else:
        res = run.fit
        for rec in res.restarts:
            _write_trace(out / f"trace_restart{rec.restart}.csv", rec.trace)
        partition = point_estimate(res.state, args.point)
        st = res.state
        save_checkpoint(out / "checkpoint.json", args.engine, hp, res.record.seed,
                        res.record.n_iterations, soft_marginals=st.q, var_a=st.var_a,
                        var_b=st.var_b, point_partition=partition,
                        restart=res.record.restart)
        table = []
        for i, rec in enumerate(res.restarts):
            row = {"restart": rec.restart, "final_full_elbo": rec.final_elbo, "ari_if_truth_known": ""}
            if keep:
                row["ari_if_truth_known"] = adjusted_rand_index(
                    point_estimate(res.states[i], args.point), truth)
            table.append(row)
        _write_csv(out / "restarts.csv", table, ["restart", "final_full_elbo", "ari_if_truth_known"])
        metrics["best_restart"] = res.record.restart
        metrics["final_elbo"] = res.record.final_elbo
    np.savetxt(out / "partition.txt", partition, fmt="%d")
    metrics["n_blocks_used"] = int(len(np.unique(partition)))
    if truth is not None:
        metrics["ari"] = adjusted_rand_index(partition, truth)
    _write_json(out / "metrics.json", metrics)
    line = f"{args.engine}: status={run.status} blocks={metrics['n_blocks_used']}"
    if "ari" in metrics:
        line += f" ari={metrics['ari']:.4f}"
    print(line)
    if args.engine == "sgvb" and args.fixed_epochs is not None and run.status == "max_epochs":
        return EXIT_OK  # the requested number of epochs is the stopping rule
    return EXIT_BUDGET if run.status in _BUDGET_STATUSES else EXIT_OK


def cmd_sweep(args):
    net, _, _ = _load_dataset(args)
    hp = _hyper(args)
    _echo_config(args, args.out)
    cavi_parts = []
    budget = args.budget_secs
    if budget is None:
        budget, cavi_parts = experiments.measure_cavi_budget(
            net, hp, _cavi_cfg(args), runs=args.cavi_runs)
    rows = experiments.sweep(net, hp, args.kappas, args.taus, args.omegas, args.restarts,
                             budget, seed=args.seed, monitor_fraction=args.monitor_frac,
                             min_epochs=args.min_epochs, rel_tol=args.rel_tol, jobs=args.jobs)
    header = [f"budget_seconds={budget:.6g}"]
    if cavi_parts:
        header.append("cavi_f_minus_h=" + ",".join(f"{p.expected_log_joint:.6f}" for p in cavi_parts))
    _write_csv(args.out / "sweep.csv", rows, experiments.SWEEP_COLUMNS, header)
    print(f"{len(rows)} runs, budget {budget:.3g}s each, written to {args.out / 'sweep.csv'}")
    return EXIT_OK


def cmd_crossval(args):
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    engines = [e.strip() for e in args.engines.split(",") if e.strip()]
    bad = set(engines) - set(experiments.ENGINES)
    if bad or not engines:
        raise UsageError(f"unknown engine(s): {', '.join(sorted(bad)) or '(none)'}")
    net, _, _ = _load_dataset(args)
    hp = _hyper(args)
    configs = {e: _engine_cfg(args, e) for e in engines}
    _echo_config(args, args.out, engine_configs={e: vars(c) for e, c in configs.items()})
    rows, rocs, splits = experiments.crossval(net, hp, configs, folds=args.folds, seed=args.seed,
                                              balanced=args.balanced, jobs=args.jobs)
    save_splits(splits, args.out / "splits.json")
    for (fold, eng), roc in rocs.items():
        write_roc(roc, args.out / f"roc_fold{fold}_{eng}.csv")
    _write_csv(args.out / "folds.csv", rows,
               ["fold", "engine", "auc", "n_test", "n_positive", "status"])
    summary = {}
    for eng in engines:
        aucs = [r["auc"] for r in rows if r["engine"] == eng]
        summary[eng] = {"auc": aucs, "median_auc": float(np.median(aucs))}
    _write_json(args.out / "metrics.json", {"folds": args.folds, "engines": summary})
    for eng in engines:
        print(f"{eng}: median AUC {summary[eng]['median_auc']:.4f} over {args.folds} folds")
    return EXIT_OK


def _checkpoint_view(path, point):
    """``(partition, CoclusterMatrix)`` of a saved fit."""
    ck = load_checkpoint(path)
    if ck["engine"] == "mcmc":
        samples_file = Path(path).parent / ck.get("samples_file", "samples.npz")
        if samples_file.exists():
            with np.load(samples_file) as data:
                C = cocluster_from_trace(data["labels"])
        else:
            C = cocluster_from_trace(ck["labels"][None, :])
        partition = np.asarray(ck.get("point_partition", ck["labels"]), dtype=np.int64)
        return partition, C
    state = VarState(ck["soft_marginals"], ck["var_a"], ck["var_b"])
    return point_estimate(state, point), cocluster_from_variational(state)


def cmd_evaluate(args):
    if len(args.checkpoints) > 2:
        raise UsageError("evaluate takes one or two checkpoints")
    if args.truth is not None and args.preset is not None:
        raise UsageError("give at most one of --truth and --preset")
    args.out.mkdir(parents=True, exist_ok=True)
    _echo_config(args, args.out)
    truth = None
    if args.truth is not None:
        truth = _read_labels(args.truth)
    elif args.preset is not None:
        truth = load_preset(args.preset).true_labels()
    degree = None
    if args.network is not None:
        degree = load_edge_list(args.network, one_indexed=not args.zero_indexed).degree()
    partitions, metrics = [], {}
    for n, path in enumerate(args.checkpoints):
        partition, C = _checkpoint_view(path, args.point)
        partitions.append(partition)
        tag = f"fit{n}"
        if truth is not None:
            if len(truth) != len(partition):
                raise UsageError("truth and checkpoint cover different node counts")
            metrics[f"{tag}_ari"] = adjusted_rand_index(partition, truth)
        metrics[f"{tag}_n_blocks"] = int(len(np.unique(partition)))
        M = C.matrix
        if degree is not None:
            order = heatmap_order(partition, degree)
            M = M[np.ix_(order, order)]
            np.savetxt(args.out / f"{tag}_order.txt", order, fmt="%d")
        write_cocluster(M, args.out / f"{tag}_cocluster.csv", args.triplet_threshold)
    if len(partitions) == 2:
        a, b = partitions
        if len(a) != len(b):
            raise UsageError("the two checkpoints cover different node counts")
        metrics["cross_ari"] = adjusted_rand_index(a, b)
        table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
        np.add.at(table, (a, b), 1)
        np.savetxt(args.out / "overlap.csv", table, fmt="%d", delimiter=",")
    _write_json(args.out / "metrics.json", metrics)
    for key, val in metrics.items():
        print(f"{key}: {val:.4f}" if isinstance(val, float) else f"{key}: {val}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "sweep": cmd_sweep,
            "crossval": cmd_crossval, "evaluate": cmd_evaluate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"sbmvi: {exc}", file=sys.stderr)
        return EXIT_FILE


if __name__ == "__main__":
    sys.exit(main())
