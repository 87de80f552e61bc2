"""Label-invariant summaries of fits: co-clustering, point partitions, ARI, ROC/AUC."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.spatial.distance import squareform
from scipy.special import comb

from ._kernels import cocluster_counts, partition_pair_loss
from .cavi import FitResult, VarState
from .mcmc import McmcTrace
from .netio import dyad_index

__all__ = [
    "CoclusterMatrix",
    "RocResult",
    "LeakageError",
    "canonical_labels",
    "cocluster_from_trace",
    "cocluster_from_variational",
    "pairwise_loss",
    "lau_green_partition",
    "variational_candidates",
    "point_estimate",
    "adjusted_rand_index",
    "predict_links",
    "roc_auc",
    "heatmap_order",
    "write_cocluster",
    "write_roc",
]


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


class LeakageError(ValueError):
    """A pair to be predicted was visible while fitting."""


@dataclass
class CoclusterMatrix:
    matrix: np.ndarray
    source: str  # "mcmc" or "variational"

    @property
    def n_nodes(self):
        return self.matrix.shape[0]


@dataclass
class RocResult:
    thresholds: np.ndarray  # decreasing, starts at +inf and ends at -inf
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float


def canonical_labels(labels):
    """Relabel blocks 0, 1, ... in order of first appearance (rows if 2-D)."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return np.array([canonical_labels(row) for row in labels])
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    return rank[inv]


def _unique_partitions(samples):
    canon = canonical_labels(samples)
    uniq, counts = np.unique(canon, axis=0, return_counts=True)
    return uniq.astype(np.int64), counts


def cocluster_from_trace(trace):
    """Fraction of retained samples in which each pair shares a block."""
    samples = trace.labels if isinstance(trace, McmcTrace) else np.asarray(trace)
    samples = np.atleast_2d(samples)
    if len(samples) == 0:
        raise ValueError("need at least one retained sample")
    uniq, counts = _unique_partitions(samples)
    up = cocluster_counts(uniq, counts.astype(float)) / len(samples)
    C = up + up.T
    np.fill_diagonal(C, 1.0)
    return CoclusterMatrix(C, "mcmc")


def cocluster_from_variational(state):
    """``q(xi_i = xi_j) = sum_k q_ik q_jk`` with a unit diagonal."""
    Q = state.q if isinstance(state, VarState) else np.asarray(state)
    C = Q @ Q.T
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return CoclusterMatrix(np.clip(C, 0.0, 1.0), "variational")


def _matrix(C):
    return C.matrix if isinstance(C, CoclusterMatrix) else np.asarray(C, dtype=float)


def pairwise_loss(labels, C):
    """Equal-penalty loss ``sum_{i<j} |1(z_i = z_j) - C_ij|`` for one or many labellings."""
    C = _matrix(C)
    labels = np.atleast_2d(np.asarray(labels, dtype=np.int64))
    iu = np.triu_indices(C.shape[0], 1)
    base = C[iu].sum()
    return base + partition_pair_loss(labels, 1.0 - 2.0 * C)


def lau_green_partition(C, candidates):
    """Candidate minimising the equal-penalty pairwise loss against ``C``."""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.int64))
    if candidates.size == 0:
        raise ValueError("the candidate pool is empty")
    uniq, _ = _unique_partitions(candidates)
    loss = pairwise_loss(uniq, C)
    return uniq[int(np.argmin(loss))]


def variational_candidates(C, Q=None):
    """Row-wise argmax (if ``Q`` given) plus every cut of an average-linkage tree on 1 - C."""
    M = _matrix(C)
    dist = np.clip(1.0 - M, 0.0, None)
    np.fill_diagonal(dist, 0.0)
    tree = linkage(squareform(dist, checks=False), method="average")
    cuts = cut_tree(tree).T
    if Q is not None:
        cuts = np.vstack([np.asarray(Q).argmax(axis=1)[None, :], cuts])
    return cuts


def point_estimate(fit, method="lau-green"):
    """Hard partition from an MCMC trace or a variational state.

    ``method`` is ``"lau-green"`` or ``"argmax"`` (variational only).
    """
    if isinstance(fit, FitResult):
        fit = fit.state
    if isinstance(fit, McmcTrace):
        C = cocluster_from_trace(fit)
        return lau_green_partition(C, fit.labels)
    if method == "argmax":
        return canonical_labels(fit.q.argmax(axis=1))
    C = cocluster_from_variational(fit)
    return lau_green_partition(C, variational_candidates(C, fit.q))


def adjusted_rand_index(p1, p2):
    """Hubert-Arabie adjusted Rand index between two hard partitions."""
    p1 = np.asarray(p1)
    p2 = np.asarray(p2)
    if p1.shape != p2.shape:
        raise ValueError("partitions must cover the same nodes")
    n = len(p1)
    _, a = np.unique(p1, return_inverse=True)
    _, b = np.unique(p2, return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    index = comb(table, 2).sum()
    rows = comb(table.sum(axis=1), 2).sum()
    cols = comb(table.sum(axis=0), 2).sum()
    total = comb(n, 2)
    expected = rows * cols / total if total else 0.0
    maximum = 0.5 * (rows + cols)
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def _check_masked(pairs, train):
    lo, hi = pairs.min(axis=1), pairs.max(axis=1)
    lin = dyad_index(lo, hi, train.n_nodes)
    hidden = np.isin(lin, train.masked_lin())
    if not hidden.all():
        i, j = pairs[np.argmin(hidden)]
        raise LeakageError(f"pair ({i}, {j}) was observed during fitting")


def predict_links(fit, pairs, train=None, check_leakage=True, chunk=500):
    """Posterior predictive edge probability for each pair.

    MCMC: average of theta at the sampled block pair.  Variational:
    ``sum_{k<=l} r_kl^{ij} a*_kl / (a*_kl + b*_kl)``.  With ``train`` given
    and ``check_leakage`` on, every pair must be masked in ``train``.
    """
    pairs = np.asarray(pairs, dtype=np.int64)[:, :2]
    if check_leakage:
        if train is None:
            raise ValueError("pass the training network or disable check_leakage")
        _check_masked(pairs, train)
    if isinstance(fit, FitResult):
        fit = fit.state
    i, j = pairs[:, 0], pairs[:, 1]
    if isinstance(fit, McmcTrace):
        if fit.theta is None:
            raise ValueError("trace was run without keep_theta")
        out = np.zeros(len(pairs))
        for start in range(0, fit.n_retained, chunk):
            lab = fit.labels[start:start + chunk]
            th = fit.theta[start:start + chunk]
            s = np.arange(len(lab))[:, None]
            out += th[s, lab[:, i], lab[:, j]].sum(axis=0)
        return out / fit.n_retained
    mean = fit.theta_mean()
    Q = fit.q
    return np.einsum("pk,kl,pl->p", Q[i], mean, Q[j])


def roc_auc(scores, labels):
    """Exact ROC step curve and trapezoidal AUC (ties count one half)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined unless both classes are present")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    distinct = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[distinct]
    fps = (distinct + 1) - tps
    tpr = np.r_[0.0, tps / n_pos, 1.0]
    fpr = np.r_[0.0, fps / n_neg, 1.0]
    thresholds = np.r_[np.inf, s[distinct], -np.inf]
    auc = float(_trapezoid(tpr, fpr))
    return RocResult(thresholds, tpr, fpr, auc)


def heatmap_order(partition, degree):
    """Node order grouping blocks together, highest degree first within each block."""
    partition = np.asarray(partition)
    return np.lexsort((-np.asarray(degree), partition))


def write_cocluster(C, path, triplet_threshold=None):
    """Dense CSV, or ``i,j,p`` triplets of entries above ``triplet_threshold``."""
    M = _matrix(C)
    if triplet_threshold is None:
        np.savetxt(path, M, delimiter=",", fmt="%.6g")
        return
    i, j = np.nonzero(np.triu(M, 1) > triplet_threshold)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "p"])
        for a, b in zip(i, j):
            w.writerow([int(a), int(b), f"{M[a, b]:.6g}"])


def write_roc(roc, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in zip(roc.fpr, roc.tpr, roc.thresholds):
            w.writerow([f"{f:.8g}", f"{t:.8g}", th])
