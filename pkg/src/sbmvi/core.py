"""Model quantities shared by every inference engine.

Block labels are 0-based integers in ``0..K-1``.  Block-pair quantities
(``theta``, ``s``, ``n``, variational ``a*``/``b*``) are stored as full
symmetric ``K x K`` arrays; only the ``k <= l`` entries are free.
"""
from __future__ import annotations

import json
from functools import lru_cache
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln, xlogy

__all__ = [
    "Hyperparams",
    "SufficientStats",
    "compute_stats",
    "log_joint",
    "log_prior_labels",
    "log_marginal_given_labels",
    "collapsed_prior_predictive",
    "block_pair_counts",
    "triu_sum",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class Hyperparams:
    """Beta(a, b) prior on block probabilities, Dir(alpha/K) prior on weights."""

    K: int
    a: float = 1.0
    b: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if min(self.a, self.b, self.alpha) <= 0:
            raise ValueError("hyperparameters must be strictly positive")

    def to_dict(self):
        return {"K": self.K, "a": self.a, "b": self.b, "alpha": self.alpha}


@lru_cache(maxsize=64)
def triu_index(K):
    """Cached ``np.triu_indices(K)`` (read-only); hot in per-iteration code."""
    iu = np.triu_indices(K)
    for arr in iu:
        arr.setflags(write=False)
    return iu


def triu_sum(mat):
    """Sum of the ``k <= l`` entries of a square array."""
    return float(np.triu(mat).sum())


def block_pair_counts(pairs, labels, K):
    """Symmetric ``K x K`` count of dyads per unordered block pair."""
    out = np.zeros((K, K), dtype=np.int64)
    if len(pairs):
        zi = labels[pairs[:, 0]]
        zj = labels[pairs[:, 1]]
        lo, hi = np.minimum(zi, zj), np.maximum(zi, zj)
        np.add.at(out, (lo, hi), 1)
    off = np.triu(out, 1)
    return np.triu(out) + off.T


@dataclass
class SufficientStats:
    """Edge counts ``s``, observed-dyad counts ``n`` and block sizes ``m``.

    ``masked`` counts missing dyads per block pair so that ``n`` can be
    derived from ``m``.
    """

    s: np.ndarray
    n: np.ndarray
    m: np.ndarray
    masked: np.ndarray = field(repr=False)

    @property
    def K(self):
        return len(self.m)

    def move_node(self, net, labels, i, new):
        """Reassign node ``i`` to block ``new`` in O(degree + missing + K).

        ``labels`` is updated in place.
        """
        old = labels[i]
        if old == new:
            return
        adj = net.adjacency
        nbr = adj.indices[adj.indptr[i]:adj.indptr[i + 1]]
        madj = net.missing_adjacency
        mnbr = madj.indices[madj.indptr[i]:madj.indptr[i + 1]]
        K = self.K
        e_cnt = np.bincount(labels[nbr], minlength=K)
        x_cnt = np.bincount(labels[mnbr], minlength=K)
        for cnt, target in ((e_cnt, self.s), (x_cnt, self.masked)):
            # row and column passes hit the diagonal twice
            target[old, :] -= cnt
            target[:, old] -= cnt
            target[old, old] += cnt[old]
            target[new, :] += cnt
            target[:, new] += cnt
            target[new, new] -= cnt[new]
        labels[i] = new
        self.m[old] -= 1
        self.m[new] += 1
        self.n = _pair_totals(self.m) - self.masked

    def copy(self):
        return SufficientStats(self.s.copy(), self.n.copy(), self.m.copy(),
                               self.masked.copy())


def _pair_totals(m):
    tot = np.outer(m, m)
    np.fill_diagonal(tot, m * (m - 1) // 2)
    return tot


def compute_stats(net, labels, K):
    """Sufficient statistics of a hard partition over observed dyads."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (net.n_nodes,):
        raise ValueError("labels must have one entry per node")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError("labels out of range")
    m = np.bincount(labels, minlength=K).astype(np.int64)
    s = block_pair_counts(net.edges, labels, K)
    masked = block_pair_counts(net.missing, labels, K)
    return SufficientStats(s, _pair_totals(m) - masked, m, masked)


def log_prior_labels(m, hp):
    """Dirichlet-multinomial log probability of a labelling with block sizes ``m``."""
    m = np.asarray(m, dtype=float)
    I = m.sum()
    c = hp.alpha / hp.K
    return float(gammaln(hp.alpha) - gammaln(I + hp.alpha) - hp.K * gammaln(c)
                 + gammaln(c + m).sum())


def log_marginal_given_labels(stats, hp):
    """``log p(Y | xi)`` with every block probability integrated out."""
    iu = np.triu_indices(stats.K)
    s = stats.s[iu].astype(float)
    n = stats.n[iu].astype(float)
    a, b = hp.a, hp.b
    lb = gammaln(a + s) + gammaln(b + n - s) - gammaln(a + b + n)
    lb0 = gammaln(a) + gammaln(b) - gammaln(a + b)
    return float((lb - lb0).sum())


def log_joint(net, labels, theta, w, hp, stats=None):
    """``log p(Y, theta, xi, w)`` with all normalising constants.

    Returns ``-inf`` when a probability of exactly 0 or 1 contradicts the data.
    """
    K = hp.K
    if stats is None:
        stats = compute_stats(net, labels, K)
    theta = np.asarray(theta, dtype=float)
    w = np.asarray(w, dtype=float)
    iu = triu_index(K)
    th = theta[iu]
    s = stats.s[iu]
    fail = stats.n[iu] - s
    with np.errstate(divide="ignore", invalid="ignore"):
        loglik = xlogy(s, th) + xlogy(fail, 1.0 - th)
        logprior_theta = (xlogy(hp.a - 1.0, th) + xlogy(hp.b - 1.0, 1.0 - th)
                          + gammaln(hp.a + hp.b) - gammaln(hp.a) - gammaln(hp.b))
        c = hp.alpha / K
        logprior_w = (gammaln(hp.alpha) - K * gammaln(c)
                      + xlogy(c - 1.0, w).sum())
        loglabels = xlogy(stats.m, w).sum()
    total = loglik.sum() + logprior_theta.sum() + logprior_w + loglabels
    if np.isnan(total):
        return -np.inf
    return float(total)


def collapsed_prior_predictive(labels_minus_i, hp, n_nodes=None):
    """``Pr(xi_i = k | xi_-i)`` for every ``k`` with the weights integrated out.

    ``labels_minus_i`` holds the labels of the other ``I - 1`` nodes.
    """
    labels_minus_i = np.asarray(labels_minus_i, dtype=np.int64)
    m = np.bincount(labels_minus_i, minlength=hp.K)
    others = len(labels_minus_i) if n_nodes is None else n_nodes - 1
    return (m + hp.alpha / hp.K) / (others + hp.alpha)


# ---------------------------------------------------------------------------
# checkpoints


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(type(obj))


def save_checkpoint(path, engine, hp, seed, iteration, **state):
    """Write a JSON checkpoint.

    ``state`` carries either ``labels`` and ``theta`` (MCMC) or
    ``soft_marginals``, ``var_a`` and ``var_b`` (variational engines).
    """
    rec = {"engine": engine, "hyperparams": hp.to_dict(), "seed": seed,
           "iteration": int(iteration)}
    rec.update(state)
    Path(path).write_text(json.dumps(rec, default=_to_jsonable))


def load_checkpoint(path):
    rec = json.loads(Path(path).read_text())
    rec["hyperparams"] = Hyperparams(**rec["hyperparams"])
    for key in ("labels", "theta", "w", "soft_marginals", "var_a", "var_b"):
        if key in rec and rec[key] is not None:
            rec[key] = np.asarray(rec[key])
    return rec
