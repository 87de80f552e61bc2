"""Undirected binary networks: storage, edge-list I/O and held-out splits.

Nodes are indexed ``0..I-1`` internally.  Every dyad ``(i, j)`` with
``i < j`` also has a linear upper-triangle index (see :func:`dyad_index`),
which is what the hold-out machinery samples from.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Network",
    "HoldoutSplit",
    "ParseError",
    "SelfLoopError",
    "pair_key",
    "dyad_index",
    "dyad_pairs",
    "load_edge_list",
    "write_edge_list",
    "make_holdout",
    "save_splits",
    "load_splits",
]


class ParseError(ValueError):
    """Malformed edge-list line."""

    def __init__(self, lineno, line, reason="expected two integers"):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


class SelfLoopError(ValueError):
    """A dyad joins a node to itself."""

    def __init__(self, lineno, node):
        super().__init__(f"self-loop at line {lineno} (node {node})")
        self.lineno = lineno


def pair_key(u, v):
    """Return the canonical ordering ``(min(u, v), max(u, v))`` of a dyad."""
    if u == v:
        raise ValueError(f"a dyad needs two distinct nodes, got ({u}, {v})")
    return (u, v) if u < v else (v, u)


def dyad_index(i, j, n):
    """Linear index of dyad ``(i, j)``, ``i < j``, in row-major upper-triangle order."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    return i * (2 * n - i - 1) // 2 + (j - i - 1)


def dyad_pairs(idx, n):
    """Inverse of :func:`dyad_index`; returns ``(i, j)`` arrays."""
    idx = np.asarray(idx, dtype=np.int64)
    total = n * (n - 1) // 2
    # row i starts at offset i*(2n-i-1)/2; solve the quadratic then fix rounding
    rev = total - 1 - idx
    r = ((np.sqrt(8.0 * rev + 1.0) - 1.0) // 2).astype(np.int64)
    r = np.where((r + 1) * (r + 2) // 2 <= rev, r + 1, r)
    r = np.where(r * (r + 1) // 2 > rev, r - 1, r)
    i = n - 2 - r
    j = idx - i * (2 * n - i - 1) // 2 + i + 1
    return i, j


def _canonical_pairs(pairs, n):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    lo = pairs.min(axis=1)
    hi = pairs.max(axis=1)
    if np.any(lo == hi):
        raise ValueError("self-loops are not allowed")
    if lo.min() < 0 or hi.max() >= n:
        raise ValueError(f"node index out of range for a {n}-node network")
    lin = np.unique(dyad_index(lo, hi, n))
    i, j = dyad_pairs(lin, n)
    return np.column_stack([i, j])


def _symmetric_csr(pairs, n):
    if len(pairs) == 0:
        return sp.csr_matrix((n, n), dtype=np.int8)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    data = np.ones(len(rows), dtype=np.int8)
    mat = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    mat.sort_indices()
    return mat


class Network:
    """Immutable undirected binary network with an optional missing-dyad mask.

    Parameters
    ----------
    n_nodes : int
        Number of nodes ``I``.
    edges : array_like of shape (E, 2)
        Observed edges; any orientation, duplicates collapse.
    missing : array_like of shape (M, 2), optional
        Dyads whose value is unobserved.  They contribute to no statistic.
    node_ids : array_like, optional
        Original identifier of each internal node (set by the edge-list
        loader when ids were re-indexed).
    """

    def __init__(self, n_nodes, edges=(), missing=(), node_ids=None):
        n_nodes = int(n_nodes)
        if n_nodes < 1:
            raise ValueError("a network needs at least one node")
        self.n_nodes = n_nodes
        self.edges = _canonical_pairs(edges, n_nodes)
        self.missing = _canonical_pairs(missing, n_nodes)
        self._edge_lin = dyad_index(self.edges[:, 0], self.edges[:, 1], n_nodes)
        self._miss_lin = dyad_index(self.missing[:, 0], self.missing[:, 1], n_nodes)
        if np.intersect1d(self._edge_lin, self._miss_lin).size:
            raise ValueError("a dyad cannot be both an observed edge and missing")
        self.adjacency = _symmetric_csr(self.edges, n_nodes)
        self.missing_adjacency = _symmetric_csr(self.missing, n_nodes)
        self.node_ids = None if node_ids is None else np.asarray(node_ids)
        for arr in (self.edges, self.missing, self._edge_lin, self._miss_lin):
            arr.setflags(write=False)

    def __repr__(self):
        return (f"Network(I={self.n_nodes}, edges={self.n_edges}, "
                f"missing={self.n_missing})")

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_missing(self):
        return len(self.missing)

    @property
    def n_dyads(self):
        return self.n_nodes * (self.n_nodes - 1) // 2

    @property
    def n_observed(self):
        return self.n_dyads - self.n_missing

    @property
    def density(self):
        return self.n_edges / max(self.n_observed, 1)

    def degree(self):
        return np.diff(self.adjacency.indptr)

    def edge_set(self):
        return {(int(i), int(j)) for i, j in self.edges}

    def missing_set(self):
        return {(int(i), int(j)) for i, j in self.missing}

    def has_edge(self, u, v):
        i, j = pair_key(u, v)
        lin = dyad_index(i, j, self.n_nodes)
        k = np.searchsorted(self._edge_lin, lin)
        return bool(k < len(self._edge_lin) and self._edge_lin[k] == lin)

    def is_missing(self, u, v):
        i, j = pair_key(u, v)
        lin = dyad_index(i, j, self.n_nodes)
        k = np.searchsorted(self._miss_lin, lin)
        return bool(k < len(self._miss_lin) and self._miss_lin[k] == lin)

    def dyad_values(self, pairs):
        """Return ``y`` (0/1) for each row of ``pairs``; ignores the mask."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        lo, hi = pairs.min(axis=1), pairs.max(axis=1)
        lin = dyad_index(lo, hi, self.n_nodes)
        k = np.searchsorted(self._edge_lin, lin)
        k = np.minimum(k, max(len(self._edge_lin) - 1, 0))
        if len(self._edge_lin) == 0:
            return np.zeros(len(lin), dtype=np.int64)
        return (self._edge_lin[k] == lin).astype(np.int64)

    def masked_lin(self):
        return self._miss_lin

    def edge_lin(self):
        return self._edge_lin

    def with_mask(self, pairs):
        """Copy of this network with ``pairs`` hidden (edges among them dropped)."""
        pairs = _canonical_pairs(pairs, self.n_nodes)
        lin = dyad_index(pairs[:, 0], pairs[:, 1], self.n_nodes)
        keep = ~np.isin(self._edge_lin, lin)
        missing = np.concatenate([self.missing, pairs])
        return Network(self.n_nodes, self.edges[keep], missing, node_ids=self.node_ids)

    def dense(self):
        """Dense ``I x I`` 0/1 adjacency; only sensible for small networks."""
        return self.adjacency.toarray().astype(np.int64)

    def observed_dense(self):
        """Dense ``I x I`` indicator of observed off-diagonal dyads."""
        obs = np.ones((self.n_nodes, self.n_nodes), dtype=np.int64)
        np.fill_diagonal(obs, 0)
        obs[self.missing[:, 0], self.missing[:, 1]] = 0
        obs[self.missing[:, 1], self.missing[:, 0]] = 0
        return obs


# ---------------------------------------------------------------------------
# edge-list files


def load_edge_list(path, one_indexed=True):
    """Read a whitespace-separated edge list.

    An optional ``# nodes=I`` header declares the node count (so isolated
    vertices survive a round trip).  Without a header, ids that do not
    cover ``base..max`` densely are re-indexed in sorted order and the
    original ids are kept in ``Network.node_ids``.
    """
    base = 1 if one_indexed else 0
    declared = None
    pairs = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip().replace(" ", "")
                if body.startswith("nodes="):
                    try:
                        declared = int(body[len("nodes="):])
                    except ValueError:
                        raise ParseError(lineno, raw.rstrip("\n"), "bad node-count header") from None
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(lineno, raw.rstrip("\n"))
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(lineno, raw.rstrip("\n")) from None
            if u == v:
                raise SelfLoopError(lineno, u)
            pairs.append((u, v))

    ids = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    if declared is not None:
        if ids.size and (ids.min() < base or ids.max() >= declared + base):
            raise ParseError(0, "", f"node id outside declared range of {declared} nodes")
        return Network(declared, ids - base)
    if ids.size == 0:
        raise ParseError(0, "", "empty edge list without a node-count header")
    uniq = np.unique(ids)
    if uniq[0] == base and uniq[-1] - base + 1 == len(uniq):
        return Network(len(uniq), ids - base)
    dense = np.searchsorted(uniq, ids)
    return Network(len(uniq), dense, node_ids=uniq)


def write_edge_list(net, path, one_indexed=True):
    base = 1 if one_indexed else 0
    with open(path, "w") as fh:
        fh.write(f"# nodes={net.n_nodes}\n")
        np.savetxt(fh, net.edges + base, fmt="%d")


# ---------------------------------------------------------------------------
# hold-out splits


@dataclass
class HoldoutSplit:
    train: Network
    test_pairs: np.ndarray  # (T, 3) rows of (i, j, y)
    fold_id: int
    seed: int

    def to_record(self):
        return {"fold": self.fold_id, "seed": self.seed,
                "test": self.test_pairs.tolist()}


def _sample_lin(rng, n, count, exclude):
    """Uniform sample of ``count`` distinct dyad indices not in ``exclude`` (sorted)."""
    total = n * (n - 1) // 2
    if count > total - len(exclude):
        raise ValueError("not enough dyads to sample from")
    chosen = np.empty(0, dtype=np.int64)
    while len(chosen) < count:
        need = count - len(chosen)
        draw = rng.integers(0, total, size=int(need * 1.2) + 16)
        draw = draw[~np.isin(draw, exclude, assume_unique=False)]
        draw = draw[~np.isin(draw, chosen)]
        # keep first occurrences in draw order so the result depends only on the stream
        _, first = np.unique(draw, return_index=True)
        draw = draw[np.sort(first)]
        chosen = np.concatenate([chosen, draw[:need]])
    return chosen


def _split_from_lin(net, lin, fold, seed):
    lin = np.sort(lin)
    i, j = dyad_pairs(lin, net.n_nodes)
    pairs = np.column_stack([i, j])
    y = net.dyad_values(pairs)
    test = np.column_stack([pairs, y])
    return HoldoutSplit(net.with_mask(pairs), test, fold, seed)


def make_holdout(net, fraction=None, folds=1, seed=0, balanced=False):
    """Build hold-out splits of the observed dyads of ``net``.

    With ``fraction=None`` the observed dyads are partitioned into
    ``folds`` (>= 2) disjoint test folds.  Otherwise each of the ``folds``
    splits independently masks ``fraction`` of the observed dyads.  With
    ``balanced`` the edges and the non-edges are sampled separately at the
    same rate (stratified folds in k-fold mode).
    """
    if folds < 1:
        raise ValueError("folds must be >= 1")
    n = net.n_nodes
    rng = np.random.default_rng(seed)
    miss = np.sort(net.masked_lin())
    edges = np.sort(net.edge_lin())

    if fraction is None:
        if folds < 2:
            raise ValueError("k-fold mode needs folds >= 2")
        observed = np.setdiff1d(np.arange(net.n_dyads, dtype=np.int64), miss,
                                assume_unique=True)
        if balanced:
            pos = rng.permutation(edges)
            neg = rng.permutation(np.setdiff1d(observed, edges, assume_unique=True))
            if len(pos) < folds or len(neg) < folds:
                raise ValueError("too many folds: a fold would lack edges or non-edges")
            parts = [np.concatenate([p, q]) for p, q in
                     zip(np.array_split(pos, folds), np.array_split(neg, folds))]
        else:
            if len(observed) < folds:
                raise ValueError("too many folds: a fold would be empty")
            parts = np.array_split(rng.permutation(observed), folds)
        return [_split_from_lin(net, part, f, seed) for f, part in enumerate(parts)]

    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    splits = []
    for f, child in enumerate(np.random.SeedSequence(seed).spawn(folds)):
        frng = np.random.default_rng(child)
        if balanced:
            n_neg = net.n_observed - net.n_edges
            c_pos = int(round(fraction * net.n_edges))
            c_neg = int(round(fraction * n_neg))
            if c_pos == 0 or c_neg == 0:
                raise ValueError("fraction too small: a test fold would lack edges or non-edges")
            pos = frng.choice(edges, size=c_pos, replace=False)
            neg = _sample_lin(frng, n, c_neg, np.union1d(edges, miss))
            lin = np.concatenate([pos, neg])
        else:
            count = int(round(fraction * net.n_observed))
            if count == 0:
                raise ValueError("fraction too small: the test fold would be empty")
            lin = _sample_lin(frng, n, count, miss)
        splits.append(_split_from_lin(net, lin, f, seed))
    return splits


def save_splits(splits, path):
    Path(path).write_text(json.dumps([s.to_record() for s in splits]))


def load_splits(path, net):
    """Rebuild splits saved by :func:`save_splits` against the source network."""
    out = []
    for rec in json.loads(Path(path).read_text()):
        test = np.asarray(rec["test"], dtype=np.int64).reshape(-1, 3)
        out.append(HoldoutSplit(net.with_mask(test[:, :2]), test,
                                int(rec["fold"]), int(rec["seed"])))
    return out
