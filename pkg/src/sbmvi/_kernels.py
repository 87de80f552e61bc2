"""Compiled inner loops.  Callers own all randomness (uniforms are passed in)."""
import numpy as np
from numba import njit


@njit(cache=True)
def gibbs_label_sweep(order, labels, indptr, indices, mindptr, mindices,
                      log_theta, log1m_theta, log_w, m, s, masked, uniforms):
    """Systematic-scan draw of every label in ``order`` from its full conditional.

    ``m``, ``s`` and ``masked`` (block sizes, edge counts, missing counts per
    block pair) are updated in place.  Returns -1 on success, else the node
    whose conditional was degenerate.
    """
    K = log_w.shape[0]
    e_cnt = np.zeros(K, dtype=np.int64)
    x_cnt = np.zeros(K, dtype=np.int64)
    logp = np.empty(K)
    for pos in range(order.shape[0]):
        i = order[pos]
        old = labels[i]
        e_cnt[:] = 0
        x_cnt[:] = 0
        for p in range(indptr[i], indptr[i + 1]):
            e_cnt[labels[indices[p]]] += 1
        for p in range(mindptr[i], mindptr[i + 1]):
            x_cnt[labels[mindices[p]]] += 1
        best = -np.inf
        for k in range(K):
            acc = log_w[k]
            for l in range(K):
                others = m[l] - (1 if l == old else 0)
                non = others - e_cnt[l] - x_cnt[l]
                if e_cnt[l] > 0:
                    acc += e_cnt[l] * log_theta[k, l]
                if non > 0:
                    acc += non * log1m_theta[k, l]
            logp[k] = acc
            if acc > best:
                best = acc
        if best == -np.inf:
            return i
        total = 0.0
        for k in range(K):
            logp[k] = np.exp(logp[k] - best)
            total += logp[k]
        target = uniforms[pos] * total
        new = K - 1
        run = 0.0
        for k in range(K):
            run += logp[k]
            if target < run:
                new = k
                break
        if new != old:
            for cnt, tab in ((e_cnt, s), (x_cnt, masked)):
                for l in range(K):
                    c = cnt[l]
                    if c == 0:
                        continue
                    tab[old, l] -= c
                    if l != old:
                        tab[l, old] -= c
                    tab[new, l] += c
                    if l != new:
                        tab[l, new] += c
            m[old] -= 1
            m[new] += 1
            labels[i] = new
    return -1


@njit(cache=True)
def local_sweep(nodes, member, indptr, indices, mindptr, mindices, Q,
                colsum, colvar, batchsum, e_edge, e_non, scale, prior_c, eps):
    """Sequential mean-field update of the label marginals of ``nodes``.

    The likelihood sum for node ``i`` runs over observed ``j != i`` with
    ``member[j]`` set and is multiplied by ``scale``.  The prior term uses
    the full column sums ``colsum`` / ``colvar`` (sum of q and q(1-q)).
    ``batchsum`` is the column sum over member nodes.  All three sums and
    ``Q`` are updated in place.
    """
    K = Q.shape[1]
    ysum = np.empty(K)
    msum = np.empty(K)
    logit = np.empty(K)
    for pos in range(nodes.shape[0]):
        i = nodes[pos]
        ysum[:] = 0.0
        msum[:] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if member[j]:
                for l in range(K):
                    ysum[l] += Q[j, l]
        for p in range(mindptr[i], mindptr[i + 1]):
            j = mindices[p]
            if member[j]:
                for l in range(K):
                    msum[l] += Q[j, l]
        own = 1.0 if member[i] else 0.0
        best = -np.inf
        for k in range(K):
            lik = 0.0
            for l in range(K):
                non = batchsum[l] - own * Q[i, l] - msum[l] - ysum[l]
                lik += e_edge[k, l] * ysum[l] + e_non[k, l] * non
            ex = colsum[k] - Q[i, k]
            if ex < 0.0:
                ex = 0.0
            var = colvar[k] - Q[i, k] * (1.0 - Q[i, k])
            if var < 0.0:
                var = 0.0
            prior = np.log(ex + prior_c)
            if ex >= eps:
                prior -= 0.5 * var / (ex * ex)
            logit[k] = scale * lik + prior
            if logit[k] > best:
                best = logit[k]
        total = 0.0
        for k in range(K):
            logit[k] = np.exp(logit[k] - best)
            total += logit[k]
        for k in range(K):
            new = logit[k] / total
            old = Q[i, k]
            colsum[k] += new - old
            colvar[k] += new * (1.0 - new) - old * (1.0 - old)
            if member[i]:
                batchsum[k] += new - old
            Q[i, k] = new


@njit(cache=True)
def partition_pair_loss(candidates, weights):
    """``sum_{i<j, same block} weights[i, j]`` for each candidate labelling."""
    n_cand, n = candidates.shape
    out = np.zeros(n_cand)
    for c in range(n_cand):
        acc = 0.0
        for i in range(n):
            zi = candidates[c, i]
            for j in range(i + 1, n):
                if candidates[c, j] == zi:
                    acc += weights[i, j]
        out[c] = acc
    return out


@njit(cache=True)
def cocluster_counts(samples, weights):
    """Weighted count of samples placing each pair in the same block (upper triangle)."""
    n_samp, n = samples.shape
    out = np.zeros((n, n))
    for s in range(n_samp):
        wgt = weights[s]
        for i in range(n):
            zi = samples[s, i]
            for j in range(i + 1, n):
                if samples[s, j] == zi:
                    out[i, j] += wgt
    return out
