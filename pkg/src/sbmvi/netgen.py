"""Synthetic stochastic-blockmodel networks.

Specs serialise to TOML.  Three presets ship with the package:
``sim7-easy`` and ``sim7-confusable`` (350 nodes, seven equal blocks)
and ``imdb-resim`` (9 647 nodes, an IMDb-sized ground truth).
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .netio import Network

__all__ = [
    "GeneratorSpec",
    "generate",
    "generate_confusable",
    "resimulate_from_fit",
    "sample_dyads",
    "load_spec",
    "save_spec",
    "load_preset",
    "PRESETS",
    "RNG_ALGORITHM",
    "rng_algorithm",
]

PRESETS = ("sim7-easy", "sim7-confusable", "imdb-resim")
RNG_ALGORITHM = "PCG64"
RNG_ENV_VAR = "SBMVI_RNG"

# rows of the upper triangle drawn per RNG call; keeps the draw order canonical
_ROW_CHUNK_DYADS = 4_000_000


@dataclass
class GeneratorSpec:
    """Ground truth for a synthetic network.

    ``labels`` may be given instead of ``block_sizes``; sizes then mean
    contiguous runs of nodes.
    """

    n_nodes: int
    theta: np.ndarray
    block_sizes: list | None = None
    labels: np.ndarray | None = None
    seed: int = 0
    name: str = "custom"
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        K = self.theta.shape[0]
        if self.theta.shape != (K, K):
            raise ValueError("theta must be square")
        if not np.allclose(self.theta, self.theta.T):
            raise ValueError("theta must be symmetric")
        if np.any(self.theta < 0) or np.any(self.theta > 1):
            raise ValueError("theta entries must lie in [0, 1]")
        if self.labels is None:
            if self.block_sizes is None:
                raise ValueError("need block_sizes or labels")
            sizes = [int(x) for x in self.block_sizes]
            if len(sizes) != K or min(sizes) < 1:
                raise ValueError("need one positive size per block")
            if sum(sizes) != self.n_nodes:
                raise ValueError("block sizes must sum to n_nodes")
            self.block_sizes = sizes
        else:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n_nodes,):
                raise ValueError("labels must have n_nodes entries")
            if self.labels.min() < 0 or self.labels.max() >= K:
                raise ValueError("labels out of range")

    @property
    def n_blocks(self):
        return self.theta.shape[0]

    def true_labels(self):
        if self.labels is not None:
            return self.labels.copy()
        return np.repeat(np.arange(self.n_blocks), self.block_sizes)

    def with_seed(self, seed):
        return replace(self, seed=seed)


def sample_dyads(labels, theta, rng):
    """Bernoulli draw of every dyad, walking the upper triangle row by row."""
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    chunks = []
    start = 0
    while start < n - 1:
        # gather whole rows until the chunk is big enough
        stop, size = start, 0
        while stop < n - 1 and (size == 0 or size + (n - 1 - stop) <= _ROW_CHUNK_DYADS):
            size += n - 1 - stop
            stop += 1
        u = rng.random(size)
        rows = np.repeat(np.arange(start, stop), n - 1 - np.arange(start, stop))
        offsets = np.concatenate([[0], np.cumsum(n - 1 - np.arange(start, stop))[:-1]])
        cols = np.arange(size) - np.repeat(offsets, n - 1 - np.arange(start, stop)) + rows + 1
        hit = u < theta[labels[rows], labels[cols]]
        chunks.append(np.column_stack([rows[hit], cols[hit]]))
        start = stop
    if not chunks:
        return np.empty((0, 2), dtype=np.int64)
    return np.concatenate(chunks)


def rng_algorithm():
    """Bit generator name, overridable through the ``SBMVI_RNG`` environment variable."""
    name = os.environ.get(RNG_ENV_VAR, RNG_ALGORITHM)
    if not hasattr(np.random, name):
        raise ValueError(f"unknown numpy bit generator {name!r}")
    return name


def _generator(seed):
    return np.random.Generator(getattr(np.random, rng_algorithm())(seed))


def generate(spec):
    """Draw a network from ``spec``; returns ``(Network, true_labels)``."""
    labels = spec.true_labels()
    rng = _generator(spec.seed)
    edges = sample_dyads(labels, spec.theta, rng)
    return Network(spec.n_nodes, edges), labels


def generate_confusable(base, target_block, parents):
    """Make ``target_block`` interact like the average of two parent blocks.

    The target's row/column becomes the elementwise mean of the parents'
    rows; its self-interaction is the mean of the four parent-pair entries,
    so the operation only reads entries it never writes (idempotent).
    """
    K = base.n_blocks
    p, q = parents
    for idx in (target_block, p, q):
        if not 0 <= idx < K:
            raise IndexError(f"block index {idx} out of range for {K} blocks")
    if p == q or target_block in (p, q):
        raise ValueError("parents must be distinct and differ from the target")
    theta = base.theta.copy()
    row = 0.5 * (theta[p] + theta[q])
    row[target_block] = 0.25 * (theta[p, p] + theta[p, q] + theta[q, p] + theta[q, q])
    theta[target_block, :] = row
    theta[:, target_block] = row
    notes = dict(base.notes)
    notes["confusable"] = {"target_block": int(target_block), "parents": [int(p), int(q)]}
    return replace(base, theta=theta, name=f"{base.name}-confusable", notes=notes)


def resimulate_from_fit(labels, theta_hat, seed):
    """New network drawn with a fitted partition and block means as ground truth."""
    labels = np.asarray(labels, dtype=np.int64)
    theta_hat = np.asarray(theta_hat, dtype=float)
    if np.any(theta_hat < 0) or np.any(theta_hat > 1):
        raise ValueError("block probabilities must lie in [0, 1]")
    rng = _generator(seed)
    edges = sample_dyads(labels, theta_hat, rng)
    return Network(len(labels), edges)


# ---------------------------------------------------------------------------
# TOML round trip


def _spec_to_dict(spec):
    rec = {"name": spec.name, "n_nodes": spec.n_nodes, "seed": spec.seed,
           "rng": rng_algorithm(), "theta": spec.theta.tolist()}
    if spec.labels is not None:
        rec["labels"] = spec.labels.tolist()
    else:
        rec["block_sizes"] = list(spec.block_sizes)
    if spec.notes:
        rec["notes"] = spec.notes
    return rec


def _spec_from_dict(rec):
    if "base" in rec:
        base = load_preset(rec["base"])
        conf = rec["confusable"]
        spec = generate_confusable(base, conf["target_block"], tuple(conf["parents"]))
        return replace(spec, name=rec.get("name", spec.name), seed=rec.get("seed", spec.seed))
    return GeneratorSpec(
        n_nodes=rec["n_nodes"], theta=rec["theta"], block_sizes=rec.get("block_sizes"),
        labels=rec.get("labels"), seed=rec.get("seed", 0), name=rec.get("name", "custom"),
        notes=rec.get("notes", {}))


def save_spec(spec, path):
    Path(path).write_text(tomli_w.dumps(_spec_to_dict(spec)))


def load_spec(path):
    with open(path, "rb") as fh:
        return _spec_from_dict(tomllib.load(fh))


def load_preset(name):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("sbmvi.presets").joinpath(f"{name}.toml").read_text()
    return _spec_from_dict(tomllib.loads(text))
