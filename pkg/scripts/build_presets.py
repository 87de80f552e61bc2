"""Regenerate the preset TOML files shipped in ``sbmvi/presets``.

The block probabilities are drawn once from fixed seeds, so rerunning this
script reproduces the committed files byte for byte.
"""
from pathlib import Path

import numpy as np
import tomli_w

OUT = Path(__file__).resolve().parents[1] / "src" / "sbmvi" / "presets"


def sim7_theta(seed=5):
    rng = np.random.default_rng(seed)
    K = 7
    theta = np.triu(rng.uniform(0.02, 0.22, (K, K)), 1)
    theta = theta + theta.T
    np.fill_diagonal(theta, [0.8, 0.55, 0.7, 0.6, 0.75, 0.65, 0.85])
    return np.round(theta, 4)


def imdb_truth(seed=11, n_nodes=9647, K=25, target_edges=1_051_101):
    """Uneven block sizes and an assortative theta rescaled to the target edge count."""
    rng = np.random.default_rng(seed)
    props = rng.dirichlet(np.full(K, 2.0))
    sizes = np.maximum(40, np.round(props * n_nodes)).astype(int)
    sizes[np.argmax(sizes)] += n_nodes - sizes.sum()
    diag = rng.uniform(0.05, 0.35, K)
    off = np.triu(rng.beta(0.6, 30.0, (K, K)), 1)
    theta = off + off.T + np.diag(diag)
    pairs = np.outer(sizes, sizes).astype(float)
    np.fill_diagonal(pairs, sizes * (sizes - 1) / 2)
    expected = np.triu(theta * pairs).sum()
    theta = np.clip(theta * target_edges / expected, 0.0, 1.0)
    return sizes.tolist(), np.round(theta, 6)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    easy = {
        "name": "sim7-easy", "n_nodes": 350, "seed": 1, "rng": "PCG64",
        "block_sizes": [50] * 7, "theta": sim7_theta().tolist(),
        "notes": {"description": "seven equal, well-separated blocks; several "
                                 "within-block probabilities sit near 0.5"},
    }
    confusable = {
        "name": "sim7-confusable", "seed": 1, "base": "sim7-easy",
        # zero-based indices: the sixth block averages the fifth and seventh
        "confusable": {"target_block": 5, "parents": [4, 6]},
    }
    sizes, theta = imdb_truth()
    imdb = {
        "name": "imdb-resim", "n_nodes": int(sum(sizes)), "seed": 7, "rng": "PCG64",
        "block_sizes": sizes, "theta": theta.tolist(),
        "notes": {"description": "IMDb-sized ground truth (9 647 actors, about 1.05M "
                                 "expected edges); stands in for a fitted partition"},
    }
    for rec in (easy, confusable, imdb):
        (OUT / f"{rec['name']}.toml").write_text(tomli_w.dumps(rec))


if __name__ == "__main__":
    main()
