"""Shared test oracles: synthetic datasets and finite-difference gradients."""

import numpy as np

from armgraph import model
from armgraph.prep import LabeledGraph


def separable_dataset(per_class=10):
    """Triangles of tag-1 nodes labeled 0, 3-node paths of tag-2 nodes labeled 1."""
    tri = LabeledGraph((1, 1, 1), ((0, 1), (0, 2), (1, 2)), 0)
    path = LabeledGraph((2, 2, 2), ((0, 1), (1, 2)), 1)
    return [tri] * per_class + [path] * per_class


SMALL = dict(latent_dim=16, out_dim=32, hidden=16)


def random_instance(rng, n_nodes=5, feat_dim=4, num_class=2, latent=3, out=4, hidden=2, max_lv=3):
    """Random graph and parameters whose softmax is not saturated.

    Draws are repeated until every class probability is at least 1e-6;
    past that point the gradient underflows and no finite-difference
    comparison is meaningful.
    """
    hp = model.Hyperparams(feat_dim=feat_dim, num_class=num_class, latent_dim=latent,
                           out_dim=out, hidden=hidden, max_lv=max_lv)
    while True:
        tags = tuple(int(t) for t in rng.integers(0, feat_dim + 1, n_nodes))
        pairs = {(int(min(u, v)), int(max(u, v))) for u, v in rng.integers(0, n_nodes, (n_nodes + 2, 2))}
        graph = LabeledGraph(tags, tuple(sorted(pairs)), int(rng.integers(num_class)))
        params = model.init_params(hp, rng)
        # spread weights so relu units sit away from their kink
        for arr in params.arrays():
            arr *= 2.0
            arr += rng.normal(0, 0.3, arr.shape)
        if model.classify(graph, params, max_lv).p.min() >= 1e-6:
            return graph, params, max_lv


def accurate_loss(logits, label):
    """Cross-entropy written to stay precise when the loss is tiny."""
    d = np.delete(logits - logits[label], label)
    m = d.max(initial=-np.inf)
    if m <= 0:
        return float(np.log1p(np.exp(d).sum()))
    return float(m + np.log(np.exp(-m) + np.exp(d - m).sum()))


def numeric_gradient(graph, params, max_lv, step=1e-5):
    grads = params.zeros_like()
    for p, g in zip(params.arrays(), grads.arrays()):
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        for i in range(flat_p.size):
            old = flat_p[i]
            flat_p[i] = old + step
            up = accurate_loss(model.classify(graph, params, max_lv).logits, graph.label)
            flat_p[i] = old - step
            down = accurate_loss(model.classify(graph, params, max_lv).logits, graph.label)
            flat_p[i] = old
            flat_g[i] = (up - down) / (2 * step)
    return grads


def worst_relative_error(analytic, numeric):
    """Max over entries of |a-n| / max(|a|,|n|), with 0/0 taken as 0."""
    worst = 0.0
    for a, n in zip(analytic.arrays(), numeric.arrays()):
        scale = np.maximum(np.abs(a), np.abs(n))
        err = np.where(scale == 0, 0.0, np.abs(a - n) / np.where(scale == 0, 1.0, scale))
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
