"""Finite-difference verification of the losses and of both networks."""

import numpy as np

from . import autodiff as ad
from .losses import LossConfig, VARIANTS, discriminant_loss, focal_loss, total_loss, colorspace_pair
from .nets import ModelPair
from .scatter import class_stats, scatter_pair

LOSS_TOLERANCE = 1e-4
NET_TOLERANCE = 1e-3


def random_batch(rng, n_pixels=32, channels=2):
    """Sigmoid-bounded features and a mask with both classes present."""
    y = 1.0 / (1.0 + np.exp(-rng.standard_normal((n_pixels, channels))))
    mask = np.zeros(n_pixels, dtype=np.uint8)
    mask[rng.permutation(n_pixels)[: rng.integers(2, n_pixels - 1)]] = 1
    return y, mask


def loss_error(variant, seed, n_pixels=32, channels=2, h=1e-5):
    """Max relative autodiff/central-difference error of one loss composed with class_stats."""
    rng = np.random.default_rng(seed)
    y, mask = random_batch(rng, n_pixels, channels)
    cfg = LossConfig(variant=variant, d_cs=channels)

    def f(t):
        return discriminant_loss(scatter_pair(class_stats(t, mask)), cfg)

    return ad.finite_difference_check(f, y, h)


def loss_errors(seeds, **kw):
    """Worst error per loss variant over ``seeds``."""
    return {v: max(loss_error(v, s, **kw) for s in seeds) for v in VARIANTS}


def net_probe(seed, n_weights=5, h=1e-6, d_cs=2, size=8, depth=1, base_width=2):
    """Central-difference probes on random weights of both nets under the full objective.

    Returns:
        dict net name -> max relative error ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    rng = np.random.default_rng(seed)
    model = ModelPair.build(d_cs, depth=depth, base_width=base_width, seed=seed)
    x = rng.random((2, size, size, 3))
    mask = (rng.random((2, size, size)) < 0.4).astype(np.float64)
    mask[0, 0, 0], mask[0, 0, 1] = 1.0, 0.0
    cfg = LossConfig(variant="csda_delta", d_cs=d_cs)

    def objective():
        y, probs = model.forward(ad.Tensor(x))
        return total_loss(probs, mask, colorspace_pair(y, mask), cfg).total

    loss = objective()
    grads = ad.backward(loss)
    out = {}
    for name, net in (("colorspace", model.colorspace_net), ("seg", model.seg_net)):
        worst = 0.0
        weights = [p for k, p in net.params.items() if k.endswith(".w")]
        for _ in range(n_weights):
            p = weights[rng.integers(len(weights))]
            i = tuple(rng.integers(s) for s in p.shape)
            analytic = grads[p][i] if p in grads else 0.0
            orig = p.data[i]
            p.data[i] = orig + h
            fp = objective().item()
            p.data[i] = orig - h
            fm = objective().item()
            p.data[i] = orig
            numeric = (fp - fm) / (2 * h)
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
        out[name] = worst
    return out


def focal_error(seed, n_pixels=32, h=1e-5):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal(n_pixels)
    mask = (rng.random(n_pixels) < 0.5).astype(np.float64)
    return ad.finite_difference_check(lambda t: focal_loss(ad.sigmoid(t), mask), logits, h)
