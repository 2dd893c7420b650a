"""Rendering learned colorspaces as RGB panels and per-channel images."""

import os

import numpy as np

from .data import normalize, save_png


def layout(d_cs):
    """Group colorspace channels into display panels.

    One channel gives a single grayscale panel ``(0,)``. Otherwise channels
    fill RGB triplets in ascending order and the last triplet is padded with
    ``None`` (a zero channel).
    """
    if d_cs < 1:
        raise ValueError(f"layout: d_cs must be >= 1, got {d_cs}")
    if d_cs == 1:
        return [(0,)]
    panels = []
    for start in range(0, d_cs, 3):
        chans = list(range(start, min(start + 3, d_cs)))
        panels.append(tuple(chans + [None] * (3 - len(chans))))
    return panels


def render_panel(y, panel):
    """(H, W, d_cs) features -> (H, W) grayscale or (H, W, 3) RGB image in [0, 1]."""
    y = np.asarray(y)
    if len(panel) == 1:
        return y[..., panel[0]]
    zero = np.zeros(y.shape[:2])
    return np.stack([zero if c is None else y[..., c] for c in panel], axis=-1)


def export_visualization(model, cfg, samples, out_dir, threshold=0.5, names=None):
    """Write input, mask, prediction, colorspace panels and channels as PNGs.

    File names are ``<sample>_<role>[_k].png`` with roles ``input``, ``mask``,
    ``pred``, ``panel`` and ``channel``. Returns the written paths.
    """
    from . import autodiff as ad

    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(name, arr, mask=False):
        path = os.path.join(out_dir, name)
        save_png(path, arr, mask=mask)
        written.append(path)

    for i, s in enumerate(samples):
        tag = names[i] if names else f"sample{i:03d}"
        x = normalize(s.image)[None]
        y, probs = model.forward(ad.Tensor(x), track=False)
        score = (probs if probs is not None else y).data[0, ..., 0]
        put(f"{tag}_input.png", s.image)
        put(f"{tag}_mask.png", s.mask, mask=True)
        put(f"{tag}_pred.png", score > threshold, mask=True)
        if y is None:
            continue
        feats = y.data[0]
        for k, panel in enumerate(layout(feats.shape[-1])):
            put(f"{tag}_panel_{k}.png", render_panel(feats, panel))
        for k in range(feats.shape[-1]):
            put(f"{tag}_channel_{k}.png", feats[..., k])
    return written
