"""Comparison of CSDA against its baselines across colorspace dimensions."""

import logging
from dataclasses import replace

import numpy as np

from .config import ABLATION_MODES
from .train import evaluate, train

log = logging.getLogger(__name__)

ABLATION_COLUMNS = (
    "d_cs", "mode", "effective_d_cs", "n_seeds",
    "acc", "precision", "recall", "f1", "iou0", "iou1", "miou",
)

# Modes whose model does not depend on the requested d_cs.
_DCS_FREE = ("focal_only", "dda_only")


def run_one(cfg, splits):
    """Train one configuration and return its pooled test metrics."""
    result = train(cfg, splits)
    return evaluate(result.model, cfg, splits["test"], result.threshold).aggregate


def run_ablation(splits, base_cfg, d_cs_values, modes=ABLATION_MODES, seeds=(0,)):
    """Test metrics for every (d_cs, mode), averaged over seeds.

    Modes that ignore d_cs are trained once per seed and the result is
    repeated on every d_cs row.
    """
    cache = {}
    rows = []
    for d in d_cs_values:
        for mode in modes:
            per_seed = []
            for seed in seeds:
                key = (mode, None if mode in _DCS_FREE else d, seed)
                if key not in cache:
                    cfg = replace(base_cfg, ablation=mode, d_cs=d, seed=seed)
                    log.info("training mode=%s d_cs=%d seed=%d", mode, d, seed)
                    cache[key] = run_one(cfg, splits)
                per_seed.append(cache[key])
            avg = {k: float(np.mean([getattr(m, attr) for m in per_seed])) for k, attr in _FIELDS}
            eff = 1 if mode == "dda_only" else d
            rows.append({"d_cs": d, "mode": mode, "effective_d_cs": eff, "n_seeds": len(seeds), **avg})
    return rows


_FIELDS = (
    ("acc", "accuracy"),
    ("precision", "precision"),
    ("recall", "recall"),
    ("f1", "f1"),
    ("iou0", "iou_c0"),
    ("iou1", "iou_c1"),
    ("miou", "miou"),
)
