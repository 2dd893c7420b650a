"""Class-conditional moments and scatter matrices of colorspace pixels."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# Ridge added to S_w only when it is numerically singular.
SW_RIDGE = 1e-9
_COND_LIMIT = 1e12


class EmptyClass(ValueError):
    """One of the two mask classes has no pixels in the pooled batch."""


@dataclass
class ClassStats:
    mu0: Tensor
    mu1: Tensor
    cov0: Tensor
    cov1: Tensor
    n0: int
    n1: int


@dataclass
class ScatterPair:
    s_b: Tensor
    s_w: Tensor
    u: Tensor  # mu0 - mu1


def _flatten_pixels(y):
    y = ad.as_tensor(y)
    if y.ndim < 2:
        raise ad.ShapeError(f"class_stats: expected (..., C) features, got shape {y.shape}")
    c = y.shape[-1]
    return ad.reshape(y, (-1, c)) if y.ndim != 2 else y


def _moments(x, rows):
    # Rows are put in lexicographic order first so that the moments do not
    # depend on pixel order down to the last bit.
    sub = x.data[rows]
    order = np.lexsort(sub.T[::-1])
    pts = ad.take_rows(x, rows[order])
    n = len(rows)
    mu = ad.mean(pts, axis=0)
    centered = pts - ad.outer(Tensor(np.ones(n)), mu)
    cov = ad.matmul(ad.transpose(centered), centered) / n
    return mu, cov


def class_stats(y, mask):
    """Pooled class means and population covariances under a binary mask.

    Args:
        y: features of shape (N, H, W, C), (H, W, C) or (P, C).
        mask: binary array whose shape matches ``y`` without the channel axis.

    Raises:
        EmptyClass: if either class has no pixels.
    """
    x = _flatten_pixels(y)
    m = np.asarray(mask)
    if m.size != x.shape[0]:
        raise ad.ShapeError(
            f"class_stats: mask shape {m.shape} does not align with features {ad.as_tensor(y).shape}"
        )
    m = m.reshape(-1)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("class_stats: mask values must be 0 or 1")
    idx1 = np.flatnonzero(m == 1)
    idx0 = np.flatnonzero(m == 0)
    if len(idx0) == 0 or len(idx1) == 0:
        raise EmptyClass(f"class_stats: class counts are n0={len(idx0)}, n1={len(idx1)}")
    mu0, cov0 = _moments(x, idx0)
    mu1, cov1 = _moments(x, idx1)
    return ClassStats(mu0, mu1, cov0, cov1, len(idx0), len(idx1))


def scatter_pair(stats):
    """Between-class scatter ``u u^T`` (``u = mu0 - mu1``) and within-class ``cov0 + cov1``."""
    u = stats.mu0 - stats.mu1
    return ScatterPair(s_b=ad.outer(u, u), s_w=stats.cov0 + stats.cov1, u=u)


def _regularized(s_w):
    s_w = np.asarray(s_w, dtype=np.float64)
    if np.linalg.cond(s_w) > _COND_LIMIT:
        s_w = s_w + SW_RIDGE * np.eye(len(s_w))
        if np.linalg.cond(s_w) > _COND_LIMIT:
            raise np.linalg.LinAlgError("within-class scatter is singular after regularization")
    return s_w


def fisher_trace(s_w, s_b=None):
    """Multidimensional Fisher criterion ``Tr(S_w^-1 S_b)``.

    Diagnostic only; it is never part of a training loss. Takes either a
    :class:`ScatterPair` or the two matrices (arrays or tensors).
    """
    if isinstance(s_w, ScatterPair):
        s_w, s_b = s_w.s_w, s_w.s_b
    s_w = _regularized(ad.as_tensor(s_w).data)
    s_b = ad.as_tensor(s_b).data
    return float(np.trace(np.linalg.solve(s_w, s_b)))
