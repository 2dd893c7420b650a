"""Signed discriminant losses, focal loss and closed-form LDA reference.

All discriminant losses are minimized. With ``u = mu0 - mu1`` the signed
between-class term ``Tr(D(u) * S_b) = sum_j sign(u_j) u_j**2`` decreases as
the blade class (mask 1) is pushed above the background on every channel.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .scatter import EmptyClass, ScatterPair, class_stats, scatter_pair

VARIANTS = ("csda", "csda_ln", "csda_delta")


@dataclass
class LossConfig:
    variant: str = "csda_delta"
    d_cs: int = 4
    epsilon: float = 1e-8
    lambda_F: float = 0.5
    lambda_P: float = 1.3
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    swap_classes: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}; expected one of {VARIANTS}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.lambda_F < 0 or self.lambda_P < 0:
            raise ValueError("lambda_F and lambda_P must be non-negative")
        if self.d_cs < 1:
            raise ValueError("d_cs must be at least 1")


def sign_matrix(u):
    """Matrix with ``sign(u_j)`` on the diagonal (``sign(0) = +1``) and ones elsewhere."""
    u = np.asarray(ad.as_tensor(u).data, dtype=np.float64)
    d = np.ones((len(u), len(u)))
    np.fill_diagonal(d, np.where(u < 0, -1.0, 1.0))
    return d


def signed_between(u, s_b):
    """``D(u) * S_b`` (Hadamard); the sign matrix is a constant of differentiation."""
    return ad.hadamard(Tensor(sign_matrix(u)), s_b)


def signed_between_trace(u, s_b):
    return ad.trace(signed_between(u, s_b))


def _orient(pair, cfg):
    if cfg is not None and cfg.swap_classes:
        u = -pair.u
        return ScatterPair(s_b=pair.s_b, s_w=pair.s_w, u=u)
    return pair


def loss_csda(pair, cfg=None):
    """``Tr(S_w (D(u) * S_b))``, evaluated as a full matrix product."""
    pair = _orient(pair, cfg)
    return ad.trace(ad.matmul(pair.s_w, signed_between(pair.u, pair.s_b)))


def loss_csda_ln(pair, cfg):
    """``ln(d + eps + Tr(D*S_b)) + lambda_F ln(d + eps + Tr(S_w))``."""
    pair = _orient(pair, cfg)
    d = pair.s_b.shape[0]
    between = ad.shift(signed_between_trace(pair.u, pair.s_b), d + cfg.epsilon)
    within = ad.shift(ad.trace(pair.s_w), d + cfg.epsilon)
    for name, arg in (("between-class", between), ("within-class", within)):
        if arg.item() <= 0:
            raise ad.DomainError(
                f"loss_csda_ln: {name} log argument is {arg.item():.3g} <= 0; "
                "the colorspace head must be sigmoid-bounded to [0, 1]"
            )
    return ad.log(between) + ad.log(within) * cfg.lambda_F


def loss_csda_delta(pair, cfg):
    """``Tr(D*S_b) + lambda_F Tr(S_w)``."""
    pair = _orient(pair, cfg)
    return signed_between_trace(pair.u, pair.s_b) + ad.trace(pair.s_w) * cfg.lambda_F


_LOSSES = {"csda": loss_csda, "csda_ln": loss_csda_ln, "csda_delta": loss_csda_delta}


def discriminant_loss(pair, cfg):
    return _LOSSES[cfg.variant](pair, cfg)


def focal_loss(probs, mask, cfg=None):
    """Mean binary focal loss over all pixels.

    Args:
        probs: tensor of probabilities in (0, 1).
        mask: binary array with ``probs.data.size`` elements.
    """
    cfg = cfg or LossConfig()
    probs = ad.as_tensor(probs)
    m = np.asarray(mask, dtype=np.float64)
    if m.size != probs.data.size:
        raise ad.ShapeError(f"focal_loss: mask shape {m.shape} does not match probs {probs.shape}")
    m = m.reshape(probs.shape)
    if np.any(probs.data <= 0) or np.any(probs.data >= 1):
        raise ad.DomainError("focal_loss: probabilities must lie strictly inside (0, 1)")
    alpha_t = np.where(m == 1, cfg.focal_alpha, 1.0 - cfg.focal_alpha)
    # p_t = p for blade pixels, 1 - p for background
    p_t = ad.hadamard(probs, Tensor(2.0 * m - 1.0)) + Tensor(1.0 - m)
    weight = ad.power(ad.shift(-p_t, 1.0), cfg.focal_gamma) if cfg.focal_gamma else None
    log_pt = ad.log(p_t)
    per_pixel = ad.hadamard(log_pt, Tensor(-alpha_t))
    if weight is not None:
        per_pixel = ad.hadamard(weight, per_pixel)
    return ad.mean(per_pixel)


@dataclass
class TotalLoss:
    total: Tensor
    focal: Tensor
    discriminant: Optional[Tensor]

    @property
    def dda_skipped(self):
        return self.discriminant is None


def total_loss(probs, mask, pair, cfg):
    """``L_P + lambda_P L_DDA``; ``pair=None`` (empty class) drops the discriminant term."""
    focal = focal_loss(probs, mask, cfg)
    if pair is None:
        return TotalLoss(focal, focal, None)
    dda = discriminant_loss(pair, cfg)
    return TotalLoss(focal + dda * cfg.lambda_P, focal, dda)


def colorspace_pair(y, mask):
    """Scatter pair of colorspace features, or None when a class is empty."""
    try:
        return scatter_pair(class_stats(y, mask))
    except EmptyClass:
        return None


def scalar_fisher(class0, class1):
    """Two-class Fisher ratio ``(mu0 - mu1)^2 / (var0 + var1)`` with population variances."""
    a = np.asarray(class0, dtype=np.float64).ravel()
    b = np.asarray(class1, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("scalar_fisher: both classes must be nonempty")
    denom = a.var() + b.var()
    if denom <= 0:
        raise ZeroDivisionError("scalar_fisher: both classes have zero variance")
    return float((a.mean() - b.mean()) ** 2 / denom)


def lda_closed_form(points0, points1, ridge=1e-9):
    """Fisher LDA direction ``S_w^-1 (mu0 - mu1)``, unit length, first nonzero entry positive."""
    p0 = np.atleast_2d(np.asarray(points0, dtype=np.float64))
    p1 = np.atleast_2d(np.asarray(points1, dtype=np.float64))
    s_w = np.cov(p0, rowvar=False, bias=True) + np.cov(p1, rowvar=False, bias=True)
    s_w = np.atleast_2d(s_w) + ridge * np.eye(p0.shape[1])
    if np.linalg.cond(s_w) > 1e12:
        raise np.linalg.LinAlgError("lda_closed_form: within-class scatter is singular")
    w = np.linalg.solve(s_w, p0.mean(axis=0) - p1.mean(axis=0))
    norm = np.linalg.norm(w)
    if norm == 0:
        raise ValueError("lda_closed_form: class means coincide")
    w = w / norm
    first = w[np.flatnonzero(np.abs(w) > 0)[0]]
    return w if first > 0 else -w
