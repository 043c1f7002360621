"""Training objective: decomposition gap, SSIM-based fidelity and the gradient penalty."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

VARIANTS = ("full", "no_base", "no_detail", "no_decomp", "classic_ae")

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass
class LossConfig:
    alpha1: float = 0.05
    alpha2: float = 2.0
    alpha3: float = 2.0
    alpha4: float = 10.0
    lam: float = 5.0
    variant: str = "full"
    reduction: str = "sum"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}; expected one of {VARIANTS}")
        if self.reduction not in ("sum", "mean"):
            raise ValueError("reduction must be 'sum' or 'mean'")
        if min(self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.lam) < 0:
            raise ValueError("loss coefficients must be non-negative")


@dataclass
class LossBreakdown:
    base_gap: float
    detail_gap: float
    recon_ir: float
    recon_vis: float
    grad_term: float
    total: float
    objective: Optional[Tensor] = None

    def row(self) -> dict:
        return {k: getattr(self, k) for k in ("base_gap", "detail_gap", "recon_ir", "recon_vis", "grad_term", "total")}


def _sq_norm(x: Tensor, reduction: str) -> Tensor:
    return ad.sum_squares(x) if reduction == "sum" else ad.mean_squares(x)


def _l1_norm(x: Tensor, reduction: str) -> Tensor:
    return ad.total(ad.absolute(x)) if reduction == "sum" else ad.mean(ad.absolute(x))


def decomposition_loss(B_V: Tensor, B_I: Tensor, D_V: Tensor, D_I: Tensor, alpha1: float = 0.05, reduction: str = "sum"):
    """Returns ``(base_gap, detail_gap, L1)`` with gaps = tanh of squared distances."""
    if not (B_V.shape == B_I.shape == D_V.shape == D_I.shape):
        raise ShapeError("decomposition_loss: all four feature maps must share one shape")
    base_gap = ad.tanh(_sq_norm(ad.sub(B_V, B_I), reduction))
    detail_gap = ad.tanh(_sq_norm(ad.sub(D_V, D_I), reduction))
    return base_gap, detail_gap, ad.sub(base_gap, ad.scale(detail_gap, alpha1))


@lru_cache(maxsize=8)
def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = (size - 1) / 2.0
    ax = np.arange(size) - r
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    w.setflags(write=False)
    return w


def ssim(X, X_hat: Tensor) -> Tensor:
    """Mean SSIM over all valid 11x11 Gaussian windows (dynamic range 1)."""
    X = X if isinstance(X, Tensor) else Tensor(np.asarray(X, dtype=X_hat.dtype))
    if X.shape != X_hat.shape:
        raise ShapeError(f"ssim: shape mismatch {X.shape} vs {X_hat.shape}")
    if X.data.ndim != 4 or X.shape[2] < SSIM_WINDOW or X.shape[3] < SSIM_WINDOW:
        raise ShapeError(f"ssim: images must be (n, c, h, w) with h, w >= {SSIM_WINDOW}, got {X.shape}")
    win = gaussian_window().astype(X_hat.dtype)

    def filt(t):
        return ad.filter2d_valid(t, win)

    mu1, mu2 = filt(X), filt(X_hat)
    mu1_sq, mu2_sq, mu12 = ad.mul(mu1, mu1), ad.mul(mu2, mu2), ad.mul(mu1, mu2)
    s11 = ad.sub(filt(ad.mul(X, X)), mu1_sq)
    s22 = ad.sub(filt(ad.mul(X_hat, X_hat)), mu2_sq)
    s12 = ad.sub(filt(ad.mul(X, X_hat)), mu12)
    num = ad.mul(ad.shift(ad.scale(mu12, 2.0), SSIM_C1), ad.shift(ad.scale(s12, 2.0), SSIM_C2))
    den = ad.mul(ad.shift(ad.add(mu1_sq, mu2_sq), SSIM_C1), ad.shift(ad.add(s11, s22), SSIM_C2))
    return ad.mean(ad.div(num, den))


def fidelity(X, X_hat: Tensor, lam: float = 5.0, reduction: str = "sum") -> Tensor:
    """``||X - X_hat||^2 + lam * (1 - SSIM) / 2``."""
    X = X if isinstance(X, Tensor) else Tensor(np.asarray(X, dtype=X_hat.dtype))
    sq = _sq_norm(ad.sub(X_hat, X), reduction)
    l_ssim = ad.scale(ad.shift(ad.scale(ssim(X, X_hat), -1.0), 1.0), 0.5)
    return ad.add(sq, ad.scale(l_ssim, lam))


def gradient_penalty(V, V_hat: Tensor, reduction: str = "sum") -> Tensor:
    """l1 distance between forward-difference gradients (horizontal and vertical stacked)."""
    V = V if isinstance(V, Tensor) else Tensor(np.asarray(V, dtype=V_hat.dtype))
    if V.shape != V_hat.shape:
        raise ShapeError(f"gradient_penalty: shape mismatch {V.shape} vs {V_hat.shape}")
    diff = ad.sub(V, V_hat)
    gh = ad.absolute(ad.diff_h(diff))
    gv = ad.absolute(ad.diff_v(diff))
    if reduction == "sum":
        return ad.add(ad.total(gh), ad.total(gv))
    n = gh.data.size + gv.data.size
    return ad.scale(ad.add(ad.total(gh), ad.total(gv)), 1.0 / n)


def _zero(dtype) -> Tensor:
    return Tensor(np.zeros((), dtype=dtype))


def total_loss(I, I_hat: Optional[Tensor], V, V_hat: Optional[Tensor], fp_I, fp_V, cfg: LossConfig) -> LossBreakdown:
    """Assemble the configured objective.

    For ``classic_ae`` pass the single image and its reconstruction as
    ``(V, V_hat)`` and leave ``I``/``I_hat``/``fp_I``/``fp_V`` as ``None``.
    """
    red = cfg.reduction
    if cfg.variant == "classic_ae":
        if V is None or V_hat is None or I is not None or I_hat is not None:
            raise ValueError("classic_ae takes exactly one image/reconstruction pair (passed as V, V_hat)")
        f = fidelity(V, V_hat, cfg.lam, red)
        g = gradient_penalty(V, V_hat, red)
        obj = ad.add(ad.scale(f, cfg.alpha2), ad.scale(g, cfg.alpha4))
        return LossBreakdown(0.0, 0.0, 0.0, f.item(), g.item(), obj.item(), obj)

    if any(t is None for t in (I, I_hat, V, V_hat, fp_I, fp_V)):
        raise ValueError(f"variant {cfg.variant!r} needs both images, reconstructions and feature pairs")
    dtype = V_hat.dtype
    f_ir = fidelity(I, I_hat, cfg.lam, red)
    f_vis = fidelity(V, V_hat, cfg.lam, red)
    g = gradient_penalty(V, V_hat, red)
    obj = ad.add(ad.add(ad.scale(f_ir, cfg.alpha2), ad.scale(f_vis, cfg.alpha3)), ad.scale(g, cfg.alpha4))

    base_gap = detail_gap = _zero(dtype)
    if cfg.variant in ("full", "no_detail"):
        base_gap = ad.tanh(_sq_norm(ad.sub(fp_V.base, fp_I.base), red))
        obj = ad.add(obj, base_gap)
    if cfg.variant in ("full", "no_base"):
        detail_gap = ad.tanh(_sq_norm(ad.sub(fp_V.detail, fp_I.detail), red))
        obj = ad.sub(obj, ad.scale(detail_gap, cfg.alpha1))
    return LossBreakdown(base_gap.item(), detail_gap.item(), f_ir.item(), f_vis.item(), g.item(), obj.item(), obj)


def combine(parts: LossBreakdown, cfg: LossConfig) -> float:
    """Recompute the weighted total from a breakdown's parts."""
    if cfg.variant == "classic_ae":
        return cfg.alpha2 * parts.recon_vis + cfg.alpha4 * parts.grad_term
    total = cfg.alpha2 * parts.recon_ir + cfg.alpha3 * parts.recon_vis + cfg.alpha4 * parts.grad_term
    if cfg.variant in ("full", "no_detail"):
        total += parts.base_gap
    if cfg.variant in ("full", "no_base"):
        total -= cfg.alpha1 * parts.detail_gap
    return total
