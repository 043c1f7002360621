"""Test-time merging of infrared and visible feature maps.

Spatial strategies weight each pixel (l1 activity, histogram saliency refined
by a guided filter, or fixed weights); the channel strategy weights each
channel by its pooled absolute activity. All functions take plain numpy
arrays shaped ``(n, C, h, w)`` and return the infrared weight or the merged
map; the visible weight is always the complement.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .autodiff import ShapeError, Tensor

SAM_CHOICES = ("l1_attention", "saliency", "weighted_average")


@dataclass
class FusionConfig:
    sam: str = "saliency"
    use_cam: bool = True
    gamma1: float = 0.5
    gamma2: float = 0.5
    gamma3: float = 0.5
    gamma4: float = 0.5
    gf_radius: int = 5
    gf_eps: float = 0.01
    sal_bins: int = 256

    def __post_init__(self):
        if self.sam not in SAM_CHOICES:
            raise ValueError(f"unknown spatial strategy {self.sam!r}; expected one of {SAM_CHOICES}")
        if not np.isclose(self.gamma1 + self.gamma2, 1.0) or not np.isclose(self.gamma3 + self.gamma4, 1.0):
            raise ValueError("gamma1 + gamma2 and gamma3 + gamma4 must both equal 1")
        if self.gf_radius < 1:
            raise ValueError("gf_radius must be >= 1")
        if self.gf_eps <= 0:
            raise ValueError("gf_eps must be positive")
        if self.sal_bins < 2:
            raise ValueError("sal_bins must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_pair(F_I: np.ndarray, F_V: np.ndarray, op: str) -> None:
    if F_I.shape != F_V.shape:
        raise ShapeError(f"{op}: feature shapes differ {F_I.shape} vs {F_V.shape}")
    if F_I.ndim != 4:
        raise ShapeError(f"{op}: expected (n, C, h, w) feature maps, got {F_I.shape}")


def _ratio(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a / (a + b), 0.5 where the denominator vanishes."""
    den = a + b
    safe = np.where(den == 0, 1.0, den)
    return np.where(den == 0, 0.5, a / safe)


def box_blur(a: np.ndarray, size: int = 3) -> np.ndarray:
    """Mean filter over the last two axes with edge replication."""
    axes = (a.ndim - 2, a.ndim - 1)
    return uniform_filter(np.asarray(a, dtype=np.float64), size=size, mode="nearest", axes=axes)


# ----------------------------------------------------------------------------
# l1-attention


def l1_weights(F_I: np.ndarray, F_V: np.ndarray) -> np.ndarray:
    """Per-pixel infrared weight, shape ``(n, 1, h, w)``."""
    _check_pair(F_I, F_V, "l1_weights")
    # running-sum filters can leave tiny negative residue on sparse maps
    a_I = np.maximum(box_blur(np.abs(F_I).sum(axis=1, keepdims=True)), 0.0)
    a_V = np.maximum(box_blur(np.abs(F_V).sum(axis=1, keepdims=True)), 0.0)
    return _ratio(a_I, a_V)


def sam_l1(F_I: np.ndarray, F_V: np.ndarray) -> np.ndarray:
    w = l1_weights(F_I, F_V)
    return w * F_I + (1.0 - w) * F_V


# ----------------------------------------------------------------------------
# saliency attention


def _bin_index(F: np.ndarray, bins: int, lo: float, hi: float) -> np.ndarray:
    idx = np.floor((np.asarray(F, dtype=np.float64) - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def saliency_map(F_ch: np.ndarray, bins: int = 256, value_range=(-1.0, 1.0)) -> np.ndarray:
    """Histogram-contrast saliency of one 2-D channel.

    Every pixel scores the expected distance between its quantized value and
    the quantized value of a randomly drawn pixel of the same channel.
    """
    F_ch = np.asarray(F_ch)
    if F_ch.ndim != 2:
        raise ShapeError(f"saliency_map expects a 2-D channel, got {F_ch.shape}")
    lo, hi = value_range
    idx = _bin_index(F_ch, bins, lo, hi)
    hist = np.bincount(idx.ravel(), minlength=bins).astype(np.float64) / idx.size
    centers = lo + (np.arange(bins) + 0.5) * (hi - lo) / bins
    per_bin = np.abs(centers[:, None] - centers[None, :]) @ hist
    return per_bin[idx]


def guided_filter(p: np.ndarray, guide: np.ndarray, radius: int = 5, eps: float = 0.01) -> np.ndarray:
    """Local linear guided filter with (2r+1)-square box windows, edges replicated."""
    p = np.asarray(p, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    if p.shape != guide.shape:
        raise ShapeError(f"guided_filter: input {p.shape} and guide {guide.shape} differ")
    if radius < 1 or eps <= 0:
        raise ValueError("guided_filter needs radius >= 1 and eps > 0")
    size = 2 * radius + 1

    def box(a):
        return uniform_filter(a, size=size, mode="nearest")

    mean_I, mean_p = box(guide), box(p)
    cov_Ip = box(guide * p) - mean_I * mean_p
    var_I = box(guide * guide) - mean_I * mean_I
    a = cov_Ip / (var_I + eps)
    b = mean_p - a * mean_I
    return box(a) * guide + box(b)


def saliency_weights(F_I: np.ndarray, F_V: np.ndarray, cfg: FusionConfig | None = None) -> np.ndarray:
    """Per-channel, per-pixel infrared weight, clamped to [0, 1]."""
    cfg = cfg or FusionConfig()
    _check_pair(F_I, F_V, "saliency_weights")
    out = np.empty(F_I.shape, dtype=np.float64)
    for n in range(F_I.shape[0]):
        for c in range(F_I.shape[1]):
            S_I = saliency_map(F_I[n, c], cfg.sal_bins)
            S_V = saliency_map(F_V[n, c], cfg.sal_bins)
            w_I = _ratio(S_I, S_V)
            w_V = _ratio(S_V, S_I)
            g_I = guided_filter(w_I, F_I[n, c], cfg.gf_radius, cfg.gf_eps)
            g_V = guided_filter(w_V, F_V[n, c], cfg.gf_radius, cfg.gf_eps)
            out[n, c] = np.clip(_ratio(g_I, g_V), 0.0, 1.0)
    return out


def sam_saliency(F_I: np.ndarray, F_V: np.ndarray, cfg: FusionConfig | None = None) -> np.ndarray:
    w = saliency_weights(F_I, F_V, cfg)
    return w * F_I + (1.0 - w) * F_V


# ----------------------------------------------------------------------------
# fixed weights and channel attention


def sam_weighted(F_I: np.ndarray, F_V: np.ndarray, gamma=(0.5, 0.5)) -> np.ndarray:
    _check_pair(F_I, F_V, "sam_weighted")
    g_I, g_V = gamma
    return g_I * F_I + g_V * F_V


def cam_weights(F_I: np.ndarray, F_V: np.ndarray) -> np.ndarray:
    """Per-channel infrared weight, shape ``(n, C, 1, 1)``."""
    _check_pair(F_I, F_V, "cam_weights")
    l_I = np.abs(F_I).mean(axis=(2, 3), keepdims=True)
    l_V = np.abs(F_V).mean(axis=(2, 3), keepdims=True)
    return _ratio(l_I, l_V)


def cam(F_I: np.ndarray, F_V: np.ndarray) -> np.ndarray:
    w = cam_weights(F_I, F_V)
    return w * F_I + (1.0 - w) * F_V


# ----------------------------------------------------------------------------


def fuse_maps(F_I: np.ndarray, F_V: np.ndarray, cfg: FusionConfig, which: str = "base") -> np.ndarray:
    """Merge one pair of maps; ``which`` selects the gamma pair for fixed weights."""
    _check_pair(F_I, F_V, "fuse_maps")
    if cfg.sam == "l1_attention":
        spa = sam_l1(F_I, F_V)
    elif cfg.sam == "saliency":
        spa = sam_saliency(F_I, F_V, cfg)
    else:
        gamma = (cfg.gamma1, cfg.gamma2) if which == "base" else (cfg.gamma3, cfg.gamma4)
        spa = sam_weighted(F_I, F_V, gamma)
    if not cfg.use_cam:
        return spa
    return 0.5 * (spa + cam(F_I, F_V))


def fuse_features(fp_I, fp_V, cfg: FusionConfig):
    """Fuse the base and detail maps of two :class:`~didfuse.network.FeaturePair` objects.

    Returns ``(B_F, D_F)`` as numpy arrays; an entry is ``None`` when the
    network layout has no such stream.
    """
    out = []
    for which in ("base", "detail"):
        a, b = getattr(fp_I, which), getattr(fp_V, which)
        if (a is None) != (b is None):
            raise ShapeError(f"fuse_features: only one input has a {which} map")
        if a is None:
            out.append(None)
            continue
        a = a.data if isinstance(a, Tensor) else np.asarray(a)
        b = b.data if isinstance(b, Tensor) else np.asarray(b)
        if a.shape != b.shape:
            raise ShapeError(f"fuse_features: {which} widths differ {a.shape} vs {b.shape}")
        out.append(fuse_maps(a, b, cfg, which))
    return tuple(out)
