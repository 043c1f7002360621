"""Reference-free and source-referenced fusion quality scores.

The individual metric functions take grayscale arrays on the 0-255 scale.
:func:`evaluate_all` accepts [0, 1] data and rescales it first.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import convolve2d

VIF_SCALES = 4
VIF_NOISE_VAR = 2.0
METRIC_NAMES = ("en", "sd", "sf", "vif", "ag", "scd")


@dataclass
class MetricReport:
    en: float
    sd: float
    sf: float
    vif: float
    ag: float
    scd: float
    fused_id: str = ""
    ir_id: str = ""
    vis_id: str = ""

    def values(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def check_ranges(self, tol: float = 1e-9) -> None:
        problems = []
        if not -tol <= self.en <= 8 + tol:
            problems.append(f"en={self.en}")
        for k in ("sd", "sf", "ag"):
            if getattr(self, k) < -tol:
                problems.append(f"{k}={getattr(self, k)}")
        if not -2 - tol <= self.scd <= 2 + tol:
            problems.append(f"scd={self.scd}")
        if problems:
            raise ValueError("metric out of range: " + ", ".join(problems))

    def as_dict(self) -> dict:
        return asdict(self)


def _gray(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        arr = np.squeeze(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {np.shape(img)}")
    if arr.size == 0:
        raise ValueError("empty image")
    return arr


def entropy(img) -> float:
    """Shannon entropy (bits) of the 256-level histogram; values are rounded half-up first."""
    arr = _gray(img)
    levels = np.clip(np.floor(arr + 0.5), 0, 255).astype(np.int64)
    p = np.bincount(levels.ravel(), minlength=256) / levels.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) + 0.0


def std_dev(img) -> float:
    arr = _gray(img)
    return float(np.sqrt(np.mean((arr - arr.mean()) ** 2)))


def spatial_frequency(img) -> float:
    arr = _gray(img)
    hg = np.sqrt(np.mean(np.diff(arr, axis=1) ** 2)) if arr.shape[1] > 1 else 0.0
    vg = np.sqrt(np.mean(np.diff(arr, axis=0) ** 2)) if arr.shape[0] > 1 else 0.0
    return float(np.sqrt(hg**2 + vg**2))


def avg_gradient(img) -> float:
    arr = _gray(img)
    if min(arr.shape) < 2:
        raise ValueError("avg_gradient needs at least a 2x2 image")
    gh = arr[1:, 1:] - arr[1:, :-1]
    gv = arr[1:, 1:] - arr[:-1, 1:]
    return float(np.mean(np.sqrt((gh**2 + gv**2) / 2.0)))


def correlation(a, b) -> float:
    """Pearson correlation; 0 when either operand is constant."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    da, db = a - a.mean(), b - b.mean()
    den = np.sqrt((da * da).sum() * (db * db).sum())
    if den == 0:
        return 0.0
    return float((da * db).sum() / den)


def scd(fused, ir, vis) -> float:
    F, A, B = _gray(fused), _gray(ir), _gray(vis)
    return correlation(F - B, A) + correlation(F - A, B)


@lru_cache(maxsize=8)
def _vif_window(size: int) -> np.ndarray:
    """Normalized Gaussian, sigma = size / 5 (MATLAB ``fspecial`` convention)."""
    r = (size - 1) / 2.0
    y, x = np.ogrid[-r : r + 1, -r : r + 1]
    h = np.exp(-(x * x + y * y) / (2.0 * (size / 5.0) ** 2))
    h[h < np.finfo(h.dtype).eps * h.max()] = 0
    h /= h.sum()
    h.setflags(write=False)
    return h


def vif_window_sizes(scales: int = VIF_SCALES) -> list:
    return [2 ** (scales - s + 1) + 1 for s in range(1, scales + 1)]


def vif_min_size(scales: int = VIF_SCALES) -> int:
    """Smallest square side the multi-scale pyramid accepts."""
    side = 1
    while True:
        h = side
        ok = True
        for s, N in enumerate(vif_window_sizes(scales)):
            if s > 0:
                h = h - N + 1
                if h < 1:
                    ok = False
                    break
                h = (h + 1) // 2
            if h < N:
                ok = False
                break
        if ok:
            return side
        side += 1


def vif_single(ref, dist, scales: int = VIF_SCALES, noise_var: float = VIF_NOISE_VAR) -> float:
    """Pixel-domain multi-scale VIF of ``dist`` with respect to ``ref``."""
    ref = _gray(ref)
    dist = _gray(dist)
    if ref.shape != dist.shape:
        raise ValueError(f"vif: shape mismatch {ref.shape} vs {dist.shape}")
    need = vif_min_size(scales)
    if min(ref.shape) < need:
        raise ValueError(f"vif: images must be at least {need}x{need} for {scales} scales, got {ref.shape}")
    num = den = 0.0
    for s, N in enumerate(vif_window_sizes(scales)):
        win = _vif_window(N)
        if s > 0:
            ref = convolve2d(ref, win, mode="valid")[::2, ::2]
            dist = convolve2d(dist, win, mode="valid")[::2, ::2]
        mu1 = convolve2d(ref, win, mode="valid")
        mu2 = convolve2d(dist, win, mode="valid")
        s1 = convolve2d(ref * ref, win, mode="valid") - mu1 * mu1
        s2 = convolve2d(dist * dist, win, mode="valid") - mu2 * mu2
        s12 = convolve2d(ref * dist, win, mode="valid") - mu1 * mu2
        num_s, den_s = _vif_terms(s1, s2, s12, noise_var)
        num += num_s
        den += den_s
    if den == 0:
        return 0.0
    return float(num / den)


def _vif_terms(s1, s2, s12, noise_var):
    tiny = 1e-10
    s1 = np.maximum(s1, 0.0)
    s2 = np.maximum(s2, 0.0)
    g = s12 / (s1 + tiny)
    sv = s2 - g * s12
    low1 = s1 < tiny
    g = np.where(low1, 0.0, g)
    sv = np.where(low1, s2, sv)
    s1 = np.where(low1, 0.0, s1)
    low2 = s2 < tiny
    g = np.where(low2, 0.0, g)
    sv = np.where(low2, 0.0, sv)
    neg = g < 0
    sv = np.where(neg, s2, sv)
    g = np.where(neg, 0.0, g)
    sv = np.maximum(sv, tiny)
    num = np.sum(np.log10(1.0 + g * g * s1 / (sv + noise_var)))
    den = np.sum(np.log10(1.0 + s1 / noise_var))
    return num, den


def vif(fused, ir, vis, scales: int = VIF_SCALES, noise_var: float = VIF_NOISE_VAR) -> float:
    """Mean of the fused image's VIF against each source."""
    return 0.5 * (vif_single(ir, fused, scales, noise_var) + vif_single(vis, fused, scales, noise_var))


def evaluate_all(fused, ir, vis, fused_id: str = "", ir_id: str = "", vis_id: str = "") -> MetricReport:
    """All six scores for [0, 1]-scaled images."""
    F, A, B = (255.0 * _gray(x) for x in (fused, ir, vis))
    if not (F.shape == A.shape == B.shape):
        raise ValueError(f"fused/ir/vis shapes differ: {F.shape}, {A.shape}, {B.shape}")
    report = MetricReport(
        en=entropy(F),
        sd=std_dev(F),
        sf=spatial_frequency(F),
        vif=vif(F, A, B),
        ag=avg_gradient(F),
        scd=scd(F, A, B),
        fused_id=fused_id,
        ir_id=ir_id,
        vis_id=vis_id,
    )
    report.check_ranges()
    return report
