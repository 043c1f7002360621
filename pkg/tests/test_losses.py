import math

import numpy as np
import pytest

from didfuse import losses as L
from didfuse import network as N
from didfuse.autodiff import ShapeError, Tensor
from oracles import ssim as ssim_oracle


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


# ----------------------------------------------------------------------------
# decomposition loss


def test_identical_pairs_zero_loss(rng):
    b, d = rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((1, 2, 4, 4))
    bg, dg, l1 = L.decomposition_loss(T(b), T(b), T(d), T(d))
    assert bg.item() == dg.item() == l1.item() == 0.0


def test_large_detail_gap_saturates():
    z = np.zeros((1, 1, 4, 4))
    _, dg, l1 = L.decomposition_loss(T(z), T(z), T(z + 10), T(z))
    assert dg.item() == pytest.approx(1.0)
    assert l1.item() == pytest.approx(-0.05)


def test_decomposition_scalar_oracle(rng):
    for _ in range(20):
        bv, bi, dv, di = (rng.standard_normal((2, 3, 3, 3)) * 0.2 for _ in range(4))
        bg, dg, l1 = L.decomposition_loss(T(bv), T(bi), T(dv), T(di), alpha1=0.3)
        sb = math.fsum(((bv - bi) ** 2).ravel())
        sd = math.fsum(((dv - di) ** 2).ravel())
        assert bg.item() == pytest.approx(math.tanh(sb), abs=1e-9)
        assert dg.item() == pytest.approx(math.tanh(sd), abs=1e-9)
        assert l1.item() == pytest.approx(math.tanh(sb) - 0.3 * math.tanh(sd), abs=1e-9)


def test_decomposition_shape_mismatch():
    a, b = T(np.zeros((1, 1, 4, 4))), T(np.zeros((1, 1, 4, 5)))
    with pytest.raises(ShapeError):
        L.decomposition_loss(a, a, a, b)


def test_decomposition_bounds(rng):
    for _ in range(20):
        xs = [rng.standard_normal((1, 2, 3, 3)) * rng.uniform(0, 2) for _ in range(4)]
        bg, dg, l1 = L.decomposition_loss(*map(T, xs))
        assert 0 <= bg.item() <= 1 and 0 <= dg.item() <= 1
        assert -0.05 <= l1.item() <= 1


# ----------------------------------------------------------------------------
# ssim


def test_ssim_identity(rng):
    x = rng.random((2, 1, 14, 13))
    assert L.ssim(T(x), T(x)).item() == pytest.approx(1.0, abs=1e-12)


def test_ssim_constants():
    a = np.full((1, 1, 12, 12), 0.5)
    assert L.ssim(T(a), T(a)).item() == pytest.approx(1.0)
    v = L.ssim(T(a), T(np.full_like(a, 0.8))).item()
    assert 0 < v < 1


def test_ssim_matches_window_oracle(rng):
    for _ in range(5):
        x, y = rng.random((16, 15)), rng.random((16, 15))
        got = L.ssim(T(x[None, None]), T(y[None, None])).item()
        assert got == pytest.approx(ssim_oracle(x, y), abs=1e-6)


def test_ssim_rejects_small_images():
    x = T(np.zeros((1, 1, 10, 20)))
    with pytest.raises(ShapeError):
        L.ssim(x, x)


def test_gaussian_window_normalized():
    w = L.gaussian_window()
    assert w.shape == (11, 11)
    assert w.sum() == pytest.approx(1.0)
    assert w[5, 5] == w.max()


# ----------------------------------------------------------------------------
# fidelity and gradient penalty


def test_fidelity_zero_and_pure_squared_error(rng):
    x, y = rng.random((1, 1, 12, 12)), rng.random((1, 1, 12, 12))
    assert L.fidelity(T(x), T(x)).item() == pytest.approx(0.0, abs=1e-12)
    assert L.fidelity(T(x), T(y), lam=0).item() == pytest.approx(((x - y) ** 2).sum(), abs=1e-12)


def test_fidelity_component_oracle(rng):
    x, y = rng.random((12, 12)), rng.random((12, 12))
    expected = math.fsum(((x - y) ** 2).ravel()) + 5 * (1 - ssim_oracle(x, y)) / 2
    assert L.fidelity(T(x[None, None]), T(y[None, None]), lam=5).item() == pytest.approx(expected, abs=1e-9)


def test_gradient_penalty_examples(rng):
    v = rng.random((1, 1, 5, 5))
    assert L.gradient_penalty(T(v), T(v)).item() == 0.0
    assert L.gradient_penalty(T(np.full((1, 1, 5, 5), 0.3)), T(np.full((1, 1, 5, 5), 0.9))).item() == 0.0


def test_gradient_penalty_ramp_hand_count():
    ramp = np.tile(np.arange(4) / 4.0, (4, 1))[None, None]
    assert L.gradient_penalty(T(ramp), T(np.full((1, 1, 4, 4), 0.2))).item() == pytest.approx(3.0, abs=1e-12)


def test_non_negativity(rng):
    for _ in range(10):
        x, y = rng.random((1, 1, 12, 12)), rng.random((1, 1, 12, 12))
        assert L.fidelity(T(x), T(y)).item() >= 0
        assert L.gradient_penalty(T(x), T(y)).item() >= 0


def test_mean_reduction_divides_by_count(rng):
    x, y = rng.random((1, 1, 6, 7)), rng.random((1, 1, 6, 7))
    s = L.gradient_penalty(T(x), T(y), "sum").item()
    m = L.gradient_penalty(T(x), T(y), "mean").item()
    assert m == pytest.approx(s / (6 * 6 + 5 * 7))


# ----------------------------------------------------------------------------
# total loss


@pytest.fixture
def batch(rng):
    p = N.init_params(4, seed=0, dtype=np.float64)
    I, V = rng.random((2, 1, 12, 12)), rng.random((2, 1, 12, 12))
    I_hat, fp_I = N.reconstruct(p, I)
    V_hat, fp_V = N.reconstruct(p, V)
    return T(I), I_hat, T(V), V_hat, fp_I, fp_V


def test_total_zero_for_perfect_reconstruction(rng):
    I = T(rng.random((1, 1, 12, 12)))
    b = N.FeaturePair(T(np.zeros((1, 2, 12, 12))), T(np.zeros((1, 2, 12, 12))), None, None)
    out = L.total_loss(I, I, I, I, b, b, L.LossConfig())
    assert out.total == pytest.approx(0.0, abs=1e-12)


def test_breakdown_parts_sum_to_total(batch):
    for variant in ("full", "no_base", "no_detail", "no_decomp"):
        cfg = L.LossConfig(variant=variant)
        out = L.total_loss(*batch, cfg)
        assert out.total == pytest.approx(L.combine(out, cfg), abs=1e-9)


def test_component_oracle(batch):
    I, I_hat, V, V_hat, fp_I, fp_V = batch
    out = L.total_loss(*batch, L.LossConfig())
    f_ir = ((I.data - I_hat.data) ** 2).sum() + 5 * (1 - ssim_oracle(I.data[0, 0], I_hat.data[0, 0]) / 2 - ssim_oracle(I.data[1, 0], I_hat.data[1, 0]) / 2) / 2
    assert out.recon_ir == pytest.approx(f_ir, abs=1e-9)
    d = V.data - V_hat.data
    g = np.abs(np.diff(d, axis=3)).sum() + np.abs(np.diff(d, axis=2)).sum()
    assert out.grad_term == pytest.approx(g, abs=1e-9)
    assert out.base_gap == pytest.approx(math.tanh(((fp_V.base.data - fp_I.base.data) ** 2).sum()), abs=1e-9)


def test_variant_consistency(batch):
    full = L.total_loss(*batch, L.LossConfig())
    l1 = full.base_gap - 0.05 * full.detail_gap
    assert L.total_loss(*batch, L.LossConfig(variant="no_decomp")).total == pytest.approx(full.total - l1, abs=1e-9)
    assert L.total_loss(*batch, L.LossConfig(variant="no_base")).total == pytest.approx(full.total - full.base_gap, abs=1e-9)
    assert L.total_loss(*batch, L.LossConfig(variant="no_detail")).total == pytest.approx(
        full.total + 0.05 * full.detail_gap, abs=1e-9
    )
    zeroed = L.total_loss(*batch, L.LossConfig(alpha1=0.0))
    assert L.total_loss(*batch, L.LossConfig(variant="no_detail")).total == pytest.approx(zeroed.total, abs=1e-9)


def test_classic_ae(rng):
    p = N.init_params(4, seed=0, layout="classic_ae", dtype=np.float64)
    X = rng.random((1, 1, 12, 12))
    X_hat, _ = N.reconstruct(p, X)
    cfg = L.LossConfig(variant="classic_ae")
    out = L.total_loss(None, None, T(X), X_hat, None, None, cfg)
    expected = 2 * L.fidelity(T(X), X_hat).item() + 10 * L.gradient_penalty(T(X), X_hat).item()
    assert out.total == pytest.approx(expected, abs=1e-9)
    with pytest.raises(ValueError):
        L.total_loss(T(X), X_hat, T(X), X_hat, None, None, cfg)


def test_arity_mismatch(batch):
    I, I_hat, V, V_hat, fp_I, _ = batch
    with pytest.raises(ValueError):
        L.total_loss(I, I_hat, V, V_hat, fp_I, None, L.LossConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        L.LossConfig(variant="nope")
    with pytest.raises(ValueError):
        L.LossConfig(alpha2=-1)
    with pytest.raises(ValueError):
        L.LossConfig(reduction="median")
