import csv

import numpy as np
import pytest

from didfuse import data as D
from didfuse import network as N
from didfuse import pipeline as P
from didfuse.fusion import FusionConfig


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def tiny_cfg(**kw):
    base = dict(epochs=1, batch_size=2, width=4, crop=16, seed=0, reduction="mean")
    base.update(kw)
    return P.TrainConfig(**base)


# ----------------------------------------------------------------------------
# config


def test_thirds_rule():
    cfg = P.TrainConfig(epochs=120, lr=1e-3)
    assert cfg.lr_at(0) == cfg.lr_at(39) == 1e-3
    assert cfg.lr_at(40) == pytest.approx(1e-4)
    assert cfg.lr_at(80) == pytest.approx(1e-5)
    cfg = P.TrainConfig(epochs=60, lr=1e-3)
    assert cfg.lr_at(19) == 1e-3 and cfg.lr_at(20) == pytest.approx(1e-4) and cfg.lr_at(40) == pytest.approx(1e-5)
    # boundaries that fall on epoch 0 never fire
    assert P.TrainConfig(epochs=1).lr_at(0) == 1e-3
    assert P.TrainConfig(epochs=2).lr_at(1) == pytest.approx(1e-4)


def test_config_validation():
    with pytest.raises(ValueError):
        P.TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        P.TrainConfig(lr=0)
    with pytest.raises(ValueError):
        P.TrainConfig(variant="weird")


def test_fmt_six_decimals():
    assert P.fmt(1 / 3) == "0.333333"
    assert P.fmt(np.float32(2)) == "2.000000"
    assert P.fmt("x") == "x" and P.fmt(7) == "7"


# ----------------------------------------------------------------------------
# training


def test_one_epoch_writes_checkpoint_and_row(tmp_path, small_corpus):
    two = D.PairManifest(small_corpus.pairs[:2])
    ckpt, rec = P.train(two, tiny_cfg(), tmp_path / "m.ckpt", tmp_path / "loss.csv")
    rows = read_rows(tmp_path / "loss.csv")
    assert len(rows) == 1 and len(rec.epochs) == 1
    assert list(rows[0]) == ["epoch", "lr", *P.LOSS_COLUMNS]
    assert rows[0]["total"] == f"{rec.epochs[0]['total']:.6f}"
    loaded = D.load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.params.width == 4
    assert loaded.meta["train_config"]["epochs"] == 1
    assert rec.checkpoint == str(tmp_path / "m.ckpt")


def test_training_is_seed_deterministic(tmp_path, small_corpus):
    P.train(small_corpus, tiny_cfg(epochs=2), None, tmp_path / "a.csv")
    P.train(small_corpus, tiny_cfg(epochs=2), None, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_training_reduces_loss(small_corpus):
    _, rec = P.train(small_corpus, tiny_cfg(epochs=6, width=6, lr=3e-3))
    assert rec.totals()[-1] < rec.totals()[0]


def test_train_errors(small_corpus):
    with pytest.raises(ValueError, match="empty"):
        P.train(D.PairManifest([]), tiny_cfg())
    with pytest.raises(ValueError, match="crop"):
        P.train(small_corpus, tiny_cfg(crop=64))


def test_train_step_rejects_nan():
    p = N.init_params(2, seed=0)
    st = P.ad.AdamState.fresh(p.parameters())
    bad = np.full((1, 1, 12, 12), np.nan, dtype=np.float32)
    with pytest.raises((FloatingPointError, ValueError)):
        P.train_step(p, st, (bad, bad), P.losses.LossConfig(), 1e-3)


@pytest.mark.parametrize("variant", ["no_base", "no_detail", "no_decomp", "classic_ae", "no_skip"])
def test_variants_train(small_corpus, variant):
    ckpt, rec = P.train(small_corpus, tiny_cfg(variant=variant))
    assert np.isfinite(rec.totals()[0])
    layout, skip, _ = P.VARIANT_SPECS[variant]
    assert ckpt.params.layout == layout
    assert ckpt.params.skip_mode == (skip or "add")


def test_float64_training(small_corpus):
    ckpt, _ = P.train(small_corpus, tiny_cfg(precision="float64"))
    assert ckpt.params.dtype == np.float64


# ----------------------------------------------------------------------------
# inference


def test_fuse_same_image_equals_reconstruction(quick_model, small_corpus):
    vis = D.load_grayscale(small_corpus.pairs[0][1]).pixels
    for cfg in (FusionConfig(), FusionConfig(sam="l1_attention", use_cam=False)):
        fused = P.fuse_arrays(quick_model, vis, vis, cfg)
        assert np.array_equal(fused, P.reconstruct_array(quick_model, vis))


def test_fused_in_unit_interval(quick_model, small_corpus):
    ir, vis, _ = small_corpus.pairs[1]
    for skip in P.FUSION_SKIPS:
        out = P.fuse_arrays(quick_model, D.load_grayscale(ir).pixels, D.load_grayscale(vis).pixels, fusion_skip=skip)
        assert np.all((out >= 0) & (out <= 1))


def test_strategies_differ(tmp_path, quick_model, small_corpus):
    ir, vis, _ = small_corpus.pairs[0]
    P.fuse(quick_model, ir, vis, FusionConfig(), tmp_path / "s.png")
    P.fuse(quick_model, ir, vis, FusionConfig(sam="weighted_average", use_cam=False), tmp_path / "w.png")
    assert (tmp_path / "s.png").read_bytes() != (tmp_path / "w.png").read_bytes()


def test_fuse_sidecar_and_size_check(tmp_path, quick_model, small_corpus):
    ir, vis, _ = small_corpus.pairs[0]
    out = P.fuse(quick_model, ir, vis, FusionConfig(sam="l1_attention"), tmp_path / "f.png", "ir")
    meta = __import__("json").loads(out.with_suffix(".json").read_text())
    assert meta["fusion"]["sam"] == "l1_attention" and meta["fusion_skip"] == "ir"
    D.write_image(np.zeros((40, 40)), tmp_path / "small.png")
    with pytest.raises(ValueError, match="differ in size"):
        P.fuse(quick_model, ir, tmp_path / "small.png", None, tmp_path / "g.png")


def test_fuse_from_checkpoint_path(tmp_path, quick_model, small_corpus):
    ir, vis, _ = small_corpus.pairs[0]
    D.save_checkpoint(quick_model, None, tmp_path / "m.ckpt")
    P.fuse(tmp_path / "m.ckpt", ir, vis, None, tmp_path / "a.png")
    P.fuse(quick_model, ir, vis, None, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_decompose_writes_two_files(tmp_path, quick_model, small_corpus):
    files = P.decompose(quick_model, small_corpus.pairs[0][0], tmp_path)
    assert [f.name for f in files] == ["pair000_base.png", "pair000_detail.png"]


def test_decompose_zero_image_is_mid_gray(tmp_path):
    D.write_image(np.zeros((12, 12)), tmp_path / "z.png")
    files = P.decompose(N.init_params(4, seed=0), tmp_path / "z.png", tmp_path / "out")
    for f in files:
        assert np.all(D.load_grayscale(f).pixels == 128 / 255)


def test_normalize_map():
    assert np.all(P.normalize_map(np.full((3, 3), 4.0)) == 0.5)
    m = P.normalize_map(np.array([[1.0, 3.0], [2.0, 5.0]]))
    assert m.min() == 0 and m.max() == 1


# ----------------------------------------------------------------------------
# evaluation


def test_evaluate_mean_row(tmp_path, quick_model, small_corpus):
    P.fuse_manifest(quick_model, small_corpus, FusionConfig(), tmp_path / "fused")
    reports = P.evaluate(tmp_path / "fused", small_corpus, tmp_path / "m.csv")
    rows = read_rows(tmp_path / "m.csv")
    assert [r["id"] for r in rows] == [*small_corpus.ids, "mean"]
    for k in ("en", "sd", "sf", "vif", "ag", "scd"):
        assert float(rows[-1][k]) == pytest.approx(np.mean([getattr(r, k) for r in reports]), abs=5e-7)
        assert P.mean_report(reports)[k] == pytest.approx(np.mean([getattr(r, k) for r in reports]), abs=1e-9)


def test_evaluate_vis_copy(tmp_path, small_corpus):
    import shutil

    from didfuse import metrics as M

    (tmp_path / "f").mkdir()
    for _, vis, pid in small_corpus:
        shutil.copy(vis, tmp_path / "f" / f"{pid}.png")
    P.evaluate(tmp_path / "f", small_corpus)
    _, vis, _ = small_corpus.pairs[0]
    v = 255 * D.load_grayscale(vis).pixels
    assert M.vif_single(v, v) == pytest.approx(1.0, abs=1e-6)


def test_evaluate_empty_dir(tmp_path, small_corpus):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError, match="no fused images"):
        P.evaluate(tmp_path / "empty", small_corpus)


# ----------------------------------------------------------------------------
# harnesses


def test_dispersion_zero_for_identical_runs():
    row = {"en": 1.0, "sd": 2.0, "sf": 3.0, "vif": 0.5, "ag": 1.0, "scd": 0.2}
    out = P.dispersion([row, dict(row)])
    assert all(v["std"] == 0 and v["cv"] == 0 for v in out.values())


def test_repro_same_seed_zero_spread(tmp_path, small_corpus, held_out_corpus):
    cfg = tiny_cfg(width=4)
    table, summary = P.repro(small_corpus, 2, cfg, held_out_corpus, tmp_path, same_seed=True)
    assert len(table) == 2
    assert all(s["std"] == 0 for s in summary.values())
    assert len(read_rows(tmp_path / "repro_dispersion.csv")) == 3


def test_ablate_outputs(tmp_path, small_corpus, held_out_corpus):
    ckpt, rec, reports = P.ablate(small_corpus, "no_decomp", tiny_cfg(), held_out_corpus, tmp_path)
    full = N.init_params(4)
    assert [(n, a.shape) for n, a in ckpt.params.named_arrays()] == [(n, a.shape) for n, a in full.named_arrays()]
    assert len(reports) == len(held_out_corpus)
    assert (tmp_path / "no_decomp_metrics.csv").exists()


def test_compare_strategies(tmp_path, quick_model, held_out_corpus):
    rows = P.compare_strategies(quick_model, held_out_corpus, tmp_path / "s.csv")
    assert [r["strategy"] for r in rows] == [s[0] for s in P.STRATEGIES]
    assert len(read_rows(tmp_path / "s.csv")) == 6


def test_decomposition_gaps(quick_model, small_corpus):
    g = P.decomposition_gaps(quick_model, small_corpus, reduction="mean")
    assert len(g["base_gap"]) == len(small_corpus)
    assert all(0 <= v < 1 for v in g["base_gap"] + g["detail_gap"])
