"""Training, fusion inference, decomposition dumps, evaluation and experiment harnesses."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import Tensor
from .data import (
    Checkpoint,
    PairManifest,
    center_crop,
    load_checkpoint,
    load_grayscale,
    save_checkpoint,
    write_image,
)
from .fusion import FusionConfig, fuse_features, fuse_maps
from .metrics import METRIC_NAMES, evaluate_all
from .network import FeaturePair, NetworkParams, decode, encode, init_params, reconstruct

log = logging.getLogger(__name__)

# ablation name -> (network layout, skip mode override, loss variant)
VARIANT_SPECS = {
    "full": ("full", None, "full"),
    "no_base": ("no_base", None, "no_base"),
    "no_detail": ("no_detail", None, "no_detail"),
    "no_decomp": ("full", None, "no_decomp"),
    "classic_ae": ("classic_ae", None, "classic_ae"),
    "no_skip": ("full", "none", "full"),
}
FUSION_SKIPS = ("avg", "ir", "vis", "fused-sam")
LOSS_COLUMNS = ("base_gap", "detail_gap", "recon_ir", "recon_vis", "grad_term", "total")

# the six fusion-layer settings compared on validation data, in table order
STRATEGIES = (
    ("average", "weighted_average", False),
    ("l1", "l1_attention", False),
    ("saliency", "saliency", False),
    ("average+cam", "weighted_average", True),
    ("l1+cam", "l1_attention", True),
    ("saliency+cam", "saliency", True),
)


@dataclass
class TrainConfig:
    epochs: int = 120
    batch_size: int = 24
    lr: float = 1e-3
    lr_decay: float = 10.0
    width: int = 64
    crop: int = 128
    seed: int = 0
    variant: str = "full"
    skip_mode: str = "add"
    precision: str = "float32"
    alpha1: float = 0.05
    alpha2: float = 2.0
    alpha3: float = 2.0
    alpha4: float = 10.0
    lam: float = 5.0
    reduction: str = "sum"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.variant not in VARIANT_SPECS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {tuple(VARIANT_SPECS)}")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def loss_config(self) -> losses.LossConfig:
        return losses.LossConfig(
            self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.lam, VARIANT_SPECS[self.variant][2], self.reduction
        )

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``; decays at one and two thirds of the run."""
        drops = sum(epoch >= b for b in (self.epochs // 3, 2 * self.epochs // 3) if b > 0)
        return self.lr / self.lr_decay**drops


@dataclass
class RunRecord:
    epochs: list = field(default_factory=list)  # dicts: epoch, lr, loss columns
    checkpoint: Optional[str] = None
    wall_clock: float = 0.0
    seed: int = 0

    def totals(self) -> list:
        return [row["total"] for row in self.epochs]


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(row[h]) for h in header])


def write_loss_csv(record: RunRecord, path) -> None:
    write_csv(path, ("epoch", "lr", *LOSS_COLUMNS), record.epochs)


# ----------------------------------------------------------------------------
# training


def load_training_images(manifest: PairManifest, crop: int):
    if len(manifest) == 0:
        raise ValueError("training manifest is empty")
    ir, vis = [], []
    for ir_path, vis_path, _ in manifest:
        ir.append(center_crop(load_grayscale(ir_path, "infrared"), crop).pixels)
        vis.append(center_crop(load_grayscale(vis_path, "visible"), crop).pixels)
    return np.stack(ir)[:, None], np.stack(vis)[:, None]


def new_network(cfg: TrainConfig) -> NetworkParams:
    layout, skip_override, _ = VARIANT_SPECS[cfg.variant]
    return init_params(
        cfg.width,
        cfg.seed,
        skip_mode=skip_override or cfg.skip_mode,
        layout=layout,
        dtype=cfg.dtype,
        bn_momentum=cfg.bn_momentum,
        bn_eps=cfg.bn_eps,
    )


def _split_pair(fp: FeaturePair, n: int):
    def part(t, lo, hi):
        return None if t is None else ad.take(t, lo, hi)

    return tuple(
        FeaturePair(part(fp.base, lo, hi), part(fp.detail, lo, hi), part(fp.skip1, lo, hi), part(fp.skip2, lo, hi))
        for lo, hi in ((0, n), (n, 2 * n))
    )


def train_step(params: NetworkParams, state: ad.AdamState, batch, loss_cfg: losses.LossConfig, lr: float):
    """One optimizer step; ``batch`` is ``(I, V)`` or, for the single-stream AE, ``(None, X)``."""
    I, V = batch
    params.zero_grad()
    with ad.Tape() as tape:
        if loss_cfg.variant == "classic_ae":
            V_hat, _ = reconstruct(params, V, "train")
            br = losses.total_loss(None, None, V, V_hat, None, None, loss_cfg)
        else:
            # one forward over both modalities so batch statistics match what eval mode sees
            n = len(I)
            out, fp = reconstruct(params, np.concatenate([I, V]), "train")
            I_hat, V_hat = ad.take(out, 0, n), ad.take(out, n, 2 * n)
            fp_I, fp_V = _split_pair(fp, n)
            br = losses.total_loss(I, I_hat, V, V_hat, fp_I, fp_V, loss_cfg)
    if not np.isfinite(br.total):
        raise FloatingPointError(f"non-finite loss {br.total}")
    tape.backward(br.objective)
    ps = params.parameters()
    grads = [p.grad for p in ps]
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    ad.adam_step(ps, grads, state, lr)
    return br


def train(
    manifest: PairManifest,
    cfg: TrainConfig,
    ckpt_path=None,
    loss_csv=None,
    params: Optional[NetworkParams] = None,
) -> tuple:
    """Train a network; returns ``(Checkpoint, RunRecord)``."""
    start = time.perf_counter()
    I_all, V_all = load_training_images(manifest, cfg.crop)
    I_all = I_all.astype(cfg.dtype)
    V_all = V_all.astype(cfg.dtype)
    params = params or new_network(cfg)
    loss_cfg = cfg.loss_config()
    state = ad.AdamState.fresh(params.parameters())
    rng = np.random.default_rng(cfg.seed)
    record = RunRecord(seed=cfg.seed)
    single = loss_cfg.variant == "classic_ae"
    pool = np.concatenate([I_all, V_all]) if single else None

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        n = len(pool) if single else len(I_all)
        order = rng.permutation(n)
        rows = []
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            batch = (None, pool[idx]) if single else (I_all[idx], V_all[idx])
            rows.append(train_step(params, state, batch, loss_cfg, lr).row())
        means = {k: float(np.mean([r[k] for r in rows])) for k in LOSS_COLUMNS}
        record.epochs.append({"epoch": epoch + 1, "lr": lr, **means})
        log.info("epoch %d/%d lr %.2e total %.4f", epoch + 1, cfg.epochs, lr, means["total"])

    record.wall_clock = time.perf_counter() - start
    meta = {"train_config": asdict(cfg), "loss_config": asdict(loss_cfg)}
    ckpt = Checkpoint(params, meta)
    if ckpt_path is not None:
        save_checkpoint(params, meta, ckpt_path)
        record.checkpoint = str(ckpt_path)
    if loss_csv is not None:
        write_loss_csv(record, loss_csv)
    return ckpt, record


# ----------------------------------------------------------------------------
# inference


def _params_of(model) -> NetworkParams:
    if isinstance(model, NetworkParams):
        return model
    if isinstance(model, Checkpoint):
        return model.params
    return load_checkpoint(model).params


def fuse_arrays(model, ir: np.ndarray, vis: np.ndarray, cfg: Optional[FusionConfig] = None, fusion_skip: str = "avg") -> np.ndarray:
    """Fuse two [0, 1] images with a trained network; returns the decoder output in [0, 1]."""
    params = _params_of(model)
    cfg = cfg or FusionConfig()
    ir = np.asarray(ir)
    vis = np.asarray(vis)
    if ir.shape != vis.shape:
        raise ValueError(f"infrared {ir.shape} and visible {vis.shape} images differ in size")
    if fusion_skip not in FUSION_SKIPS:
        raise ValueError(f"unknown fusion skip rule {fusion_skip!r}")
    dt = params.dtype
    fp_I = encode(params, ir.astype(dt)[None, None], "eval")
    fp_V = encode(params, vis.astype(dt)[None, None], "eval")
    B_F, D_F = fuse_features(fp_I, fp_V, cfg)

    skips = []
    for a, b in ((fp_I.skip1.data, fp_V.skip1.data), (fp_I.skip2.data, fp_V.skip2.data)):
        if fusion_skip == "avg":
            skips.append(0.5 * a + 0.5 * b)
        elif fusion_skip == "ir":
            skips.append(a)
        elif fusion_skip == "vis":
            skips.append(b)
        else:
            skips.append(fuse_maps(a, b, FusionConfig(**{**cfg.to_dict(), "use_cam": False})))

    def wrap(x):
        return None if x is None else Tensor(np.asarray(x, dtype=dt))

    fp = FeaturePair(wrap(B_F), wrap(D_F), wrap(skips[0]), wrap(skips[1]))
    return decode(params, fp, "eval").data[0, 0].astype(np.float64)


def reconstruct_array(model, img: np.ndarray) -> np.ndarray:
    params = _params_of(model)
    out, _ = reconstruct(params, np.asarray(img, dtype=params.dtype)[None, None], "eval")
    return out.data[0, 0].astype(np.float64)


def fuse(model, ir_path, vis_path, cfg: Optional[FusionConfig], out_path, fusion_skip: str = "avg") -> Path:
    """Fuse two image files; writes the image plus a ``.json`` sidecar describing the strategy."""
    cfg = cfg or FusionConfig()
    ir = load_grayscale(ir_path, "infrared")
    vis = load_grayscale(vis_path, "visible")
    fused = fuse_arrays(model, ir.pixels, vis.pixels, cfg, fusion_skip)
    out_path = Path(out_path)
    write_image(fused, out_path)
    sidecar = {
        "ir": str(ir_path),
        "vis": str(vis_path),
        "fusion": cfg.to_dict(),
        "fusion_skip": fusion_skip,
    }
    if not isinstance(model, (NetworkParams, Checkpoint)):
        sidecar["checkpoint"] = str(model)
    out_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")
    return out_path


def normalize_map(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if hi - lo == 0:
        return np.full(m.shape, 0.5)
    return (m - lo) / (hi - lo)


def decompose(model, image_path, out_dir) -> list:
    """Write the first base and detail channel of one image as min-max normalized images."""
    params = _params_of(model)
    rec = load_grayscale(image_path)
    fp = encode(params, rec.pixels.astype(params.dtype)[None, None], "eval")
    out_dir = Path(out_dir)
    written = []
    for kind in ("base", "detail"):
        t = getattr(fp, kind)
        if t is None:
            continue
        path = out_dir / f"{rec.id}_{kind}.png"
        write_image(normalize_map(t.data[0, 0].astype(np.float64)), path)
        written.append(path)
    return written


# ----------------------------------------------------------------------------
# evaluation


def evaluate(fused_dir, manifest: PairManifest, csv_out=None) -> list:
    """Score every fused image ``<fused_dir>/<id>.png|pgm`` against its source pair.

    Returns the per-image reports; the CSV gets one row per image plus a mean row.
    """
    fused_dir = Path(fused_dir)
    files = {p.stem: p for p in fused_dir.glob("*") if p.suffix.lower() in (".png", ".pgm")} if fused_dir.is_dir() else {}
    if not files:
        raise ValueError(f"no fused images found in {fused_dir}")
    reports = []
    for ir_path, vis_path, pid in manifest:
        if pid not in files:
            log.warning("no fused image for pair %s", pid)
            continue
        F = load_grayscale(files[pid], "fused")
        A = load_grayscale(ir_path, "infrared")
        B = load_grayscale(vis_path, "visible")
        reports.append(evaluate_all(F.pixels, A.pixels, B.pixels, F.id, A.id, B.id))
    if not reports:
        raise ValueError(f"none of the fused images in {fused_dir} match the manifest ids")
    if csv_out is not None:
        write_metric_csv(reports, csv_out)
    return reports


def mean_report(reports) -> dict:
    return {k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_NAMES}


def write_metric_csv(reports, path) -> None:
    rows = [{"id": r.fused_id, **r.values()} for r in reports]
    rows.append({"id": "mean", **mean_report(reports)})
    write_csv(path, ("id", *METRIC_NAMES), rows)


def fuse_manifest(model, manifest: PairManifest, cfg: FusionConfig, out_dir, fusion_skip: str = "avg") -> list:
    out_dir = Path(out_dir)
    return [fuse(model, ir, vis, cfg, out_dir / f"{pid}.png", fusion_skip) for ir, vis, pid in manifest]


# ----------------------------------------------------------------------------
# experiment harnesses


def ablate(
    train_manifest: PairManifest,
    variant: str,
    cfg: TrainConfig,
    val_manifest: PairManifest,
    out_dir,
    fusion_cfg: Optional[FusionConfig] = None,
):
    """Train one ablation variant and score it on held-out pairs.

    Returns ``(Checkpoint, RunRecord, reports)``.
    """
    out_dir = Path(out_dir)
    run_cfg = TrainConfig(**{**asdict(cfg), "variant": variant})
    ckpt, record = train(train_manifest, run_cfg, out_dir / f"{variant}.ckpt", out_dir / f"{variant}_loss.csv")
    fused_dir = out_dir / f"{variant}_fused"
    fuse_manifest(ckpt.params, val_manifest, fusion_cfg or FusionConfig(), fused_dir)
    reports = evaluate(fused_dir, val_manifest, out_dir / f"{variant}_metrics.csv")
    return ckpt, record, reports


def dispersion(table: list) -> dict:
    """Per-metric mean, population std and coefficient of variation over runs."""
    out = {}
    for k in METRIC_NAMES:
        vals = np.array([row[k] for row in table], dtype=np.float64)
        m = float(vals.mean())
        s = float(vals.std())
        out[k] = {"mean": m, "std": s, "cv": s / abs(m) if m != 0 else 0.0}
    return out


def repro(
    train_manifest: PairManifest,
    runs: int,
    cfg: TrainConfig,
    test_manifest: PairManifest,
    out_dir,
    fusion_cfg: Optional[FusionConfig] = None,
    same_seed: bool = False,
):
    """Train ``runs`` models (seeds 0..runs-1, or all ``cfg.seed``) and summarize metric spread.

    Writes ``repro_runs.csv`` (one row per run) and ``repro_dispersion.csv``.
    Returns ``(table, summary)``.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    out_dir = Path(out_dir)
    table = []
    for k in range(runs):
        seed = cfg.seed if same_seed else k
        run_cfg = TrainConfig(**{**asdict(cfg), "seed": seed})
        ckpt, _ = train(train_manifest, run_cfg, out_dir / f"run{k}.ckpt", out_dir / f"run{k}_loss.csv")
        fused_dir = out_dir / f"run{k}_fused"
        fuse_manifest(ckpt.params, test_manifest, fusion_cfg or FusionConfig(), fused_dir)
        reports = evaluate(fused_dir, test_manifest)
        table.append({"run": k, "seed": seed, **mean_report(reports)})
    summary = dispersion(table)
    write_csv(out_dir / "repro_runs.csv", ("run", "seed", *METRIC_NAMES), table)
    rows = [{"stat": stat, **{k: summary[k][stat] for k in METRIC_NAMES}} for stat in ("mean", "std", "cv")]
    write_csv(out_dir / "repro_dispersion.csv", ("stat", *METRIC_NAMES), rows)
    return table, summary


def compare_strategies(model, val_manifest: PairManifest, csv_out=None, base_cfg: Optional[FusionConfig] = None) -> list:
    """Mean metrics over the validation pairs for each of the six fusion settings."""
    params = _params_of(model)
    base = (base_cfg or FusionConfig()).to_dict()
    sources = [(load_grayscale(ir).pixels, load_grayscale(vis).pixels, pid) for ir, vis, pid in val_manifest]
    rows = []
    for label, sam, use_cam in STRATEGIES:
        cfg = FusionConfig(**{**base, "sam": sam, "use_cam": use_cam})
        reports = []
        for ir, vis, pid in sources:
            fused = fuse_arrays(params, ir, vis, cfg)
            fused = np.floor(np.clip(fused, 0, 1) * 255 + 0.5) / 255
            reports.append(evaluate_all(fused, ir, vis, pid))
        rows.append({"strategy": label, **mean_report(reports)})
    if csv_out is not None:
        write_csv(csv_out, ("strategy", *METRIC_NAMES), rows)
    return rows


def decomposition_gaps(model, manifest: PairManifest, crop: Optional[int] = None, reduction: str = "sum") -> dict:
    """Per-pair tanh-bounded base and detail gaps (eval mode), plus first-channel mean distances."""
    params = _params_of(model)
    base, detail, base1, detail1 = [], [], [], []
    for ir_path, vis_path, _ in manifest:
        A = load_grayscale(ir_path)
        B = load_grayscale(vis_path)
        if crop:
            A, B = center_crop(A, crop), center_crop(B, crop)
        fI = encode(params, A.pixels.astype(params.dtype)[None, None], "eval")
        fV = encode(params, B.pixels.astype(params.dtype)[None, None], "eval")
        reduce = np.sum if reduction == "sum" else np.mean
        dB = fV.base.data.astype(np.float64) - fI.base.data
        dD = fV.detail.data.astype(np.float64) - fI.detail.data
        base.append(float(np.tanh(reduce(dB**2))))
        detail.append(float(np.tanh(reduce(dD**2))))
        base1.append(float(np.abs(dB[0, 0]).mean()))
        detail1.append(float(np.abs(dD[0, 0]).mean()))
    return {"base_gap": base, "detail_gap": detail, "base_l1_ch0": base1, "detail_l1_ch0": detail1}
