"""Image files, pair manifests and the binary checkpoint format."""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .autodiff import Tensor
from .network import ConvLayer, NetworkParams, layer_plan

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".pgm")
CHECKPOINT_MAGIC = b"DIDF"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ImageRecord:
    id: str
    pixels: np.ndarray
    source_kind: str = "visible"

    def __post_init__(self):
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 2:
            raise ValueError(f"image {self.id!r} must be 2-D and at least 2x2, got {self.pixels.shape}")


def load_grayscale(path, source_kind: str = "visible") -> ImageRecord:
    """Read an 8-bit PNG/PGM as [0, 1] grayscale; colour uses BT.601 luma."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
            elif mode in ("RGB", "RGBA", "P", "LA"):
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
            else:
                raise ValueError(f"{path}: unsupported pixel format {mode!r} (only 8-bit images are accepted)")
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    return ImageRecord(path.stem, arr / 255.0, source_kind)


def write_image(img, path) -> None:
    """Clamp to [0, 1], quantize half-up to 8 bits and save as PNG or PGM."""
    pixels = img.pixels if isinstance(img, ImageRecord) else np.asarray(img)
    pixels = np.squeeze(np.asarray(pixels, dtype=np.float64))
    path = Path(path)
    fmt = {".png": "PNG", ".pgm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"{path}: output must end in .png or .pgm")
    data = np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data, mode="L").save(path, format=fmt)


def center_crop(img: ImageRecord, size: int = 128) -> ImageRecord:
    h, w = img.pixels.shape
    if h < size or w < size:
        raise ValueError(f"image {img.id!r} is {h}x{w}, smaller than the {size}px crop; reduce the crop size")
    top = (h - size) // 2
    left = (w - size) // 2
    return ImageRecord(img.id, img.pixels[top : top + size, left : left + size].copy(), img.source_kind)


@dataclass
class PairManifest:
    pairs: list = field(default_factory=list)  # (ir_path, vis_path, id)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def ids(self) -> list:
        return [p[2] for p in self.pairs]


def _image_files(d: Path) -> dict:
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def build_manifest(ir_dir, vis_dir, split: str = "train") -> PairManifest:
    """Pair infrared and visible files that share a stem, sorted by stem."""
    ir = _image_files(Path(ir_dir))
    vis = _image_files(Path(vis_dir))
    for stem in sorted(ir.keys() - vis.keys()):
        log.warning("infrared image %s has no visible partner; skipped", ir[stem])
    for stem in sorted(vis.keys() - ir.keys()):
        log.warning("visible image %s has no infrared partner; skipped", vis[stem])
    common = sorted(ir.keys() & vis.keys())
    if not common:
        raise ValueError(f"no matching image stems between {ir_dir} and {vis_dir}")
    return PairManifest([(ir[s], vis[s], s) for s in common], split)


def read_manifest_file(path, split: str = "train") -> PairManifest:
    """Manifest override: one ``id<TAB>ir_path<TAB>vis_path`` line per pair."""
    path = Path(path)
    pairs, seen = [], set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected id<TAB>ir_path<TAB>vis_path")
        pid, ir, vis = parts
        if pid in seen:
            raise ValueError(f"{path}:{lineno}: duplicate id {pid!r}")
        seen.add(pid)
        ir_p, vis_p = (Path(p) if Path(p).is_absolute() else path.parent / p for p in (ir, vis))
        for p in (ir_p, vis_p):
            if not p.exists():
                raise FileNotFoundError(f"{path}:{lineno}: {p} does not exist")
        pairs.append((ir_p, vis_p, pid))
    if not pairs:
        raise ValueError(f"{path}: manifest is empty")
    return PairManifest(pairs, split)


def write_manifest_file(manifest: PairManifest, path) -> None:
    lines = [f"{pid}\t{Path(ir).resolve()}\t{Path(vis).resolve()}" for ir, vis, pid in manifest]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ----------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: NetworkParams
    meta: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(params: NetworkParams, meta: Optional[dict], path) -> None:
    arrays = params.named_arrays()
    header = {
        "width": params.width,
        "skip_mode": params.skip_mode,
        "layout": params.layout,
        "bn_eps": params.bn_eps,
        "bn_momentum": params.bn_momentum,
        "parameters": [[name, list(arr.shape)] for name, arr in arrays],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in arrays)
    payload = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION) + struct.pack("<I", len(head)) + head + blob
    _atomic_write(Path(path), payload)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc

    width, skip_mode, layout = header["width"], header["skip_mode"], header["layout"]
    plan = layer_plan(width, skip_mode, layout)
    declared = {name: tuple(shape) for name, shape in header["parameters"]}
    expected_bytes = 4 * sum(int(np.prod(s)) for s in declared.values())
    blob = raw[12 + hlen :]
    if len(blob) != expected_bytes:
        raise CheckpointError(f"{path}: parameter blob holds {len(blob)} bytes, header declares {expected_bytes}")

    arrays, offset = {}, 0
    for name, shape in header["parameters"]:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float32).reshape(shape)
        offset += 4 * count

    layers = {}
    for lname, (cin, cout, padding, act) in plan.items():
        def get(key, shape):
            full = f"{lname}.{key}"
            if full not in arrays:
                raise CheckpointError(f"{path}: missing parameter {full}")
            if arrays[full].shape != shape:
                raise CheckpointError(
                    f"{path}: {full} has shape {arrays[full].shape}, width {width} needs {shape}"
                )
            return arrays[full]

        layers[lname] = ConvLayer(
            weight=Tensor(get("weight", (cout, cin, 3, 3)), requires_grad=True),
            bias=Tensor(get("bias", (cout,)), requires_grad=True),
            gamma=Tensor(get("bn_gamma", (cout,)), requires_grad=True),
            beta=Tensor(get("bn_beta", (cout,)), requires_grad=True),
            running_mean=get("bn_mean", (cout,)).copy(),
            running_var=get("bn_var", (cout,)).copy(),
            padding=padding,
            activation=act,
            slope=Tensor(get("prelu", (1,)), requires_grad=True) if act == "prelu" else None,
        )
    params = NetworkParams(width, layers, skip_mode, layout, header["bn_momentum"], header["bn_eps"])
    if len(params.named_arrays()) != len(arrays):
        raise CheckpointError(f"{path}: unexpected extra parameters for layout {layout!r}")
    return Checkpoint(params, header.get("meta", {}), version)
