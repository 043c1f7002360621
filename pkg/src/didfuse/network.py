"""Dual-stream encoder/decoder with base and detail branches.

Each layer is pad -> 3x3 conv -> batch norm -> activation. The encoder
(conv1-conv4) maps a grayscale image to a base map (conv3) and a detail map
(conv4), both tanh-bounded. The decoder (conv5-conv7) merges them and
re-injects the conv1/conv2 activations before conv7/conv6.

Ablation layouts drop one stream: ``"no_base"`` removes conv3,
``"no_detail"`` and ``"classic_ae"`` remove conv4. ``skip_mode`` is
``"add"`` (the default; keeps the published channel table), ``"concat"``
(widens conv6/conv7 inputs to 2W) or ``"none"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

LAYOUTS = ("full", "no_base", "no_detail", "classic_ae")
SKIP_MODES = ("add", "concat", "none")
LAYER_NAMES = ("conv1", "conv2", "conv3", "conv4", "conv5", "conv6", "conv7")


@dataclass
class ConvLayer:
    weight: Tensor
    bias: Tensor
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    padding: str
    activation: str
    slope: Optional[Tensor] = None

    def trainable(self):
        items = [("weight", self.weight), ("bias", self.bias), ("bn_gamma", self.gamma), ("bn_beta", self.beta)]
        if self.slope is not None:
            items.append(("prelu", self.slope))
        return items

    def buffers(self):
        return [("bn_mean", self.running_mean), ("bn_var", self.running_var)]


@dataclass
class NetworkParams:
    width: int
    layers: dict
    skip_mode: str = "add"
    layout: str = "full"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    @property
    def dtype(self):
        return self.layers["conv1"].weight.dtype

    @property
    def has_base(self) -> bool:
        return self.layout != "no_base"

    @property
    def has_detail(self) -> bool:
        return self.layout in ("full", "no_base")

    def named_parameters(self) -> list:
        """Trainable tensors in declaration order, as ``(name, Tensor)`` pairs."""
        out = []
        for lname, layer in self.layers.items():
            out.extend((f"{lname}.{k}", t) for k, t in layer.trainable())
        return out

    def parameters(self) -> list:
        return [t for _, t in self.named_parameters()]

    def named_arrays(self) -> list:
        """Every stored array (parameters and BN buffers) in checkpoint order."""
        out = []
        for lname, layer in self.layers.items():
            out.extend((f"{lname}.{k}", t.data) for k, t in layer.trainable())
            out.extend((f"{lname}.{k}", a) for k, a in layer.buffers())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "NetworkParams":
        layers = {}
        for name, L in self.layers.items():
            layers[name] = ConvLayer(
                weight=Tensor(L.weight.data.copy(), requires_grad=True),
                bias=Tensor(L.bias.data.copy(), requires_grad=True),
                gamma=Tensor(L.gamma.data.copy(), requires_grad=True),
                beta=Tensor(L.beta.data.copy(), requires_grad=True),
                running_mean=L.running_mean.copy(),
                running_var=L.running_var.copy(),
                padding=L.padding,
                activation=L.activation,
                slope=None if L.slope is None else Tensor(L.slope.data.copy(), requires_grad=True),
            )
        return NetworkParams(self.width, layers, self.skip_mode, self.layout, self.bn_momentum, self.bn_eps)


def layer_plan(width: int, skip_mode: str = "add", layout: str = "full") -> dict:
    """``name -> (in_channels, out_channels, padding, activation)`` for the given configuration."""
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if skip_mode not in SKIP_MODES:
        raise ValueError(f"unknown skip mode {skip_mode!r}; expected one of {SKIP_MODES}")
    W = width
    streams = 2 if layout == "full" else 1
    skip_in = 2 * W if skip_mode == "concat" else W
    plan = {
        "conv1": (1, W, "reflection", "prelu"),
        "conv2": (W, W, "zero", "prelu"),
        "conv3": (W, W, "zero", "tanh"),
        "conv4": (W, W, "zero", "tanh"),
        "conv5": (streams * W, W, "zero", "prelu"),
        "conv6": (skip_in, W, "zero", "prelu"),
        "conv7": (skip_in, 1, "reflection", "sigmoid"),
    }
    if layout == "no_base":
        del plan["conv3"]
    elif layout in ("no_detail", "classic_ae"):
        del plan["conv4"]
    return plan


def init_params(
    width: int = 64,
    seed: int = 0,
    *,
    skip_mode: str = "add",
    layout: str = "full",
    dtype=np.float32,
    bn_momentum: float = 0.1,
    bn_eps: float = 1e-5,
    prelu_init: float = 0.25,
) -> NetworkParams:
    """Fresh parameters; kernels ~ U(-b, b) with b = sqrt(6 / fan_in)."""
    if width < 1:
        raise ValueError("width must be >= 1")
    rng = np.random.default_rng(seed)
    layers = {}
    for name, (cin, cout, padding, act) in layer_plan(width, skip_mode, layout).items():
        bound = np.sqrt(6.0 / (cin * 9))
        kernel = rng.uniform(-bound, bound, size=(cout, cin, 3, 3)).astype(dtype)
        layers[name] = ConvLayer(
            weight=Tensor(kernel, requires_grad=True, name=f"{name}.weight"),
            bias=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True, name=f"{name}.bias"),
            gamma=Tensor(np.ones(cout, dtype=dtype), requires_grad=True, name=f"{name}.bn_gamma"),
            beta=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True, name=f"{name}.bn_beta"),
            running_mean=np.zeros(cout, dtype=dtype),
            running_var=np.ones(cout, dtype=dtype),
            padding=padding,
            activation=act,
            slope=Tensor(np.full(1, prelu_init, dtype=dtype), requires_grad=True, name=f"{name}.prelu")
            if act == "prelu"
            else None,
        )
    return NetworkParams(width, layers, skip_mode, layout, bn_momentum, bn_eps)


def apply_layer(params: NetworkParams, name: str, x: Tensor, mode: str) -> Tensor:
    L = params.layers[name]
    y = ad.conv3x3(x, L.weight, L.bias, L.padding)
    y = ad.batch_norm(y, L.gamma, L.beta, L.running_mean, L.running_var, mode, params.bn_momentum, params.bn_eps)
    return ad.activation(y, L.activation, L.slope)


@dataclass
class FeaturePair:
    """Encoder output for one batch of images."""

    base: Optional[Tensor]
    detail: Optional[Tensor]
    skip1: Tensor
    skip2: Tensor
    extras: dict = field(default_factory=dict)


def _as_input(image, dtype) -> Tensor:
    if isinstance(image, Tensor):
        return image
    arr = np.asarray(image, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[None, None]
    return Tensor(arr)


def encode(params: NetworkParams, image, mode: str = "eval") -> FeaturePair:
    x = _as_input(image, params.dtype)
    if x.data.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"encode expects (n, 1, h, w) images, got {x.shape}")
    x1 = apply_layer(params, "conv1", x, mode)
    x2 = apply_layer(params, "conv2", x1, mode)
    base = apply_layer(params, "conv3", x2, mode) if params.has_base else None
    detail = apply_layer(params, "conv4", x2, mode) if params.has_detail else None
    return FeaturePair(base, detail, x1, x2)


def _merge_skip(params: NetworkParams, y: Tensor, skip: Tensor) -> Tensor:
    if params.skip_mode == "none":
        return y
    if skip.shape != y.shape:
        raise ShapeError(f"skip activation {skip.shape} does not match decoder tensor {y.shape}")
    if params.skip_mode == "add":
        return ad.add(y, skip)
    return ad.concat_channels(y, skip)


def decode(params: NetworkParams, fp: FeaturePair, mode: str = "eval") -> Tensor:
    W = params.width
    parts = [t for t in (fp.base if params.has_base else None, fp.detail if params.has_detail else None) if t is not None]
    expected = (1 if params.layout != "full" else 2)
    if len(parts) != expected:
        raise ShapeError(f"decode: layout {params.layout!r} needs {expected} feature map(s), got {len(parts)}")
    for t in parts:
        if t.data.ndim != 4 or t.shape[1] != W:
            raise ShapeError(f"decode: feature map shape {t.shape} inconsistent with width {W}")
    z = parts[0] if len(parts) == 1 else ad.concat_channels(parts[0], parts[1])
    y5 = apply_layer(params, "conv5", z, mode)
    y6 = apply_layer(params, "conv6", _merge_skip(params, y5, fp.skip2), mode)
    return apply_layer(params, "conv7", _merge_skip(params, y6, fp.skip1), mode)


def reconstruct(params: NetworkParams, image, mode: str = "eval"):
    fp = encode(params, image, mode)
    return decode(params, fp, mode), fp
