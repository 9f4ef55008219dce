"""Layer sequencing, shape inference, and the freeze/replace-head operations.

A ``NetworkSpec`` is the ordered layer list (one row per layer, including the
input and softmax rows); a ``Network`` adds instantiated parameters and a
train/eval mode.  ``forward`` returns logits: the softmax row participates in
shape inference and the architecture tag but the probability map is applied by
the loss/eval code, not here.
"""

import math
from dataclasses import dataclass, replace as dc_replace
from typing import Optional

import numpy as np

from . import layers as L
from .errors import ConfigError, ShapeError, StateError
from .layers import ConvConfig, LrnConfig, Parameter
from .tensor import DTYPE, Tensor


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # input | conv | relu | pool | lrn | fc | dropout | softmax
    conv: Optional[ConvConfig] = None
    lrn: Optional[LrnConfig] = None
    pool_kernel: int = 0
    pool_stride: int = 0
    fc_out: int = 0
    drop_p: float = 0.0


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple  # (c, h, w)
    num_classes: int
    layers: tuple


def _conv_out(extent, kernel, stride, pad):
    if extent + 2 * pad < kernel:
        raise ShapeError(f"kernel {kernel} larger than padded extent {extent + 2 * pad}")
    return (extent + 2 * pad - kernel) // stride + 1


def _pool_out(extent, kernel, stride):
    if extent < kernel:
        raise ShapeError(f"pool kernel {kernel} underflows extent {extent}")
    return (extent - kernel) // stride + 1


def shape_trace(spec: NetworkSpec):
    """Per-row (kind, (c, h, w)) trace over the whole sequence, input included.

    Raises ShapeError if any layer cannot consume its predecessor's output.
    """
    c, h, w = spec.input_shape
    rows = [("input", (c, h, w))]
    for ls in spec.layers:
        if ls.kind == "conv":
            h = _conv_out(h, ls.conv.kernel, ls.conv.stride, ls.conv.pad)
            w = _conv_out(w, ls.conv.kernel, ls.conv.stride, ls.conv.pad)
            c = ls.conv.out_channels
        elif ls.kind == "pool":
            h = _pool_out(h, ls.pool_kernel, ls.pool_stride)
            w = _pool_out(w, ls.pool_kernel, ls.pool_stride)
        elif ls.kind == "fc":
            c, h, w = ls.fc_out, 1, 1
        elif ls.kind in ("relu", "lrn", "dropout", "softmax"):
            pass
        else:
            raise ConfigError(f"unknown layer kind '{ls.kind}'")
        rows.append((ls.kind, (c, h, w)))
    if c * h * w != spec.num_classes:
        raise ShapeError(
            f"final extent {c * h * w} does not match num_classes {spec.num_classes}"
        )
    return rows


def build_reference_net(num_classes: int) -> NetworkSpec:
    """The full 24-row sequence on 227x227x3 input, with a configurable
    number of output neurons in the last fully-connected layer."""
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    lrn = LrnConfig()
    seq = [
        LayerSpec("conv", conv=ConvConfig(96, 11, 4, 0)),
        LayerSpec("relu"),
        LayerSpec("pool", pool_kernel=3, pool_stride=2),
        LayerSpec("lrn", lrn=lrn),
        LayerSpec("conv", conv=ConvConfig(256, 5, 1, 2)),
        LayerSpec("relu"),
        LayerSpec("pool", pool_kernel=3, pool_stride=2),
        LayerSpec("lrn", lrn=lrn),
        LayerSpec("conv", conv=ConvConfig(384, 3, 1, 1)),
        LayerSpec("relu"),
        LayerSpec("conv", conv=ConvConfig(384, 3, 1, 1)),
        LayerSpec("relu"),
        LayerSpec("conv", conv=ConvConfig(256, 3, 1, 1)),
        LayerSpec("relu"),
        LayerSpec("pool", pool_kernel=3, pool_stride=2),
        LayerSpec("fc", fc_out=4096),
        LayerSpec("relu"),
        LayerSpec("dropout", drop_p=0.5),
        LayerSpec("fc", fc_out=4096),
        LayerSpec("relu"),
        LayerSpec("dropout", drop_p=0.5),
        LayerSpec("fc", fc_out=num_classes),
        LayerSpec("softmax"),
    ]
    spec = NetworkSpec((3, 227, 227), num_classes, tuple(seq))
    shape_trace(spec)
    return spec


def build_desk_net(input_shape, num_classes: int) -> NetworkSpec:
    """Reduced two-block profile for desk-scale experiments; keeps the
    conv/relu/pool/lrn block pattern and the fc/relu/dropout head."""
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    c, h, w = input_shape
    if c < 1:
        raise ShapeError(f"bad channel count {c}")
    if h < 16 or w < 16:
        raise ShapeError(
            f"input {h}x{w} too small for the conv/pool block pattern (needs >= 16)"
        )
    lrn = LrnConfig()
    seq = [
        LayerSpec("conv", conv=ConvConfig(16, 5, 1, 0)),
        LayerSpec("relu"),
        LayerSpec("pool", pool_kernel=3, pool_stride=2),
        LayerSpec("lrn", lrn=lrn),
        LayerSpec("conv", conv=ConvConfig(32, 5, 1, 2)),
        LayerSpec("relu"),
        LayerSpec("pool", pool_kernel=3, pool_stride=2),
        LayerSpec("lrn", lrn=lrn),
        LayerSpec("fc", fc_out=128),
        LayerSpec("relu"),
        LayerSpec("dropout", drop_p=0.5),
        LayerSpec("fc", fc_out=num_classes),
        LayerSpec("softmax"),
    ]
    spec = NetworkSpec((int(c), int(h), int(w)), num_classes, tuple(seq))
    shape_trace(spec)
    return spec


def with_num_classes(spec: NetworkSpec, num_classes: int) -> NetworkSpec:
    """Same structure with the final fully-connected layer resized."""
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    idx = max(i for i, ls in enumerate(spec.layers) if ls.kind == "fc")
    new_layers = list(spec.layers)
    new_layers[idx] = dc_replace(new_layers[idx], fc_out=num_classes)
    return NetworkSpec(spec.input_shape, num_classes, tuple(new_layers))


def _fmt(v: float) -> str:
    return f"{v:g}"


def architecture_tag(spec: NetworkSpec) -> str:
    """Parseable structural digest used for checkpoint compatibility checks."""
    c, h, w = spec.input_shape
    parts = [f"in:{c}x{h}x{w}"]
    for ls in spec.layers:
        if ls.kind == "conv":
            cc = ls.conv
            parts.append(f"conv:o{cc.out_channels},k{cc.kernel},s{cc.stride},p{cc.pad}")
        elif ls.kind == "pool":
            parts.append(f"pool:k{ls.pool_kernel},s{ls.pool_stride}")
        elif ls.kind == "lrn":
            n = ls.lrn
            parts.append(f"lrn:n{n.n},k{_fmt(n.k)},a{_fmt(n.alpha)},b{_fmt(n.beta)}")
        elif ls.kind == "fc":
            parts.append(f"fc:{ls.fc_out}")
        elif ls.kind == "dropout":
            parts.append(f"drop:{_fmt(ls.drop_p)}")
        else:
            parts.append(ls.kind)
    return "|".join(parts)


def parse_architecture_tag(tag: str) -> NetworkSpec:
    """Inverse of architecture_tag."""
    parts = tag.split("|")
    if not parts or not parts[0].startswith("in:"):
        raise ConfigError(f"unparseable architecture tag: {tag!r}")
    try:
        c, h, w = (int(v) for v in parts[0][3:].split("x"))
        seq = []
        for part in parts[1:]:
            if part.startswith("conv:"):
                kv = dict((f[0], f[1:]) for f in part[5:].split(","))
                seq.append(
                    LayerSpec(
                        "conv",
                        conv=ConvConfig(int(kv["o"]), int(kv["k"]), int(kv["s"]), int(kv["p"])),
                    )
                )
            elif part.startswith("pool:"):
                kv = dict((f[0], f[1:]) for f in part[5:].split(","))
                seq.append(LayerSpec("pool", pool_kernel=int(kv["k"]), pool_stride=int(kv["s"])))
            elif part.startswith("lrn:"):
                kv = dict((f[0], f[1:]) for f in part[4:].split(","))
                seq.append(
                    LayerSpec(
                        "lrn",
                        lrn=LrnConfig(int(kv["n"]), float(kv["k"]), float(kv["a"]), float(kv["b"])),
                    )
                )
            elif part.startswith("fc:"):
                seq.append(LayerSpec("fc", fc_out=int(part[3:])))
            elif part.startswith("drop:"):
                seq.append(LayerSpec("dropout", drop_p=float(part[5:])))
            elif part in ("relu", "softmax"):
                seq.append(LayerSpec(part))
            else:
                raise ValueError(part)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"unparseable architecture tag: {tag!r}") from exc
    fc_rows = [ls for ls in seq if ls.kind == "fc"]
    if not fc_rows:
        raise ConfigError(f"architecture tag has no fc layer: {tag!r}")
    spec = NetworkSpec((c, h, w), fc_rows[-1].fc_out, tuple(seq))
    shape_trace(spec)
    return spec


class Network:
    """A NetworkSpec with instantiated parameters and a train/eval mode."""

    def __init__(self, spec: NetworkSpec, rng, init="gaussian", sigma=0.01):
        if init not in ("gaussian", "he"):
            raise ConfigError(f"unknown init scheme '{init}'")
        self.spec = spec
        self.init = init
        self.sigma = sigma
        self.mode = "train"
        self.params = {}
        self._layer_params = []  # aligned with spec.layers: (weight, bias) or None
        self._caches = None
        self._build_params(rng)

    # -- construction -------------------------------------------------------

    def _weight(self, name, shape, fan_in, rng):
        if self.init == "he":
            sigma = math.sqrt(2.0 / fan_in)
        else:
            sigma = self.sigma
        value = rng.normal(0.0, sigma, size=shape).astype(DTYPE)
        return Parameter(name, value)

    def _bias(self, name, n):
        return Parameter(name, np.zeros(n, dtype=DTYPE))

    def _build_params(self, rng):
        rows = shape_trace(self.spec)
        conv_i = fc_i = 0
        in_shape = rows[0][1]
        for row, ls in enumerate(self.spec.layers):
            if ls.kind == "conv":
                conv_i += 1
                c = in_shape[0]
                k = ls.conv.kernel
                w = self._weight(
                    f"conv{conv_i}.weight", (ls.conv.out_channels, c, k, k), c * k * k, rng
                )
                b = self._bias(f"conv{conv_i}.bias", ls.conv.out_channels)
                self._register(w, b)
            elif ls.kind == "fc":
                fc_i += 1
                d = int(np.prod(in_shape))
                w = self._weight(f"fc{fc_i}.weight", (ls.fc_out, d), d, rng)
                b = self._bias(f"fc{fc_i}.bias", ls.fc_out)
                self._register(w, b)
            else:
                self._layer_params.append(None)
            in_shape = rows[row + 1][1]

    def _register(self, w, b):
        self.params[w.name] = w
        self.params[b.name] = b
        self._layer_params.append((w, b))

    def parameters(self):
        return list(self.params.values())

    # -- forward / backward -------------------------------------------------

    def forward(self, batch: Tensor, rng=None) -> Tensor:
        """Run the sequence on [b,c,h,w]; returns logits [b,num_classes].

        Train mode caches per-layer state for backward and consumes rng for
        dropout; eval mode is deterministic and consumes no randomness.
        """
        if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(self.spec.input_shape):
            raise ShapeError(
                f"batch shape {batch.shape} does not match input {self.spec.input_shape}"
            )
        train = self.mode == "train"
        caches = [] if train else None
        x = batch
        for i, ls in enumerate(self.spec.layers):
            if ls.kind == "softmax":
                continue
            w_b = self._layer_params[i]
            flat_shape = None
            if ls.kind == "conv":
                x, cache = L.conv2d_forward(x, w_b[0], w_b[1], ls.conv)
            elif ls.kind == "relu":
                x, cache = L.relu_forward(x)
            elif ls.kind == "pool":
                x, cache = L.maxpool_forward(x, ls.pool_kernel, ls.pool_stride)
            elif ls.kind == "lrn":
                x, cache = L.lrn_forward(x, ls.lrn)
            elif ls.kind == "fc":
                if x.ndim > 2:
                    flat_shape = x.shape
                    x = x.reshape(x.shape[0], -1)
                x, cache = L.fc_forward(x, w_b[0], w_b[1])
            elif ls.kind == "dropout":
                x, cache = L.dropout_forward(x, ls.drop_p, self.mode, rng)
            else:
                continue
            if train:
                caches.append((i, ls.kind, cache, flat_shape))
        if train:
            self._caches = caches
        return x

    def _lowest_trainable(self):
        for i, w_b in enumerate(self._layer_params):
            if w_b is not None and not (w_b[0].frozen and w_b[1].frozen):
                return i
        return None

    def backward(self, grad_logits: Tensor):
        """Backpropagate from d(loss)/d(logits), accumulating into
        Parameter.grad down to the lowest trainable layer; propagation stops
        below it, which is what makes frozen-extractor retraining cheap."""
        if self._caches is None:
            raise StateError("backward needs a cached train-mode forward")
        lowest = self._lowest_trainable()
        g = grad_logits
        for i, kind, cache, flat_shape in reversed(self._caches):
            if lowest is None or i < lowest:
                break
            need_in = i > lowest
            if kind == "conv":
                g = L.conv2d_backward(cache, g, need_input_grad=need_in)
            elif kind == "relu":
                g = L.relu_backward(cache, g) if need_in else None
            elif kind == "pool":
                g = L.maxpool_backward(cache, g) if need_in else None
            elif kind == "lrn":
                g = L.lrn_backward(cache, g) if need_in else None
            elif kind == "fc":
                g = L.fc_backward(cache, g, need_input_grad=need_in)
                if need_in and flat_shape is not None:
                    g = g.reshape(flat_shape)
            elif kind == "dropout":
                g = L.dropout_backward(cache, g) if need_in else None

    # -- transfer protocol ---------------------------------------------------

    def freeze_feature_extractor(self):
        """Freeze every convolution weight and bias; the fc head stays trainable."""
        for i, ls in enumerate(self.spec.layers):
            if ls.kind == "conv":
                w, b = self._layer_params[i]
                w.frozen = True
                b.frozen = True

    def replace_output_layer(self, num_classes: int, rng):
        """Swap the final fc layer for a freshly initialized num_classes-wide
        one; every other parameter is left untouched."""
        self.spec = with_num_classes(self.spec, num_classes)
        idx = max(i for i, ls in enumerate(self.spec.layers) if ls.kind == "fc")
        old_w, old_b = self._layer_params[idx]
        d = old_w.value.shape[1]
        w = self._weight(old_w.name, (num_classes, d), d, rng)
        b = self._bias(old_b.name, num_classes)
        self.params[w.name] = w
        self.params[b.name] = b
        self._layer_params[idx] = (w, b)
        self._caches = None

    def reinit_head(self, rng, only_output=False):
        """Freshly initialize fc parameters (all of them, or just the final
        layer) using the network's init scheme; reinitialized layers become
        trainable."""
        fc_rows = [i for i, ls in enumerate(self.spec.layers) if ls.kind == "fc"]
        if only_output:
            fc_rows = fc_rows[-1:]
        for i in fc_rows:
            old_w, old_b = self._layer_params[i]
            w = self._weight(old_w.name, old_w.value.shape, old_w.value.shape[1], rng)
            b = self._bias(old_b.name, old_b.value.shape[0])
            self.params[w.name] = w
            self.params[b.name] = b
            self._layer_params[i] = (w, b)
        self._caches = None

    def extract_features(self, batch: Tensor) -> Tensor:
        """Flattened activations at the last pre-head boundary (the final
        pool layer); requires eval mode and is a pure function of the input."""
        if self.mode != "eval":
            raise StateError("extract_features requires eval mode")
        if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(self.spec.input_shape):
            raise ShapeError(
                f"batch shape {batch.shape} does not match input {self.spec.input_shape}"
            )
        x = batch
        for i, ls in enumerate(self.spec.layers):
            if ls.kind == "fc":
                break
            if ls.kind == "conv":
                x, _ = L.conv2d_forward(x, *self._layer_params[i], ls.conv)
            elif ls.kind == "relu":
                x, _ = L.relu_forward(x)
            elif ls.kind == "pool":
                x, _ = L.maxpool_forward(x, ls.pool_kernel, ls.pool_stride)
            elif ls.kind == "lrn":
                x, _ = L.lrn_forward(x, ls.lrn)
        return x.reshape(x.shape[0], -1)
