"""Deterministic forward evaluator for sequential dense/conv networks.

Supports exactly what the pruning pipeline needs: forward passes with
activation capture, pruning masks that zero unit outputs without
physically shrinking tensors, accuracy evaluation, and parameter/FLOP
accounting that reflects the masks.

Activation captures are shaped for the *successor* layer, because the
selection objective measures the change in the successor's input:

  * dense layer: the post-nonlinearity activation matrix [n, units]
  * conv feeding conv: patch matrix [n*p, channels*k_h*k_w] built with
    the successor's kernel geometry, channel-major columns
  * conv feeding dense: flattened maps [n, channels*h*w], channel-major
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .bundle import BundleManifest, LayerDescriptor, TensorRecord


@dataclass
class LayerSpec:
    name: str
    kind: str  # "dense" | "conv2d" | "maxpool2x2"
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    nonlinearity: str = "none"
    stride: int = 1
    padding: int = 0
    prunable: bool = False
    kept_mask: np.ndarray | None = None  # bool over output units when present

    def out_units(self) -> int:
        if self.kind == "dense":
            return self.weight.shape[1]
        if self.kind == "conv2d":
            return self.weight.shape[0]
        raise ValueError(f"layer {self.name!r} has no prunable units")

    def mask(self) -> np.ndarray:
        if self.kept_mask is not None:
            return self.kept_mask
        return np.ones(self.out_units(), dtype=bool)


@dataclass
class NetworkModel:
    layers: list[LayerSpec]
    input_shape: tuple[int, ...] = ()

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.kept_mask is not None and len(layer.kept_mask) != layer.out_units():
                raise ValueError(
                    f"layer {layer.name!r}: mask length {len(layer.kept_mask)} "
                    f"!= {layer.out_units()} units"
                )
            if layer.prunable and i == len(self.layers) - 1:
                raise ValueError(f"last layer {layer.name!r} cannot be prunable")

    def clone(self) -> "NetworkModel":
        return copy.deepcopy(self)

    def layer_index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)

    def prunable_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.prunable]


def model_from_bundle(manifest: BundleManifest, tensors: dict[str, TensorRecord]) -> NetworkModel:
    layers = []
    for desc in manifest.model:
        layers.append(
            LayerSpec(
                name=desc.name,
                kind=desc.kind,
                weight=tensors[desc.weight].to_f64(),
                bias=tensors[desc.bias].to_f64() if desc.bias else None,
                nonlinearity=desc.nonlinearity,
                stride=desc.stride,
                padding=desc.padding,
                prunable=desc.prunable,
            )
        )
    inputs_ref = manifest.data.get("inputs")
    input_shape = tuple(tensors[inputs_ref].shape[1:]) if inputs_ref else ()
    return NetworkModel(layers, input_shape)


def _apply_nonlinearity(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "none":
        return x
    raise ValueError(f"unknown nonlinearity {kind!r}")


def conv_output_hw(h: int, w: int, k_h: int, k_w: int, stride: int, pad: int) -> tuple[int, int]:
    span_h = h + 2 * pad - k_h
    span_w = w + 2 * pad - k_w
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise ValueError(
            f"kernel ({k_h},{k_w}) stride {stride} pad {pad} does not tile input ({h},{w})"
        )
    return span_h // stride + 1, span_w // stride + 1


def dense_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    if x.shape[1] != layer.weight.shape[0]:
        raise ValueError(
            f"layer {layer.name!r}: input has {x.shape[1]} features, "
            f"weight expects {layer.weight.shape[0]}"
        )
    out = x @ layer.weight
    if layer.bias is not None:
        out = out + layer.bias
    out = _apply_nonlinearity(out, layer.nonlinearity)
    if layer.kept_mask is not None:
        out = out.copy()
        out[:, ~layer.kept_mask] = 0.0
    return out


def conv2d_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Direct cross-correlation, one kernel offset at a time."""
    n, c, h, w = x.shape
    out_c, in_c, k_h, k_w = layer.weight.shape
    if c != in_c:
        raise ValueError(
            f"layer {layer.name!r}: input has {c} channels, weight expects {in_c}"
        )
    oh, ow = conv_output_hw(h, w, k_h, k_w, layer.stride, layer.padding)
    if layer.padding:
        padded = np.zeros((n, c, h + 2 * layer.padding, w + 2 * layer.padding))
        padded[:, :, layer.padding:layer.padding + h, layer.padding:layer.padding + w] = x
    else:
        padded = x
    out = np.zeros((n, out_c, oh, ow))
    s = layer.stride
    for u in range(k_h):
        for v in range(k_w):
            patch = padded[:, :, u:u + s * oh:s, v:v + s * ow:s]
            out += np.einsum("ncij,oc->noij", patch, layer.weight[:, :, u, v])
    if layer.bias is not None:
        out = out + layer.bias[None, :, None, None]
    out = _apply_nonlinearity(out, layer.nonlinearity)
    if layer.kept_mask is not None:
        out[:, ~layer.kept_mask, :, :] = 0.0
    return out


def maxpool2x2_forward(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"2x2 max-pool needs even spatial dims, got ({h},{w})")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def im2col(x: np.ndarray, k_h: int, k_w: int, stride: int, pad: int) -> np.ndarray:
    """Patch matrix [n*p, c*k_h*k_w]; rows sample-major then patch
    row-major, columns channel-major then (i_h*k_w + i_w)."""
    n, c, h, w = x.shape
    oh, ow = conv_output_hw(h, w, k_h, k_w, stride, pad)
    if pad:
        padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        padded[:, :, pad:pad + h, pad:pad + w] = x
    else:
        padded = x
    p = oh * ow
    cols = np.empty((n, p, c * k_h * k_w))
    for ch in range(c):
        for u in range(k_h):
            for v in range(k_w):
                col = ch * k_h * k_w + u * k_w + v
                patch = padded[:, ch, u:u + stride * oh:stride, v:v + stride * ow:stride]
                cols[:, :, col] = patch.reshape(n, p)
    return cols.reshape(n * p, c * k_h * k_w)


def _layer_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    if layer.kind == "dense":
        if x.ndim > 2:
            x = x.reshape(x.shape[0], -1)
        return dense_forward(x, layer)
    if layer.kind == "conv2d":
        return conv2d_forward(x, layer)
    if layer.kind == "maxpool2x2":
        return maxpool2x2_forward(x)
    raise ValueError(f"unknown layer kind {layer.kind!r}")


def forward(model: NetworkModel, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    for layer in model.layers:
        x = _layer_forward(x, layer)
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    return x


def _next_weighted(model: NetworkModel, idx: int) -> LayerSpec | None:
    for layer in model.layers[idx + 1:]:
        if layer.kind in ("dense", "conv2d"):
            return layer
    return None


def forward_capture(model: NetworkModel, inputs: np.ndarray):
    """Logits plus per-prunable-layer capture matrices.

    Each prunable layer's capture is taken from the tensor its successor
    actually consumes (so intervening pooling is applied), shaped for the
    successor's geometry.  Returns ``(logits, captures)``.
    """
    x = np.asarray(inputs, dtype=np.float64)
    captures: dict[str, np.ndarray] = {}
    group_sizes: dict[str, int] = {}
    pending: LayerSpec | None = None
    for layer in model.layers:
        if pending is not None and layer.kind in ("dense", "conv2d"):
            if pending.kind == "dense":
                captures[pending.name] = x.copy()
                group_sizes[pending.name] = 1
            elif layer.kind == "conv2d":
                k_h, k_w = layer.weight.shape[2], layer.weight.shape[3]
                captures[pending.name] = im2col(x, k_h, k_w, layer.stride, layer.padding)
                group_sizes[pending.name] = k_h * k_w
            else:
                n, c, h, w = x.shape
                captures[pending.name] = x.reshape(n, c * h * w).copy()
                group_sizes[pending.name] = h * w
            pending = None
        x = _layer_forward(x, layer)
        if layer.prunable:
            pending = layer
    if pending is not None:
        raise ValueError(f"prunable layer {pending.name!r} has no successor")
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    return x, ActivationCapture(captures, group_sizes)


@dataclass
class ActivationCapture:
    matrices: dict[str, np.ndarray] = field(default_factory=dict)
    group_sizes: dict[str, int] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.matrices

    def __getitem__(self, name: str) -> np.ndarray:
        return self.matrices[name]


def capture_group_sizes(model: NetworkModel) -> dict[str, int]:
    """Capture-column group size per prunable layer, from geometry alone."""
    sizes: dict[str, int] = {}
    shape = tuple(model.input_shape)
    pending: LayerSpec | None = None
    for layer in model.layers:
        if pending is not None and layer.kind in ("dense", "conv2d"):
            if pending.kind == "dense":
                sizes[pending.name] = 1
            elif layer.kind == "conv2d":
                sizes[pending.name] = layer.weight.shape[2] * layer.weight.shape[3]
            else:
                sizes[pending.name] = shape[1] * shape[2]
            pending = None
        if layer.kind == "dense":
            shape = (layer.weight.shape[1],)
        elif layer.kind == "conv2d":
            oh, ow = conv_output_hw(
                shape[1], shape[2], layer.weight.shape[2], layer.weight.shape[3],
                layer.stride, layer.padding,
            )
            shape = (layer.weight.shape[0], oh, ow)
        elif layer.kind == "maxpool2x2":
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        if layer.prunable:
            pending = layer
    if pending is not None:
        raise ValueError(f"prunable layer {pending.name!r} has no successor")
    return sizes


def shrink_model(model: NetworkModel) -> NetworkModel:
    """Physically remove masked units (export form of a pruned model).

    Masked units contribute exactly zero downstream, so dropping their
    weight columns/filters and the successor rows they feed preserves
    the function.  The result carries no masks.
    """
    out = model.clone()
    kept_features: np.ndarray | None = None  # indices into current input features
    spatial: tuple[int, int] | None = None
    shape = tuple(out.input_shape)
    if len(shape) == 3:
        spatial = (shape[1], shape[2])
    for layer in out.layers:
        if layer.kind == "maxpool2x2":
            if spatial:
                spatial = (spatial[0] // 2, spatial[1] // 2)
            continue
        kept_out = np.flatnonzero(layer.mask())
        if layer.kind == "dense":
            w = layer.weight
            if kept_features is not None:
                w = w[kept_features, :]
            layer.weight = w[:, kept_out].copy()
            next_keep = kept_out
        else:
            w = layer.weight
            if kept_features is not None:
                w = w[:, kept_features, :, :]
            layer.weight = w[kept_out, :, :, :].copy()
            if spatial:
                spatial = conv_output_hw(
                    spatial[0], spatial[1], w.shape[2], w.shape[3],
                    layer.stride, layer.padding,
                )
            next_keep = kept_out
        if layer.bias is not None:
            layer.bias = layer.bias[kept_out].copy()
        layer.kept_mask = None
        # translate this layer's kept units into the next layer's input indexing
        succ = _next_weighted(out, out.layer_index(layer.name))
        if succ is None:
            kept_features = None
        elif layer.kind == "conv2d" and succ.kind == "dense":
            h, w_sp = spatial
            # account for pooling between this conv and the dense layer
            i = out.layer_index(layer.name) + 1
            hh, ww = h, w_sp
            while out.layers[i] is not succ:
                if out.layers[i].kind == "maxpool2x2":
                    hh, ww = hh // 2, ww // 2
                i += 1
            per = hh * ww
            kept_features = np.concatenate(
                [np.arange(c * per, (c + 1) * per) for c in next_keep]
            ) if len(next_keep) else np.zeros(0, dtype=int)
        else:
            kept_features = next_keep
    return out


def evaluate_accuracy(model: NetworkModel, inputs: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.shape[0] != np.asarray(inputs).shape[0]:
        raise ValueError(
            f"{labels.shape[0]} labels for {np.asarray(inputs).shape[0]} inputs"
        )
    logits = forward(model, inputs)
    pred = np.argmax(logits, axis=1)  # argmax takes the lowest index on ties
    return float(np.mean(pred == labels))


def _kept_inputs(model: NetworkModel, idx: int) -> int:
    """Number of input connections layer idx keeps, given earlier masks."""
    layer = model.layers[idx]
    prev = None
    for cand in model.layers[:idx][::-1]:
        if cand.kind in ("dense", "conv2d"):
            prev = cand
            break
    if layer.kind == "conv2d":
        if prev is None:
            return layer.weight.shape[1]
        return int(prev.mask().sum())
    n_in = layer.weight.shape[0]
    if prev is None or prev.kept_mask is None:
        return n_in
    if prev.kind == "dense":
        return int(prev.mask().sum())
    # conv feeding dense: each channel owns a block of h*w features
    per_channel = n_in // prev.out_units()
    return int(prev.mask().sum()) * per_channel


def count_params(model: NetworkModel) -> int:
    total = 0
    for idx, layer in enumerate(model.layers):
        if layer.kind not in ("dense", "conv2d"):
            continue
        kept_out = int(layer.mask().sum())
        kept_in = _kept_inputs(model, idx)
        if layer.kind == "dense":
            total += kept_in * kept_out
        else:
            k_h, k_w = layer.weight.shape[2], layer.weight.shape[3]
            total += kept_out * kept_in * k_h * k_w
        if layer.bias is not None:
            total += kept_out
    return total


def count_flops(model: NetworkModel, input_shape: tuple[int, ...] | None = None) -> int:
    """FLOPs for one sample: 2 x multiply-accumulates, nonlinearities and
    biases excluded."""
    shape = tuple(input_shape) if input_shape else tuple(model.input_shape)
    if not shape:
        raise ValueError("input geometry required for FLOP counting")
    total = 0
    for idx, layer in enumerate(model.layers):
        if layer.kind == "maxpool2x2":
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
            continue
        kept_out = int(layer.mask().sum())
        kept_in = _kept_inputs(model, idx)
        if layer.kind == "dense":
            total += 2 * kept_in * kept_out
            shape = (layer.weight.shape[1],)
        else:
            _, _, k_h, k_w = layer.weight.shape
            oh, ow = conv_output_hw(shape[1], shape[2], k_h, k_w, layer.stride, layer.padding)
            total += 2 * oh * ow * kept_out * kept_in * k_h * k_w
            shape = (layer.weight.shape[0], oh, ow)
    return total
