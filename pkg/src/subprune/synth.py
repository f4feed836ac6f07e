"""Synthetic teacher networks and self-contained bundles.

A synthetic bundle carries a randomly initialized teacher network,
random inputs, labels given by the teacher's own argmax, captured
activations on the pruning rows, and a held-out verification split.
Weights and biases draw from uniform [-a, a] with a = 1/sqrt(fan_in);
MLP inputs are standard normal (by summing 12 uniforms), image inputs
uniform [0, 1).  Everything flows through the package's seeded
generator, so a (arch, samples, seed) triple produces byte-identical
bundles.
"""

from __future__ import annotations

import numpy as np

from .bundle import BundleManifest, LayerDescriptor, TensorRecord
from .network import LayerSpec, NetworkModel, forward, forward_capture, shrink_model
from .rng import Rng

DEFAULT_ARCH = "mlp:10,32,24,6"
DEFAULT_SAMPLES = 256


def _uniform_array(rng: Rng, shape, lo: float, hi: float) -> np.ndarray:
    flat = np.array([rng.uniform_range(lo, hi) for _ in range(int(np.prod(shape)))])
    return flat.reshape(shape)


def _normal_array(rng: Rng, shape) -> np.ndarray:
    # Irwin-Hall sum of 12 uniforms, shifted: mean 0, variance 1
    n = int(np.prod(shape))
    total = np.zeros(n)
    for _ in range(12):
        total += np.array([rng.uniform() for _ in range(n)])
    return (total - 6.0).reshape(shape)


def parse_arch(arch: str):
    """"mlp:d0,d1,..." or "lenet-toy"."""
    if arch == "lenet-toy":
        return ("lenet-toy", None)
    if arch.startswith("mlp:"):
        try:
            dims = [int(tok) for tok in arch[4:].split(",")]
        except ValueError as exc:
            raise ValueError(f"bad arch string {arch!r}") from exc
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"bad arch string {arch!r}: need >= 2 positive dims")
        return ("mlp", dims)
    raise ValueError(f"bad arch string {arch!r}")


def _init_dense(rng: Rng, n_in: int, n_out: int):
    a = 1.0 / np.sqrt(n_in)
    w = _uniform_array(rng, (n_in, n_out), -a, a)
    b = _uniform_array(rng, (n_out,), -a, a)
    return w, b


def _init_conv(rng: Rng, out_c: int, in_c: int, k_h: int, k_w: int):
    fan_in = in_c * k_h * k_w
    a = 1.0 / np.sqrt(fan_in)
    w = _uniform_array(rng, (out_c, in_c, k_h, k_w), -a, a)
    b = _uniform_array(rng, (out_c,), -a, a)
    return w, b


def make_teacher(arch: str, seed: int) -> NetworkModel:
    kind, dims = parse_arch(arch)
    rng = Rng(seed)
    if kind == "mlp":
        layers = []
        for i in range(len(dims) - 1):
            w, b = _init_dense(rng, dims[i], dims[i + 1])
            last = i == len(dims) - 2
            layers.append(LayerSpec(
                name=f"fc{i}", kind="dense", weight=w, bias=b,
                nonlinearity="none" if last else "relu", prunable=not last,
            ))
        return NetworkModel(layers, input_shape=(dims[0],))
    # lenet-toy: 1x9x9 images, two strided/valid convs, two dense layers
    w0, b0 = _init_conv(rng, 6, 1, 3, 3)
    w1, b1 = _init_conv(rng, 8, 6, 3, 3)
    w2, b2 = _init_dense(rng, 8 * 2 * 2, 16)
    w3, b3 = _init_dense(rng, 16, 4)
    layers = [
        LayerSpec(name="conv0", kind="conv2d", weight=w0, bias=b0, stride=2,
                  nonlinearity="relu", prunable=True),
        LayerSpec(name="conv1", kind="conv2d", weight=w1, bias=b1,
                  nonlinearity="relu", prunable=True),
        LayerSpec(name="fc0", kind="dense", weight=w2, bias=b2,
                  nonlinearity="relu", prunable=True),
        LayerSpec(name="fc1", kind="dense", weight=w3, bias=b3),
    ]
    return NetworkModel(layers, input_shape=(1, 9, 9))


def make_inputs(arch: str, n: int, seed: int) -> np.ndarray:
    kind, dims = parse_arch(arch)
    rng = Rng(seed)
    if kind == "mlp":
        return _normal_array(rng, (n, dims[0]))
    return _uniform_array(rng, (n, 1, 9, 9), 0.0, 1.0)


def synth_bundle(
    arch: str = DEFAULT_ARCH,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    verify_samples: int | None = None,
) -> tuple[BundleManifest, dict[str, TensorRecord]]:
    """Build a teacher, its data, and its captures as a bundle in memory."""
    if samples < 1:
        raise ValueError("need at least one sample")
    if verify_samples is None:
        verify_samples = samples
    model = make_teacher(arch, seed)
    total = samples + verify_samples
    inputs = make_inputs(arch, total, seed + 1)
    labels = np.argmax(forward(model, inputs), axis=1).astype(np.int64)
    prune_rows = inputs[:samples]
    _, captures = forward_capture(model, prune_rows)

    tensors: dict[str, TensorRecord] = {}
    descriptors = []
    for layer in model.layers:
        wname = f"{layer.name}.weight"
        tensors[wname] = TensorRecord.from_array(wname, layer.weight)
        bname = None
        if layer.bias is not None:
            bname = f"{layer.name}.bias"
            tensors[bname] = TensorRecord.from_array(bname, layer.bias)
        cname = None
        if layer.prunable:
            cname = f"{layer.name}.capture"
            tensors[cname] = TensorRecord.from_array(cname, captures[layer.name])
        descriptors.append(LayerDescriptor(
            name=layer.name, kind=layer.kind, weight=wname, bias=bname,
            nonlinearity=layer.nonlinearity, stride=layer.stride,
            padding=layer.padding, prunable=layer.prunable, capture=cname,
        ))
    tensors["inputs"] = TensorRecord.from_array("inputs", inputs)
    tensors["labels"] = TensorRecord.from_array("labels", labels)
    verification = np.arange(samples, total, dtype=np.int64)
    tensors["verification_indices"] = TensorRecord.from_array(
        "verification_indices", verification
    )
    manifest = BundleManifest(
        model=descriptors,
        data={
            "inputs": "inputs",
            "labels": "labels",
            "verification_indices": "verification_indices",
        },
    )
    return manifest, tensors


def model_to_bundle(
    model: NetworkModel,
    inputs: np.ndarray,
    labels: np.ndarray,
    verification: np.ndarray,
    *,
    shrink: bool = False,
) -> tuple[BundleManifest, dict[str, TensorRecord]]:
    """Bundle an existing model (optionally physically shrunken) with data."""
    export = shrink_model(model) if shrink else model
    tensors: dict[str, TensorRecord] = {}
    descriptors = []
    for layer in export.layers:
        wname = f"{layer.name}.weight"
        tensors[wname] = TensorRecord.from_array(wname, layer.weight)
        bname = None
        if layer.bias is not None:
            bname = f"{layer.name}.bias"
            tensors[bname] = TensorRecord.from_array(bname, layer.bias)
        descriptors.append(LayerDescriptor(
            name=layer.name, kind=layer.kind, weight=wname, bias=bname,
            nonlinearity=layer.nonlinearity, stride=layer.stride,
            padding=layer.padding, prunable=layer.prunable,
        ))
    tensors["inputs"] = TensorRecord.from_array("inputs", inputs)
    tensors["labels"] = TensorRecord.from_array("labels", np.asarray(labels, dtype=np.int64))
    tensors["verification_indices"] = TensorRecord.from_array(
        "verification_indices", np.asarray(verification, dtype=np.int64)
    )
    manifest = BundleManifest(
        model=descriptors,
        data={
            "inputs": "inputs",
            "labels": "labels",
            "verification_indices": "verification_indices",
        },
    )
    return manifest, tensors
