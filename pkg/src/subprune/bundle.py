"""Portable network-bundle container: weights, activations, data.

A bundle is a zip archive with stored (uncompressed) entries: a
``manifest.json`` describing the model and data, plus one binary tensor
file per referenced array under ``tensors/``.  Tensor files use a small
fixed header so that any language can parse them:

    bytes 0..3   magic "PNT1"
    byte  4      dtype code (0 = f32, 1 = f64, 2 = i64)
    byte  5      ndim
    bytes 6..11  zero padding
    then         ndim x u64 little-endian dims
    then         row-major little-endian payload

An empty shape denotes a scalar.  Archives are byte-deterministic:
manifest first, tensors sorted by name, fixed timestamps.
"""

from __future__ import annotations

import io
import json
import struct
import zipfile
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"PNT1"
FORMAT_VERSION = 1

_DTYPE_CODES = {"f32": 0, "f64": 1, "i64": 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
_NUMPY_DTYPES = {"f32": "<f4", "f64": "<f8", "i64": "<i8"}
_ELEMENT_SIZE = {"f32": 4, "f64": 8, "i64": 8}

_FIXED_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class BundleError(Exception):
    """Base class for bundle container errors."""


class BadMagicError(BundleError):
    pass


class TruncatedError(BundleError):
    pass


class UnknownDtypeError(BundleError):
    pass


class MissingTensorError(BundleError):
    pass


class ShapeChainError(BundleError):
    pass


class VersionError(BundleError):
    pass


@dataclass
class TensorRecord:
    name: str
    dtype: str
    shape: tuple[int, ...]
    payload: bytes

    def __post_init__(self):
        if self.dtype not in _DTYPE_CODES:
            raise UnknownDtypeError(f"unsupported dtype {self.dtype!r}")
        if any(d < 1 for d in self.shape):
            raise BundleError(f"tensor {self.name!r}: shape entries must be >= 1")
        expect = _ELEMENT_SIZE[self.dtype] * int(np.prod(self.shape, dtype=np.int64))
        if len(self.payload) != expect:
            raise BundleError(
                f"tensor {self.name!r}: payload {len(self.payload)} bytes, "
                f"expected {expect} for shape {self.shape}"
            )

    @classmethod
    def from_array(cls, name: str, array: np.ndarray, dtype: str | None = None) -> "TensorRecord":
        array = np.asarray(array)
        if dtype is None:
            dtype = {"float32": "f32", "float64": "f64", "int64": "i64"}.get(array.dtype.name)
            if dtype is None:
                raise UnknownDtypeError(f"no bundle dtype for numpy {array.dtype}")
        data = np.ascontiguousarray(array, dtype=_NUMPY_DTYPES[dtype])
        return cls(name, dtype, tuple(array.shape), data.tobytes())

    def to_array(self) -> np.ndarray:
        arr = np.frombuffer(self.payload, dtype=_NUMPY_DTYPES[self.dtype])
        return arr.reshape(self.shape).copy()

    def to_f64(self) -> np.ndarray:
        """File-boundary promotion: everything is float64 in memory."""
        return self.to_array().astype(np.float64)


def write_tensor(rec: TensorRecord, sink) -> None:
    sink.write(MAGIC)
    sink.write(struct.pack("<BB6x", _DTYPE_CODES[rec.dtype], len(rec.shape)))
    for dim in rec.shape:
        sink.write(struct.pack("<Q", dim))
    sink.write(rec.payload)


def read_tensor(source, name: str = "") -> TensorRecord:
    head = source.read(12)
    if len(head) < 12:
        raise TruncatedError(f"tensor {name!r}: header truncated")
    if head[:4] != MAGIC:
        raise BadMagicError(f"tensor {name!r}: bad magic {head[:4]!r}")
    code, ndim = struct.unpack("<BB6x", head[4:12])
    if code not in _CODE_DTYPES:
        raise UnknownDtypeError(f"tensor {name!r}: unknown dtype code {code}")
    dtype = _CODE_DTYPES[code]
    dims_raw = source.read(8 * ndim)
    if len(dims_raw) < 8 * ndim:
        raise TruncatedError(f"tensor {name!r}: dims truncated")
    shape = struct.unpack(f"<{ndim}Q", dims_raw) if ndim else ()
    count = _ELEMENT_SIZE[dtype] * int(np.prod(shape, dtype=np.int64))
    payload = source.read(count)
    if len(payload) < count:
        raise TruncatedError(f"tensor {name!r}: payload truncated")
    return TensorRecord(name, dtype, tuple(int(d) for d in shape), payload)


@dataclass
class LayerDescriptor:
    name: str
    kind: str
    weight: str
    bias: str | None = None
    nonlinearity: str = "none"
    stride: int = 1
    padding: int = 0
    prunable: bool = False
    capture: str | None = None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "weight": self.weight,
            "bias": self.bias,
            "nonlinearity": self.nonlinearity,
            "stride": self.stride,
            "padding": self.padding,
            "prunable": self.prunable,
            "capture": self.capture,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LayerDescriptor":
        return cls(
            name=obj["name"],
            kind=obj["kind"],
            weight=obj["weight"],
            bias=obj.get("bias"),
            nonlinearity=obj.get("nonlinearity", "none"),
            stride=int(obj.get("stride", 1)),
            padding=int(obj.get("padding", 0)),
            prunable=bool(obj.get("prunable", False)),
            capture=obj.get("capture"),
        )


@dataclass
class BundleManifest:
    format_version: int = FORMAT_VERSION
    model: list[LayerDescriptor] = field(default_factory=list)
    data: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "model": [layer.to_json() for layer in self.model],
            "data": self.data,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BundleManifest":
        return cls(
            format_version=int(obj["format_version"]),
            model=[LayerDescriptor.from_json(m) for m in obj["model"]],
            data=dict(obj.get("data", {})),
        )


def _validate(manifest: BundleManifest, tensors: dict[str, TensorRecord]) -> None:
    if manifest.format_version != FORMAT_VERSION:
        raise VersionError(
            f"unsupported format_version {manifest.format_version}, "
            f"expected {FORMAT_VERSION}"
        )

    def resolve(ref: str, owner: str) -> TensorRecord:
        if ref not in tensors:
            raise MissingTensorError(f"{owner}: missing tensor {ref!r}")
        return tensors[ref]

    for key in ("inputs", "labels"):
        if key in manifest.data and manifest.data[key] is not None:
            resolve(manifest.data[key], f"data.{key}")
    if manifest.data.get("verification_indices"):
        resolve(manifest.data["verification_indices"], "data.verification_indices")

    inputs_shape = None
    if manifest.data.get("inputs"):
        inputs_shape = tensors[manifest.data["inputs"]].shape

    feature: tuple[int, ...] | None = None
    if inputs_shape is not None:
        feature = tuple(inputs_shape[1:])

    for layer in manifest.model:
        w = resolve(layer.weight, f"layer {layer.name!r}")
        if layer.bias is not None:
            resolve(layer.bias, f"layer {layer.name!r}")
        if layer.capture is not None:
            resolve(layer.capture, f"layer {layer.name!r}")
        if layer.kind == "dense":
            if len(w.shape) != 2:
                raise ShapeChainError(
                    f"layer {layer.name!r}: dense weight must be 2-D, got {w.shape}"
                )
            n_in = w.shape[0]
            if feature is not None:
                flat = int(np.prod(feature))
                if flat != n_in:
                    raise ShapeChainError(
                        f"layer {layer.name!r}: expects {n_in} inputs, "
                        f"previous layer provides {flat}"
                    )
            feature = (w.shape[1],)
        elif layer.kind == "conv2d":
            if len(w.shape) != 4:
                raise ShapeChainError(
                    f"layer {layer.name!r}: conv weight must be 4-D, got {w.shape}"
                )
            out_c, in_c = w.shape[0], w.shape[1]
            if feature is not None:
                if len(feature) != 3:
                    raise ShapeChainError(
                        f"layer {layer.name!r}: conv input must be [c,h,w], got {feature}"
                    )
                if feature[0] != in_c:
                    raise ShapeChainError(
                        f"layer {layer.name!r}: expects {in_c} channels, "
                        f"previous layer provides {feature[0]}"
                    )
                span_h = feature[1] + 2 * layer.padding - w.shape[2]
                span_w = feature[2] + 2 * layer.padding - w.shape[3]
                if span_h < 0 or span_w < 0 or span_h % layer.stride or span_w % layer.stride:
                    raise ShapeChainError(
                        f"layer {layer.name!r}: kernel {w.shape[2:]} stride "
                        f"{layer.stride} pad {layer.padding} does not tile "
                        f"input {feature[1:]}"
                    )
                feature = (out_c, span_h // layer.stride + 1, span_w // layer.stride + 1)
            else:
                feature = None
        else:
            raise ShapeChainError(f"layer {layer.name!r}: unknown kind {layer.kind!r}")


def save_bundle(manifest: BundleManifest, tensors: dict[str, TensorRecord], path) -> None:
    _validate(manifest, tensors)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        entries = [("manifest.json", json.dumps(manifest.to_json(), indent=1).encode("utf-8"))]
        for name in sorted(tensors):
            buf = io.BytesIO()
            write_tensor(tensors[name], buf)
            entries.append((f"tensors/{name}", buf.getvalue()))
        for arcname, payload in entries:
            info = zipfile.ZipInfo(arcname, date_time=_FIXED_ZIP_DATE)
            info.compress_type = zipfile.ZIP_STORED
            info.external_attr = 0o644 << 16
            zf.writestr(info, payload)


def load_bundle(path) -> tuple[BundleManifest, dict[str, TensorRecord]]:
    try:
        zf = zipfile.ZipFile(path, "r")
    except (zipfile.BadZipFile, FileNotFoundError) as exc:
        raise BundleError(f"cannot open bundle {path}: {exc}") from exc
    with zf:
        try:
            manifest_raw = zf.read("manifest.json")
        except KeyError as exc:
            raise MissingTensorError(f"bundle {path}: no manifest.json") from exc
        manifest = BundleManifest.from_json(json.loads(manifest_raw.decode("utf-8")))
        tensors: dict[str, TensorRecord] = {}
        for info in zf.infolist():
            if not info.filename.startswith("tensors/"):
                continue
            name = info.filename[len("tensors/"):]
            with zf.open(info) as fh:
                tensors[name] = read_tensor(io.BytesIO(fh.read()), name)
    _validate(manifest, tensors)
    return manifest, tensors
