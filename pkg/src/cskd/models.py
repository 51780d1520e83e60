"""Reference classifiers (MLP and a small ConvNet) built on :mod:`cskd.tensor`.

Both expose logits and the penultimate activations feeding the last linear
layer, which the retrieval metrics use as the feature embedding.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

from . import tensor as T
from .errors import DimensionError, FormatError, SpecError
from .tensor import Tensor


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    n_classes: int
    hidden: tuple[int, ...] = (256, 128)

    arch = "mlp"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        sizes = (self.input_dim, *self.hidden, self.n_classes)
        if any(int(s) <= 0 for s in sizes):
            raise SpecError(f"MLP layer sizes must be positive, got {sizes}")
        if not self.hidden:
            raise SpecError("MLP needs at least one hidden layer to expose penultimate features")

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1]


@dataclass(frozen=True)
class ConvNetSpec:
    in_channels: int
    height: int
    width: int
    n_classes: int
    channels: tuple[int, int] = (32, 64)
    fc: int = 128

    arch = "convnet"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 2:
            raise SpecError(f"ConvNet takes exactly two conv widths, got {self.channels}")
        sizes = (self.in_channels, self.height, self.width, self.n_classes, *self.channels, self.fc)
        if any(int(s) <= 0 for s in sizes):
            raise SpecError(f"ConvNet sizes must be positive, got {sizes}")
        if self.height < 4 or self.width < 4:
            raise SpecError(f"ConvNet needs inputs of at least 4x4 for two pooling stages, got {self.height}x{self.width}")

    @property
    def feature_dim(self) -> int:
        return self.fc

    @property
    def flat_dim(self) -> int:
        return self.channels[1] * (self.height // 2 // 2) * (self.width // 2 // 2)


ArchSpec = Union[MLPSpec, ConvNetSpec]


def spec_to_dict(spec: ArchSpec) -> dict:
    d = asdict(spec)
    d = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
    return {"arch": spec.arch, **d}


def spec_from_dict(d: dict) -> ArchSpec:
    d = dict(d)
    arch = d.pop("arch", None)
    try:
        if arch == "mlp":
            return MLPSpec(**d)
        if arch == "convnet":
            return ConvNetSpec(**d)
    except TypeError as exc:
        raise SpecError(f"bad {arch} spec: {exc}") from None
    raise SpecError(f"unknown architecture {arch!r}")


@dataclass
class ModelParams:
    spec: ArchSpec
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @property
    def frozen(self) -> bool:
        return not any(t.requires_grad for t in self.tensors.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


@dataclass
class ForwardOutput:
    logits: Tensor
    penultimate: Tensor


def _layer_shapes(spec: ArchSpec) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) for each parameter, in canonical order."""
    shapes = []
    if isinstance(spec, MLPSpec):
        sizes = (spec.input_dim, *spec.hidden, spec.n_classes)
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            shapes.append((f"fc{i}.weight", (fan_in, fan_out), fan_in))
            shapes.append((f"fc{i}.bias", (fan_out,), fan_in))
    else:
        c1, c2 = spec.channels
        shapes += [
            ("conv0.weight", (c1, spec.in_channels, 3, 3), spec.in_channels * 9),
            ("conv0.bias", (c1,), spec.in_channels * 9),
            ("conv1.weight", (c2, c1, 3, 3), c1 * 9),
            ("conv1.bias", (c2,), c1 * 9),
            ("fc0.weight", (spec.flat_dim, spec.fc), spec.flat_dim),
            ("fc0.bias", (spec.fc,), spec.flat_dim),
            ("fc1.weight", (spec.fc, spec.n_classes), spec.fc),
            ("fc1.bias", (spec.n_classes,), spec.fc),
        ]
    return shapes


def init_params(spec: ArchSpec, seed: int) -> ModelParams:
    """Kaiming-uniform weights (bound sqrt(6 / fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    params = ModelParams(spec)
    for name, shape, fan_in in _layer_shapes(spec):
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params.tensors[name] = Tensor(data, requires_grad=True)
    return params


def snapshot(params: ModelParams) -> ModelParams:
    """Deep copy with gradient tracking disabled; later updates to ``params`` do not leak in."""
    return ModelParams(params.spec, {k: Tensor(v.data) for k, v in params.tensors.items()})


def forward(params: ModelParams, x) -> ForwardOutput:
    x = T.as_tensor(x)
    spec = params.spec
    p = params.tensors
    if isinstance(spec, MLPSpec):
        if x.ndim < 2:
            raise DimensionError(f"MLP input must be batched, got shape {x.shape}")
        h = T.flatten(x) if x.ndim > 2 else x
        if h.shape[1] != spec.input_dim:
            raise DimensionError(f"MLP expects {spec.input_dim} input features, got shape {x.shape}")
        n_layers = len(spec.hidden) + 1
        for i in range(n_layers - 1):
            h = T.relu(h @ p[f"fc{i}.weight"] + p[f"fc{i}.bias"])
        last = n_layers - 1
        logits = h @ p[f"fc{last}.weight"] + p[f"fc{last}.bias"]
        return ForwardOutput(logits, h)

    expected = (spec.in_channels, spec.height, spec.width)
    if x.ndim == 2 and x.shape[1] == int(np.prod(expected)):
        x = T.reshape(x, (x.shape[0], *expected))
    if x.ndim != 4 or x.shape[1:] != expected:
        raise DimensionError(f"ConvNet expects N x {expected[0]} x {expected[1]} x {expected[2]}, got {x.shape}")
    h = T.maxpool2d(T.relu(T.conv2d(x, p["conv0.weight"], p["conv0.bias"])))
    h = T.maxpool2d(T.relu(T.conv2d(h, p["conv1.weight"], p["conv1.bias"])))
    h = T.relu(T.flatten(h) @ p["fc0.weight"] + p["fc0.bias"])
    logits = h @ p["fc1.weight"] + p["fc1.bias"]
    return ForwardOutput(logits, h)


# -- checkpoint file ------------------------------------------------------------------
#
# magic b"CSKDPAR1" | u32 version | u32 len + spec JSON (utf-8)
# then per tensor: u32 len + name | u32 rank | u32 extents... | float64 payload
# all integers and floats little-endian; tensors run to end of file.

CHECKPOINT_MAGIC = b"CSKDPAR1"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    spec_bytes = json.dumps(spec_to_dict(params.spec), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(spec_bytes)))
        f.write(spec_bytes)
        for name, t in params.tensors.items():
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)) + nb)
            f.write(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path, requires_grad: bool = False) -> ModelParams:
    with open(path, "rb") as f:
        blob = f.read()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"checkpoint truncated: wanted {n} bytes", offset=pos)
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise FormatError("not a parameter checkpoint (bad magic)", offset=0)
    version, spec_len = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=len(CHECKPOINT_MAGIC))
    spec_at = pos
    try:
        spec = spec_from_dict(json.loads(take(spec_len).decode()))
    except (UnicodeDecodeError, json.JSONDecodeError, SpecError) as exc:
        raise FormatError(f"bad architecture header: {exc}", offset=spec_at) from None

    params = ModelParams(spec)
    while pos < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode()
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape)
        params.tensors[name] = Tensor(data, requires_grad=requires_grad)

    expected = {name: shape for name, shape, _ in _layer_shapes(spec)}
    got = {k: v.shape for k, v in params.tensors.items()}
    if got != expected:
        raise FormatError(f"checkpoint tensors {got} do not match architecture {expected}")
    return params
