"""The five classifier architectures, built on :mod:`alc.autodiff_nn`."""
from __future__ import annotations

import enum
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff_nn as nn
from .errors import FormatError, ShapeError, SpecError

N_CLASSES = 3
VALID_CHANNELS = (3, 6, 12, 18)


class ModelKind(enum.Enum):
    MLP = "mlp"
    CNN = "cnn"
    CNN_LSTM = "cnn_lstm"
    RESNET1D = "resnet1d"
    RESNET18 = "resnet18"

    @classmethod
    def parse(cls, tag: str) -> "ModelKind":
        tag = tag.lower().replace("-", "_")
        try:
            return cls(tag)
        except ValueError:
            raise SpecError(f"unknown model {tag!r}; choose from "
                            + ", ".join(k.value for k in cls)) from None


# Layer sizes for every architecture. conv entries are (filters, kernel, stride).
LAYER_TABLE = {
    ModelKind.MLP: {"hidden": [256, 128]},
    ModelKind.CNN: {"convs": [(64, 7, 2), (64, 5, 1), (128, 3, 1)]},
    ModelKind.CNN_LSTM: {"convs": [(64, 7, 2), (64, 5, 2)], "lstm_hidden": 128},
    ModelKind.RESNET1D: {
        "stem": (64, 7, 2),
        "pool": None,
        "stages": [(64, 1, 1), (128, 1, 2)],  # (width, blocks, entry stride)
    },
    ModelKind.RESNET18: {
        "stem": (64, 7, 2),
        "pool": (3, 2),
        "stages": [(64, 2, 2), (128, 2, 2), (256, 2, 2), (512, 2, 2)],
    },
}


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    in_channels: int
    window_length: int
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if not isinstance(self.kind, ModelKind):
            object.__setattr__(self, "kind", ModelKind.parse(str(self.kind)))
        if self.in_channels not in VALID_CHANNELS:
            raise SpecError(f"in_channels must be one of {VALID_CHANNELS}, got {self.in_channels}")
        if self.window_length < 1:
            raise SpecError("window_length must be positive")
        if self.n_classes < 2:
            raise SpecError("n_classes must be at least 2")


def _conv_len(T: int, k: int, stride: int, padding: int = 0) -> int:
    T = T + 2 * padding
    if T < k:
        return 0
    return (T - k) // stride + 1


def _require(T: int, spec: ModelSpec, where: str) -> int:
    if T < 1:
        raise SpecError(f"window_length {spec.window_length} too short for "
                        f"{spec.kind.value}: sequence vanishes at {where}")
    return T


class BasicBlock(nn.Module):
    """Two 3-tap convolutions with batch norm and a skip connection.

    The convolutions are zero-padded so the skip path lines up; a strided
    or widening block uses a 1x1 projection (+ batch norm) on the skip.
    """

    def __init__(self, c_in: int, c_out: int, stride: int, rng):
        self.conv1 = nn.Conv1d(c_in, c_out, 3, rng, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm1d(c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, 3, rng, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm1d(c_out)
        if stride != 1 or c_in != c_out:
            self.proj = nn.Conv1d(c_in, c_out, 1, rng, stride=stride, bias=False)
            self.proj_bn = nn.BatchNorm1d(c_out)
        else:
            self.proj = None
            self.proj_bn = None

    def out_length(self, T: int) -> int:
        return self.conv2.out_length(self.conv1.out_length(T))

    def forward(self, x):
        h = nn.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = self.proj_bn(self.proj(x)) if self.proj is not None else nn.as_tensor(x)
        return nn.relu(nn.add(h, skip))


class Model(nn.Module):
    """Base for the architectures: ``forward`` maps ``[B, ch, T]`` to logits ``[B, n_classes]``."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    @property
    def kind(self) -> ModelKind:
        return self.spec.kind

    def _check_input(self, x):
        x = nn.as_tensor(x)
        expected = (self.spec.in_channels, self.spec.window_length)
        if x.data.ndim != 3 or x.shape[1:] != expected:
            raise ShapeError(f"{self.kind.value} expects [B, {expected[0]}, {expected[1]}], "
                             f"got {x.shape}")
        return x


class MLP(Model):
    def __init__(self, spec, rng):
        super().__init__(spec)
        sizes = [spec.in_channels * spec.window_length, *LAYER_TABLE[ModelKind.MLP]["hidden"]]
        self.hidden = [nn.Dense(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.head = nn.Dense(sizes[-1], spec.n_classes, rng)

    def forward(self, x):
        h = nn.flatten(self._check_input(x))
        for layer in self.hidden:
            h = nn.relu(layer(h))
        return self.head(h)


class CNN(Model):
    def __init__(self, spec, rng):
        super().__init__(spec)
        c, T = spec.in_channels, spec.window_length
        self.convs = []
        for i, (f, k, s) in enumerate(LAYER_TABLE[ModelKind.CNN]["convs"]):
            T = _require(_conv_len(T, k, s), spec, f"conv {i}")
            self.convs.append(nn.Conv1d(c, f, k, rng, stride=s))
            c = f
        self.head = nn.Dense(c, spec.n_classes, rng)

    def forward(self, x):
        h = self._check_input(x)
        for conv in self.convs:
            h = nn.relu(conv(h))
        return self.head(nn.global_avg_pool(h))


class CNNLSTM(Model):
    def __init__(self, spec, rng):
        super().__init__(spec)
        table = LAYER_TABLE[ModelKind.CNN_LSTM]
        c, T = spec.in_channels, spec.window_length
        self.convs = []
        for i, (f, k, s) in enumerate(table["convs"]):
            T = _require(_conv_len(T, k, s), spec, f"conv {i}")
            self.convs.append(nn.Conv1d(c, f, k, rng, stride=s))
            c = f
        self.lstm = nn.LSTM(c, table["lstm_hidden"], rng)
        self.head = nn.Dense(table["lstm_hidden"], spec.n_classes, rng)

    def forward(self, x):
        h = self._check_input(x)
        for conv in self.convs:
            h = nn.relu(conv(h))
        h = nn.transpose(h, (0, 2, 1))  # time-major for the recurrence
        return self.head(self.lstm(h))


class ResNet(Model):
    def __init__(self, spec, rng):
        super().__init__(spec)
        table = LAYER_TABLE[spec.kind]
        f, k, s = table["stem"]
        T = _require(_conv_len(spec.window_length, k, s), spec, "stem")
        self.stem = nn.Conv1d(spec.in_channels, f, k, rng, stride=s, bias=False)
        self.stem_bn = nn.BatchNorm1d(f)
        self.pool = table["pool"]
        if self.pool is not None:
            T = _require(_conv_len(T, *self.pool), spec, "stem pool")
        c = f
        self.blocks = []
        for si, (width, n_blocks, stride) in enumerate(table["stages"]):
            for bi in range(n_blocks):
                block = BasicBlock(c, width, stride if bi == 0 else 1, rng)
                T = _require(block.out_length(T), spec, f"stage {si} block {bi}")
                self.blocks.append(block)
                c = width
        self.head = nn.Dense(c, spec.n_classes, rng)

    def forward(self, x):
        h = nn.relu(self.stem_bn(self.stem(self._check_input(x))))
        if self.pool is not None:
            h = nn.max_pool1d(h, *self.pool)
        for block in self.blocks:
            h = block(h)
        return self.head(nn.global_avg_pool(h))


_BUILDERS = {
    ModelKind.MLP: MLP,
    ModelKind.CNN: CNN,
    ModelKind.CNN_LSTM: CNNLSTM,
    ModelKind.RESNET1D: ResNet,
    ModelKind.RESNET18: ResNet,
}


def build(spec: ModelSpec, seed: int = 0) -> Model:
    """Construct and initialize a model; identical seeds give identical weights."""
    return _BUILDERS[spec.kind](spec, np.random.default_rng(seed))


def forward(model: Model, batch) -> nn.Tensor:
    return model.forward(batch)


def count_params(model: nn.Module) -> int:
    return int(sum(p.data.size for p in model.parameters()))


# --- checkpoints -----------------------------------------------------------

CKPT_MAGIC = b"ALNN1"


def _write_str(fh, s: str, fmt: str):
    b = s.encode("utf-8")
    fh.write(struct.pack(fmt, len(b)))
    fh.write(b)


def save_checkpoint(path, model: Model, extras=None, meta=None) -> None:
    """Write ``model`` (parameters and batch-norm statistics) to ``path``.

    Layout, little-endian: magic ``ALNN1``; u16-length architecture tag;
    u32-length JSON header (spec dimensions plus ``meta``); u32 entry
    count; then per entry a u16-length name, u8 rank, u32 dims and the
    float64 payload. ``extras`` adds named arrays stored under ``extra.``.
    """
    header = {"in_channels": model.spec.in_channels,
              "window_length": model.spec.window_length,
              "n_classes": model.spec.n_classes, **(meta or {})}
    entries = list(nn.state_dict(model).items())
    entries += [("extra." + k, np.asarray(v, dtype=np.float64)) for k, v in (extras or {}).items()]
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        _write_str(fh, model.kind.value, "<H")
        _write_str(fh, json.dumps(header, sort_keys=True), "<I")
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            _write_str(fh, name, "<H")
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, fmt: str) -> str:
        (n,) = self.unpack(fmt)
        return self.take(n).decode("utf-8")


def load_checkpoint(path):
    """Read a checkpoint; returns ``(model, extras, header)``."""
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    r = _Reader(raw, path)
    r.take(len(CKPT_MAGIC))
    kind = ModelKind.parse(r.string("<H"))
    header = json.loads(r.string("<I"))
    (count,) = r.unpack("<I")
    state, extras = OrderedDict(), {}
    for _ in range(count):
        name = r.string("<H")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
        if name.startswith("extra."):
            extras[name[len("extra."):]] = arr
        else:
            state[name] = arr
    spec = ModelSpec(kind, header["in_channels"], header["window_length"], header["n_classes"])
    model = build(spec, seed=0)
    nn.load_state_dict(model, state)
    return model, extras, header
