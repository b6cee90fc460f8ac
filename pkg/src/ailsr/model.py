"""VDSR-style residual networks with a width set by a filter-reduction ratio."""

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .numcore import (
    KERNEL,
    ConvParams,
    OptimizerState,
    ShapeError,
    as_tensor,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
)


@dataclass(frozen=True)
class ModelSpec:
    depth: int = 20
    base_width: int = 64
    ratio: float = 0.0
    in_channels: int = 1
    seed: int = 0
    # "he" or "zero"; zero starts the residual branch at exactly 0
    output_init: str = "he"

    def __post_init__(self):
        if self.output_init not in ("he", "zero"):
            raise ValueError(f"output_init must be 'he' or 'zero', got {self.output_init!r}")
        if self.depth < 3:
            raise ValueError(f"depth must be >= 3, got {self.depth}")
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"ratio must be in [0, 1), got {self.ratio}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.width < 1:
            raise ValueError(
                f"ratio {self.ratio} leaves width {self.width} < 1 from base width {self.base_width}"
            )

    @property
    def width(self):
        # half-up rounding: 64 * (1 - 0.66) = 21.76 -> 22
        return int(math.floor(self.base_width * (1.0 - self.ratio) + 0.5))

    def layer_shapes(self):
        f, c = self.width, self.in_channels
        shapes = [(f, c)]
        shapes += [(f, f)] * (self.depth - 2)
        shapes.append((c, f))
        return shapes


class Network:
    """Stack of 3x3 conv layers, ReLU between them, plus a global residual skip."""

    def __init__(self, spec, layers):
        self.spec = spec
        self.layers = list(layers)
        expected = spec.layer_shapes()
        got = [(p.out_ch, p.in_ch) for p in self.layers]
        if got != expected:
            raise ShapeError(f"layer shapes {got} do not match spec {expected}")

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def parameter_names(self):
        names = []
        for i in range(len(self.layers)):
            names.extend((f"conv{i}.weight", f"conv{i}.bias"))
        return names

    def copy(self):
        return Network(
            self.spec, [ConvParams(p.weights.copy(), p.biases.copy()) for p in self.layers]
        )

    def _check_input(self, x):
        x = as_tensor(x)
        if x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"network expects {self.spec.in_channels} input channels, got shape {x.shape}"
            )
        return x

    def forward(self, x):
        x = self._check_input(x)
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = conv2d_forward(h, layer)
            if i < last:
                h = relu_forward(h)
        return x + h

    __call__ = forward

    def forward_train(self, x):
        """Forward pass that also returns the cache needed by :meth:`backward`."""
        x = self._check_input(x)
        inputs, pre = [], []
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            inputs.append(h)
            z = conv2d_forward(h, layer)
            if i < last:
                pre.append(z)
                h = relu_forward(z)
            else:
                h = z
        return x + h, (inputs, pre)

    def backward(self, cache, grad_out):
        """Parameter gradients (same order as :meth:`parameters`) and input gradient."""
        inputs, pre = cache
        grads = [None] * (2 * len(self.layers))
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            if i < len(self.layers) - 1:
                g = relu_backward(pre[i], g)
            g, gw, gb = conv2d_backward(inputs[i], self.layers[i], g)
            grads[2 * i] = gw
            grads[2 * i + 1] = gb
        # residual skip contributes the identity
        return grads, g + grad_out


def build_network(spec):
    """He-normal weights (std sqrt(2 / fan_in)) and zero biases, seeded by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    layers = []
    shapes = spec.layer_shapes()
    for k, (out_ch, in_ch) in enumerate(shapes):
        std = math.sqrt(2.0 / (in_ch * KERNEL * KERNEL))
        w = rng.standard_normal((out_ch, in_ch, KERNEL, KERNEL)) * std
        if k == len(shapes) - 1 and spec.output_init == "zero":
            w[...] = 0.0
        layers.append(ConvParams(w, np.zeros(out_ch)))
    return Network(spec, layers)


def zero_network(spec):
    return Network(
        spec,
        [
            ConvParams(np.zeros((o, i, KERNEL, KERNEL)), np.zeros(o))
            for o, i in spec.layer_shapes()
        ],
    )


def count_params(spec):
    return sum(o * i * KERNEL * KERNEL + o for o, i in spec.layer_shapes())


def count_flops(spec, h, w):
    """Floating-point operations of one forward pass on an h x w input.

    Convention: 2 FLOPs per multiply-accumulate, convolution MACs only
    (biases, ReLU and the residual add are not counted).
    """
    if h < 1 or w < 1:
        raise ValueError("h and w must be >= 1")
    macs = sum(o * i * KERNEL * KERNEL for o, i in spec.layer_shapes())
    return 2 * h * w * macs


FLOP_CONVENTION = "2 * multiply-accumulates of all conv layers; biases/ReLU/residual excluded"


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

MAGIC = b"AILSRCKP"
FORMAT_VERSION = 1
_DIGEST_LEN = 32


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    network: Network
    metadata: dict = field(default_factory=dict)
    optimizer: OptimizerState = None


def parameter_digest(net):
    """sha256 over every parameter array in layer order (little-endian float64)."""
    h = hashlib.sha256()
    for p in net.parameters():
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(net, path, metadata=None, optimizer=None):
    arrays = [(n, p) for n, p in zip(net.parameter_names(), net.parameters())]
    opt_header = None
    if optimizer is not None:
        opt_header = {
            "lr": optimizer.lr,
            "momentum": optimizer.momentum,
            "weight_decay": optimizer.weight_decay,
            "clip": optimizer.clip,
            "clip_mode": optimizer.clip_mode,
        }
        arrays += [(f"velocity.{n}", v) for n, v in zip(net.parameter_names(), optimizer.velocity)]
    header = {
        "spec": asdict(net.spec),
        "metadata": metadata or {},
        "optimizer": opt_header,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(hbytes)))
    buf.write(hbytes)
    for _, a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    body = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    fixed = len(MAGIC) + 8
    if len(raw) < fixed + _DIGEST_LEN or raw[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint or truncated")
    version, hlen = struct.unpack("<II", raw[len(MAGIC):fixed])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads version {FORMAT_VERSION}"
        )
    body, digest = raw[:-_DIGEST_LEN], raw[-_DIGEST_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError(f"{path}: checksum mismatch (truncated or modified)")
    try:
        header = json.loads(body[fixed:fixed + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header") from exc
    offset = fixed + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(body):
            raise CorruptCheckpointError(f"{path}: array {entry['name']} runs past end of file")
        arrays[entry["name"]] = (
            np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        )
        offset += nbytes
    if offset != len(body):
        raise CorruptCheckpointError(f"{path}: {len(body) - offset} trailing bytes")
    spec = ModelSpec(**header["spec"])
    layers = [
        ConvParams(arrays[f"conv{i}.weight"], arrays[f"conv{i}.bias"])
        for i in range(spec.depth)
    ]
    net = Network(spec, layers)
    optimizer = None
    if header.get("optimizer"):
        velocity = [arrays[f"velocity.{n}"] for n in net.parameter_names()]
        optimizer = OptimizerState(velocity=velocity, **header["optimizer"])
    return Checkpoint(network=net, metadata=header["metadata"], optimizer=optimizer)
