"""Dense float64 tensor numerics for small convolutional networks.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 laid out as
(batch, channels, height, width).  Convolutions are 3x3, stride 1, zero
padded, computed as im2col followed by a BLAS matrix product.  The batch is
processed in fixed-size chunks so the patch matrix stays small; chunk
boundaries depend only on the input shape, which keeps results bitwise
reproducible.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

KERNEL = 3
# upper bound on im2col matrix entries per chunk (~32 MB in float64)
_COLS_BUDGET = 4_000_000


class ShapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class ConvParams:
    weights: np.ndarray  # (out_ch, in_ch, 3, 3)
    biases: np.ndarray  # (out_ch,)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 4 or self.weights.shape[2:] != (KERNEL, KERNEL):
            raise ShapeError(f"conv weights must be (out, in, 3, 3), got {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.biases.shape} does not match weights {self.weights.shape}"
            )

    @property
    def out_ch(self):
        return self.weights.shape[0]

    @property
    def in_ch(self):
        return self.weights.shape[1]


def as_tensor(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-D (n, c, h, w) tensor, got shape {x.shape}")
    return x


def _chunks(n, per_item):
    step = max(1, _COLS_BUDGET // max(per_item, 1))
    for start in range(0, n, step):
        yield start, min(n, start + step)


def conv2d_forward(x, params, pad=1):
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c != params.in_ch:
        raise ShapeError(
            f"input shape {x.shape} incompatible with weights {params.weights.shape}: "
            f"{c} channels vs in_ch={params.in_ch}"
        )
    if pad != 1:
        raise ValueError("only pad=1 (size-preserving 3x3) is supported")
    wmat = params.weights.reshape(params.out_ch, -1)
    out = np.empty((n, params.out_ch, h, w))
    for a, b in _chunks(n, c * KERNEL * KERNEL * h * w):
        cols = kernels.im2col(x[a:b], KERNEL, pad)
        y = wmat @ cols
        out[a:b] = y.reshape(params.out_ch, b - a, h, w).transpose(1, 0, 2, 3)
    out += params.biases[None, :, None, None]
    return out


def conv2d_backward(x, params, grad_out, pad=1):
    """Gradients of ``sum(grad_out * conv2d_forward(x))``.

    Returns ``(grad_input, grad_weights, grad_biases)``.
    """
    x = as_tensor(x)
    grad_out = as_tensor(grad_out)
    n, c, h, w = x.shape
    expected = (n, params.out_ch, h, w)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    if c != params.in_ch:
        raise ShapeError(f"input shape {x.shape} incompatible with weights {params.weights.shape}")
    wmat = params.weights.reshape(params.out_ch, -1)
    grad_w = np.zeros_like(wmat)
    grad_x = np.empty_like(x)
    for a, b in _chunks(n, c * KERNEL * KERNEL * h * w):
        cols = kernels.im2col(x[a:b], KERNEL, pad)
        g = grad_out[a:b].transpose(1, 0, 2, 3).reshape(params.out_ch, -1)
        grad_w += g @ cols.T
        grad_x[a:b] = kernels.col2im(wmat.T @ g, (b - a, c, h, w), KERNEL, pad)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return grad_x, grad_w.reshape(params.weights.shape), grad_b


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    # subgradient at exactly 0 is 0
    return np.where(x > 0.0, grad_out, 0.0)


CLIP_MODES = ("element", "norm")


@dataclass
class OptimizerState:
    velocity: list
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip: float = 0.4
    clip_mode: str = "element"

    def __post_init__(self):
        if self.clip_mode not in CLIP_MODES:
            raise ValueError(f"clip_mode must be one of {CLIP_MODES}, got {self.clip_mode!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not self.clip > 0:
            raise ValueError(f"clip must be > 0, got {self.clip}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")

    @classmethod
    def zeros_like(cls, params, **kwargs):
        return cls(velocity=[np.zeros_like(p) for p in params], **kwargs)


def sgd_step(params, grads, state, names=None):
    """One SGD step with momentum, weight decay and gradient clipping.

    ``clip_mode="element"`` clips each gradient element to +-(clip / lr), so
    the clipped gradient's contribution to one step never exceeds ``clip``
    per element.  ``clip_mode="norm"`` rescales all gradients together so
    their global L2 norm is at most ``clip``.  Then
    ``v <- momentum*v + g + weight_decay*p`` and ``p <- p - lr*v``.
    ``params`` are updated in place and returned.
    """
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ShapeError(
            f"{len(params)} params, {len(grads)} grads, {len(state.velocity)} velocity buffers"
        )
    for i, (p, g, v) in enumerate(zip(params, grads, state.velocity)):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"param {i}: shape {p.shape}, grad {g.shape}, velocity {v.shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names is not None else f"#{i}"
            raise NonFiniteGradientError(f"non-finite gradient in parameter {label}")
    if state.clip_mode == "norm":
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
        scale = state.clip / norm if norm > state.clip else 1.0
        grads = [g * scale for g in grads] if scale != 1.0 else grads
    else:
        bound = state.clip / state.lr
        grads = [np.clip(g, -bound, bound) for g in grads]
    for p, g, v in zip(params, grads, state.velocity):
        v *= state.momentum
        v += g
        if state.weight_decay:
            v += state.weight_decay * p
        p -= state.lr * v
    return params


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_array: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def numerical_gradient(loss_fn, array, eps=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def grad_check(loss_fn, arrays, analytic, eps=1e-5, tolerance=1e-4, floor=1e-6):
    """Compare analytic gradients against central finite differences.

    ``arrays`` maps names to the arrays ``loss_fn`` reads; they are perturbed
    in place and restored.  The per-element relative error is
    ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps elements whose true
    gradient is ~0 from dividing FD round-off by nothing.
    """
    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    for name, arr in arrays.items():
        num = numerical_gradient(loss_fn, arr, eps)
        ana = np.asarray(analytic[name])
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
        err = float(np.max(np.abs(ana - num) / denom)) if arr.size else 0.0
        report.per_array[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
    return report
