"""Dense-tensor layer primitives with explicit backward passes, plus Adam.

Tensors are plain numpy float32 arrays (shape + flat row-major buffer).
Every differentiable op comes in a functional forward/backward pair; thin
layer classes on top cache what the backward pass needs so networks can be
composed without a full autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with an op's contract."""


def ensure_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x


@dataclass
class Param:
    """A trainable tensor with its gradient accumulator."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    name: str = ""

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ShapeError(f"grad shape {self.grad.shape} != value shape "
                             f"{self.value.shape} for param {self.name!r}")

    def zero_grad(self):
        self.grad.fill(0.0)


def init_conv_weight(rng: np.random.Generator, c_out: int, c_in: int,
                     k: int) -> np.ndarray:
    """Fan-in uniform init: U[-s, s] with s = sqrt(1 / (c_in * k^2))."""
    s = float(np.sqrt(1.0 / (c_in * k * k)))
    return rng.uniform(-s, s, size=(c_out, c_in, k, k)).astype(DTYPE)


# ---------------------------------------------------------------------------
# Convolution (cross-correlation semantics, the deep-learning convention)
# ---------------------------------------------------------------------------

def _conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(N,C,H,W) -> patch matrix (C*k*k, N*H_out*W_out)."""
    n, c, h, w = x.shape
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    h_out = _conv_out_size(h, k, stride, pad)
    w_out = _conv_out_size(w, k, stride, pad)
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]          # (N, C, Ho, Wo, k, k)
    cols = win.transpose(1, 4, 5, 0, 2, 3)       # (C, k, k, N, Ho, Wo)
    return np.ascontiguousarray(cols).reshape(c * k * k, n * h_out * w_out)


def _col2im(cols: np.ndarray, x_shape, k: int, stride: int,
            pad: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back into (N,C,H,W)."""
    n, c, h, w = x_shape
    h_out = _conv_out_size(h, k, stride, pad)
    w_out = _conv_out_size(w, k, stride, pad)
    cols = cols.reshape(c, k, k, n, h_out, w_out).transpose(3, 0, 1, 2, 4, 5)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + stride * h_out:stride,
               j:j + stride * w_out:stride] += cols[:, :, i, j]
    if pad > 0:
        xp = xp[:, :, pad:pad + h, pad:pad + w]
    return xp


def _check_conv_args(x, weight, stride, pad):
    c_out, c_in, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"only square kernels supported, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {kh}")
    if x.shape[1] != c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {c_in}")
    h_out = _conv_out_size(x.shape[2], kh, stride, pad)
    w_out = _conv_out_size(x.shape[3], kw, stride, pad)
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv output would be {h_out}x{w_out}")
    return c_out, kh, h_out, w_out


def conv2d_batch(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                 stride: int = 1, pad: int = 0) -> np.ndarray:
    """Batched cross-correlation: (N,C,H,W) x (O,C,k,k) -> (N,O,H',W')."""
    n = x.shape[0]
    c_out, k, h_out, w_out = _check_conv_args(x, weight, stride, pad)
    cols = _im2col(x, k, stride, pad)
    out = weight.reshape(c_out, -1) @ cols       # (O, N*Ho*Wo)
    out = out.reshape(c_out, n, h_out, w_out).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward_batch(grad_out: np.ndarray, x: np.ndarray,
                          weight: np.ndarray, stride: int = 1, pad: int = 0,
                          cols: np.ndarray | None = None):
    """Gradients of conv2d_batch w.r.t. (input, weight, bias).

    `cols` is the im2col matrix cached from the forward call; it is
    recomputed from `x` when absent.
    """
    n = x.shape[0]
    c_out, k, h_out, w_out = _check_conv_args(x, weight, stride, pad)
    if grad_out.shape != (n, c_out, h_out, w_out):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match "
                         f"forward output {(n, c_out, h_out, w_out)}")
    if cols is None:
        cols = _im2col(x, k, stride, pad)
    g = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(c_out, -1)
    grad_weight = (g @ cols.T).reshape(weight.shape)
    grad_bias = g.sum(axis=1)
    grad_cols = weight.reshape(c_out, -1).T @ g
    grad_x = _col2im(grad_cols, x.shape, k, stride, pad)
    return grad_x, grad_weight, grad_bias


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
           stride: int = 1, pad: int = 0) -> np.ndarray:
    """Single-image convolution: (C,H,W) x (O,C,k,k) -> (O,H',W')."""
    return conv2d_batch(x[None], weight, bias, stride, pad)[0]


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray,
                    stride: int = 1, pad: int = 0):
    """Single-image gradients: returns (grad_input, grad_weight, grad_bias)."""
    gx, gw, gb = conv2d_backward_batch(grad_out[None], x[None], weight,
                                       stride, pad)
    return gx[0], gw, gb


# ---------------------------------------------------------------------------
# Pixel shuffle (sub-pixel upsampling)
# ---------------------------------------------------------------------------

def pixel_shuffle_batch(x: np.ndarray, r: int) -> np.ndarray:
    """(N, r^2*C, H, W) -> (N, C, r*H, r*W)."""
    n, c_in, h, w = x.shape
    if c_in % (r * r) != 0:
        raise ShapeError(f"channel count {c_in} not divisible by r^2={r * r}")
    c = c_in // (r * r)
    y = x.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y).reshape(n, c, h * r, w * r)


def pixel_unshuffle_batch(x: np.ndarray, r: int) -> np.ndarray:
    """Inverse rearrangement of pixel_shuffle_batch."""
    n, c, hr, wr = x.shape
    if hr % r != 0 or wr % r != 0:
        raise ShapeError(f"spatial dims {hr}x{wr} not divisible by r={r}")
    h, w = hr // r, wr // r
    y = x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(y).reshape(n, c * r * r, h, w)


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """out[c, h*r+i, w*r+j] = in[c*r^2 + i*r + j, h, w]."""
    return pixel_shuffle_batch(x[None], r)[0]


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    return pixel_unshuffle_batch(x[None], r)[0]


# ---------------------------------------------------------------------------
# Elementwise activations
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign for numerical stability
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Backward from the cached forward output y = sigmoid(x)."""
    return grad_out * y * (1.0 - y)


def clamp01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def clamp01_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_out * ((x >= 0.0) & (x <= 1.0))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-4

    @classmethod
    def for_params(cls, params: list[Param], lr: float = 1e-4,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls(m=[np.zeros_like(p.value) for p in params],
                   v=[np.zeros_like(p.value) for p in params],
                   t=0, beta1=beta1, beta2=beta2, eps=eps, lr=lr)


def adam_step(params: list[Param], state: AdamState) -> None:
    """One bias-corrected Adam update; zeroes grads afterwards."""
    if len(params) != len(state.m):
        raise ShapeError("AdamState was built for a different param list")
    assert state.t < 2**53, "step counter overflow"
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.value -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
            p.value.dtype, copy=False)
        p.zero_grad()


# ---------------------------------------------------------------------------
# Layers: thin stateful wrappers that cache forward inputs for backward
# ---------------------------------------------------------------------------

class Layer:
    """Base for composable layers over batched (N,C,H,W) tensors."""

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need(self, attr: str):
        val = getattr(self, attr, None)
        if val is None:
            raise RuntimeError(f"{type(self).__name__}.backward called "
                               "without a cached forward pass")
        return val


class Conv2d(Layer):
    def __init__(self, c_in, c_out, k=3, stride=1, pad=1, rng=None, name=""):
        rng = rng or np.random.default_rng(0)
        self.stride, self.pad = stride, pad
        self.weight = Param(init_conv_weight(rng, c_out, c_in, k),
                            name=f"{name}.weight")
        self.bias = Param(np.zeros(c_out, dtype=DTYPE), name=f"{name}.bias")
        self._x = self._cols = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, cache=True):
        c_out, k, h_out, w_out = _check_conv_args(
            x, self.weight.value, self.stride, self.pad)
        cols = _im2col(x, k, self.stride, self.pad)
        out = self.weight.value.reshape(c_out, -1) @ cols
        out = out.reshape(c_out, x.shape[0], h_out, w_out).transpose(1, 0, 2, 3)
        out = out + self.bias.value[None, :, None, None]
        if cache:
            self._x, self._cols = x, cols
        else:
            self._x = self._cols = None
        return np.ascontiguousarray(out)

    def backward(self, grad_out):
        x = self._need("_x")
        gx, gw, gb = conv2d_backward_batch(grad_out, x, self.weight.value,
                                           self.stride, self.pad, self._cols)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


class ReLU(Layer):
    def __init__(self):
        self._x = None

    def forward(self, x, cache=True):
        self._x = x if cache else None
        return relu(x)

    def backward(self, grad_out):
        return relu_backward(grad_out, self._need("_x"))


class Sigmoid(Layer):
    def __init__(self):
        self._y = None

    def forward(self, x, cache=True):
        y = sigmoid(x)
        self._y = y if cache else None
        return y

    def backward(self, grad_out):
        return sigmoid_backward(grad_out, self._need("_y"))


class Clamp01(Layer):
    def __init__(self):
        self._x = None

    def forward(self, x, cache=True):
        self._x = x if cache else None
        return clamp01(x)

    def backward(self, grad_out):
        return clamp01_backward(grad_out, self._need("_x"))


class PixelShuffle(Layer):
    def __init__(self, r):
        self.r = r

    def forward(self, x, cache=True):
        return pixel_shuffle_batch(x, self.r)

    def backward(self, grad_out):
        return pixel_unshuffle_batch(grad_out, self.r)


class GlobalAvgPool(Layer):
    """(N,C,H,W) -> (N,C); spatial mean."""

    def __init__(self):
        self._shape = None

    def forward(self, x, cache=True):
        self._shape = x.shape if cache else None
        return x.mean(axis=(2, 3))

    def backward(self, grad_out):
        n, c, h, w = self._need("_shape")
        g = grad_out[:, :, None, None] / (h * w)
        return np.broadcast_to(g, (n, c, h, w)).astype(grad_out.dtype)


class Linear(Layer):
    def __init__(self, d_in, d_out, rng=None, name=""):
        rng = rng or np.random.default_rng(0)
        s = float(np.sqrt(1.0 / d_in))
        self.weight = Param(rng.uniform(-s, s, (d_out, d_in)).astype(DTYPE),
                            name=f"{name}.weight")
        self.bias = Param(np.zeros(d_out, dtype=DTYPE), name=f"{name}.bias")
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, cache=True):
        self._x = x if cache else None
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad_out):
        x = self._need("_x")
        self.weight.grad += grad_out.T @ x
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.value


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x, cache=True):
        for layer in self.layers:
            x = layer.forward(x, cache=cache)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out
