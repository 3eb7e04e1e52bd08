"""Layers with hand-written forward and backward passes.

Activations use channels-last layout ``(batch, height, width, channels)``.
Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``Parameter.grad`` during ``backward``.
"""
from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Parameter:
    """A trainable array and its accumulated gradient."""

    def __init__(self, data: np.ndarray):
        self.data = data
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {self.data.shape}")
        self.grad = g if self.grad is None else self.grad + g


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values produced by {where}")
    return x


class Module:
    """Base class: parameters, buffers and children discovered by attribute."""

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, training: bool = False):
        return self.forward(x, training)

    def describe(self) -> dict:
        return {"type": type(self).__name__}

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = [(prefix + n, p) for n, p in vars(self).items() if isinstance(p, Parameter)]
        for name, child in self._children():
            out += child.named_parameters(f"{prefix}{name}.")
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [(prefix + n, getattr(self, n)) for n in getattr(self, "_buffers", ())]
        for name, child in self._children():
            out += child.named_buffers(f"{prefix}{name}.")
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        head, _, rest = name.partition(".")
        if not rest:
            setattr(self, head, value)
            return
        target = getattr(self, head)
        if isinstance(target, (list, tuple)):
            idx, _, rest = rest.partition(".")
            target = target[int(idx)]
        target.set_buffer(rest, value)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for name, buf in self.named_buffers():
            self.set_buffer(name, buf.astype(dtype))
        return self

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2d(Module):
    """Stride-1 2-D convolution with zero padding that preserves spatial size."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, *, rng=None, dtype=np.float32):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd to preserve spatial dimensions")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(_fan_in_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))

    def describe(self) -> dict:
        return {"type": "Conv2d", "in_ch": self.in_ch, "out_ch": self.out_ch, "kernel": self.kernel, "padding": "same", "stride": 1}

    def _band(self, width: int) -> np.ndarray:
        """Dense (k*W*C_in, W*C_out) matrix applying every width tap at once.

        Rows index (kernel row, input column, input channel); columns index
        (output column, output channel). Taps falling in the zero padding are
        left out, which is equivalent to padding the width axis.
        """
        k, p = self.kernel, self.kernel // 2
        m = np.zeros((k, width, self.in_ch, width, self.out_ch), dtype=self.weight.data.dtype)
        wt = self.weight.data.transpose(2, 3, 1, 0)  # (kh, kw, in, out)
        for wo in range(width):
            for j in range(k):
                wi = wo + j - p
                if 0 <= wi < width:
                    m[:, wi, :, wo, :] = wt[:, j]
        return m.reshape(k * width * self.in_ch, width * self.out_ch)

    def _band_grad(self, dm: np.ndarray, width: int) -> np.ndarray:
        k, p = self.kernel, self.kernel // 2
        dm = dm.reshape(k, width, self.in_ch, width, self.out_ch)
        dwt = np.zeros((k, k, self.in_ch, self.out_ch), dtype=dm.dtype)
        for wo in range(width):
            for j in range(k):
                wi = wo + j - p
                if 0 <= wi < width:
                    dwt[:, j] += dm[:, wi, :, wo, :]
        return np.ascontiguousarray(dwt.transpose(3, 2, 0, 1))

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[-1] != self.in_ch:
            raise ShapeError(f"Conv2d expects (B, H, W, {self.in_ch}), got {x.shape}")
        b, h, w, _ = x.shape
        m = self._band(w)
        rows = _row_shifts(x, self.kernel)
        self._cache = (rows, m, x.shape)
        return (rows @ m).reshape(b, h, w, self.out_ch) + self.bias.data

    def backward(self, grad):
        rows, m, (b, h, w, c) = self._cache
        g = grad.reshape(b * h, w * self.out_ch)
        self.weight.accumulate(self._band_grad(rows.T @ g, w))
        self.bias.accumulate(grad.sum(axis=(0, 1, 2)))
        drows = (g @ m.T).reshape(b, h, self.kernel, w * c)
        p = self.kernel // 2
        dxp = np.zeros((b, h + 2 * p, w * c), dtype=grad.dtype)
        for i in range(self.kernel):
            dxp[:, i : i + h] += drows[:, :, i]
        self._cache = None
        return dxp[:, p : p + h].reshape(b, h, w, c)


def _row_shifts(x: np.ndarray, k: int) -> np.ndarray:
    """(B, H, W, C) -> (B*H, k*W*C): each row with its k vertical neighbours."""
    b, h, w, c = x.shape
    p = k // 2
    xp = np.zeros((b, h + 2 * p, w * c), dtype=x.dtype)
    xp[:, p : p + h] = x.reshape(b, h, w * c)
    out = np.empty((b, h, k, w * c), dtype=x.dtype)
    for i in range(k):
        out[:, :, i] = xp[:, i : i + h]
    return out.reshape(b * h, k * w * c)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, *, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.weight = Parameter(_fan_in_uniform(rng, (n_in, n_out), n_in, dtype))
        self.bias = Parameter(np.zeros(n_out, dtype=dtype))

    def describe(self) -> dict:
        return {"type": "Dense", "n_in": self.n_in, "n_out": self.n_out}

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"Dense expects (B, {self.n_in}), got {x.shape}")
        self._x = x
        return x @ self.weight.data + self.bias.data

    def backward(self, grad):
        self.weight.accumulate(self._x.T @ grad)
        self.bias.accumulate(grad.sum(axis=0))
        self._x = None
        return grad @ self.weight.data.T


class BatchNorm(Module):
    """Normalizes the last axis; batch statistics when training, running ones otherwise."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, *, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def describe(self) -> dict:
        return {"type": "BatchNorm", "channels": self.channels, "momentum": self.momentum, "eps": self.eps}

    def forward(self, x, training=False):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"BatchNorm expects {self.channels} channels, got {x.shape[-1]}")
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(x.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(x.dtype)
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        self._cache = (xhat, inv, training)
        return self.gamma.data * xhat + self.beta.data

    def backward(self, grad):
        xhat, inv, training = self._cache
        axes = tuple(range(grad.ndim - 1))
        self.gamma.accumulate((grad * xhat).sum(axis=axes))
        self.beta.accumulate(grad.sum(axis=axes))
        gx = grad * self.gamma.data
        self._cache = None
        if not training:
            return gx * inv
        n = grad.size // grad.shape[-1]
        return inv / n * (n * gx - gx.sum(axis=axes) - xhat * (gx * xhat).sum(axis=axes))


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.3):
        if not 0.0 <= slope <= 1.0:
            raise ValueError("slope must lie in [0, 1]")
        self.slope = slope

    def describe(self) -> dict:
        return {"type": "LeakyReLU", "slope": self.slope}

    def forward(self, x, training=False):
        self._x = x
        # max(x, a*x) is the leaky ReLU for 0 <= a <= 1 and avoids np.where
        return np.maximum(x, x.dtype.type(self.slope) * x)

    def backward(self, grad):
        scale = (self._x > 0).astype(grad.dtype)
        scale *= grad.dtype.type(1.0 - self.slope)
        scale += grad.dtype.type(self.slope)
        self._x = None
        return grad * scale


class Tanh(Module):
    def forward(self, x, training=False):
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad):
        out = grad * (1 - self._y**2)
        self._y = None
        return out


class Flatten(Module):
    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Reshape(Module):
    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(shape)

    def describe(self) -> dict:
        return {"type": "Reshape", "shape": list(self.shape)}

    def forward(self, x, training=False):
        if int(np.prod(x.shape[1:])) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {x.shape[1:]} to {self.shape}")
        self._shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def describe(self) -> dict:
        return {"type": "Sequential", "layers": [l.describe() for l in self.layers]}

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class ResBlock(Module):
    """``LReLU(x + conv_stack(x))`` where the stack widens and returns to ``channels``."""

    def __init__(self, channels: int = 2, widths: Sequence[int] = (8, 16, 32), kernel: int = 3, *, slope=0.3, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.widths, self.kernel = channels, tuple(widths), kernel
        chans = [channels, *widths, channels]
        layers: list[Module] = []
        for i in range(len(chans) - 1):
            layers.append(Conv2d(chans[i], chans[i + 1], kernel, rng=rng, dtype=dtype))
            if i < len(chans) - 2:
                layers.append(LeakyReLU(slope))
        self.body = Sequential(*layers)
        self.out_act = LeakyReLU(slope)

    def describe(self) -> dict:
        return {"type": "ResBlock", "channels": self.channels, "widths": list(self.widths), "kernel": self.kernel, "body": self.body.describe()}

    def forward(self, x, training=False):
        return self.out_act.forward(x + self.body.forward(x, training), training)

    def backward(self, grad):
        g = self.out_act.backward(grad)
        return g + self.body.backward(g)
