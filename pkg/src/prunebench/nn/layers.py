"""Convolution primitives: direct cross-correlation via strided windows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..tensor import DTYPE


class ShapeError(ValueError):
    pass


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass(eq=False)
class ConvFilter:
    """Weights of shape (n_out, c_in, k_h, k_w) plus per-output bias.

    ``padding`` may be an int or an (h, w) pair; asymmetric kernels need the pair.
    """

    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1
    dilation: int = 1
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=DTYPE)
        if self.weight.ndim != 4 or min(self.weight.shape) < 1:
            raise ShapeError(f"conv weight must be 4-D with positive dims, got {self.weight.shape}")
        if self.bias is None:
            self.bias = np.zeros(self.weight.shape[0], dtype=DTYPE)
        self.bias = np.ascontiguousarray(self.bias, dtype=DTYPE).reshape(-1)
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(f"bias length {self.bias.shape[0]} != n_out {self.weight.shape[0]}")
        self.stride = int(self.stride)
        self.dilation = int(self.dilation)
        self.padding = _pair(self.padding)
        if self.stride < 1 or self.dilation < 1 or min(self.padding) < 0:
            raise ShapeError("stride and dilation must be >= 1, padding >= 0")

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    @property
    def param_count(self) -> int:
        return self.weight.size + self.bias.size

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        ph, pw = self.padding
        ho = (h + 2 * ph - self.dilation * (kh - 1) - 1) // self.stride + 1
        wo = (w + 2 * pw - self.dilation * (kw - 1) - 1) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"{kh}x{kw} conv (stride {self.stride}, dilation {self.dilation}) "
                             f"gives empty output for {h}x{w} input")
        return ho, wo

    def copy(self) -> "ConvFilter":
        return ConvFilter(self.weight.copy(), self.bias.copy(), self.stride, self.dilation, self.padding)

    def same_as(self, other: "ConvFilter") -> bool:
        return (self.stride == other.stride and self.dilation == other.dilation
                and self.padding == other.padding
                and self.weight.shape == other.weight.shape
                and np.array_equal(self.weight, other.weight)
                and np.array_equal(self.bias, other.bias))


@dataclass
class BatchNormParams:
    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("mean", "var", "gamma", "beta"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        n = self.mean.shape[0]
        if not all(getattr(self, k).shape[0] == n for k in ("var", "gamma", "beta")):
            raise ShapeError("batch-norm vectors must all have the same length")
        if np.any(self.var < 0):
            raise ValueError("batch-norm variance must be non-negative")
        if self.eps < 0 or np.any(self.var + self.eps <= 0):
            raise ValueError("batch-norm var + eps must be positive")

    def apply(self, x: np.ndarray) -> np.ndarray:
        scale = self.gamma / np.sqrt(self.var + self.eps)
        out = (x.astype(np.float64) - self.mean[None, :, None, None]) * scale[None, :, None, None]
        return (out + self.beta[None, :, None, None]).astype(DTYPE)


def windows(x: np.ndarray, f: ConvFilter) -> np.ndarray:
    """Receptive-field view of shape (n, c, h_out, w_out, k_h, k_w)."""
    kh, kw = f.kernel
    ph, pw = f.padding
    d, s = f.dilation, f.stride
    ho, wo = f.output_hw(x.shape[2], x.shape[3])
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    span_h, span_w = d * (kh - 1) + 1, d * (kw - 1) + 1
    view = sliding_window_view(x, (span_h, span_w), axis=(2, 3))
    return view[:, :, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s, ::d, ::d]


def conv_forward(x: np.ndarray, f: ConvFilter) -> np.ndarray:
    """Cross-correlation with bias; accumulates in float64, returns float32."""
    if x.ndim != 4 or x.shape[1] != f.c_in:
        raise ShapeError(f"input has {x.shape[1] if x.ndim == 4 else x.shape} channels, "
                         f"filter expects {f.c_in}")
    win = windows(np.asarray(x, dtype=np.float64), f)
    out = np.tensordot(win, f.weight.astype(np.float64), axes=([1, 4, 5], [1, 2, 3]))
    out += f.bias
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2), dtype=DTYPE)


def factorized_conv_forward(x: np.ndarray, f_vert: ConvFilter, f_horiz: ConvFilter) -> np.ndarray:
    """An n x 1 conv followed by a 1 x n conv."""
    if f_vert.n_out != f_horiz.c_in:
        raise ShapeError(f"vertical filter emits {f_vert.n_out} channels, horizontal expects {f_horiz.c_in}")
    return conv_forward(conv_forward(x, f_vert), f_horiz)


def fold_batchnorm(f: ConvFilter, bn: BatchNormParams) -> ConvFilter:
    """Absorb an inference-time batch norm that follows ``f`` into its weights and bias."""
    if bn.mean.shape[0] != f.n_out:
        raise ShapeError(f"batch norm covers {bn.mean.shape[0]} channels, conv has {f.n_out}")
    scale = bn.gamma / np.sqrt(bn.var + bn.eps)
    weight = f.weight.astype(np.float64) * scale[:, None, None, None]
    bias = (f.bias.astype(np.float64) - bn.mean) * scale + bn.beta
    return ConvFilter(weight, bias, f.stride, f.dilation, f.padding)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0, dtype=x.dtype)


def upsample_nearest(x: np.ndarray, factor: int = 2) -> np.ndarray:
    return x.repeat(factor, axis=2).repeat(factor, axis=3)


def he_conv(rng: np.random.Generator, n_out: int, c_in: int, kh: int, kw: int,
            gain: float = 2.0, **kw_args) -> ConvFilter:
    std = np.sqrt(gain / (c_in * kh * kw))
    weight = rng.normal(0.0, std, size=(n_out, c_in, kh, kw))
    bias = rng.normal(0.0, 0.01, size=n_out)
    return ConvFilter(weight, bias, **kw_args)
