"""
Differentiable primitives and layers built on ``cst_seld.tensor``.

Convolutions work on ``(B, C, T, F)`` tensors with zero padding that keeps
``T x F`` unchanged; pooling, unfold and fold act on the last two axes and
accept any number of leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from cst_seld.errors import ConfigurationError
from cst_seld.tensor import Tensor

BN_MOMENTUM = 0.9
NORM_EPS = 1e-5


# ----------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------


def softmax_last(x: Tensor) -> Tensor:
    """
    Softmax over the last axis, stabilised by max-subtraction.

    Parameters
    ----------
    x : Tensor
        Input with a last extent of at least one.

    Returns
    -------
    Tensor
        Nonnegative values summing to one along the last axis.
    """
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(s, (x,), "softmax", backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    a = x.data
    cdf = 0.5 * (1.0 + erf(a / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
    out = (a * cdf).astype(a.dtype)

    def backward(g: np.ndarray):
        return ((g * (cdf + a * pdf)).astype(a.dtype),)

    return Tensor.from_op(out, (x,), "gelu", backward)


def relu(x: Tensor) -> Tensor:
    return x.relu()


def tanh(x: Tensor) -> Tensor:
    return x.tanh()


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """
    Inverted dropout; identity in evaluation mode or when ``rate == 0``.

    Parameters
    ----------
    x : Tensor
        Input activations.
    rate : float
        Drop probability in [0, 1).
    rng : numpy.random.Generator, optional
        Seeded generator for the keep mask; required in train mode.
    train : bool
        Whether masks are drawn.
    """
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ConfigurationError("Dropout in train mode needs a seeded generator.")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep


# ----------------------------------------------------------------------
# normalisation
# ----------------------------------------------------------------------


def _param_shape(ndim: int, axis: int, size: int) -> tuple[int, ...]:
    shape = [1] * ndim
    shape[axis] = size
    return tuple(shape)


def layer_norm(
    x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1, eps: float = NORM_EPS
) -> Tensor:
    """
    Layer normalisation over a single axis.

    Parameters
    ----------
    x : Tensor
        Input.
    gamma, beta : Tensor
        Scale and offset with the extent of ``axis``.
    axis : int, default -1
        Normalised axis (the embedding axis).
    eps : float, default 1e-5
        Variance floor.
    """
    axis = axis % x.ndim
    mean = x.mean(axis=axis, keepdims=True)
    centred = x - mean
    var = (centred * centred).mean(axis=axis, keepdims=True)
    normed = centred / (var + eps).sqrt()
    shape = _param_shape(x.ndim, axis, x.shape[axis])
    return normed * gamma.reshape(shape) + beta.reshape(shape)


@dataclass
class BatchNormState:
    """
    Running statistics of a batch-norm layer.

    Attributes
    ----------
    running_mean : np.ndarray
        Per-channel mean, updated in train mode.
    running_var : np.ndarray
        Per-channel (biased) variance, updated in train mode.
    """

    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def fresh(cls, channels: int, dtype: np.dtype) -> BatchNormState:
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    train: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = NORM_EPS,
) -> Tensor:
    """
    Batch normalisation over every axis except the channel axis 1.

    In train mode batch statistics are used and the running statistics are
    blended as ``momentum * running + (1 - momentum) * batch``; in
    evaluation mode the running statistics are used as constants.
    """
    axes = tuple(a for a in range(x.ndim) if a != 1)
    shape = _param_shape(x.ndim, 1, x.shape[1])
    if train:
        mean = x.mean(axis=axes, keepdims=True)
        centred = x - mean
        var = (centred * centred).mean(axis=axes, keepdims=True)
        normed = centred / (var + eps).sqrt()
        state.running_mean[...] = (
            momentum * state.running_mean + (1.0 - momentum) * mean.data.reshape(-1)
        )
        state.running_var[...] = (
            momentum * state.running_var + (1.0 - momentum) * var.data.reshape(-1)
        )
    else:
        mean = state.running_mean.reshape(shape).astype(x.dtype)
        inv_std = 1.0 / np.sqrt(state.running_var.reshape(shape).astype(x.dtype) + eps)
        normed = (x - mean) * inv_std
    return normed * gamma.reshape(shape) + beta.reshape(shape)


# ----------------------------------------------------------------------
# convolutions
# ----------------------------------------------------------------------


def _pad_tf(a: np.ndarray, ph: int, pw: int) -> np.ndarray:
    widths = [(0, 0)] * (a.ndim - 2) + [(ph, ph), (pw, pw)]
    return np.pad(a, widths)


def conv2d(x: Tensor, weight: Tensor) -> Tensor:
    """
    Dense 2-D convolution, stride 1, zero padding preserving ``T x F``.

    Parameters
    ----------
    x : Tensor
        Input of shape ``(B, C_in, T, F)``.
    weight : Tensor
        Kernel of shape ``(C_out, C_in, k, k)`` with odd ``k``.

    Returns
    -------
    Tensor
        Output of shape ``(B, C_out, T, F)``.
    """
    xd, w = x.data, weight.data
    kh, kw = w.shape[2:]
    ph, pw = kh // 2, kw // 2
    win = sliding_window_view(_pad_tf(xd, ph, pw), (kh, kw), axis=(2, 3))
    out = np.einsum("bctfij,ocij->botf", win, w, optimize=True)

    def backward(g: np.ndarray):
        gw = np.einsum("bctfij,botf->ocij", win, g, optimize=True)
        gwin = sliding_window_view(_pad_tf(g, ph, pw), (kh, kw), axis=(2, 3))
        gx = np.einsum("botfij,ocij->bctf", gwin, w[:, :, ::-1, ::-1], optimize=True)
        return gx, gw

    return Tensor.from_op(out, (x, weight), "conv2d", backward)


def depthwise_conv2d(x: Tensor, weight: Tensor) -> Tensor:
    """
    Depthwise 2-D convolution, one ``k x k`` kernel per channel.

    Parameters
    ----------
    x : Tensor
        Input of shape ``(B, C, T, F)``.
    weight : Tensor
        Kernels of shape ``(C, k, k)``.
    """
    xd, w = x.data, weight.data
    kh, kw = w.shape[1:]
    ph, pw = kh // 2, kw // 2
    win = sliding_window_view(_pad_tf(xd, ph, pw), (kh, kw), axis=(2, 3))
    out = np.einsum("bctfij,cij->bctf", win, w, optimize=True)

    def backward(g: np.ndarray):
        gw = np.einsum("bctfij,bctf->cij", win, g, optimize=True)
        gwin = sliding_window_view(_pad_tf(g, ph, pw), (kh, kw), axis=(2, 3))
        gx = np.einsum("bctfij,cij->bctf", gwin, w[:, ::-1, ::-1], optimize=True)
        return gx, gw

    return Tensor.from_op(out, (x, weight), "depthwise_conv2d", backward)


def pointwise_conv(x: Tensor, weight: Tensor) -> Tensor:
    """
    1x1 convolution mixing channels.

    Parameters
    ----------
    x : Tensor
        Input of shape ``(B, C_in, T, F)``.
    weight : Tensor
        Matrix of shape ``(C_out, C_in)``.
    """
    xd, w = x.data, weight.data
    out = np.einsum("oc,bctf->botf", w, xd, optimize=True)

    def backward(g: np.ndarray):
        gx = np.einsum("oc,botf->bctf", w, g, optimize=True)
        gw = np.einsum("botf,bctf->oc", g, xd, optimize=True)
        return gx, gw

    return Tensor.from_op(out, (x, weight), "pointwise_conv", backward)


def channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias to a ``(B, C, ...)`` tensor."""
    return x + bias.reshape(_param_shape(x.ndim, 1, bias.shape[0]))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight + bias``."""
    out = x @ weight
    return out if bias is None else out + bias


# ----------------------------------------------------------------------
# pooling
# ----------------------------------------------------------------------


def _check_pool(shape: tuple[int, ...], pt: int, pf: int, what: str) -> None:
    if pt <= 0 or pf <= 0:
        raise ConfigurationError(f"{what} kernel ({pt}, {pf}) must be positive.")
    if shape[-2] % pt:
        raise ConfigurationError(
            f"{what} kernel {pt} does not divide the time axis extent {shape[-2]}."
        )
    if shape[-1] % pf:
        raise ConfigurationError(
            f"{what} kernel {pf} does not divide the frequency axis extent {shape[-1]}."
        )


def _tile(a: np.ndarray, pt: int, pf: int) -> np.ndarray:
    lead = a.shape[:-2]
    t, f = a.shape[-2:]
    n = len(lead)
    tiles = a.reshape(*lead, t // pt, pt, f // pf, pf)
    tiles = tiles.transpose(*range(n), n, n + 2, n + 1, n + 3)
    return tiles.reshape(*lead, t // pt, f // pf, pt * pf)


def _untile(tiles: np.ndarray, pt: int, pf: int) -> np.ndarray:
    lead = tiles.shape[:-3]
    nt, nf = tiles.shape[-3:-1]
    n = len(lead)
    a = tiles.reshape(*lead, nt, nf, pt, pf)
    a = a.transpose(*range(n), n, n + 2, n + 1, n + 3)
    return a.reshape(*lead, nt * pt, nf * pf)


def max_pool2d(x: Tensor, kernel: tuple[int, int]) -> Tensor:
    """
    Max pooling over the last two axes with kernel equal to stride.

    The gradient of each window goes to its first maximal element.
    """
    pt, pf = kernel
    _check_pool(x.shape, pt, pf, "Max-pool")
    if (pt, pf) == (1, 1):
        return x
    tiles = _tile(x.data, pt, pf)
    idx = tiles.argmax(axis=-1)[..., None]
    out = np.take_along_axis(tiles, idx, axis=-1)[..., 0]

    def backward(g: np.ndarray):
        gt = np.zeros_like(tiles)
        np.put_along_axis(gt, idx, g[..., None], axis=-1)
        return (_untile(gt, pt, pf),)

    return Tensor.from_op(out, (x,), "max_pool2d", backward)


def avg_pool2d(x: Tensor, kernel: tuple[int, int]) -> Tensor:
    """Average pooling over the last two axes with kernel equal to stride."""
    pt, pf = kernel
    _check_pool(x.shape, pt, pf, "Average-pool")
    if (pt, pf) == (1, 1):
        return x
    lead = x.shape[:-2]
    t, f = x.shape[-2:]
    n = len(lead)
    tiles = x.reshape(*lead, t // pt, pt, f // pf, pf)
    return tiles.mean(axis=(n + 1, n + 3))


# ----------------------------------------------------------------------
# unfold / fold
# ----------------------------------------------------------------------


def _unfold_array(a: np.ndarray, kt: int, kf: int) -> np.ndarray:
    lead = a.shape[:-3]
    c, t, f = a.shape[-3:]
    n = len(lead)
    b = a.reshape(*lead, c, t // kt, kt, f // kf, kf)
    b = b.transpose(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return np.ascontiguousarray(b).reshape(*lead, c * kt * kf, t // kt, f // kf)


def _fold_array(a: np.ndarray, kt: int, kf: int) -> np.ndarray:
    lead = a.shape[:-3]
    ck, nt, nf = a.shape[-3:]
    n = len(lead)
    c = ck // (kt * kf)
    b = a.reshape(*lead, c, kt, kf, nt, nf)
    b = b.transpose(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return np.ascontiguousarray(b).reshape(*lead, c, nt * kt, nf * kf)


def unfold(x: Tensor, kt: int, kf: int) -> Tensor:
    """
    Pack non-overlapping ``kt x kf`` patches into the channel axis.

    Element ``(c*kt*kf + i*kf + j, p, q)`` of the output equals element
    ``(c, p*kt + i, q*kf + j)`` of the input.

    Parameters
    ----------
    x : Tensor
        Input of shape ``(..., C, T, F)``.
    kt, kf : int
        Patch extents; must divide ``T`` and ``F``.

    Returns
    -------
    Tensor
        Shape ``(..., C*kt*kf, T/kt, F/kf)``.

    Raises
    ------
    ConfigurationError
        If a patch extent is non-positive or does not divide its axis.

    Examples
    --------
    >>> unfold(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2).data.ravel()
    array([1., 2., 3., 4.])
    """
    if x.ndim < 3:
        raise ConfigurationError(f"unfold needs (..., C, T, F) input, got shape {x.shape}.")
    _check_pool(x.shape, kt, kf, "Unfold")
    out = _unfold_array(x.data, kt, kf)
    return Tensor.from_op(out, (x,), "unfold", lambda g: (_fold_array(g, kt, kf),))


def fold(x: Tensor, kt: int, kf: int) -> Tensor:
    """
    Inverse of ``unfold``: scatter packed patches back onto the T-F plane.

    Raises
    ------
    ConfigurationError
        If the channel extent is not a multiple of ``kt * kf``.
    """
    if x.ndim < 3:
        raise ConfigurationError(f"fold needs (..., C*kt*kf, T, F) input, got {x.shape}.")
    if kt <= 0 or kf <= 0:
        raise ConfigurationError(f"Fold kernel ({kt}, {kf}) must be positive.")
    if x.shape[-3] % (kt * kf):
        raise ConfigurationError(
            f"Fold kernel {kt}x{kf} does not divide the channel axis extent {x.shape[-3]}."
        )
    out = _fold_array(x.data, kt, kf)
    return Tensor.from_op(out, (x,), "fold", lambda g: (_unfold_array(g, kt, kf),))


# ----------------------------------------------------------------------
# joins and reductions
# ----------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``."""
    arrays = [t.data for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(out, tuple(tensors), "concat", backward)


def median(x: Tensor, axis: int = 0) -> Tensor:
    """
    Median along ``axis``; even counts average the two middle elements.

    The gradient flows to the middle element (or half to each of the two
    middle elements) of the stable sort order.
    """
    axis = axis % x.ndim
    n = x.shape[axis]
    order = np.argsort(x.data, axis=axis, kind="stable")
    if n % 2:
        picks = [np.take(order, [n // 2], axis=axis)]
    else:
        picks = [np.take(order, [n // 2 - 1], axis=axis), np.take(order, [n // 2], axis=axis)]
    values = [np.take_along_axis(x.data, p, axis=axis) for p in picks]
    out = values[0] if n % 2 else 0.5 * (values[0] + values[1])
    out = np.squeeze(out, axis=axis)
    weight = 1.0 / len(picks)

    def backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        ge = np.expand_dims(g, axis) * weight
        for p in picks:
            np.put_along_axis(full, p, np.take_along_axis(full, p, axis=axis) + ge, axis=axis)
        return (full,)

    return Tensor.from_op(out, (x,), "median", backward)


def norm(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; zero vectors get zero gradient."""
    n = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)

    def backward(g: np.ndarray):
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.where(n > 0, ge * x.data / safe, 0.0).astype(x.dtype),)

    out = n if keepdims else np.squeeze(n, axis=axis)
    return Tensor.from_op(out, (x,), "norm", backward)
