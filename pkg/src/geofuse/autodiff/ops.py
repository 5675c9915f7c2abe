"""Differentiable kernels.

Every function takes :class:`Tensor` (or array-like constants) and returns a
new :class:`Tensor` wired into the tape. Image tensors are NCHW.
Broadcasting in the elementwise ops follows numpy rules (trailing axes are
aligned); the backward pass sums gradients back over broadcast axes.
"""
from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import ContractViolation
from .tensor import Tensor, as_tensor, make_node

__all__ = [
    "add", "sub", "mul", "scale", "relu", "sigmoid", "exp",
    "reshape", "transpose", "concat", "sum", "mean", "broadcast_to",
    "conv2d", "channel_pool", "frobenius_reduce", "softmax",
    "batchnorm2d", "layernorm", "maxpool2", "upsample_nearest2",
    "cross_entropy", "uncertainty_loss", "BatchNormState",
]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        b = as_tensor(b, like=a)
    elif isinstance(b, Tensor):
        a = as_tensor(a, like=b)
    else:
        a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"shapes {a.shape} and {b.shape} do not broadcast") from None
    return a, b


# ----------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), backward, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_node(x.data * x.dtype.type(c), (x,), lambda g: (g * x.dtype.type(c),), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                     lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_node(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,), "exp")


# ----------------------------------------------------------------------------
# shape plumbing

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ContractViolation(f"cannot reshape {src} to {tuple(shape)}") from None
    return make_node(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    src = x.shape
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ContractViolation(f"cannot broadcast {src} to {shape}") from None
    return make_node(out, (x,), lambda g: (_unbroadcast(g, src),), "broadcast_to")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractViolation("concat of an empty list")
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                a != b for i, (a, b) in enumerate(zip(t.shape, tensors[0].shape)) if i != axis):
            raise ContractViolation(
                f"concat along axis {axis}: incompatible shapes {tensors[0].shape} and {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                     backward, "concat")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype)
    src = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).astype(x.dtype),)

    return make_node(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ----------------------------------------------------------------------------
# convolution

def _conv_pad(k: int, padding: str) -> int:
    if padding == "same":
        return (k - 1) // 2
    if padding == "valid":
        return 0
    raise ContractViolation(f"padding must be 'same' or 'valid', got {padding!r}")


_IM2COL_LIMIT = 1 << 25  # elements in the column buffer before falling back to per-tap products


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D cross-correlation of ``x[B,Cin,H,W]`` with ``weight[Cout,Cin,kh,kw]``.

    "same" pads ``(k-1)//2`` zeros on each side, so with stride ``s`` the output
    is ``ceil(H/s)``. Large-``Cout`` layers use an im2col product; layers with
    very few output channels (the attention convs) or oversized column
    buffers accumulate one product per kernel tap instead.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ContractViolation(f"conv2d expects 4-d input and weight, got {x.shape}, {weight.shape}")
    B, C, H, W = x.shape
    Co, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ContractViolation(f"conv2d: input has {C} channels, weight expects {Ci}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractViolation(f"conv2d: kernel dims must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ContractViolation(f"conv2d: stride must be >= 1, got {stride}")
    if bias is not None and bias.shape != (Co,):
        raise ContractViolation(f"conv2d: bias shape {bias.shape} != ({Co},)")
    ph, pw = _conv_pad(kh, padding), _conv_pad(kw, padding)
    Ho = (H + 2 * ph - kh) // stride + 1
    Wo = (W + 2 * pw - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ContractViolation(f"conv2d: input {H}x{W} too small for kernel {kh}x{kw}")

    dtype = np.result_type(x.dtype, weight.dtype)
    xp = np.zeros((B, H + 2 * ph, W + 2 * pw, C), dtype=dtype)
    xp[:, ph:ph + H, pw:pw + W, :] = x.data.transpose(0, 2, 3, 1)
    hs, ws = (Ho - 1) * stride + 1, (Wo - 1) * stride + 1
    M = B * Ho * Wo
    wmat = weight.data.transpose(2, 3, 1, 0).reshape(kh * kw * C, Co)  # rows ordered (i, j, c)
    per_tap = Co < 4 or M * kh * kw * C > _IM2COL_LIMIT

    def tap(i, j):
        return np.ascontiguousarray(xp[:, i:i + hs:stride, j:j + ws:stride, :]).reshape(M, C)

    cols = None
    if per_tap:
        out = np.zeros((M, Co), dtype=dtype)
        for i in range(kh):
            for j in range(kw):
                r = (i * kw + j) * C
                out += tap(i, j) @ wmat[r:r + C]
    else:
        cols = np.stack([tap(i, j) for i in range(kh) for j in range(kw)], axis=1).reshape(M, -1)
        out = cols @ wmat
    if bias is not None:
        out += bias.data
    result = np.ascontiguousarray(out.reshape(B, Ho, Wo, Co).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(M, Co)
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            if per_tap:
                for i in range(kh):
                    for j in range(kw):
                        r = (i * kw + j) * C
                        gxp[:, i:i + hs:stride, j:j + ws:stride, :] += (
                            g2 @ wmat[r:r + C].T).reshape(B, Ho, Wo, C)
            else:
                gcols = (g2 @ wmat.T).reshape(B, Ho, Wo, kh * kw, C)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + hs:stride, j:j + ws:stride, :] += gcols[:, :, :, i * kw + j]
            gx = np.ascontiguousarray(gxp[:, ph:ph + H, pw:pw + W, :].transpose(0, 3, 1, 2))
        if weight.requires_grad:
            if per_tap:
                gwm = np.empty_like(wmat)
                for i in range(kh):
                    for j in range(kw):
                        r = (i * kw + j) * C
                        gwm[r:r + C] = tap(i, j).T @ g2
            else:
                gwm = cols.T @ g2
            gw = gwm.reshape(kh, kw, C, Co).transpose(3, 2, 0, 1).astype(weight.dtype)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0, dtype=np.float64).astype(bias.dtype)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(result, parents, backward, "conv2d")


# ----------------------------------------------------------------------------
# pooling along channels / space

def channel_pool(x: Tensor, mode: str, axis: int = 1) -> Tensor:
    """Max or mean over the channel axis, keeping it as a size-1 axis.

    Max routes the gradient to the first maximal channel. The mean sums the
    channels in sorted order, so it is exactly invariant to channel permutations.
    """
    if mode not in ("max", "avg"):
        raise ContractViolation(f"channel_pool mode must be 'max' or 'avg', got {mode!r}")
    axis = axis % x.ndim
    n = x.shape[axis]
    if n < 1:
        raise ContractViolation("channel_pool over an empty channel axis")
    if mode == "avg":
        out = np.sort(x.data, axis=axis).mean(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)

        def backward(g):
            return (np.broadcast_to(g / x.dtype.type(n), x.shape).astype(x.dtype),)

        return make_node(out, (x,), backward, "channel_pool_avg")

    idx = np.argmax(x.data, axis=axis)
    out = np.expand_dims(np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis), axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), g, axis=axis)
        return (gx,)

    return make_node(out, (x,), backward, "channel_pool_max")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first element in row-major order."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ContractViolation(f"maxpool2 needs even spatial dims, got {H}x{W}")
    blocks = x.data.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(B, C, H // 2, W // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros((B, C, H // 2, W // 2, 4), dtype=x.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(B, C, H, W),)

    return make_node(np.ascontiguousarray(out), (x,), backward, "maxpool2")


def upsample_nearest2(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return make_node(out, (x,), backward, "upsample_nearest2")


# ----------------------------------------------------------------------------
# attention-specific reductions

def frobenius_reduce(feature: Tensor, attention: Tensor) -> Tensor:
    """Per-channel Frobenius inner product ``k[c] = sum_hw f[c,h,w] * P[h,w]``.

    ``feature`` is ``[..., C, H, W]`` and ``attention`` is ``[..., H, W]``;
    the leading axes broadcast against each other, so a stack of panorama
    feature maps ``[B,1,K,C,H,W]`` can be reduced against per-target maps
    ``[B,T,K,H,W]`` in one call, giving ``[B,T,K,C]``.
    """
    if feature.ndim < 3 or attention.ndim < 2:
        raise ContractViolation(
            f"frobenius_reduce expects [...,C,H,W] and [...,H,W], got {feature.shape}, {attention.shape}")
    if feature.shape[-2:] != attention.shape[-2:]:
        raise ContractViolation(
            f"frobenius_reduce: spatial dims {feature.shape[-2:]} != {attention.shape[-2:]}")
    lead_f, lead_a = feature.shape[:-3], attention.shape[:-2]
    try:
        lead = np.broadcast_shapes(lead_f, lead_a)
    except ValueError:
        raise ContractViolation(
            f"frobenius_reduce: leading dims {lead_f} and {lead_a} do not broadcast") from None
    C, H, W = feature.shape[-3:]
    f = feature.data.reshape(lead_f + (C, H * W))
    p = attention.data.reshape(lead_a + (H * W, 1))
    acc = np.float64 if feature.dtype == np.float64 else feature.dtype
    out = np.matmul(f.astype(acc, copy=False), p.astype(acc, copy=False))[..., 0]
    out = np.broadcast_to(out, lead + (C,)).astype(np.result_type(feature.dtype, attention.dtype))

    def backward(g):
        gf = gp = None
        g3 = g[..., :, None]  # [..., C, 1]
        if feature.requires_grad:
            full = g3 * attention.data.reshape(lead_a + (1, H * W))
            gf = _unbroadcast(full, lead_f + (C, H * W)).reshape(feature.shape)
        if attention.requires_grad:
            gfull = np.matmul(np.swapaxes(g3, -1, -2), f)[..., 0, :]  # [..., HW]
            gp = _unbroadcast(gfull, lead_a + (H * W,)).reshape(attention.shape)
        return gf, gp

    return make_node(np.ascontiguousarray(out), (feature, attention), backward, "frobenius_reduce")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically shifted softmax. ``-inf`` entries get exactly zero weight.

    Raises if every entry along ``axis`` is ``-inf`` for some slice.
    """
    if x.shape[axis] < 1:
        raise ContractViolation("softmax over an empty axis")
    z = x.data.astype(np.float64)
    m = z.max(axis=axis, keepdims=True)
    if np.isneginf(m).any():
        raise ContractViolation("softmax: every entry masked, no available panoramas")
    e = np.exp(z - m)
    s64 = e / e.sum(axis=axis, keepdims=True)
    s = s64.astype(x.dtype)

    def backward(g):
        gs = g.astype(np.float64) * s64
        return ((gs - s64 * gs.sum(axis=axis, keepdims=True)).astype(x.dtype),)

    return make_node(s, (x,), backward, "softmax")


# ----------------------------------------------------------------------------
# normalisation

class BatchNormState:
    """Running statistics carried between batchnorm calls (not differentiated)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                mode: str = "train") -> Tensor:
    """Per-channel normalisation of ``x[B,C,H,W]`` followed by ``gamma * x + beta``."""
    if x.ndim != 4:
        raise ContractViolation(f"batchnorm2d expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ContractViolation(f"batchnorm2d: affine params must be ({C},)")
    bshape = (1, C, 1, 1)
    if mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var.astype(np.float64) + state.eps)
        xhat = ((x.data - state.running_mean.reshape(bshape)) * inv.reshape(bshape)).astype(x.dtype)
        out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

        def backward(g):
            gx = (g * (gamma.data * inv).reshape(bshape)).astype(x.dtype)
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return make_node(out.astype(x.dtype), (x, gamma, beta), backward, "batchnorm2d_eval")
    if mode != "train":
        raise ContractViolation(f"batchnorm2d mode must be 'train' or 'eval', got {mode!r}")
    n = B * H * W
    if n < 2:
        raise ContractViolation("batchnorm2d: train mode needs at least 2 values per channel")
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=(0, 2, 3))
    var = x64.var(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat64 = (x64 - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat64 * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    m = state.momentum
    state.running_mean = ((1 - m) * state.running_mean + m * mu).astype(state.running_mean.dtype)
    unbiased = var * n / (n - 1)
    state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(state.running_var.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        gbeta = g64.sum(axis=(0, 2, 3))
        ggamma = (g64 * xhat64).sum(axis=(0, 2, 3))
        gxhat = g64 * gamma.data.astype(np.float64).reshape(bshape)
        gx = (inv.reshape(bshape) / n) * (
            n * gxhat
            - gxhat.sum(axis=(0, 2, 3), keepdims=True)
            - xhat64 * (gxhat * xhat64).sum(axis=(0, 2, 3), keepdims=True))
        return gx.astype(x.dtype), ggamma.astype(gamma.dtype), gbeta.astype(beta.dtype)

    return make_node(out.astype(x.dtype), (x, gamma, beta), backward, "batchnorm2d")


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, n_axes: int, eps: float = 1e-5) -> Tensor:
    """Normalise over the trailing ``n_axes`` axes; ``gamma``/``beta`` have that trailing shape."""
    norm_shape = x.shape[-n_axes:]
    if gamma.shape != norm_shape or beta.shape != norm_shape:
        raise ContractViolation(
            f"layernorm: affine shape {gamma.shape} != normalised shape {norm_shape}")
    axes = tuple(range(x.ndim - n_axes, x.ndim))
    n = int(np.prod(norm_shape))
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=axes, keepdims=True)
    var = x64.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        g64 = g.astype(np.float64)
        lead = tuple(range(x.ndim - n_axes))
        gbeta = g64.sum(axis=lead)
        ggamma = (g64 * xhat).sum(axis=lead)
        gxhat = g64 * gamma.data
        gx = (inv / n) * (n * gxhat - gxhat.sum(axis=axes, keepdims=True)
                          - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        return gx.astype(x.dtype), ggamma.astype(gamma.dtype), gbeta.astype(beta.dtype)

    return make_node(out.astype(x.dtype), (x, gamma, beta), backward, "layernorm")


# ----------------------------------------------------------------------------
# losses

def _ignore_mask(labels: np.ndarray, ignore_label) -> np.ndarray:
    if ignore_label is None:
        return np.ones(labels.shape, dtype=bool)
    ignore = np.atleast_1d(np.asarray(list(ignore_label) if isinstance(ignore_label, (set, frozenset, list, tuple))
                                      else [ignore_label]))
    return ~np.isin(labels, ignore)


def cross_entropy(logits: Tensor, labels, ignore_label=255) -> Tensor:
    """Mean pixel cross-entropy of ``logits[B,K,H,W]`` against integer ``labels[B,H,W]``.

    ``ignore_label`` may be a single label or a collection; those pixels add
    neither loss nor gradient.
    """
    labels = np.asarray(labels)
    B, K, H, W = logits.shape
    if labels.shape != (B, H, W):
        raise ContractViolation(f"cross_entropy: labels {labels.shape} != {(B, H, W)}")
    valid = _ignore_mask(labels, ignore_label)
    n = int(valid.sum())
    if n == 0:
        raise ContractViolation("cross_entropy: every pixel is ignored, loss is empty")
    bad = valid & ((labels < 0) | (labels >= K))
    if bad.any():
        raise ContractViolation(f"cross_entropy: label {labels[bad][0]} outside [0,{K})")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(z, safe[:, None], axis=1)[:, 0]
    loss = ((lse - picked) * valid).sum() / n

    def backward(g):
        p = np.exp(z - lse[:, None])
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
        gl = (p - onehot) * valid[:, None] * (float(g) / n)
        return (gl.astype(logits.dtype),)

    return make_node(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


def uncertainty_loss(pred_mean: Tensor, log_var: Tensor, target, mask) -> Tensor:
    """Heteroscedastic regression loss ``0.5*exp(-s)*(y - yhat)^2 + 0.5*s`` averaged over ``mask``."""
    target = np.asarray(target)
    mask = np.asarray(mask, dtype=bool)
    if pred_mean.shape != log_var.shape or pred_mean.shape != target.shape or mask.shape != target.shape:
        raise ContractViolation(
            f"uncertainty_loss: shapes {pred_mean.shape}, {log_var.shape}, {target.shape}, {mask.shape} differ")
    n = int(mask.sum())
    if n == 0:
        raise ContractViolation("uncertainty_loss: empty mask")
    r = pred_mean.data.astype(np.float64) - target
    s = log_var.data.astype(np.float64)
    es = np.exp(-s)
    per = 0.5 * es * r * r + 0.5 * s
    loss = (per * mask).sum() / n

    def backward(g):
        c = float(g) / n
        gm = (es * r * mask * c).astype(pred_mean.dtype)
        gs = ((-0.5 * es * r * r + 0.5) * mask * c).astype(log_var.dtype)
        return gm, gs

    return make_node(np.asarray(loss, dtype=pred_mean.dtype), (pred_mean, log_var), backward,
                     "uncertainty_loss")
