"""Minimal dense tensor library with tape-based reverse-mode autodiff.

Activations are NCHW arrays; parameters (biases, norm affines) may be 1-D.
Operations record onto the active :class:`Tape` only when at least one input
requires a gradient, so inference runs without any graph bookkeeping.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

_state = threading.local()
_default_dtype = np.float32


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default floating-point dtype (float64 for gradient checks)."""
    old = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _default_dtype)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"


def _not_scalar(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside are recorded in
    order, which is a valid topological order by construction.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def record(self, inputs, output, backward) -> None:
        self.nodes.append(_Node(inputs, output, backward))

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` of every leaf reachable from ``loss``.

        Gradients accumulate into existing ``.grad`` buffers; callers zero them.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = set()
        for node in self.nodes:
            produced.add(id(node.output))
        if id(loss) not in produced:
            raise ValueError("loss was not recorded on this tape")
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    # leaf: flush immediately, nothing upstream will consume it
                    g_leaf = grads.pop(key)
                    t.grad = g_leaf.copy() if t.grad is None else t.grad + g_leaf


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    tape = tape or active_tape()
    if tape is None:
        raise RuntimeError("no tape to differentiate; run the forward pass inside `with Tape():`")
    tape.backward(loss)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"{op} produced non-finite values")


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward: Callable) -> Tensor:
    _check_finite(out, op)
    needs = any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs, dtype=out.dtype)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(tuple(inputs), result, backward)
    return result


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- convolution


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) strided view, no copy
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return view[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]


def _conv_forward(x, w, stride, padding, groups):
    n, cin, h, wd = x.shape
    cout, cpg, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    g = groups
    opg = cout // g
    if cpg == 1 and opg == 1:
        # depthwise: accumulate over kernel taps
        out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                out += xp[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] * w[:, 0, i, j][None, :, None, None]
        return out, None
    if kh == 1 and kw == 1:
        cols = xp[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]
        cols = cols.reshape(n, g, cpg, ho * wo)
        wm = w.reshape(g, opg, cpg)
        out = np.matmul(wm[None], cols)  # (n, g, opg, ho*wo)
        return out.reshape(n, cout, ho, wo), cols
    win = _windows(xp, kh, kw, sh, sw, ho, wo)  # n, cin, ho, wo, kh, kw
    cols = win.reshape(n, g, cpg, ho, wo, kh, kw).transpose(0, 1, 2, 5, 6, 3, 4)
    cols = cols.reshape(n, g, cpg * kh * kw, ho * wo)
    wm = w.reshape(g, opg, cpg * kh * kw)
    out = np.matmul(wm[None], cols)
    return out.reshape(n, cout, ho, wo), cols


def _conv_backward(gout, x, w, cols, stride, padding, groups):
    n, cin, h, wd = x.shape
    cout, cpg, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    _, _, ho, wo = gout.shape
    g = groups
    opg = cout // g
    hp, wp = h + 2 * ph, wd + 2 * pw
    gxp = np.zeros((n, cin, hp, wp), dtype=x.dtype)
    if cols is None:
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
        gw = np.empty_like(w)
        for i in range(kh):
            for j in range(kw):
                src = xp[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw]
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", gout, src)
                gxp[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += gout * w[:, 0, i, j][None, :, None, None]
    else:
        go = gout.reshape(n, g, opg, ho * wo)
        gw = np.matmul(go, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
        wm = w.reshape(g, opg, cpg * kh * kw)
        gcols = np.matmul(wm.transpose(0, 2, 1)[None], go)  # n, g, cpg*kh*kw, ho*wo
        gcols = gcols.reshape(n, cin, kh, kw, ho, wo)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += gcols[:, :, i, j]
    gx = gxp[:, :, ph : ph + h, pw : pw + wd] if (ph or pw) else gxp
    return gx, gw


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding and channel groups."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, wd = x.shape
    cout, cpg, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ValueError(f"groups={groups} must divide in_channels={cin} and out_channels={cout}")
    if cpg != cin // groups:
        raise ValueError(f"weight expects {cpg * groups} input channels, input has {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")
    stride, padding = _pair(stride), _pair(padding)
    if h + 2 * padding[0] < kh or wd + 2 * padding[1] < kw:
        raise ValueError("kernel larger than padded input")
    out, cols = _conv_forward(x.data, weight.data, stride, padding, groups)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def back(g):
        gx, gw = _conv_backward(g, x.data, weight.data, cols, stride, padding, groups)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _emit("conv2d", inputs, out, back)


def depthwise_separable(x: Tensor, dw_weight: Tensor, pw_weight: Tensor, dw_bias: Tensor | None = None, pw_bias: Tensor | None = None) -> Tensor:
    """Per-channel 3x3 conv (padding 1) followed by a 1x1 channel-mixing conv."""
    c = x.shape[1]
    kh = dw_weight.shape[2]
    y = conv2d(x, dw_weight, dw_bias, padding=kh // 2, groups=c)
    return conv2d(y, pw_weight, pw_bias)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be (N, C, 1, 1) broadcast over ``a``."""
    _check_broadcast(a, b)
    out = a.data + b.data

    def back(g):
        gb = g if b.shape == g.shape else _reduce_to(g, b.shape)
        ga = g if a.shape == g.shape else _reduce_to(g, a.shape)
        return ga, gb

    return _emit("add", (a, b), out, back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be (N, C, 1, 1) broadcast over ``a``."""
    _check_broadcast(a, b)
    out = a.data * b.data

    def back(g):
        ga = _reduce_to(g * b.data, a.shape)
        gb = _reduce_to(g * a.data, b.shape)
        return ga, gb

    return _emit("mul", (a, b), out, back)


def scale(a: Tensor, k: float) -> Tensor:
    out = a.data * a.data.dtype.type(k)
    return _emit("scale", (a,), out, lambda g: (g * a.data.dtype.type(k),))


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) != g.ndim:
        raise ValueError(f"cannot reduce gradient {g.shape} to {shape}")
    axes = tuple(i for i, (s, gs) in enumerate(zip(shape, g.shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if b.data.ndim == 4 and a.data.ndim == 4 and b.shape[2:] == (1, 1) and b.shape[:2] == a.shape[:2]:
        return
    raise ValueError(f"unsupported broadcast {b.shape} over {a.shape}")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x)."""
    d = x.data
    cdf = 0.5 * (1.0 + erf(d * _INV_SQRT2))
    out = d * cdf

    def back(g):
        pdf = np.exp(-0.5 * d * d) * _INV_SQRT_2PI
        return (g * (cdf + d * pdf),)

    return _emit("gelu", (x,), out, back)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def back(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", (x,), out, back)


def clamp(x: Tensor, lo: float = 0.0, hi: float = 1.0) -> Tensor:
    """Clip to ``[lo, hi]``; gradient passes only where the input is inside."""
    d = x.data
    out = np.clip(d, lo, hi)
    inside = (d >= lo) & (d <= hi)
    return _emit("clamp", (x,), out, lambda g: (g * inside,))


# ---------------------------------------------------------------- normalisation


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel spatial normalisation with population variance."""
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},)")
    d = x.data
    mu = d.mean(axis=(2, 3), keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + d.dtype.type(eps))
    xhat = xc * inv
    gm = gamma.data[None, :, None, None]
    out = xhat * gm + beta.data[None, :, None, None]

    def back(g):
        gb = g.sum(axis=(0, 2, 3))
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gxh = g * gm
        m = h * w
        gx = inv / m * (m * gxh - gxh.sum(axis=(2, 3), keepdims=True) - xhat * (gxh * xhat).sum(axis=(2, 3), keepdims=True))
        return gx, gg, gb

    return _emit("instance_norm", (x, gamma, beta), out, back)


# ---------------------------------------------------------------- resampling


def _bilinear_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        src = max((o + 0.5) / factor - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m.astype(dtype)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor, half-pixel centres (align_corners=False)."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return _emit("bilinear_upsample", (x,), x.data.copy(), lambda g: (g,))
    _, _, h, w = x.shape
    mh = _bilinear_matrix(h, factor, x.dtype)
    mw = _bilinear_matrix(w, factor, x.dtype)
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def back(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return _emit("bilinear_upsample", (x,), out, back)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r); channel c*r*r + i*r + j lands at (h*r+i, w*r+j)."""
    n, crr, h, w = x.shape
    if crr % (r * r):
        raise ValueError(f"channels {crr} not divisible by r^2={r * r}")
    c = crr // (r * r)
    out = x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)

    def back(g):
        return (g.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, crr, h, w),)

    return _emit("pixel_shuffle", (x,), np.ascontiguousarray(out), back)


def _shift_into(dst: np.ndarray, src: np.ndarray, dx: int, dy: int) -> None:
    # dst[..., h, w] = src[..., h - dy, w - dx] where in range
    h, w = src.shape[-2:]
    if abs(dx) >= w or abs(dy) >= h:
        return
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    dst[..., yd, xd] = src[..., ys, xs]


def spatial_shift(x: Tensor, dx: int, dy: int) -> Tensor:
    """Translate by (dx, dy) pixels (x right, y down), zero-filling vacated pixels."""
    return shift_channel_groups(x, [(dx, dy)])


def shift_channel_groups(x: Tensor, offsets: Sequence[tuple[int, int]]) -> Tensor:
    """Split channels into ``len(offsets)`` equal groups and shift group m by offsets[m]."""
    c = x.shape[1]
    k = len(offsets)
    if k == 0 or c % k:
        raise ValueError(f"{c} channels cannot be split into {k} equal groups")
    step = c // k
    out = np.zeros_like(x.data)
    for m, (dx, dy) in enumerate(offsets):
        sl = slice(m * step, (m + 1) * step)
        _shift_into(out[:, sl], x.data[:, sl], int(dx), int(dy))

    def back(g):
        gx = np.zeros_like(g)
        for m, (dx, dy) in enumerate(offsets):
            sl = slice(m * step, (m + 1) * step)
            _shift_into(gx[:, sl], g[:, sl], -int(dx), -int(dy))
        return (gx,)

    return _emit("spatial_shift", (x,), out, back)


def crop(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left ``h x w`` region."""
    n, c, hh, ww = x.shape
    out = x.data[:, :, :h, :w].copy()

    def back(g):
        gx = np.zeros_like(x.data)
        gx[:, :, :h, :w] = g
        return (gx,)

    return _emit("crop", (x,), out, back)


# ---------------------------------------------------------------- pooling


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def back(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

    return _emit("global_avg_pool", (x,), out, back)


def max_pool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route gradient to the first row-major element."""
    if k != stride:
        raise ValueError("only non-overlapping pooling (k == stride) is supported")
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    if ho == 0 or wo == 0:
        raise ValueError(f"input {h}x{w} smaller than pooling window {k}")
    blocks = x.data[:, :, : ho * k, : wo * k].reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros((n, c, ho, wo, k * k), dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :, : ho * k, : wo * k] = gb.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
        return (gx,)

    return _emit("max_pool2d", (x,), np.ascontiguousarray(out), back)


# ---------------------------------------------------------------- channel plumbing


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    if not inputs:
        raise ValueError("concat_channels needs at least one input")
    ref = inputs[0].shape
    for t in inputs:
        if t.data.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ValueError(f"cannot concat {t.shape} with {ref}")
    out = np.concatenate([t.data for t in inputs], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])

    def back(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(inputs)))

    return _emit("concat_channels", tuple(inputs), out, back)


def split_channels(x: Tensor, parts: int) -> list[Tensor]:
    c = x.shape[1]
    if parts < 1 or c % parts:
        raise ValueError(f"{c} channels cannot be split into {parts} parts")
    step = c // parts
    outs = []
    for m in range(parts):
        sl = slice(m * step, (m + 1) * step)

        def back(g, sl=sl):
            gx = np.zeros_like(x.data)
            gx[:, sl] = g
            return (gx,)

        outs.append(_emit("split_channels", (x,), x.data[:, sl].copy(), back))
    return outs


def fold_frames(x: Tensor, t: int) -> Tensor:
    """(N*T, C, H, W) frame-major batch -> (N, T*C, H, W), frames concatenated along channels."""
    nt, c, h, w = x.shape
    if nt % t:
        raise ValueError(f"batch {nt} not divisible by T={t}")
    out = x.data.reshape(nt // t, t * c, h, w)
    return _emit("fold_frames", (x,), out, lambda g: (g.reshape(nt, c, h, w),))


# ---------------------------------------------------------------- reductions / losses


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype).reshape(1, 1, 1, 1)
    return _emit("sum", (x,), out, lambda g: (np.full_like(x.data, g.reshape(-1)[0]),))


def mean_all(x: Tensor) -> Tensor:
    size = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype).reshape(1, 1, 1, 1)
    return _emit("mean", (x,), out, lambda g: (np.full_like(x.data, g.reshape(-1)[0] / size),))


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error; the subgradient at exact ties is 0."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    size = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=pred.dtype).reshape(1, 1, 1, 1)

    def back(g):
        s = np.sign(diff) * (g.reshape(-1)[0] / size)
        return s, -s

    return _emit("l1_loss", (pred, target), out, back)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
