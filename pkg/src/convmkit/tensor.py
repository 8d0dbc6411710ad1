"""Dense tensors with reverse-mode automatic differentiation.

Everything is numpy-backed and CPU only. A Tensor remembers the tensors it
was computed from plus a closure that propagates the output gradient back to
them; ``backward()`` walks that graph in reverse topological order. All
neural primitives used by the network builder live here as free functions.

Ops are pure: randomness (dropout) comes in through an explicit
``numpy.random.Generator``, so seeded runs are bit-reproducible.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "set_checked",
    "is_checked",
    "add",
    "scale",
    "concat",
    "reshape",
    "flatten2d",
    "tsum",
    "take_rows",
    "relu",
    "linear",
    "dropout",
    "conv2d",
    "conv2d_transpose_cropped",
    "maxpool2d_with_indices",
    "unpool2d",
    "avgpool2d",
    "softmax_cross_entropy",
    "mse",
]

# When enabled, every op verifies its output is finite and raises otherwise.
_CHECKED = False


def set_checked(flag: bool) -> None:
    global _CHECKED
    _CHECKED = bool(flag)


def is_checked() -> bool:
    return _CHECKED


class Tensor:
    """N-dimensional array with an optional gradient buffer.

    ``data`` is always a contiguous float32/float64 numpy array. ``grad``
    is allocated lazily by ``backward()`` and has the same shape and dtype.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=""):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- autodiff ------------------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every reachable tensor with requires_grad.

        The receiver must hold a single scalar (the loss).
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if _CHECKED:
                    for p in node._parents:
                        if p.grad is not None and not np.all(np.isfinite(p.grad)):
                            raise FloatingPointError(
                                f"non-finite gradient flowing into {p!r}"
                            )

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return scale(self, other)

    __rmul__ = __mul__

    def sum(self):
        return tsum(self)

    def reshape(self, *shape):
        return reshape(self, shape)


def _make(data, parents, backward_fn):
    """Create a graph node; drops the closure if no parent needs gradients."""
    if _CHECKED and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by an op in checked mode")
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------------------
# elementwise / shape ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(c * g)

    return _make(a.data * c, (a,), bwd)


def concat(tensors, axis=1) -> Tensor:
    datas = [t.data for t in tensors]
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bwd(g):
        for t, gpart in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(gpart)

    return _make(np.concatenate(datas, axis=axis), tuple(tensors), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), bwd)


def flatten2d(a: Tensor) -> Tensor:
    """[N, ...] -> [N, prod(rest)]."""
    n = a.shape[0]
    return reshape(a, (n, int(a.data.size // n)))


def tsum(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype))

    return _make(a.data.sum(keepdims=False).reshape(()), (a,), bwd)


def take_rows(a: Tensor, idx) -> Tensor:
    """Select rows along axis 0 (gather); gradient scatters back."""
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            a._accumulate(ga)

    return _make(a.data[idx], (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(a.data * mask, (a,), bwd)


def dropout(a: Tensor, ratio: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-ratio), eval is identity."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
    if not training or ratio == 0.0:
        def bwd_id(g):
            if a.requires_grad:
                a._accumulate(g)

        return _make(a.data.copy(), (a,), bwd_id)
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(a.shape) >= ratio).astype(a.dtype)
    keep /= (1.0 - ratio)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _make(a.data * keep, (a,), bwd)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """Bias-free affine map: [N, D] @ [D, K] -> [N, K]."""
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"linear: {x.shape} incompatible with weight {w.shape}")

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)

    return _make(x.data @ w.data, (x, w), bwd)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _conv_out_size(h, k, stride, padding, dilation):
    return (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _im2col(xp, k, stride, dilation, oh, ow):
    """Padded input [N,C,Hp,Wp] -> column stack [N, C, k, k, oh, ow]."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for i in range(k):
        hi = i * dilation
        for j in range(k):
            wj = j * dilation
            cols[:, :, i, j] = xp[:, :, hi:hi + (oh - 1) * stride + 1:stride,
                                  wj:wj + (ow - 1) * stride + 1:stride]
    return cols


def _col2im(gcols, xp_shape, k, stride, dilation, oh, ow):
    gxp = np.zeros(xp_shape, dtype=gcols.dtype)
    for i in range(k):
        hi = i * dilation
        for j in range(k):
            wj = j * dilation
            gxp[:, :, hi:hi + (oh - 1) * stride + 1:stride,
                wj:wj + (ow - 1) * stride + 1:stride] += gcols[:, :, i, j]
    return gxp


def conv2d(x: Tensor, w: Tensor, stride=1, padding=0, dilation=1, groups=1) -> Tensor:
    """Grouped, dilated 2-D cross-correlation without bias.

    x: [N, Cin, H, W]; w: [Cout, Cin/groups, k, k]. Output channel c reads
    only the input group floor(c / (Cout/groups)).
    """
    n, cin, h, wd = x.shape
    cout, cin_g, k, k2 = w.shape
    if k != k2:
        raise ValueError("conv2d: only square kernels are supported")
    if dilation < 1:
        raise ValueError("conv2d: dilation must be >= 1")
    if cin % groups or cout % groups:
        raise ValueError(f"conv2d: Cin={cin}, Cout={cout} not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ValueError(f"conv2d: weight expects Cin/groups={cin_g}, input has {cin // groups}")
    oh = _conv_out_size(h, k, stride, padding, dilation)
    ow = _conv_out_size(wd, k, stride, padding, dilation)
    if oh <= 0 or ow <= 0:
        raise ValueError("conv2d: kernel larger than (padded) input")
    cout_g = cout // groups

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    cols = _im2col(xp, k, stride, dilation, oh, ow)
    # [N, g, cin_g*k*k, oh*ow]
    cols_r = cols.reshape(n, groups, cin_g * k * k, oh * ow)
    w_r = w.data.reshape(groups, cout_g, cin_g * k * k)
    out = np.matmul(w_r[None], cols_r).reshape(n, cout, oh, ow)

    def bwd(g):
        g_r = g.reshape(n, groups, cout_g, oh * ow)
        if w.requires_grad:
            gw = np.einsum("ngol,ngkl->gok", g_r, cols_r, optimize=True)
            w._accumulate(gw.reshape(w.shape))
        if x.requires_grad:
            gcols = np.matmul(np.transpose(w_r, (0, 2, 1))[None], g_r)
            gcols = gcols.reshape(n, cin, k, k, oh, ow)
            gxp = _col2im(gcols, xp.shape, k, stride, dilation, oh, ow)
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(gxp)

    return _make(out, (x, w), bwd)


def conv2d_transpose_cropped(x: Tensor, w: Tensor, stride=1, groups=1) -> Tensor:
    """Grouped transposed convolution whose output is center-cropped back to
    the input's spatial size.

    x: [N, Cin, H, W]; w: [Cin, Cout/groups, k, k]. The raw output has size
    (H-1)*stride + k; when the excess over H is odd the extra row/column is
    dropped from the bottom/right.
    """
    n, cin, h, wd = x.shape
    cin_w, cout_g, k, k2 = w.shape
    if k != k2:
        raise ValueError("transposed conv: only square kernels are supported")
    if stride < 1:
        raise ValueError("transposed conv: stride must be >= 1")
    if cin_w != cin:
        raise ValueError(f"transposed conv: weight Cin={cin_w} vs input Cin={cin}")
    if cin % groups:
        raise ValueError(f"transposed conv: Cin={cin} not divisible by groups={groups}")
    cin_g = cin // groups
    cout = cout_g * groups
    hr = (h - 1) * stride + k
    wr = (wd - 1) * stride + k
    assert hr >= h and wr >= wd, "raw transposed-conv output smaller than input"
    top = (hr - h) // 2
    left = (wr - wd) // 2

    x_r = x.data.reshape(n, groups, cin_g, h, wd)
    w_r = w.data.reshape(groups, cin_g, cout_g, k, k)
    # per-group channel mix once, then scatter per kernel offset
    mix = np.einsum("ngchw,gcoij->ngoijhw", x_r, w_r, optimize=True)
    raw = np.zeros((n, groups, cout_g, hr, wr), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            raw[:, :, :, i:i + (h - 1) * stride + 1:stride,
                j:j + (wd - 1) * stride + 1:stride] += mix[:, :, :, i, j]
    out = raw.reshape(n, cout, hr, wr)[:, :, top:top + h, left:left + wd]

    def bwd(g):
        graw = np.zeros((n, groups, cout_g, hr, wr), dtype=g.dtype)
        graw.reshape(n, cout, hr, wr)[:, :, top:top + h, left:left + wd] = g
        gslices = np.empty((n, groups, cout_g, k, k, h, wd), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gslices[:, :, :, i, j] = graw[:, :, :, i:i + (h - 1) * stride + 1:stride,
                                              j:j + (wd - 1) * stride + 1:stride]
        if x.requires_grad:
            gx = np.einsum("ngoijhw,gcoij->ngchw", gslices, w_r, optimize=True)
            x._accumulate(gx.reshape(n, cin, h, wd))
        if w.requires_grad:
            gw = np.einsum("ngoijhw,ngchw->gcoij", gslices, x_r, optimize=True)
            w._accumulate(gw.reshape(w.shape))

    return _make(np.ascontiguousarray(out), (x, w), bwd)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def _pool_windows(x, k, stride, oh, ow, fill):
    """View/copy of all kxk windows as [N, C, oh, ow, k, k], right/bottom
    padded with ``fill`` so the ceil-mode windows are uniform."""
    n, c, h, w = x.shape
    need_h = (oh - 1) * stride + k
    need_w = (ow - 1) * stride + k
    if need_h > h or need_w > w:
        xp = np.full((n, c, need_h, need_w), fill, dtype=x.dtype)
        xp[:, :, :h, :w] = x
    else:
        xp = x
    s = xp.strides
    shape = (n, c, oh, ow, k, k)
    strides = (s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3])
    return np.lib.stride_tricks.as_strided(xp, shape, strides)


def maxpool2d_with_indices(x: Tensor, k: int, stride: int):
    """Ceil-mode max pooling. Returns (pooled, indices) where indices holds,
    per pooled cell, the flat row-major source coordinate h*W + w of the max
    (first occurrence on ties, windows clipped at the right/bottom edge).
    """
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ValueError(f"maxpool2d: window {k} exceeds input {h}x{w}")
    oh = -(-(h - k) // stride) + 1
    ow = -(-(w - k) // stride) + 1
    win = _pool_windows(x.data, k, stride, oh, ow, -np.inf)
    flat = win.reshape(n, c, oh, ow, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    ki, kj = np.divmod(arg, k)
    base_h = (np.arange(oh) * stride)[None, None, :, None]
    base_w = (np.arange(ow) * stride)[None, None, None, :]
    idx = ((base_h + ki) * w + (base_w + kj)).astype(np.int64)

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros((n, c, h * w), dtype=g.dtype)
            rows = np.arange(n * c)[:, None]
            np.add.at(gx.reshape(n * c, h * w), (rows, idx.reshape(n * c, -1)),
                      g.reshape(n * c, -1))
            x._accumulate(gx.reshape(n, c, h, w))

    return _make(np.ascontiguousarray(out), (x,), bwd), idx


def unpool2d(x: Tensor, indices: np.ndarray, target_hw) -> Tensor:
    """Scatter pooled values back to their recorded argmax positions; every
    other element of the [N, C, H, W] output is zero."""
    n, c, oh, ow = x.shape
    if indices.shape != x.shape:
        raise ValueError(f"unpool2d: indices shape {indices.shape} != input {x.shape}")
    h, w = target_hw
    if indices.min() < 0 or indices.max() >= h * w:
        raise ValueError("unpool2d: index out of target bounds")
    flat_idx = indices.reshape(n * c, oh * ow)
    rows = np.arange(n * c)[:, None]

    out = np.zeros((n * c, h * w), dtype=x.dtype)
    out[rows, flat_idx] = x.data.reshape(n * c, oh * ow)

    def bwd(g):
        if x.requires_grad:
            gx = g.reshape(n * c, h * w)[rows, flat_idx]
            x._accumulate(gx.reshape(x.shape))

    return _make(out.reshape(n, c, h, w), (x,), bwd)


def avgpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Floor-mode average pooling with full kxk windows."""
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ValueError(f"avgpool2d: window {k} exceeds input {h}x{w}")
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    win = _pool_windows(x.data, k, stride, oh, ow, 0.0)
    out = win.mean(axis=(-2, -1))

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros((n, c, h, w), dtype=g.dtype)
            gshare = g / (k * k)
            for i in range(k):
                for j in range(k):
                    gx[:, :, i:i + (oh - 1) * stride + 1:stride,
                       j:j + (ow - 1) * stride + 1:stride] += gshare
            x._accumulate(gx)

    return _make(np.ascontiguousarray(out), (x,), bwd)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over the batch, stabilized by max subtraction."""
    n, kk = logits.shape
    if n == 0:
        raise ValueError("softmax_cross_entropy: empty batch")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= kk:
        raise ValueError("softmax_cross_entropy: label out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    loss = -np.mean(np.log(p[np.arange(n), labels] + 0.0))

    def bwd(g):
        if logits.requires_grad:
            gl = p.copy()
            gl[np.arange(n), labels] -= 1.0
            logits._accumulate(gl * (float(np.asarray(g).reshape(())) / n))

    return _make(np.asarray(loss, dtype=logits.dtype).reshape(()), (logits,), bwd)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    if a.shape != b.shape:
        raise ValueError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    loss = np.mean(diff * diff)

    def bwd(g):
        c = 2.0 * float(np.asarray(g).reshape(())) / diff.size
        if a.requires_grad:
            a._accumulate(c * diff)
        if b.requires_grad:
            b._accumulate(-c * diff)

    return _make(np.asarray(loss, dtype=a.dtype).reshape(()), (a, b), bwd)
