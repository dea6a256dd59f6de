"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a C-contiguous numpy array (float32 or float64).
Every operator in this module returns a new tensor; when any input requires
a gradient the result remembers its inputs and a closure mapping the output
gradient to input gradients.  :func:`backward` walks that record in reverse
topological order.

Slicing and splitting always copy, so no two tensors share storage.
"""

import math

import numpy as np

from .errors import ConfigError, DataError, ShapeError, UsageError

_FLOATS = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOATS:
            arr = arr.astype(np.float64)
        # np.ascontiguousarray would promote 0-d arrays to 1-d
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _node(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out.op = op
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def item(self):
        return self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def backward(self):
        backward(self)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Fill ``.grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients are overwritten, not accumulated, so calling this twice on
    the same graph yields the same values.
    """
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor with requires_grad=True")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = np.array(g, dtype=node.dtype, copy=True)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._node(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._node(ad * bd, (a, b), bw, "mul")


def relu(x):
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return Tensor._node(x.data * mask, (x,), bw, "relu")


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def gelu(x):
    """Tanh-approximated GELU."""
    xd = x.data
    c = xd.dtype.type(_GELU_C)
    k = xd.dtype.type(_GELU_K)
    x2 = xd * xd
    t = np.tanh(xd * (c + (c * k) * x2))
    out = 0.5 * xd * (1 + t)

    def bw(g):
        dt = (1 - t * t) * (c + (3 * c * k) * x2)
        return (g * (0.5 * (1 + t) + 0.5 * xd * dt),)

    return Tensor._node(out, (x,), bw, "gelu")


# ------------------------------------------------------------------ reductions


def tsum(x, axis=None):
    shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor._node(np.asarray(x.data.sum(axis=axis)), (x,), bw, "sum")


def mean(x, axis=None):
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis), 1.0 / count)


# -------------------------------------------------------------- shape movement


def reshape(x, shape):
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} into {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(old),)

    return Tensor._node(out, (x,), bw, "reshape")


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return Tensor._node(np.ascontiguousarray(x.data.transpose(axes)), (x,), bw, "transpose")


def split(x, boundaries, axis=1):
    """Cut ``x`` along ``axis`` at the given strictly increasing offsets."""
    extent = x.shape[axis]
    bounds = list(boundaries)
    prev = 0
    for b in bounds:
        if not isinstance(b, (int, np.integer)) or b <= prev or b >= extent:
            raise ConfigError(
                f"split boundaries {bounds} must be strictly increasing inside (0, {extent})"
            )
        prev = b
    edges = [0] + bounds + [extent]
    return [_slice(x, lo, hi, axis) for lo, hi in zip(edges[:-1], edges[1:])]


def _slice(x, lo, hi, axis):
    index = [slice(None)] * x.ndim
    index[axis] = slice(lo, hi)
    index = tuple(index)
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return Tensor._node(np.ascontiguousarray(x.data[index]), (x,), bw, "slice")


def concat(parts, axis=1):
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    ref = parts[0]
    for p in parts[1:]:
        if p.ndim != ref.ndim or p.dtype != ref.dtype or any(
            p.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis % ref.ndim
        ):
            raise ShapeError(
                f"concat: {p.shape}/{p.dtype} incompatible with {ref.shape}/{ref.dtype}"
            )
    edges = np.cumsum([0] + [p.shape[axis] for p in parts])

    def bw(g):
        out = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            out.append(np.ascontiguousarray(g[tuple(index)]))
        return out

    data = np.concatenate([p.data for p in parts], axis=axis)
    return Tensor._node(data, parts, bw, "concat")


def split_channels(x, boundaries):
    return split(x, boundaries, axis=1)


def concat_channels(parts):
    return concat(parts, axis=1)


# ---------------------------------------------------------------- linear maps


def matmul(a, b):
    """``a[..., M, K] @ b[K, N]`` (or matching leading batch dims on both)."""
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ in {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return Tensor._node(ad @ bd, (a, b), bw, "matmul")


def linear(x, weight, bias=None):
    """Apply ``x @ weight + bias`` along the last axis."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def _ordered_mean(a):
    # sorting first makes the reduction independent of lane order
    return np.sort(a, axis=-1).sum(axis=-1, keepdims=True) / a.dtype.type(a.shape[-1])


def layernorm(x, gamma, delta, eps=1e-5):
    d = x.shape[-1]
    if gamma.shape != (d,) or delta.shape != (d,):
        raise ShapeError(
            f"layernorm: last axis {d} does not match affine {gamma.shape}/{delta.shape}"
        )
    if eps <= 0:
        raise ConfigError("layernorm eps must be positive")
    xd = x.data
    mu = _ordered_mean(xd)
    xc = xd - mu
    var = _ordered_mean(xc * xc)
    rstd = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = xc * rstd
    gd = gamma.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        dd = g.sum(axis=lead) if delta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gd
            dx = rstd * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return dx, dg, dd

    return Tensor._node(xhat * gd + delta.data, (x, gamma, delta), bw, "layernorm")


# -------------------------------------------------------------- image operators


def conv2d(x, w, bias=None, stride=1, pad=0):
    """2-D cross-correlation of NCHW input with OIkk weights.

    Computed as k*k shifted matrix products in channels-last layout, summed in
    a fixed (dy, dx) order.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if Cw != C:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Cw}")
    if kh != kw or kh < 1 or stride < 1 or pad < 0:
        raise ConfigError(f"conv2d: unsupported kernel {kh}x{kw}, stride {stride}, pad {pad}")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {O} filters")
    k = kh
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if Hp < k or Wp < k or (Hp - k) % stride or (Wp - k) % stride:
        raise ConfigError(
            f"conv2d: {H}x{W} input with k={k}, stride={stride}, pad={pad} "
            "gives a non-integral output extent"
        )
    Ho, Wo = (Hp - k) // stride + 1, (Wp - k) // stride + 1

    xh = np.zeros((B, Hp, Wp, C), dtype=x.dtype)
    xh[:, pad : pad + H, pad : pad + W, :] = x.data.transpose(0, 2, 3, 1)
    wt = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0))  # k, k, C, O
    offsets = [(dy, dx) for dy in range(k) for dx in range(k)]

    if stride == 1:
        # Output (i, j) lives at flat index (b, i, j) of the padded grid, so every
        # kernel offset is a contiguous shift of the flattened input.
        N = B * Hp * Wp
        L = N - (k - 1) * (Wp + 1)
        xf = xh.reshape(N, C)
        outf = np.zeros((N, O), dtype=x.dtype)
        for dy, dx in offsets:
            off = dy * Wp + dx
            outf[:L] += xf[off : off + L] @ wt[dy, dx]
        out = outf.reshape(B, Hp, Wp, O)[:, :Ho, :Wo, :]
    else:
        strided = {
            (dy, dx): (slice(None), slice(dy, dy + stride * Ho, stride), slice(dx, dx + stride * Wo, stride))
            for dy, dx in offsets
        }
        out = np.zeros((B, Ho, Wo, O), dtype=x.dtype)
        for dy, dx in offsets:
            out += xh[strided[dy, dx]] @ wt[dy, dx]
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw(g):
        gh = g.transpose(0, 2, 3, 1)
        gw = gb = gx = None
        if bias is not None and bias.requires_grad:
            gb = gh.sum(axis=(0, 1, 2))
        gwt = np.empty_like(wt) if w.requires_grad else None
        dxh = np.zeros_like(xh) if x.requires_grad else None
        if stride == 1:
            gpad = np.zeros((B, Hp, Wp, O), dtype=g.dtype)
            gpad[:, :Ho, :Wo, :] = gh
            gf = gpad.reshape(N, O)[:L]
            dxf = dxh.reshape(N, C) if dxh is not None else None
            for dy, dx in offsets:
                off = dy * Wp + dx
                if gwt is not None:
                    gwt[dy, dx] = xf[off : off + L].T @ gf
                if dxf is not None:
                    dxf[off : off + L] += gf @ wt[dy, dx].T
        else:
            gh = np.ascontiguousarray(gh)
            g2 = gh.reshape(-1, O)
            for dy, dx in offsets:
                sl = strided[dy, dx]
                if gwt is not None:
                    gwt[dy, dx] = np.ascontiguousarray(xh[sl]).reshape(-1, C).T @ g2
                if dxh is not None:
                    dxh[sl] += gh @ wt[dy, dx].T
        if gwt is not None:
            gw = np.ascontiguousarray(gwt.transpose(3, 2, 0, 1))
        if dxh is not None:
            gx = np.ascontiguousarray(dxh[:, pad : pad + H, pad : pad + W, :].transpose(0, 3, 1, 2))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, w, bias) if bias is not None else (x, w)
    return Tensor._node(out, parents, bw, "conv2d")


def maxpool2(x):
    """2x2 max pooling with stride 2; ties go to the first element in row-major order."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2 expects B x C x H x W, got {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ConfigError(f"maxpool2 needs even spatial extents, got {H}x{W}")
    Ho, Wo = H // 2, W // 2
    windows = x.data.reshape(B, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, 4)
    idx = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, idx, axis=-1)[..., 0]

    def bw(g):
        dwin = np.zeros((B, C, Ho, Wo, 4), dtype=g.dtype)
        np.put_along_axis(dwin, idx, g[..., None], axis=-1)
        gx = dwin.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        return (gx,)

    return Tensor._node(np.ascontiguousarray(out), (x,), bw, "maxpool2")


def bilinear_matrix(n, dtype=np.float64):
    """Interpolation matrix M (n x 2n) with ``x @ M`` = 2x upsampling of ``x``.

    Output index i reads source coordinate (i + 0.5) / 2 - 0.5, clamped at 0
    on the left and to the last sample on the right (align_corners=False).
    """
    m = np.zeros((n, 2 * n), dtype=dtype)
    for i in range(2 * n):
        src = max((i + 0.5) / 2.0 - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n - 1)
        i1 = min(i0 + 1, n - 1)
        w1 = src - i0
        m[i0, i] += 1.0 - w1
        m[i1, i] += w1
    return m


def upsample_bilinear2(x):
    if x.ndim != 4:
        raise ShapeError(f"upsample_bilinear2 expects B x C x H x W, got {x.shape}")
    B, C, H, W = x.shape
    mh = bilinear_matrix(H, x.dtype)
    mw = bilinear_matrix(W, x.dtype)
    # rows then columns; each stage is a plain matmul so the backward is its transpose
    out = mh.T @ (x.data @ mw)

    def bw(g):
        return (mh @ (g @ mw.T),)

    return Tensor._node(np.ascontiguousarray(out), (x,), bw, "upsample_bilinear2")


# ----------------------------------------------------------------------- loss


def softmax_ce(logits, target):
    """Mean pixelwise cross-entropy for ``logits[B, K, H, W]`` and integer ``target[B, H, W]``."""
    if isinstance(target, Tensor):
        target = target.data
    target = np.asarray(target)
    if logits.ndim != 4:
        raise ShapeError(f"softmax_ce expects B x K x H x W logits, got {logits.shape}")
    B, K, H, W = logits.shape
    if target.shape != (B, H, W):
        raise ShapeError(f"softmax_ce: target shape {target.shape} != {(B, H, W)}")
    t = target.astype(np.int64)
    bad = (t < 0) | (t >= K) | (t != target)
    if bad.any():
        pos = np.unravel_index(int(np.flatnonzero(bad)[0]), bad.shape)
        raise DataError(
            f"softmax_ce: class id {target[pos]} at pixel (b, h, w)={tuple(int(p) for p in pos)} "
            f"outside [0, {K})"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    se = ez.sum(axis=1, keepdims=True)
    picked = np.take_along_axis(z, t[:, None], axis=1)
    n = B * H * W
    loss = -(picked - np.log(se)).sum() / n

    def bw(g):
        p = ez / se
        np.put_along_axis(p, t[:, None], np.take_along_axis(p, t[:, None], axis=1) - 1, axis=1)
        return (p * (g / n),)

    return Tensor._node(np.asarray(loss, dtype=logits.dtype), (logits,), bw, "softmax_ce")
