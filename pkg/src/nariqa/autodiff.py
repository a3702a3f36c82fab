"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a float32 numpy array (float64 is allowed so that test
oracles can run the same operations in shadow precision) plus an optional
gradient buffer.  Operations build a tape of closures; ``backward`` walks
the tape in reverse topological order and accumulates gradients into every
tensor on the path that requires them.

All operations are deterministic: identical inputs produce bitwise
identical outputs within one process.  Tensors that do not track
gradients are never mutated by any operation and are safe to share.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import DistillationError, GraphError, ShapeError

_ALLOWED_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (used for frozen networks)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense rank-N array with optional gradient tracking.

    Invariants: ``grad`` (when present) has the same shape as ``data`` and
    all stored values are finite.  Construction rejects NaN/Inf; internal
    operations assume finite inputs and the training loop re-checks the
    loss each step so overflow surfaces as an error, never as silent state.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        dtype = np.dtype(dtype).type
        if dtype not in _ALLOWED_DTYPES:
            raise TypeError(f"unsupported dtype {dtype!r}; use float32 or float64")
        arr = np.asarray(data, dtype=dtype)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data contains NaN or Inf")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # Internal fast path: wraps an op result without re-validating finiteness.
    @classmethod
    def _result(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the named functions below carry the contracts.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x), dtype=dtype.type if hasattr(dtype, "type") else dtype)


def backward(loss: Tensor):
    """Reverse-mode differentiation from a scalar loss.

    Populates ``grad`` for every gradient-tracking tensor reachable from
    ``loss`` through recorded operations; gradients of shared
    subexpressions accumulate.  Repeated calls without clearing grads sum.
    """
    if loss.data.ndim != 0:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not require grad; nothing to differentiate")

    # Iterative topological sort over the recorded graph.
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    loss.grad = _accum(loss.grad, np.ones((), dtype=loss.data.dtype))
    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = _accum(parent.grad, g)


def _accum(current, g):
    if current is None:
        return g
    if not current.flags.writeable:  # first grad may be a broadcast view
        return current + g
    current += g
    return current


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy-style trailing broadcast)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._result(out, (a, b), back)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._result(out, (a, b), back)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = a.data * b.data

    def back(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return Tensor._result(out, (a, b), back)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    Leading batch axes must match exactly, except that a rank-2 operand is
    shared across the other operand's batch (the weight-matrix case); its
    gradient then sums over the batch.
    """
    a = _as_tensor(a)
    b = _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} @ {bd.shape}")
    if ad.ndim > 2 and bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions disagree: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
            if ga.shape != ad.shape:
                ga = _unbroadcast(ga, ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                # shared weight: fold batch into rows for one large product
                a2 = ad.reshape(-1, ad.shape[-1])
                g2 = g.reshape(-1, g.shape[-1])
                gb = a2.T @ g2
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
                if gb.shape != bd.shape:
                    gb = _unbroadcast(gb, bd.shape)
        return ga, gb

    return Tensor._result(out, (a, b), back)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation: x[B,Cin,H,W] * weight[Cout,Cin,kH,kW] + bias."""
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {xd.shape}, {wd.shape}")
    B, Cin, H, W = xd.shape
    Cout, Cink, kH, kW = wd.shape
    if Cin != Cink:
        raise ShapeError(f"conv2d channel mismatch: input {xd.shape} vs kernel {wd.shape}")
    if H + 2 * padding < kH or W + 2 * padding < kW:
        raise ShapeError(
            f"kernel {wd.shape} larger than padded input {xd.shape} (padding={padding})")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be positive, got {stride}")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    Ho = (H + 2 * padding - kH) // stride + 1
    Wo = (W + 2 * padding - kW) // stride + 1

    win = np.lib.stride_tricks.sliding_window_view(xp, (kH, kW), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                     # [B,Cin,Ho,Wo,kH,kW]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, Cin * kH * kW)
    cols = np.ascontiguousarray(cols)
    wmat = wd.reshape(Cout, -1)
    out2 = cols @ wmat.T                                    # [B*Ho*Wo, Cout]
    out = out2.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    if bias is not None:
        bias = _as_tensor(bias)
        if bias.data.shape != (Cout,):
            raise ShapeError(f"conv2d bias shape {bias.data.shape} != ({Cout},)")
        out = out + bias.data.reshape(1, Cout, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, Cout)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(B, Ho, Wo, Cin, kH, kW)
            gxp = np.zeros((B, Cin, H + 2 * padding, W + 2 * padding), dtype=g.dtype)
            for i in range(kH):
                for j in range(kW):
                    gxp[:, :, i:i + Ho * stride:stride, j:j + Wo * stride:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, gb

    return Tensor._result(out, parents, back)


def _pool_bounds(n_in: int, n_out: int):
    # floor/ceil window boundaries: contiguous, evenly partitioned
    starts = [(i * n_in) // n_out for i in range(n_out)]
    ends = [-(-((i + 1) * n_in) // n_out) for i in range(n_out)]
    return starts, ends


def adaptive_avg_pool2d(x, out_size) -> Tensor:
    """Average-pool x[B,C,H,W] onto an (s, s) grid; (1, 1) is global pooling."""
    x = _as_tensor(x)
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError(f"adaptive_avg_pool2d expects 4-D input, got {xd.shape}")
    s = out_size[0] if isinstance(out_size, (tuple, list)) else int(out_size)
    s2 = out_size[1] if isinstance(out_size, (tuple, list)) else s
    if s != s2:
        raise ShapeError(f"only square output grids supported, got {out_size}")
    B, C, H, W = xd.shape
    if s > H or s > W:
        raise ShapeError(f"pool output {s}x{s} exceeds input {H}x{W}")

    if H % s == 0 and W % s == 0:
        fh, fw = H // s, W // s
        out = xd.reshape(B, C, s, fh, s, fw).mean(axis=(3, 5))

        def back(g):
            if not x.requires_grad:
                return (None,)
            gx = np.repeat(np.repeat(g, fh, axis=2), fw, axis=3) / (fh * fw)
            return (gx.astype(g.dtype, copy=False),)

        return Tensor._result(out, (x,), back)

    rs, re = _pool_bounds(H, s)
    cs, ce = _pool_bounds(W, s)
    out = np.empty((B, C, s, s), dtype=xd.dtype)
    for i in range(s):
        for j in range(s):
            out[:, :, i, j] = xd[:, :, rs[i]:re[i], cs[j]:ce[j]].mean(axis=(2, 3))

    def back(g):
        if not x.requires_grad:
            return (None,)
        gx = np.zeros_like(xd)
        for i in range(s):
            for j in range(s):
                cnt = (re[i] - rs[i]) * (ce[j] - cs[j])
                gx[:, :, rs[i]:re[i], cs[j]:ce[j]] += (g[:, :, i, j] / cnt)[:, :, None, None]
        return (gx,)

    return Tensor._result(out, (x,), back)


def upsample_nearest2d(x, factor: int) -> Tensor:
    """Integer-factor nearest-neighbour upsampling of x[B,C,H,W]."""
    x = _as_tensor(x)
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError(f"upsample_nearest2d expects 4-D input, got {xd.shape}")
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return reshape(x, xd.shape)
    B, C, H, W = xd.shape
    out = np.repeat(np.repeat(xd, factor, axis=2), factor, axis=3)

    def back(g):
        if not x.requires_grad:
            return (None,)
        gx = g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5))
        return (gx,)

    return Tensor._result(out, (x,), back)


# ---------------------------------------------------------------------------
# normalization and activations
# ---------------------------------------------------------------------------

def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (1/D variance),
    then apply the affine map gamma * xhat + beta."""
    x = _as_tensor(x)
    gamma = _as_tensor(gamma)
    beta = _as_tensor(beta)
    xd = x.data
    D = xd.shape[-1]
    if gamma.data.shape != (D,) or beta.data.shape != (D,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} != ({D},)")
    mean = xd.mean(axis=-1, keepdims=True)
    centered = xd - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def back(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, D).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, D).sum(axis=0)
        if x.requires_grad:
            gh = g * gamma.data
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            gx = inv_std * (gh - m1 - xhat * m2)
        return gx, gg, gb

    return Tensor._result(out, (x, gamma, beta), back)


def relu(x) -> Tensor:
    """max(0, x); the subgradient at 0 is taken as 0."""
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return Tensor._result(out, (x,), back)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    x = _as_tensor(x)
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def back(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * xd * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * d.astype(g.dtype, copy=False),)

    return Tensor._result(out, (x,), back)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def transpose_last2(x) -> Tensor:
    """Swap the last two axes (an involution)."""
    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeError(f"transpose_last2 needs rank >= 2, got {x.data.shape}")
    out = np.ascontiguousarray(np.swapaxes(x.data, -1, -2))

    def back(g):
        return (np.ascontiguousarray(np.swapaxes(g, -1, -2)),)

    return Tensor._result(out, (x,), back)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    in_shape = x.data.shape
    out = x.data.reshape(shape)

    def back(g):
        return (g.reshape(in_shape),)

    return Tensor._result(out, (x,), back)


def concat(tensors, axis: int) -> Tensor:
    """Join tensors along ``axis``; all other dimensions must match."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat needs at least one tensor")
    ref = list(ts[0].data.shape)
    ax = axis if axis >= 0 else len(ref) + axis
    for t in ts[1:]:
        s = list(t.data.shape)
        if len(s) != len(ref) or any(i != ax and s[i] != ref[i] for i in range(len(ref))):
            raise ShapeError(
                f"concat shape mismatch on non-join dimensions: {ts[0].data.shape} vs {t.data.shape}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    sizes = [t.data.shape[ax] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        grads = []
        for k, t in enumerate(ts):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(offsets[k], offsets[k + 1])
                grads.append(np.ascontiguousarray(g[tuple(idx)]))
            else:
                grads.append(None)
        return grads

    return Tensor._result(out, tuple(ts), back)


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------

def mean_all(x) -> Tensor:
    """Mean over all elements, as a scalar tensor."""
    x = _as_tensor(x)
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def back(g):
        return (np.broadcast_to(g / n, x.data.shape).astype(x.data.dtype, copy=False),)

    return Tensor._result(out, (x,), back)


def mean_axes(x, axes) -> Tensor:
    """Mean over the given axes (no keepdims)."""
    x = _as_tensor(x)
    axes = tuple(sorted(a % x.data.ndim for a in axes))
    out = x.data.mean(axis=axes)
    n = 1
    for a in axes:
        n *= x.data.shape[a]

    def back(g):
        ge = np.expand_dims(g, axes) / n
        return (np.broadcast_to(ge, x.data.shape).astype(g.dtype, copy=False),)

    return Tensor._result(out, (x,), back)


def l1_loss(pred, target) -> Tensor:
    """Batch-mean absolute error (1/B) * sum |pred_i - target_i|.

    The subgradient of |.| at 0 is taken as 0.
    """
    pred = _as_tensor(pred)
    target = _as_tensor(target, pred)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"l1_loss shape mismatch: pred {pred.data.shape} vs target {target.data.shape}")
    if pred.data.size == 0:
        raise ShapeError("l1_loss over an empty batch is undefined")
    diff = pred.data - target.data
    out = np.asarray(np.abs(diff).mean(), dtype=pred.data.dtype)
    n = diff.size

    def back(g):
        s = np.sign(diff) * (g / n)
        gp = s if pred.requires_grad else None
        gt = -s if target.requires_grad else None
        return gp, gt

    return Tensor._result(out, (pred, target), back)


def feature_l2_loss(fa, fb, squared: bool = False) -> Tensor:
    """Layerwise feature-matching loss between two equally shaped lists.

    For each sample i and layer j the flattened difference's Euclidean norm
    is taken (its square when ``squared``), summed over layers and averaged
    over the batch.  The leading axis of every tensor is the batch axis.
    """
    fa = [_as_tensor(t) for t in fa]
    fb = [_as_tensor(t) for t in fb]
    if len(fa) != len(fb):
        raise DistillationError(
            f"feature list lengths differ: {len(fa)} vs {len(fb)}")
    if not fa:
        raise DistillationError("feature lists are empty")
    batch = fa[0].data.shape[0]
    diffs = []
    norms = []
    total = 0.0
    for j, (ta, tb) in enumerate(zip(fa, fb)):
        if ta.data.shape != tb.data.shape:
            raise DistillationError(
                f"layer {j} shape mismatch: {ta.data.shape} vs {tb.data.shape}")
        if ta.data.shape[0] != batch:
            raise DistillationError(
                f"layer {j} batch size {ta.data.shape[0]} != {batch}")
        d = (ta.data - tb.data).reshape(batch, -1)
        nrm = np.sqrt(np.sum(d * d, axis=1))
        diffs.append(d)
        norms.append(nrm)
        total += np.sum(nrm * nrm) if squared else np.sum(nrm)
    out = np.asarray(total / batch, dtype=fa[0].data.dtype)

    def back(g):
        grads = []
        for d, nrm, ta, tb in zip(diffs, norms, fa, fb):
            if not (ta.requires_grad or tb.requires_grad):
                grads.append(None)
                continue
            if squared:
                gd = d * (2.0 * g / batch)
            else:
                safe = np.where(nrm > 0, nrm, 1.0)
                gd = d * ((g / batch) / safe)[:, None]
            grads.append(gd)
        out_grads = []
        for gd, ta, tb in zip(grads, fa, fb):
            out_grads.append(gd.reshape(ta.data.shape) if gd is not None and ta.requires_grad else None)
        for gd, ta, tb in zip(grads, fa, fb):
            out_grads.append((-gd).reshape(tb.data.shape) if gd is not None and tb.requires_grad else None)
        return out_grads

    return Tensor._result(out, tuple(fa) + tuple(fb), back)
