"""Dense float64 tensors with reverse-mode automatic differentiation.

Every learned operation in the pipeline is composed from the primitives in
this module. The computation record is rebuilt on every forward pass
(define-by-run): each DTensor produced by an op keeps references to its
parents and a closure that maps the output gradient to parent gradients.
Calling ``backward()`` on a scalar root walks the record in reverse
topological order and accumulates ``grad`` on every tensor that requires it.
"""

import json
import struct

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class GradientError(RuntimeError):
    """Raised on non-finite gradients or ill-posed gradient checks."""


_tape_counter = 0


def _next_tape_id():
    global _tape_counter
    _tape_counter += 1
    return _tape_counter


def _as_array(data):
    arr = np.asarray(data, dtype=np.float64)
    return arr


class DTensor:
    """A dense multidimensional value tracked by the differentiation record.

    ``data`` is always float64 and row-major. ``grad`` is populated (same
    shape) after a backward pass from a scalar root reaches this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape_id = _next_tape_id()
        self._parents = _parents
        self._backward_fn = _backward_fn

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def param(data):
        """A leaf tensor that accumulates gradients (a learnable parameter)."""
        return DTensor(np.array(data, dtype=np.float64), requires_grad=True)

    @staticmethod
    def constant(data):
        return DTensor(data, requires_grad=False)

    @staticmethod
    def zeros(shape, requires_grad=False):
        return DTensor(np.zeros(shape, dtype=np.float64), requires_grad=requires_grad)

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"DTensor(shape={self.data.shape}, requires_grad={self.requires_grad}, tape_id={self.tape_id})"

    def zero_grad(self):
        self.grad = None

    # -- backward pass -------------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {self.data.shape}")
        # Iterative topological order; graphs from long training steps can be
        # deeper than the default recursion limit.
        order = []
        visited = set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is None or node.grad is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


def _wrap(x):
    return x if isinstance(x, DTensor) else DTensor.constant(x)


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _make(data, parents, backward_fn):
    req = any(p.requires_grad for p in parents)
    return DTensor(data, requires_grad=req,
                   _parents=tuple(parents) if req else (),
                   _backward_fn=backward_fn if req else None)


# -- elementwise arithmetic --------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), bwd)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), bwd)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data

    def bwd(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out, (a, b), bwd)


def neg(a):
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def square(a):
    a = _wrap(a)
    return _make(a.data ** 2, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a, grad_floor=1e-150):
    """Elementwise square root; the backward denominator is floored so an
    exactly-zero input yields a large finite rather than infinite gradient."""
    a = _wrap(a)
    out = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / np.maximum(out, grad_floor),)

    return _make(out, (a,), bwd)


def exp(a):
    a = _wrap(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = _wrap(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a):
    """|x| with subgradient sign(x) (0 at the kink)."""
    a = _wrap(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    a = _wrap(a)
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), bwd)


def sigmoid(a):
    a = _wrap(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


# -- reductions --------------------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(out, (a,), bwd)


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        count = a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def min_(a, axis):
    """Reduce-min along one axis; gradient routes to the first minimum."""
    a = _wrap(a)
    idx = np.argmin(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _make(out, (a,), bwd)


def cumsum(a, axis):
    a = _wrap(a)
    out = np.cumsum(a.data, axis=axis)

    def bwd(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(out, (a,), bwd)


def softmax(a, axis):
    """Probability vector along ``axis``; computed with max-subtraction."""
    a = _wrap(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), bwd)


# -- shape manipulation ------------------------------------------------------

def reshape(a, shape):
    a = _wrap(a)
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _make(out, (a,), bwd)


def transpose(a, axes):
    a = _wrap(a)
    inv = np.argsort(axes)

    def bwd(g):
        return (g.transpose(inv),)

    return _make(a.data.transpose(axes), (a,), bwd)


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tensors, bwd)


def slice_(a, key):
    a = _wrap(a)
    out = a.data[key]

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return _make(out, (a,), bwd)


def take(a, indices, axis):
    """Gather rows along ``axis``; backward scatter-adds into the source."""
    a = _wrap(a)
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(a.data, indices, axis=axis)

    def bwd(g):
        ga = np.zeros_like(a.data)
        # bincount-based scatter-add: move the gather axis to the front.
        ga_m = np.moveaxis(ga, axis, 0)
        g_m = np.moveaxis(g, axis, 0)
        flat_idx = indices.ravel()
        g_flat = g_m.reshape(len(flat_idx), -1)
        n = ga_m.shape[0]
        cols = g_flat.shape[1]
        if cols == 0:
            return (ga,)
        lin = (flat_idx[:, None] * cols + np.arange(cols)[None, :]).ravel()
        acc = np.bincount(lin, weights=g_flat.ravel(), minlength=n * cols).reshape(n, cols)
        ga_m += acc.reshape(ga_m.shape)
        return (ga,)

    return _make(out, (a,), bwd)


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """Matrix product with numpy batch semantics ((…,m,k) @ (…,k,n))."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs ≥2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner extents disagree: {a.data.shape} vs {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(out, (a, b), bwd)


def graph_matmul(lap, x):
    """Multiply a constant sparse symmetric matrix into vertex features.

    ``lap`` is an N×N scipy CSR matrix; ``x`` is (N, C) or (B, N, C).
    Used for spectral filtering, where the matrix is a rescaled Laplacian.
    """
    x = _wrap(x)
    if x.data.ndim == 2:
        n = x.data.shape[0]
    elif x.data.ndim == 3:
        n = x.data.shape[1]
    else:
        raise ShapeError(f"graph_matmul expects (N,C) or (B,N,C), got {x.data.shape}")
    if lap.shape[0] != n:
        raise ShapeError(f"matrix is {lap.shape}, features have {n} vertices")
    lap_t = lap.T.tocsr()

    def apply(m, v):
        if v.ndim == 2:
            return np.asarray(m @ v)
        b, nn, c = v.shape
        flat = np.moveaxis(v, 1, 0).reshape(nn, b * c)
        return np.moveaxis(np.asarray(m @ flat).reshape(nn, b, c), 0, 1)

    def bwd(g):
        return (apply(lap_t, g),)

    return _make(apply(lap, x.data), (x,), bwd)


# -- image operations --------------------------------------------------------

def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x, w, bias=None, stride=1, pad=0):
    """2-D cross-correlation of (B,C,H,W) with filters (F,C,kh,kw).

    The output geometry must divide exactly: (H + 2·pad − kh) % stride == 0
    (and likewise for width); no implicit truncation is performed.
    """
    x, w = _wrap(x), _wrap(w)
    if bias is not None:
        bias = _wrap(bias)
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.data.shape}, {w.data.shape}")
    b, c, h, wd = x.data.shape
    f, cw, kh, kw = w.data.shape
    if cw != c:
        raise ShapeError(f"conv2d channel mismatch: input {c}, weight {cw}")
    if kh > h + 2 * ph or kw > wd + 2 * pw:
        raise ShapeError(f"kernel ({kh},{kw}) larger than padded input ({h + 2 * ph},{wd + 2 * pw})")
    if (h + 2 * ph - kh) % sh or (wd + 2 * pw - kw) % sw:
        raise ShapeError(
            f"conv2d geometry not divisible: input ({h},{wd}), kernel ({kh},{kw}), "
            f"stride ({sh},{sw}), pad ({ph},{pw})")
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]                      # (B,C,oh,ow,kh,kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * kh * kw)
    wf = w.data.reshape(f, c * kh * kw)
    out = np.matmul(cols, wf.T)                      # (B,L,F)
    out = out.transpose(0, 2, 1).reshape(b, f, oh, ow)
    if bias is not None:
        out = out + bias.data.reshape(1, f, 1, 1)

    # Flat source index of every column element inside the padded (C,Hp,Wp)
    # volume, for the scatter-add in the backward pass.
    ii = (np.arange(oh) * sh)[:, None] + np.arange(kh)[None, :]      # (oh,kh)
    jj = (np.arange(ow) * sw)[:, None] + np.arange(kw)[None, :]      # (ow,kw)
    cidx = np.arange(c)
    idx = (cidx[None, None, :, None, None] * (hp * wp)
           + ii[:, None, None, :, None] * wp
           + jj[None, :, None, None, :])             # (oh,ow,C,kh,kw)
    idx = idx.reshape(oh * ow, c * kh * kw)

    def bwd(g):
        g_l = g.reshape(b, f, oh * ow).transpose(0, 2, 1)       # (B,L,F)
        gw = np.tensordot(g_l.reshape(-1, f).T, cols.reshape(-1, c * kh * kw), axes=1)
        gw = gw.reshape(f, c, kh, kw)
        gcols = np.matmul(g_l, wf)                              # (B,L,CKK)
        flat = np.zeros((b, c * hp * wp))
        lin = idx.ravel()
        for bi in range(b):
            flat[bi] = np.bincount(lin, weights=gcols[bi].ravel(),
                                   minlength=c * hp * wp)
        gx = flat.reshape(b, c, hp, wp)
        if ph or pw:
            gx = gx[:, :, ph:hp - ph if ph else hp, pw:wp - pw if pw else wp]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        if bias is not None:
            return gx, gw, gb
        return gx, gw

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, bwd)


def maxpool2d(x, k=2):
    """Non-overlapping k×k max pooling; H and W must divide by k."""
    x = _wrap(x)
    b, c, h, w = x.data.shape
    if h % k or w % k:
        raise ShapeError(f"maxpool2d: ({h},{w}) not divisible by {k}")
    oh, ow = h // k, w // k
    win = x.data.reshape(b, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, k * k)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gx = gw.reshape(b, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    return _make(out, (x,), bwd)


def _resize_axis_weights(n_in, n_out):
    """Source taps and weights for 1-d bilinear resampling (half-pixel centers)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    hi = np.clip(lo + 1, 0, n_in - 1)
    lo = np.clip(lo, 0, n_in - 1)
    return lo, hi, 1.0 - frac, frac


def bilinear_resize(x, out_h, out_w):
    """Bilinear resampling of (B,C,H,W) with half-pixel alignment; resizing
    to the input size is the identity."""
    x = _wrap(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: output ({out_h},{out_w}) must be ≥1")
    b, c, h, w = x.data.shape
    rlo, rhi, rwl, rwh = _resize_axis_weights(h, out_h)
    clo, chi, cwl, cwh = _resize_axis_weights(w, out_w)

    rows_l = x.data[:, :, rlo, :] * rwl[None, None, :, None]
    rows_h = x.data[:, :, rhi, :] * rwh[None, None, :, None]
    rows = rows_l + rows_h                                   # (B,C,oh,W)
    out = (rows[:, :, :, clo] * cwl[None, None, None, :]
           + rows[:, :, :, chi] * cwh[None, None, None, :])  # (B,C,oh,ow)

    def bwd(g):
        # Transpose of the column interpolation, then of the row interpolation.
        grows = np.zeros((b, c, out_h, w))
        for taps, wts in ((clo, cwl), (chi, cwh)):
            contrib = g * wts[None, None, None, :]
            flat = contrib.reshape(-1, out_w)
            acc = np.zeros((flat.shape[0], w))
            idx = np.broadcast_to(taps, (flat.shape[0], out_w))
            llin = (np.arange(flat.shape[0])[:, None] * w + idx).ravel()
            acc = np.bincount(llin, weights=flat.ravel(),
                              minlength=flat.shape[0] * w).reshape(flat.shape[0], w)
            grows += acc.reshape(b, c, out_h, w)
        gx = np.zeros_like(x.data)
        for taps, wts in ((rlo, rwl), (rhi, rwh)):
            contrib = grows * wts[None, None, :, None]
            flat = contrib.transpose(0, 1, 3, 2).reshape(-1, out_h)
            idx = np.broadcast_to(taps, (flat.shape[0], out_h))
            llin = (np.arange(flat.shape[0])[:, None] * h + idx).ravel()
            acc = np.bincount(llin, weights=flat.ravel(),
                              minlength=flat.shape[0] * h).reshape(flat.shape[0], h)
            gx += acc.reshape(b, c, w, h).transpose(0, 1, 3, 2)
        return (gx,)

    return _make(out, (x,), bwd)


# -- optimizer ---------------------------------------------------------------

class AdamState:
    """First/second moment accumulators for one named parameter set."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


class Adam:
    """Bias-corrected Adam over a {name: DTensor} parameter map."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(self.params, lr, beta1, beta2, eps)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        """One deterministic update; aborts (no mutation) on non-finite grads."""
        st = self.state
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                raise GradientError(f"parameter '{name}' has no gradient")
            if not np.all(np.isfinite(g)):
                bad = tuple(int(i) for i in np.argwhere(~np.isfinite(np.atleast_1d(g)))[0])
                raise GradientError(
                    f"non-finite gradient in parameter '{name}' at index {bad}")
        st.step_count += 1
        t = st.step_count
        bc1 = 1.0 - st.beta1 ** t
        bc2 = 1.0 - st.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            st.m[name] = st.beta1 * st.m[name] + (1 - st.beta1) * g
            st.v[name] = st.beta2 * st.v[name] + (1 - st.beta2) * g * g
            m_hat = st.m[name] / bc1
            v_hat = st.v[name] / bc2
            p.data = p.data - st.lr * m_hat / (np.sqrt(v_hat) + st.eps)

    def state_arrays(self):
        """Optimizer state as a flat {name: array} map for checkpointing."""
        out = {}
        for k in self.params:
            out[f"adam.m/{k}"] = self.state.m[k]
            out[f"adam.v/{k}"] = self.state.v[k]
        return out

    def load_state_arrays(self, arrays, step_count):
        for k in self.params:
            self.state.m[k] = np.array(arrays[f"adam.m/{k}"])
            self.state.v[k] = np.array(arrays[f"adam.v/{k}"])
        self.state.step_count = int(step_count)


# -- gradient verification ---------------------------------------------------

def grad_check(f, params, h=1e-5, floor=1e-8, max_coords_per_param=None, rng=None):
    """Compare tape gradients of a scalar-valued graph against central
    finite differences.

    ``f`` is a zero-argument callable that rebuilds the graph from the
    current contents of ``params`` (a {name: DTensor} map or a list) and
    returns the scalar output. Returns the maximum relative error
    |g_tape − g_fd| / max(|g_tape| + |g_fd|, floor) over the checked
    coordinates. ``max_coords_per_param`` subsamples coordinates for large
    parameter sets.
    """
    if isinstance(params, dict):
        plist = list(params.values())
    else:
        plist = list(params)
    for p in plist:
        p.grad = None
    out = f()
    if not np.isfinite(out.item()):
        raise GradientError(f"graph output is not finite: {out.item()}")
    out.backward()
    analytic = []
    for p in plist:
        if p.grad is None:
            analytic.append(np.zeros_like(p.data))
        else:
            analytic.append(p.grad.copy())

    max_err = 0.0
    for p, ga in zip(plist, analytic):
        n = p.data.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        flat = p.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f().item()
            flat[i] = orig - h
            f_minus = f().item()
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2 * h)
            denom = max(abs(ga_flat[i]) + abs(g_fd), floor)
            err = abs(ga_flat[i] - g_fd) / denom
            if err > max_err:
                max_err = err
    return max_err


# -- flat binary array serialization ----------------------------------------

_MAGIC = b"MSPK"


def save_arrays(path, arrays, meta=None):
    """Write {name: float64 array} to a single binary file.

    Layout: 4-byte magic, uint32 little-endian header length, UTF-8 JSON
    manifest ({"meta": ..., "entries": [{name, shape, offset}]}), then the
    concatenated raw little-endian float64 payloads. Deterministic for a
    given input (entries sorted by name).
    """
    entries = []
    offset = 0
    names = sorted(arrays)
    for name in names:
        arr = np.asarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = json.dumps({"meta": meta or {}, "entries": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in names:
            fh.write(np.asarray(arrays[name], dtype="<f8").tobytes())


def load_arrays(path):
    """Read a file written by :func:`save_arrays`; returns (arrays, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a meshspace array file (magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    arrays = {}
    for ent in header["entries"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = ent["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        arrays[ent["name"]] = arr.reshape(shape).astype(np.float64)
    return arrays, header["meta"]


# -- parameter modules -------------------------------------------------------

class Module:
    """Minimal parameter container: leaf params plus named children."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def add_param(self, name, array):
        t = DTensor.param(array)
        self._params[name] = t
        return t

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def parameters(self, prefix=""):
        out = {}
        for k, v in self._params.items():
            out[prefix + k] = v
        for k, child in self._children.items():
            out.update(child.parameters(prefix + k + "/"))
        return out

    def load_parameters(self, arrays, prefix=""):
        for name, p in self.parameters(prefix).items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(
                    f"checkpoint parameter '{name}' has shape {arr.shape}, "
                    f"model expects {p.data.shape}")
            p.data = arr.copy()


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Linear(Module):
    """Affine map y = x @ W + b with He-normal init and zero bias."""

    def __init__(self, rng, n_in, n_out, init="he"):
        super().__init__()
        if init == "he":
            w = he_normal(rng, (n_in, n_out), n_in)
        else:
            w = rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_in, n_out))
        self.w = self.add_param("w", w)
        self.b = self.add_param("b", np.zeros(n_out))

    def __call__(self, x):
        return matmul(x, self.w) + self.b


class Conv2d(Module):
    def __init__(self, rng, c_in, c_out, k, stride=1, pad=0):
        super().__init__()
        kh, kw = _pair(k)
        self.stride = stride
        self.pad = pad
        self.w = self.add_param("w", he_normal(rng, (c_out, c_in, kh, kw), c_in * kh * kw))
        self.b = self.add_param("b", np.zeros(c_out))

    def __call__(self, x):
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)
