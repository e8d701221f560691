"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery for the policy encoders and PPO losses: forward ops
record a graph of backward closures, `backward()` walks it once in reverse
topological order and accumulates gradients additively. Shapes are strict:
the only implicit broadcasts allowed are scalar-tensor and bias-add; use
`broadcast_to` for anything else.

Default precision is float32 for training; tests switch to float64 via
`default_dtype` for tight finite-difference checks.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be np.float32 or np.float64")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (rollout forward passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """N-d array plus gradient accumulator and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate grads of all requires_grad ancestors of this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap_const(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def _wrap_const(value, like: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    # grads are never mutated in place, so sharing/views are safe here
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _check_binary_shapes(op: str, a: Tensor, b: Tensor) -> str:
    """Classify the allowed shape pairing: same, scalar either side, bias."""
    if a.shape == b.shape:
        return "same"
    if b.size == 1:
        return "scalar_b"
    if a.size == 1:
        return "scalar_a"
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1:] == b.shape:
        return "bias"
    raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (undo scalar/bias broadcast)."""
    if g.shape == shape:
        return g
    if shape == () or int(np.prod(shape)) == 1:
        return np.sum(g).reshape(shape)
    extra = g.ndim - len(shape)
    return np.sum(g, axis=tuple(range(extra))).reshape(shape)


# -- arithmetic -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes("add", a, b)

    def backward(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, _reduce_to(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes("sub", a, b)

    def backward(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, _reduce_to(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes("mul", a, b)
    a_data, b_data = a.data, b.data

    def backward(g):
        _accum(a, _reduce_to(g * b_data, a.shape))
        _accum(b, _reduce_to(g * a_data, b.shape))

    return _make(a_data * b_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes("div", a, b)
    a_data, b_data = a.data, b.data
    out = a_data / b_data

    def backward(g):
        _accum(a, _reduce_to(g / b_data, a.shape))
        _accum(b, _reduce_to(-g * out / b_data, b.shape))

    return _make(out, (a, b), backward)


def _reduce_batch(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum matmul-stack broadcast axes of g back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = np.sum(g, axis=tuple(range(extra)))
    ones = tuple(i for i, n in enumerate(shape[:-2]) if n == 1 and g.shape[i] != 1)
    if ones:
        g = np.sum(g, axis=ones, keepdims=True)
    return g


def matmul(a, b) -> Tensor:
    """Matrix product; stack dimensions follow np.matmul broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: need ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2:
        for da, db in zip(a.shape[:-2][::-1], b.shape[:-2][::-1]):
            if da != db and da != 1 and db != 1:
                raise ValueError(f"matmul: batch dims differ, {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(b_data, -1, -2)
        gb = np.swapaxes(a_data, -1, -2) @ g
        _accum(a, _reduce_batch(ga, a.shape))
        _accum(b, _reduce_batch(gb, b.shape))

    return _make(a_data @ b_data, (a, b), backward)


# -- shape ops ----------------------------------------------------------------

def reshape(t, shape) -> Tensor:
    t = _as_tensor(t)
    old = t.shape

    def backward(g):
        _accum(t, g.reshape(old))

    return _make(t.data.reshape(shape), (t,), backward)


def transpose(t, axes: Sequence[int]) -> Tensor:
    t = _as_tensor(t)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accum(t, g.transpose(inverse))

    return _make(t.data.transpose(axes), (t,), backward)


def swap_last(t) -> Tensor:
    """Transpose the last two axes (matmul companion)."""
    t = _as_tensor(t)
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(t, axes)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accum(part, g[tuple(index)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def slice_(t, index) -> Tensor:
    t = _as_tensor(t)
    if isinstance(index, np.ndarray) or (isinstance(index, tuple) and any(isinstance(i, np.ndarray) for i in index)):
        raise TypeError("slice_: use take_rows/gather_last for array indexing")
    shape = t.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        _accum(t, full)

    return _make(t.data[index], (t,), backward)


def take_rows(t, indices) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds."""
    t = _as_tensor(t)
    idx = np.asarray(indices, dtype=np.intp)
    shape = t.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        _accum(t, full)

    return _make(t.data[idx], (t,), backward)


def gather_last(t, indices) -> Tensor:
    """out[..., 0] = t[..., indices[...]] along the last axis."""
    t = _as_tensor(t)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape != t.shape[:-1]:
        raise ValueError(f"gather_last: indices shape {idx.shape} must equal {t.shape[:-1]}")
    expanded = np.expand_dims(idx, -1)

    def backward(g):
        full = np.zeros(t.shape, dtype=g.dtype)
        np.put_along_axis(full, expanded, g, axis=-1)
        _accum(t, full)

    return _make(np.take_along_axis(t.data, expanded, axis=-1), (t,), backward)


def broadcast_to(t, shape) -> Tensor:
    """Explicit broadcast; backward sums over the expanded axes."""
    t = _as_tensor(t)
    shape = tuple(shape)
    old = t.shape
    expanded_axes = tuple(range(len(shape) - len(old)))
    kept = [len(shape) - len(old) + i for i, n in enumerate(old) if n == 1 and shape[len(shape) - len(old) + i] != 1]

    def backward(g):
        g = np.sum(g, axis=expanded_axes) if expanded_axes else g
        if kept:
            g = np.sum(g, axis=tuple(i - len(expanded_axes) for i in kept), keepdims=True)
        _accum(t, g)

    # readonly view is fine: tensor data is never mutated
    return _make(np.broadcast_to(t.data, shape), (t,), backward)


def outer_add(a, b) -> Tensor:
    """Pairwise sum over two row sets: out[..., i, j, :] = a[..., i, :] + b[..., j, :]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape or a.ndim < 2:
        raise ValueError(f"outer_add: need matching (..., N, D) shapes, got {a.shape}, {b.shape}")

    def backward(g):
        _accum(a, np.sum(g, axis=-2))
        _accum(b, np.sum(g, axis=-3))

    return _make(np.expand_dims(a.data, -2) + np.expand_dims(b.data, -3), (a, b), backward)


# -- reductions ---------------------------------------------------------------

def sum_(t, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    shape = t.shape

    def backward(g):
        if axis is None:
            _accum(t, np.broadcast_to(g, shape))
            return
        g_exp = g if keepdims else np.expand_dims(g, axis)
        _accum(t, np.broadcast_to(g_exp, shape))

    return _make(np.sum(t.data, axis=axis, keepdims=keepdims), (t,), backward)


def mean(t, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    shape = t.shape
    count = t.size if axis is None else shape[axis]

    def backward(g):
        if axis is None:
            _accum(t, np.broadcast_to(g / count, shape))
            return
        g_exp = g if keepdims else np.expand_dims(g, axis)
        _accum(t, np.broadcast_to(g_exp / count, shape))

    return _make(np.mean(t.data, axis=axis, keepdims=keepdims), (t,), backward)


# -- elementwise nonlinearities ----------------------------------------------

def relu(t) -> Tensor:
    t = _as_tensor(t)
    out = np.maximum(t.data, 0.0)

    def backward(g):
        _accum(t, g * (t.data > 0))

    return _make(out, (t,), backward)


def leaky_relu(t, slope: float = 0.2) -> Tensor:
    t = _as_tensor(t)
    factor = np.where(t.data > 0, t.data.dtype.type(1.0), t.data.dtype.type(slope))

    def backward(g):
        _accum(t, g * factor)

    return _make(t.data * factor, (t,), backward)


def tanh(t) -> Tensor:
    t = _as_tensor(t)
    out = np.tanh(t.data)

    def backward(g):
        _accum(t, g * (1.0 - out * out))

    return _make(out, (t,), backward)


def sigmoid(t) -> Tensor:
    t = _as_tensor(t)
    out = 1.0 / (1.0 + np.exp(-np.abs(t.data)))
    out = np.where(t.data >= 0, out, 1.0 - out)

    def backward(g):
        _accum(t, g * out * (1.0 - out))

    return _make(out, (t,), backward)


def exp(t) -> Tensor:
    t = _as_tensor(t)
    out = np.exp(t.data)

    def backward(g):
        _accum(t, g * out)

    return _make(out, (t,), backward)


def log(t) -> Tensor:
    t = _as_tensor(t)

    def backward(g):
        _accum(t, g / t.data)

    return _make(np.log(t.data), (t,), backward)


def clip(t, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero outside the interval."""
    t = _as_tensor(t)
    inside = (t.data >= lo) & (t.data <= hi)

    def backward(g):
        _accum(t, g * inside)

    return _make(np.clip(t.data, lo, hi), (t,), backward)


def minimum(a, b) -> Tensor:
    """Elementwise min; gradient follows the smaller operand (ties -> a)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"minimum: shapes must match, got {a.shape} and {b.shape}")
    take_a = a.data <= b.data

    def backward(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _make(np.minimum(a.data, b.data), (a, b), backward)


def maximum(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"maximum: shapes must match, got {a.shape} and {b.shape}")
    take_a = a.data >= b.data

    def backward(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _make(np.maximum(a.data, b.data), (a, b), backward)


# -- normalizations ------------------------------------------------------------

def softmax(t, axis: int = -1) -> Tensor:
    """Softmax along `axis`, stabilized by max subtraction."""
    t = _as_tensor(t)
    shifted = t.data - np.max(t.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        _accum(t, out * (g - dot))

    return _make(out, (t,), backward)


def log_softmax(t, axis: int = -1) -> Tensor:
    t = _as_tensor(t)
    shifted = t.data - np.max(t.data, axis=axis, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - log_z

    def backward(g):
        soft = np.exp(out)
        _accum(t, g - soft * np.sum(g, axis=axis, keepdims=True))

    return _make(out, (t,), backward)


def layer_norm(t, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """(t - mean) / sqrt(var + eps) along `axis`, no affine parameters."""
    t = _as_tensor(t)
    mu = np.mean(t.data, axis=axis, keepdims=True)
    centered = t.data - mu
    var = np.mean(centered * centered, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = centered * inv

    def backward(g):
        g_mean = np.mean(g, axis=axis, keepdims=True)
        gx_mean = np.mean(g * out, axis=axis, keepdims=True)
        _accum(t, inv * (g - g_mean - out * gx_mean))

    return _make(out, (t,), backward)


# -- structured ops -------------------------------------------------------------

def conv1d(x, kernels, stride: int = 1, bias=None) -> Tensor:
    """1D valid cross-correlation.

    x: (C_in, L) or (B, C_in, L); kernels: (C_out, C_in, K); optional bias
    (C_out,) added per output channel. Output length L' = (L - K) // stride + 1.
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    squeeze = x.ndim == 2
    x_data = x.data[None] if squeeze else x.data
    if x_data.ndim != 3 or kernels.ndim != 3:
        raise ValueError(f"conv1d: bad shapes {x.shape}, {kernels.shape}")
    batch, c_in, length = x_data.shape
    c_out, c_in_k, k = kernels.shape
    if c_in != c_in_k:
        raise ValueError(f"conv1d: channel mismatch {c_in} vs {c_in_k}")
    if length < k:
        raise ValueError(f"conv1d: input length {length} shorter than kernel {k}")
    out_len = (length - k) // stride + 1
    # im2col: (B, L', C_in*K) patches
    idx = (np.arange(out_len) * stride)[:, None] + np.arange(k)[None, :]
    patches = x_data[:, :, idx]                      # (B, C_in, L', K)
    patches = patches.transpose(0, 2, 1, 3).reshape(batch, out_len, c_in * k)
    w_flat = kernels.data.reshape(c_out, c_in * k)
    out = patches @ w_flat.T                         # (B, L', C_out)
    out = out.transpose(0, 2, 1)
    parents = [x, kernels]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (c_out,):
            raise ValueError(f"conv1d: bias shape {bias.shape} != ({c_out},)")
        out = out + bias.data[:, None]
        parents.append(bias)

    def backward(g):
        g3 = g[None] if squeeze else g               # (B, C_out, L')
        g_flat = g3.transpose(0, 2, 1)               # (B, L', C_out)
        if bias is not None and bias.requires_grad:
            _accum(bias, g3.sum(axis=(0, 2)))
        if kernels.requires_grad:
            gw = np.einsum("blo,blf->of", g_flat, patches)
            _accum(kernels, gw.reshape(c_out, c_in, k))
        if x.requires_grad:
            gp = g_flat @ w_flat                     # (B, L', C_in*K)
            gp = gp.reshape(batch, out_len, c_in, k).transpose(0, 2, 1, 3)
            gx = np.zeros_like(x_data)
            np.add.at(gx, (slice(None), slice(None), idx), gp)
            _accum(x, gx[0] if squeeze else gx)

    return _make(out[0] if squeeze else out, tuple(parents), backward)


def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh) -> Tensor:
    """Standard GRU update (reset/update/candidate gates).

    x: (B, D_in), h: (B, D); w_ih: (D_in, 3D), w_hh: (D, 3D); biases (3D,).
    Gate layout along the 3D axis is [reset, update, candidate].
    """
    d = h.shape[-1]
    gi = add(matmul(x, w_ih), b_ih)
    gh = add(matmul(h, w_hh), b_hh)
    i_r, i_z, i_n = gi[..., :d], gi[..., d:2 * d], gi[..., 2 * d:]
    h_r, h_z, h_n = gh[..., :d], gh[..., d:2 * d], gh[..., 2 * d:]
    r = sigmoid(add(i_r, h_r))
    z = sigmoid(add(i_z, h_z))
    n = tanh(add(i_n, mul(r, h_n)))
    return add(mul(sub(1.0, z), n), mul(z, h))


class Categorical:
    """Categorical distribution over the last axis of `logits`."""

    def __init__(self, logits: Tensor):
        self.logits = _as_tensor(logits)
        if self.logits.ndim < 1:
            raise ValueError("Categorical requires at least 1 axis of logits")
        self._log_probs = log_softmax(self.logits, axis=-1)

    @property
    def n(self) -> int:
        return self.logits.shape[-1]

    def probs(self) -> np.ndarray:
        return np.exp(self._log_probs.data)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF sampling; shape = logits.shape[:-1]."""
        p = self.probs()
        cdf = np.cumsum(p, axis=-1)
        cdf[..., -1] = 1.0  # guard against rounding shortfall
        u = rng.random(p.shape[:-1] + (1,))
        return np.sum(u > cdf, axis=-1).astype(np.int64)

    def log_prob(self, actions) -> Tensor:
        return gather_last(self._log_probs, actions)[..., 0]

    def entropy(self) -> Tensor:
        p = softmax(self.logits, axis=-1)
        return -sum_(mul(p, self._log_probs), axis=-1)

    def greedy(self) -> np.ndarray:
        """Argmax action; ties break toward the lowest index."""
        return np.argmax(self.logits.data, axis=-1)


# public names for the underscore-suffixed ops (avoid shadowing builtins above)
sum = sum_
take = take_rows
