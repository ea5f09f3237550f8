"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Everything the encoder needs is here: matmul, masked softmax, layer norm,
depthwise/pointwise 1-D convolution, elementwise ops, and a tape-based
backward pass, all on plain numpy arrays.

Two precisions are supported. float32 is the training default; float64 is
what tests and oracles use, because central finite differences (the
gradient-check harness at the bottom of this module) are unreliable in
single precision.

Tensors are immutable values after construction; the only sanctioned
mutation is `Tensor.assign`, used by the optimizer and checkpoint loader
to swap a leaf parameter's buffer between tapes.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_SUPPORTED_DTYPES = (np.float32, np.float64)


class ShapeMismatchError(ValueError):
    """Operand dimensions are incompatible for the requested op."""


class DegenerateMaskError(ValueError):
    """An attention mask drops every position in some row."""


class KernelTooLargeError(ValueError):
    """Convolution kernel exceeds what the padded input can support."""


def mask_sentinel(dtype) -> float:
    """Additive-mask 'drop' value: the most negative finite value of `dtype`.

    Chosen over -inf so that logits + mask never produces NaN via inf - inf,
    while exp() of (sentinel - rowmax) still underflows to exactly 0.
    """
    return float(np.finfo(np.dtype(dtype)).min)


def _contiguous(arr) -> np.ndarray:
    # ascontiguousarray would promote 0-d scalars to shape (1,); plain
    # asarray also re-boxes the numpy scalars some ufuncs hand back
    arr = np.asarray(arr)
    if arr.ndim == 0 or arr.flags.c_contiguous:
        return arr
    return np.ascontiguousarray(arr)


def _check_dtype(arr: np.ndarray) -> np.ndarray:
    if arr.dtype.type not in _SUPPORTED_DTYPES:
        arr = arr.astype(DEFAULT_DTYPE)
    return _contiguous(arr)


class Tensor:
    """A row-major numpy array plus the graph edge that produced it."""

    def __init__(self, data, requires_grad=False, dtype=None, name=None,
                 parents=(), backward_fn=None):
        arr = np.array(data, dtype=dtype, copy=True) if dtype is not None \
            else np.array(data, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = _check_dtype(arr)
        self.data.flags.writeable = False
        self.name = name
        self._parents: tuple[Tensor, ...] = tuple(parents)
        self._backward_fn = backward_fn
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self._parents)

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents, backward_fn) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = _contiguous(data)
        t.data.flags.writeable = False
        t.name = None
        t._parents = tuple(parents)
        t._backward_fn = backward_fn
        t.requires_grad = any(p.requires_grad for p in t._parents)
        return t

    # -- basic properties -----------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return np.array(self.data, copy=True)

    def assign(self, new_data) -> None:
        """Replace this leaf's buffer (parameter update / checkpoint load)."""
        if self._backward_fn is not None:
            raise ValueError("assign() is only valid on leaf tensors")
        arr = _contiguous(np.array(new_data, dtype=self.dtype, copy=True))
        if arr.shape != self.data.shape:
            raise ShapeMismatchError(
                f"assign shape {arr.shape} != {self.data.shape}")
        arr.flags.writeable = False
        self.data = arr

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={self.shape} dtype={self.data.dtype}{tag}>"

    # -- operator sugar ---------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __rsub__(self, other):
        return sub(self._coerce(other), self)

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return mul(self._coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, dtype=DEFAULT_DTYPE, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# broadcasting support (deliberately narrow: equal shapes, scalars, and a
# trailing-axis row vector for biases)
# ---------------------------------------------------------------------------


def _broadcast_ok(a: np.ndarray, b: np.ndarray) -> bool:
    if a.shape == b.shape:
        return True
    if b.ndim == 0 or a.ndim == 0:
        return True
    return b.shape == a.shape[-1:] or a.shape == b.shape[-1:]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    for ax, n in enumerate(shape):
        if grad.shape[ax] != n:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def _binary(a: Tensor, b: Tensor, fwd, bwd_a, bwd_b) -> Tensor:
    if not _broadcast_ok(a.data, b.data):
        raise ShapeMismatchError(f"shapes {a.shape} and {b.shape} do not align")
    out = fwd(a.data, b.data)

    def backward(g):
        return (_unbroadcast(bwd_a(g), a.shape),
                _unbroadcast(bwd_b(g), b.shape))

    return Tensor._from_op(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.add, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.subtract, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.multiply,
                   lambda g: g * b.data, lambda g: g * a.data)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product a[m,k] @ b[k,n].

    In float64 the product is accumulated in index order (einsum without
    optimization) so brute-force oracles reproduce it bit-for-bit; float32
    uses BLAS for speed.
    """
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatchError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"inner dimensions differ: {a.shape} @ {b.shape}")
    if a.dtype == np.float64:
        out = np.einsum("ik,kj->ij", a.data, b.data, optimize=False)
    else:
        out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatchError("transpose expects a 2-D tensor")
    return Tensor._from_op(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,),
                           lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    sizes = [t.shape[axis] for t in parts]
    out = np.concatenate([t.data for t in parts], axis=axis)

    def backward(g):
        grads, off = [], 0
        for n in sizes:
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(off, off + n)
            grads.append(g[tuple(idx)])
            off += n
        return tuple(grads)

    return Tensor._from_op(out, parts, backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    out = a.data[tuple(idx)]

    def backward(g):
        full = np.zeros_like(a.data)
        full[tuple(idx)] = g
        return (full,)

    return Tensor._from_op(out, (a,), backward)


def tsum(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)
    return Tensor._from_op(out, (a,),
                           lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),))


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean(), dtype=a.dtype)
    return Tensor._from_op(
        out, (a,),
        lambda g: ((np.broadcast_to(g, a.shape) / n).astype(a.dtype),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return Tensor._from_op(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor._from_op(y.astype(a.dtype), (a,),
                           lambda g: (g * y * (1.0 - y),))


def swish(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    y = a.data * s
    return Tensor._from_op(y.astype(a.dtype), (a,),
                           lambda g: (g * (s + a.data * s * (1.0 - s)),))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; the subgradient routes to the argmax input, ties to `a`."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes {a.shape} and {b.shape} differ")
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def backward(g):
        return g * take_a, g * ~take_a

    return Tensor._from_op(out, (a, b), backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    passthrough = (a.data >= lo) & (a.data <= hi)
    return Tensor._from_op(out, (a,), lambda g: (g * passthrough,))


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return Tensor._from_op(a.data * keep, (a,), lambda g: (g * keep,))


def masked_softmax(logits: Tensor, mask: Tensor | None = None) -> Tensor:
    """Row softmax over the last axis with an optional additive mask.

    Mask entries must be 0 (keep) or the dtype's sentinel (drop); masked
    positions come out exactly 0 and every row sums to 1.
    """
    z = logits.data
    keep = None
    if mask is not None:
        if mask.shape != logits.shape:
            raise ShapeMismatchError(
                f"mask shape {mask.shape} != logits shape {logits.shape}")
        sent = mask_sentinel(logits.dtype)
        md = mask.data.astype(logits.dtype)
        if not np.all((md == 0) | (md == sent)):
            raise ValueError("mask entries must be 0 or the -inf sentinel")
        keep = md == 0
        if not keep.any(axis=-1).all():
            raise DegenerateMaskError("a mask row drops every position")
        z = z + md
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    if keep is not None:
        e = e * keep
    y = e / e.sum(axis=-1, keepdims=True)
    y = y.astype(logits.dtype)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        dz = y * (g - dot)
        if mask is None:
            return (dz,)
        return dz, None

    parents = (logits,) if mask is None else (logits, mask)
    return Tensor._from_op(y, parents, backward)


def log_softmax(logits: Tensor) -> Tensor:
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    s = np.exp(z - m)
    lse = m + np.log(s.sum(axis=-1, keepdims=True))
    y = z - lse
    p = s / s.sum(axis=-1, keepdims=True)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return Tensor._from_op(y.astype(logits.dtype), (logits,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize each row of the last axis to mean 0 / variance 1, then affine.

    Population variance, floored by `eps`.
    """
    if x.shape[-1] != gain.shape[-1] or x.shape[-1] != bias.shape[-1]:
        raise ShapeMismatchError("gain/bias must match the last axis of x")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = gain.data * xhat + bias.data

    def backward(g):
        c = x.shape[-1]
        a = g * gain.data
        dx = inv * (a - a.mean(axis=-1, keepdims=True)
                    - xhat * (a * xhat).mean(axis=-1, keepdims=True))
        dgain = _unbroadcast(g * xhat, gain.shape)
        dbias = _unbroadcast(g, bias.shape)
        return dx.astype(x.dtype), dgain, dbias

    return Tensor._from_op(y.astype(x.dtype), (x, gain, bias), backward)


def conv1d_depthwise(x: Tensor, kernels: Tensor) -> Tensor:
    """Per-channel 1-D convolution, same-length via symmetric zero padding.

    x is (T, C), kernels is (k, C) with k odd; output (T, C). Channels are
    independent; pad is (k - 1) / 2 on each side.
    """
    if x.data.ndim != 2 or kernels.data.ndim != 2:
        raise ShapeMismatchError("conv1d_depthwise expects 2-D x and kernels")
    t_len, c = x.shape
    k, kc = kernels.shape
    if kc != c:
        raise ShapeMismatchError(f"kernel channels {kc} != input channels {c}")
    if k % 2 == 0:
        raise ShapeMismatchError(f"kernel size must be odd, got {k}")
    if k > 2 * t_len + 1:
        raise KernelTooLargeError(
            f"kernel size {k} exceeds 2*T+1 = {2 * t_len + 1}")
    pad = (k - 1) // 2
    xp = np.zeros((t_len + 2 * pad, c), dtype=x.dtype)
    xp[pad:pad + t_len] = x.data
    out = np.zeros((t_len, c), dtype=x.dtype)
    for j in range(k):
        out += xp[j:j + t_len] * kernels.data[j]

    def backward(g):
        dxp = np.zeros_like(xp)
        dk = np.zeros_like(kernels.data)
        for j in range(k):
            dxp[j:j + t_len] += g * kernels.data[j]
            dk[j] = (g * xp[j:j + t_len]).sum(axis=0)
        return dxp[pad:pad + t_len], dk

    return Tensor._from_op(out, (x, kernels), backward)


def conv1d_pointwise(x: Tensor, w: Tensor) -> Tensor:
    """1x1 convolution over time: a per-frame linear map, i.e. x @ w."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeMismatchError("conv1d_pointwise expects 2-D operands")
    if x.shape[1] != w.shape[0]:
        raise ShapeMismatchError(
            f"channel mismatch: x has {x.shape[1]}, w expects {w.shape[0]}")
    return matmul(x, w)


def gather_rows(x: Tensor, idx) -> Tensor:
    """out[i] = x[i, idx[i]]; idx is a non-differentiable int sequence."""
    ii = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2 or ii.ndim != 1 or ii.shape[0] != x.shape[0]:
        raise ShapeMismatchError("gather_rows expects x (N,V) and idx (N,)")
    rows = np.arange(x.shape[0])
    out = x.data[rows, ii]

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[rows, ii] = g
        return (dx,)

    return Tensor._from_op(out, (x,), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: out[i] = table[ids[i]]."""
    ii = np.asarray(ids, dtype=np.int64)
    if ii.ndim != 1:
        raise ShapeMismatchError("embedding ids must be 1-D")
    if ii.size and (ii.min() < 0 or ii.max() >= table.shape[0]):
        raise IndexError("embedding id out of range")
    out = table.data[ii]

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ii, g)
        return (dt,)

    return Tensor._from_op(out, (table,), backward)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


class Tape:
    """Gradient accumulators keyed by tensor identity, filled by `backward`."""

    def __init__(self):
        self._grads: dict[int, np.ndarray] = {}
        self._keep: dict[int, Tensor] = {}

    def _accumulate(self, t: Tensor, g: np.ndarray) -> None:
        key = id(t)
        if key in self._grads:
            self._grads[key] = self._grads[key] + g
        else:
            self._grads[key] = g
            self._keep[key] = t

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the traced output w.r.t. `t` (zeros if unused)."""
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, tape: Tape | None = None) -> Tape:
    """Reverse sweep from a scalar output; visits each node exactly once."""
    if output.data.size != 1:
        raise ValueError(
            f"backward requires a scalar output, got shape {output.shape}")
    tape = tape if tape is not None else Tape()
    if not output.requires_grad:
        return tape
    order = _toposort(output)
    tape._accumulate(output, np.ones_like(output.data))
    for node in reversed(order):
        if node._backward_fn is None:
            continue
        g = tape._grads.get(id(node))
        if g is None:
            continue
        parent_grads = node._backward_fn(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            tape._accumulate(p, np.asarray(pg, dtype=p.dtype))
    return tape


# ---------------------------------------------------------------------------
# VFT1 tensor file format
# ---------------------------------------------------------------------------

VFT_MAGIC = b"VFT1"


def vft_bytes(arr: np.ndarray) -> bytes:
    """Serialize an array: magic, LE u32 rank, LE u32 dims, LE f32 payload."""
    a = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
    head = VFT_MAGIC + struct.pack("<I", a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def vft_from_stream(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != VFT_MAGIC:
        raise ValueError(f"bad VFT1 magic: {magic!r}")
    (rank,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(dims)) if rank else 1
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise ValueError("truncated VFT1 payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def write_vft(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(vft_bytes(arr))


def read_vft(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return vft_from_stream(fh)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def numeric_gradient(f: Callable[[], Tensor], t: Tensor,
                     step: float = 1e-4, coords=None) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. leaf tensor `t`.

    `coords` restricts the sweep to the given flat indices (all by default).
    """
    base = t.numpy()
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    src = base.reshape(-1)
    indices = range(src.size) if coords is None else coords
    for i in indices:
        pert = src.copy()
        pert[i] = src[i] + step
        t.assign(pert.reshape(base.shape))
        hi = f().item()
        pert[i] = src[i] - step
        t.assign(pert.reshape(base.shape))
        lo = f().item()
        flat[i] = (hi - lo) / (2.0 * step)
    t.assign(base)
    return grad


def max_grad_error(f: Callable[[], Tensor], wrt: Iterable[Tensor],
                   step: float = 1e-4, sample_per_tensor: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Largest relative error between analytic and numeric gradients.

    Relative error per element is |a - n| / max(1, |a|, |n|); run this in
    float64, single precision drowns the differences in rounding noise.
    With `sample_per_tensor`, only that many seeded random coordinates per
    tensor are swept (for large composites); all coordinates otherwise.
    """
    params = list(wrt)
    tape = backward(f())
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p in params:
        a = tape.grad(p)
        if sample_per_tensor is None or p.size <= sample_per_tensor:
            coords = None
        else:
            coords = rng.choice(p.size, size=sample_per_tensor,
                                replace=False)
        n = numeric_gradient(f, p, step=step, coords=coords)
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        err = np.abs(a - n) / denom
        if coords is not None:
            err = err.reshape(-1)[coords]
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
