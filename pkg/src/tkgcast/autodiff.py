"""Reverse-mode automatic differentiation over dense float64 arrays.

A small eager engine: every operation computes its value immediately and, when
gradient tracking is on, records a closure that accumulates gradients into its
inputs. ``Tensor.backward()`` walks the recorded graph once in reverse
topological order, so each node's value is computed exactly once per forward
pass and its gradient accumulated exactly once per backward pass.

Conventions baked into the kernel contract:

* everything is float64; values must stay finite (a non-finite result raises
  ``NonFiniteError`` naming the offending op),
* "minus infinity" in additive softmax masks is the sentinel ``NEG_INF``
  (-1e30). Entries at or below ``MASK_THRESHOLD`` are hard-masked: they get
  exactly zero weight and propagate exactly zero gradient,
* circular correlation is computed directly (O(d^2) shifts, no transforms).
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

NEG_INF = -1e30
MASK_THRESHOLD = -1e29


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """One node of the computation graph: a value, and how to backprop it."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = _as_array(value)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{tag})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad.

        The root must be scalar (a single value of any shape-() or size-1
        array); gradients sum over all paths.
        """
        if self.value.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {self.value.shape}")
        order = _toposort(self)
        self._accumulate(np.ones_like(self.value))
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar for the common arithmetic ops.
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_array(value):
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
    """Iterative reverse topological order (graphs get deep; no recursion)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def _make(value, parents, backward, op_name):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite value produced by op '{op_name}'")
    out = Tensor(value)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum g back down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op_name):
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ShapeError(f"{op_name}: shapes {a.value.shape} and {b.value.shape} do not broadcast")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        a._accumulate(_unbroadcast(g, a.value.shape))
        b._accumulate(_unbroadcast(g, b.value.shape))

    return _make(a.value + b.value, (a, b), bw, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        a._accumulate(_unbroadcast(g, a.value.shape))
        b._accumulate(_unbroadcast(-g, b.value.shape))

    return _make(a.value - b.value, (a, b), bw, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        a._accumulate(_unbroadcast(g * b.value, a.value.shape))
        b._accumulate(_unbroadcast(g * a.value, b.value.shape))

    return _make(a.value * b.value, (a, b), bw, "mul")


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)

    def bw(g):
        a._accumulate(g * c)

    return _make(a.value * c, (a,), bw, "scale")


# ---------------------------------------------------------------------------
# linear algebra / structure


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: shapes {a.value.shape} and {b.value.shape} do not align")

    def bw(g):
        a._accumulate(g @ b.value.T)
        b._accumulate(a.value.T @ g)

    return _make(a.value @ b.value, (a, b), bw, "matmul")


def bmm(a, b):
    """Batched matmul: (B, n, k) @ (B, k, p) -> (B, n, p)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if (
        a.value.ndim != 3
        or b.value.ndim != 3
        or a.value.shape[0] != b.value.shape[0]
        or a.value.shape[2] != b.value.shape[1]
    ):
        raise ShapeError(f"bmm: shapes {a.value.shape} and {b.value.shape} do not align")

    def bw(g):
        a._accumulate(g @ np.swapaxes(b.value, 1, 2))
        b._accumulate(np.swapaxes(a.value, 1, 2) @ g)

    return _make(a.value @ b.value, (a, b), bw, "bmm")


def swapaxes(a, axis1, axis2):
    a = _as_tensor(a)

    def bw(g):
        a._accumulate(np.swapaxes(g, axis1, axis2))

    return _make(np.swapaxes(a.value, axis1, axis2), (a,), bw, "swapaxes")


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.value.shape

    def bw(g):
        a._accumulate(g.reshape(old))

    return _make(a.value.reshape(shape), (a,), bw, "reshape")


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return _make(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    """Stack equal-shaped tensors along a new axis (reshape + concat)."""
    expanded = []
    for t in tensors:
        t = _as_tensor(t)
        shape = list(t.value.shape)
        shape.insert(axis, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


def getitem(a, key):
    a = _as_tensor(a)
    value = a.value[key]
    keys = key if isinstance(key, tuple) else (key,)
    fancy = any(isinstance(k, np.ndarray) for k in keys)

    def bw(g):
        full = np.zeros_like(a.value)
        if fancy:
            np.add.at(full, key, g)  # repeated indices must accumulate
        else:
            full[key] += g
        a._accumulate(full)

    return _make(np.array(value, copy=True), (a,), bw, "getitem")


def gather_rows(table, idx):
    """Pick rows `idx` (int array, repeats allowed) from a 2-D table."""
    table = _as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    if table.value.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got {table.value.shape}")

    def bw(g):
        full = kernels.scatter_add_rows(np.zeros_like(table.value), idx, g)
        table._accumulate(full)

    return _make(table.value[idx], (table,), bw, "gather_rows")


def segment_sum(rows, idx, num_segments):
    """Sum rows into per-segment buckets: out[idx[e]] += rows[e]."""
    rows = _as_tensor(rows)
    idx = np.asarray(idx, dtype=np.int64)
    if rows.value.ndim != 2 or idx.shape[0] != rows.value.shape[0]:
        raise ShapeError(f"segment_sum: rows {rows.value.shape} vs idx {idx.shape}")
    out = kernels.scatter_add_rows(np.zeros((num_segments, rows.value.shape[1])), idx, rows.value)

    def bw(g):
        rows._accumulate(g[idx])

    return _make(out, (rows,), bw, "segment_sum")


def row_update(base, idx, rows):
    """Copy of `base` with rows at unique indices `idx` replaced by `rows`."""
    base, rows = _as_tensor(base), _as_tensor(rows)
    idx = np.asarray(idx, dtype=np.int64)
    if len(np.unique(idx)) != len(idx):
        raise ShapeError("row_update: indices must be unique")
    value = base.value.copy()
    value[idx] = rows.value

    def bw(g):
        gb = g.copy()
        gb[idx] = 0.0
        base._accumulate(gb)
        rows._accumulate(g[idx])

    return _make(value, (base, rows), bw, "row_update")


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a):
    a = _as_tensor(a)
    mask = a.value > 0

    def bw(g):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.value, 0.0), (a,), bw, "relu")


def sigmoid(a):
    a = _as_tensor(a)
    # Stable in both tails.
    v = np.where(a.value >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.value))), np.exp(-np.abs(a.value)) / (1.0 + np.exp(-np.abs(a.value))))

    def bw(g):
        a._accumulate(g * v * (1.0 - v))

    return _make(v, (a,), bw, "sigmoid")


def tanh(a):
    a = _as_tensor(a)
    v = np.tanh(a.value)

    def bw(g):
        a._accumulate(g * (1.0 - v * v))

    return _make(v, (a,), bw, "tanh")


def masked_softmax(a, mask=None, axis=-1):
    """Softmax along `axis` with an optional additive mask.

    Mask entries at or below MASK_THRESHOLD hard-mask their position: exactly
    zero weight out, exactly zero gradient in. Rows whose positions are all
    hard-masked come out as all zeros (no renormalization is possible).
    """
    a = _as_tensor(a)
    logits = a.value
    if mask is not None:
        if isinstance(mask, Tensor):
            mask = mask.value  # masks are constants; they carry no gradient
        mask = np.asarray(mask, dtype=np.float64)
        try:
            np.broadcast_shapes(logits.shape, mask.shape)
        except ValueError:
            raise ShapeError(f"masked_softmax: logits {logits.shape} vs mask {mask.shape}")
        hard = np.broadcast_to(mask <= MASK_THRESHOLD, np.broadcast_shapes(logits.shape, mask.shape))
        logits = np.broadcast_to(logits, hard.shape) + np.where(hard, 0.0, np.broadcast_to(mask, hard.shape))
        live = ~hard
    else:
        live = np.ones(logits.shape, dtype=bool)

    shifted = np.where(live, logits, -np.inf)
    high = np.max(shifted, axis=axis, keepdims=True)
    high = np.where(np.isfinite(high), high, 0.0)
    w = np.exp(np.where(live, logits - high, -np.inf))
    total = w.sum(axis=axis, keepdims=True)
    safe_total = np.where(total > 0, total, 1.0)
    p = w / safe_total

    def bw(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        ga = p * (g - inner)
        a._accumulate(_unbroadcast(ga, a.value.shape))

    return _make(p, (a,), bw, "masked_softmax")


def softmax(a, axis=-1):
    return masked_softmax(a, mask=None, axis=axis)


# ---------------------------------------------------------------------------
# reductions and losses


def tensor_sum(a, axis=None):
    a = _as_tensor(a)

    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.value.shape).copy())
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.value.shape).copy())

    return _make(np.sum(a.value, axis=axis), (a,), bw, "sum")


def tensor_mean(a, axis=None):
    a = _as_tensor(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return scale(tensor_sum(a, axis=axis), 1.0 / count)


def pick_neg_log(probs, index):
    """-log(p[index]) for a 1-D distribution, or -log(p[i, index[i]]) row-wise."""
    probs = _as_tensor(probs)
    if probs.value.ndim == 1:
        idx = int(index)
        picked = probs.value[idx]

        def bw(g):
            full = np.zeros_like(probs.value)
            full[idx] = -g / picked
            probs._accumulate(full)

        return _make(-np.log(picked), (probs,), bw, "pick_neg_log")

    if probs.value.ndim == 2:
        idx = np.asarray(index, dtype=np.int64)
        if idx.shape[0] != probs.value.shape[0]:
            raise ShapeError(f"pick_neg_log: {probs.value.shape[0]} rows vs {idx.shape[0]} indices")
        rows = np.arange(idx.shape[0])
        picked = probs.value[rows, idx]

        def bw(g):
            full = np.zeros_like(probs.value)
            full[rows, idx] = -g / picked
            probs._accumulate(full)

        return _make(-np.log(picked), (probs,), bw, "pick_neg_log")

    raise ShapeError(f"pick_neg_log: expected 1-D or 2-D probs, got {probs.value.shape}")


def softmax_cross_entropy(logits, targets):
    """Per-row -log softmax(logits)[target], fused for numerical stability.

    Computes the loss from shifted logits directly (never materializing the
    probability, which can underflow to zero for large logit gaps); backward
    is the closed form softmax(logits) - onehot(targets).
    """
    logits = _as_tensor(logits)
    if logits.value.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: expected 2-D logits, got {logits.value.shape}")
    idx = np.asarray(targets, dtype=np.int64)
    if idx.shape != (logits.value.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: {logits.value.shape[0]} rows vs targets {idx.shape}")
    x = logits.value
    high = x.max(axis=1, keepdims=True)
    shifted = x - high
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(idx.shape[0])
    losses = lse - shifted[rows, idx]
    p = np.exp(shifted) / np.exp(lse)[:, None]

    def bw(g):
        full = p * g[:, None]
        full[rows, idx] -= g
        logits._accumulate(full)

    return _make(losses, (logits,), bw, "softmax_cross_entropy")


def circular_correlation(a, b):
    """c[..., i] = sum_k a[..., k] * b[..., (k + i) % d] along the last axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"circular_correlation: shapes {a.value.shape} vs {b.value.shape}")
    value = kernels.circular_correlate(a.value, b.value)

    def bw(g):
        # d/da_k = sum_i g_i b_{(k+i)%d}  -> correlation of g with b
        # d/db_m = sum_k a_k g_{(m-k)%d}  -> convolution of a with g
        a._accumulate(kernels.circular_correlate(g, b.value))
        b._accumulate(kernels.circular_convolve(a.value, g))

    return _make(value, (a, b), bw, "circular_correlation")


def dropout(a, rate, rng, training):
    """Inverted dropout with a mask drawn from `rng`; identity in eval mode."""
    a = _as_tensor(a)
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.value.shape) >= rate) / (1.0 - rate)

    def bw(g):
        a._accumulate(g * keep)

    return _make(a.value * keep, (a,), bw, "dropout")


def forward(root):
    """Value of an (eagerly evaluated) graph root.

    Construction is the forward pass: each node's value is computed exactly
    once when its op runs. This accessor exists so callers can treat a graph
    root uniformly as "run forward, give me the array".
    """
    return root.value


# ---------------------------------------------------------------------------
# parameters and optimization


class ParameterStore:
    """Named trainable tensors, iterated in insertion order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name, value):
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def arrays(self):
        """Name -> value array view (used by checkpointing)."""
        return {name: t.value for name, t in self._params.items()}

    def load_arrays(self, arrays):
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            if arrays[name].shape != t.value.shape:
                raise ShapeError(f"parameter {name!r}: shape {arrays[name].shape} vs expected {t.value.shape}")
            t.value = np.array(arrays[name], dtype=np.float64)


def uniform_init(rng, shape, fan=None):
    """Uniform(-1/sqrt(fan), 1/sqrt(fan)); fan defaults to the last dim."""
    if fan is None:
        fan = shape[-1]
    bound = 1.0 / np.sqrt(fan)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AdamState:
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


class Adam:
    """Adam with bias correction; update order follows parameter order."""

    def __init__(self, store: ParameterStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()
        self._warned_missing = set()

    def step(self, grads=None):
        """One update. `grads` maps name -> array; defaults to .grad fields.

        A parameter with no gradient is treated as zero-gradient (its moments
        still decay), logged once per name.
        """
        self.state.step += 1
        t = self.state.step
        for name, p in self.store.items():
            if grads is not None:
                g = grads.get(name)
            else:
                g = p.grad
            if g is None:
                if name not in self._warned_missing:
                    log.warning("no gradient for parameter %r; treating as zero", name)
                    self._warned_missing.add(name)
                g = np.zeros_like(p.value)
            m = self.state.first_moment.setdefault(name, np.zeros_like(p.value))
            v = self.state.second_moment.setdefault(name, np.zeros_like(p.value))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradcheckReport:
    max_rel_error: float
    per_input: list
    failures: list

    def ok(self, tol=1e-4):
        return not self.failures and self.max_rel_error < tol


def gradcheck(fn, inputs, step=1e-5, tol=1e-4, atol_floor=1e-6):
    """Compare analytic gradients of `fn` against central finite differences.

    `fn` takes a list of Tensors and returns a scalar Tensor; it must be
    deterministic. Entries where both gradients are below `atol_floor` in
    magnitude count as matching (relative error is meaningless at zero).
    """
    tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(tensors)
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.value) for t in tensors]

    per_input = []
    failures = []
    with no_grad():
        for i, t in enumerate(tensors):
            numeric = np.zeros_like(t.value)
            flat = t.value.reshape(-1)
            num_flat = numeric.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                hi = float(fn(tensors).value)
                flat[j] = orig - step
                lo = float(fn(tensors).value)
                flat[j] = orig
                num_flat[j] = (hi - lo) / (2.0 * step)
            denom = np.maximum(np.abs(analytic[i]), np.abs(numeric))
            err = np.abs(analytic[i] - numeric)
            rel = np.where(denom > atol_floor, err / np.maximum(denom, atol_floor), 0.0)
            worst = float(rel.max()) if rel.size else 0.0
            per_input.append(worst)
            if worst >= tol:
                failures.append(f"input {i}: max relative error {worst:.3e}")
    return GradcheckReport(max(per_input) if per_input else 0.0, per_input, failures)
