"""Dense 2-D matrices with reverse-mode differentiation.

Every value in the computation graph is a 2-D numpy array. Parameters may be
stored in float32, but all arithmetic upcasts to float64 so that accumulation
always happens in 64-bit; results of float32 graphs stay comparable to
central finite differences at tight tolerances.

The graph is micrograd-style: each op returns a ``Tensor`` whose ``_backward``
closure scatters the upstream gradient into its parents. ``backward(loss)``
runs the closures once per node in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DegenerateInputError(ValueError):
    """An input row is degenerate (e.g. zero norm) for the requested operation."""


class ContractError(ValueError):
    """An operation was called outside its contract (e.g. backward on non-scalar)."""


class NumericsError(ArithmeticError):
    """An exported operation produced a non-finite value."""


def _as2d(x) -> np.ndarray:
    a = np.asarray(x)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def _check_finite(a: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericsError(f"{op} produced non-finite entries")
    return a


class Tensor:
    """A node in the computation graph: a 2-D value plus an optional gradient.

    Leaves created with ``requires_grad=True`` are parameters; their ``grad``
    is populated (as float64, same shape as ``value``) by ``backward``.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name",
                 "_grad_aliased")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = _as2d(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None
        self.name = name
        self._grad_aliased = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def f64(self) -> np.ndarray:
        return self.value.astype(np.float64, copy=False)

    def _add_grad(self, g: np.ndarray) -> None:
        # first contribution adopts the caller's array without copying; a
        # second contribution must allocate before accumulating, since the
        # adopted array may be a view into another node's gradient
        if self.grad is None:
            g = np.asarray(g, dtype=np.float64)
            self.grad = np.broadcast_to(g, self.value.shape) if g.shape != self.value.shape else g
            self._grad_aliased = True
        elif self._grad_aliased:
            self.grad = self.grad + g
            self._grad_aliased = False
        else:
            self.grad += g

    def __repr__(self) -> str:  # pragma: no cover
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad}{tag})"


def constant(x, name: str = "") -> Tensor:
    return Tensor(x, requires_grad=False, name=name)


def parameter(x, name: str = "") -> Tensor:
    return Tensor(x, requires_grad=True, name=name)


def _node(value: np.ndarray, parents: Sequence[Tensor], backward: Callable[[], None]) -> Tensor:
    out = Tensor(value, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


# ---------------------------------------------------------------------------
# core ops


def matmul(a, b) -> Tensor:
    """Matrix product; inner dimensions must agree."""
    a, b = _wrap(a), _wrap(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    av, bv = a.f64(), b.f64()
    with np.errstate(over="ignore", invalid="ignore"):
        value = _check_finite(av @ bv, "matmul")
    out = _node(value, (a, b), lambda: None)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._add_grad(g @ bv.T)
        if b.requires_grad:
            b._add_grad(av.T @ g)

    out._backward = backward
    return out


def _reduce_to(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # undo numpy broadcasting along axes where the operand had size 1
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _broadcastable(sa: tuple[int, int], sb: tuple[int, int]) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb))


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"add: shapes not broadcastable, {a.shape} vs {b.shape}")
    value = a.f64() + b.f64()
    out = _node(value, (a, b), lambda: None)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._add_grad(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._add_grad(_reduce_to(g, b.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"mul: shapes not broadcastable, {a.shape} vs {b.shape}")
    av, bv = a.f64(), b.f64()
    out = _node(av * bv, (a, b), lambda: None)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._add_grad(_reduce_to(g * bv, a.shape))
        if b.requires_grad:
            b._add_grad(_reduce_to(g * av, b.shape))

    out._backward = backward
    return out


def scale(a, s: float) -> Tensor:
    a = _wrap(a)
    out = _node(a.f64() * float(s), (a,), lambda: None)

    def backward():
        if a.requires_grad:
            a._add_grad(out.grad * float(s))

    out._backward = backward
    return out


def sub(a, b) -> Tensor:
    return add(a, scale(b, -1.0))


def transpose(a) -> Tensor:
    a = _wrap(a)
    out = _node(a.f64().T.copy(), (a,), lambda: None)

    def backward():
        if a.requires_grad:
            a._add_grad(out.grad.T)

    out._backward = backward
    return out


def tanh(a) -> Tensor:
    a = _wrap(a)
    t = np.tanh(a.f64())
    out = _node(t, (a,), lambda: None)

    def backward():
        if a.requires_grad:
            a._add_grad(out.grad * (1.0 - t * t))

    out._backward = backward
    return out


def log(a) -> Tensor:
    a = _wrap(a)
    av = a.f64()
    if np.any(av <= 0):
        raise NumericsError("log: non-positive input")
    out = _node(np.log(av), (a,), lambda: None)

    def backward():
        if a.requires_grad:
            a._add_grad(out.grad / av)

    out._backward = backward
    return out


def sum_all(a) -> Tensor:
    a = _wrap(a)
    out = _node(np.array([[a.f64().sum()]]), (a,), lambda: None)

    def backward():
        if a.requires_grad:
            a._add_grad(np.full(a.shape, out.grad[0, 0]))

    out._backward = backward
    return out


def mean_all(a) -> Tensor:
    a = _wrap(a)
    return scale(sum_all(a), 1.0 / (a.shape[0] * a.shape[1]))


def reshape(a, rows: int, cols: int) -> Tensor:
    a = _wrap(a)
    if rows * cols != a.shape[0] * a.shape[1]:
        raise ShapeError(f"reshape: cannot view {a.shape} as ({rows}, {cols})")
    out = _node(a.f64().reshape(rows, cols), (a,), lambda: None)

    def backward():
        if a.requires_grad:
            a._add_grad(out.grad.reshape(a.shape))

    out._backward = backward
    return out


def concat_zero_col(a) -> Tensor:
    """Append one all-zero column; lets gather indices address a padding slot."""
    a = _wrap(a)
    av = a.f64()
    value = np.concatenate([av, np.zeros((av.shape[0], 1))], axis=1)
    out = _node(value, (a,), lambda: None)

    def backward():
        if a.requires_grad:
            a._add_grad(out.grad[:, :-1])

    out._backward = backward
    return out


def take_cols(a, idx: np.ndarray, scatter_cache: dict | None = None) -> Tensor:
    """Gather columns ``out[:, k] = a[:, idx[k]]`` (duplicates allowed).

    ``scatter_cache`` may be supplied by long-lived callers (e.g. a conv
    layer) to reuse the flattened scatter targets across batches.
    """
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ShapeError(f"take_cols: index out of range for {a.shape[1]} columns")
    av = a.f64()
    out = _node(av.take(idx, axis=1), (a,), lambda: None)

    def backward():
        if not a.requires_grad:
            return
        g = out.grad
        rows, cols = a.shape
        key = rows
        flat = None if scatter_cache is None else scatter_cache.get(key)
        if flat is None:
            flat = (np.arange(rows, dtype=np.int64)[:, None] * cols + idx[None, :]).ravel()
            if scatter_cache is not None:
                scatter_cache[key] = flat
        ga = np.bincount(flat, weights=g.ravel(), minlength=rows * cols)
        a._add_grad(ga.reshape(rows, cols))

    out._backward = backward
    return out


def softmax_rows(m) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    m = _wrap(m)
    v = m.f64()
    if not np.all(np.isfinite(v)):
        raise NumericsError("softmax_rows: non-finite input")
    z = v - v.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = _node(_check_finite(s, "softmax_rows"), (m,), lambda: None)

    def backward():
        if m.requires_grad:
            g = out.grad
            dot = (g * s).sum(axis=1, keepdims=True)
            m._add_grad(s * (g - dot))

    out._backward = backward
    return out


def cosine_rows(a, b) -> Tensor:
    """Pairwise cosine similarity: out[i, j] = (a_i . b_j) / (|a_i| |b_j|)."""
    a, b = _wrap(a), _wrap(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_rows: column counts differ, {a.shape} vs {b.shape}")
    av, bv = a.f64(), b.f64()
    na = np.linalg.norm(av, axis=1, keepdims=True)
    nb = np.linalg.norm(bv, axis=1, keepdims=True)
    for label, norms in (("a", na), ("b", nb)):
        zero = np.flatnonzero(norms.ravel() == 0.0)
        if zero.size:
            raise DegenerateInputError(f"cosine_rows: input {label} has zero-norm row {zero[0]}")
    ah, bh = av / na, bv / nb
    c = ah @ bh.T
    out = _node(_check_finite(c, "cosine_rows"), (a, b), lambda: None)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._add_grad((g @ bh - (g * c).sum(axis=1, keepdims=True) * ah) / na)
        if b.requires_grad:
            b._add_grad((g.T @ ah - (g * c).sum(axis=0)[:, None] * bh) / nb)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Run reverse-mode differentiation from a scalar loss.

    Populates ``grad`` on every reachable node that requires gradients and
    returns a map of the reachable leaf parameters to their gradients.
    Each node's local backward rule runs exactly once (topological order).
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward: loss must be 1x1, got {loss.shape}")

    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    for node in order:
        node.grad = None
    loss._add_grad(np.ones((1, 1)))
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        if node._backward is not None:
            node._backward()
        if not node._parents and node.requires_grad:
            leaves[node] = node.grad
    return leaves


# ---------------------------------------------------------------------------
# finite-difference checking


def finite_difference_grad(f: Callable[[], Tensor], param: Tensor, h: float) -> np.ndarray:
    """Richardson-extrapolated central differences of scalar f() w.r.t. one
    parameter tensor.

    Secants at steps h and h/2 combine to cancel the quadratic truncation
    term; one step size then serves parameters whose gradients differ by
    orders of magnitude. Denominators use the step actually realized in
    storage, so the check stays tight when parameters live in float32 and
    x +- h rounds.
    """
    g = np.zeros(param.value.shape, dtype=np.float64)
    gf = g.reshape(-1)
    flat = param.value.reshape(-1)

    def secant(i: int, orig: float, step: float) -> float:
        flat[i] = orig + step
        hp = float(flat[i])
        hi = float(f().value[0, 0])
        flat[i] = orig - step
        hm = float(flat[i])
        lo = float(f().value[0, 0])
        flat[i] = orig
        return (hi - lo) / (hp - hm)

    for i in range(flat.size):
        orig = flat[i]
        coarse = secant(i, orig, h)
        fine = secant(i, orig, h / 2.0)
        gf[i] = (4.0 * fine - coarse) / 3.0
    return g


def max_relative_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    """Sup-norm error between gradients, relative to the larger sup norm.

    Per-matrix normalization keeps the check meaningful when individual
    entries are tiny; a pair of all-zero gradients compares equal.
    """
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(fd).max(initial=0.0))
    if denom == 0.0:
        return 0.0
    return float(np.abs(analytic - fd).max() / denom)


def check_gradients(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-3,
) -> dict[str, float]:
    """Compare analytic gradients of f() against central finite differences.

    Returns the per-parameter relative error. The analytic side is recomputed
    once; the finite-difference side perturbs each stored entry in place.
    """
    grads = backward(f())
    errors: dict[str, float] = {}
    for name, p in params.items():
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros(p.value.shape)
        fd = finite_difference_grad(f, p, h)
        errors[name] = max_relative_error(analytic, fd)
    return errors
