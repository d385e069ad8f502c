"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Every primitive is a module-level function that accepts either plain arrays or
:class:`Var` handles.  With plain arrays the numpy result is returned directly;
as soon as one argument is a ``Var`` the call is recorded on that variable's
tape.  Both paths share the same numpy kernels, so a recorded forward pass and
an unrecorded one produce bit-identical values.

Primitives: affine map, elementwise activations (relu, prelu, abs_pow, power),
elementwise arithmetic with broadcasting (add, sub, mul, lincomb), structural
ops (concat, stack, reshape, take) and reductions (sum, mean).
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape", "Var", "TapeError", "affine", "relu", "prelu", "abs_pow", "power",
    "add", "sub", "mul", "scale", "lincomb", "concat", "stack", "reshape",
    "take", "sum", "mean", "value_of", "finite_difference_gradient",
]


class TapeError(RuntimeError):
    pass


class Var:
    """Handle to a value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.idx]

    @property
    def shape(self):
        return self.tape.values[self.idx].shape

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

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.shape})"


class Tape:
    """Ordered record of primitive applications.

    Leaves are parameters (differentiated) or constants.  ``nodes[k]`` is
    ``(kind, out_idx, in_idxs, args)``; inputs always precede outputs.
    """

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.leaf: list[bool] = []
        self.nodes: list[tuple] = []
        self.param_idx: list[int] = []

    def _push(self, value: np.ndarray, leaf: bool) -> int:
        self.values.append(value)
        self.leaf.append(leaf)
        return len(self.values) - 1

    def param(self, array) -> Var:
        arr = np.array(array, dtype=np.float64)
        idx = self._push(arr, True)
        self.param_idx.append(idx)
        return Var(self, idx)

    def constant(self, array) -> Var:
        return Var(self, self._push(np.asarray(array, dtype=np.float64), True))

    def params(self, arrays: Sequence[np.ndarray]) -> list[Var]:
        return [self.param(a) for a in arrays]

    @property
    def num_params(self) -> int:
        return sum(self.values[i].size for i in self.param_idx)

    def record(self, kind: str, inputs: tuple[int, ...], args, value) -> Var:
        idx = self._push(value, False)
        self.nodes.append((kind, idx, inputs, args))
        return Var(self, idx)

    def replay(self) -> list[np.ndarray]:
        """Recompute every non-leaf value from the leaves, in tape order."""
        vals = list(self.values)
        for kind, out, ins, args in self.nodes:
            vals[out] = _FWD[kind](*(vals[i] for i in ins), *args)
        return vals

    def backward(self, root: Var, seed: float = 1.0) -> np.ndarray:
        """Gradient of a scalar ``root`` w.r.t. all parameters, flattened in
        registration order."""
        grads = self.backward_by_param(root, seed)
        if not grads:
            return np.zeros(0)
        return np.concatenate([g.ravel() for g in grads])

    def backward_by_param(self, root: Var, seed: float = 1.0) -> list[np.ndarray]:
        if root.tape is not self:
            raise TapeError("root belongs to a different tape")
        rv = self.values[root.idx]
        if rv.size != 1:
            raise TapeError(f"backward needs a scalar root, got shape {rv.shape}")
        grads = self._accumulate(root, seed, check=False)
        out = [grads[i] if grads[i] is not None else np.zeros_like(self.values[i])
               for i in self.param_idx]
        if not all(np.isfinite(g).all() for g in out):
            self._accumulate(root, seed, check=True)
        return out

    def _accumulate(self, root: Var, seed: float, check: bool) -> list:
        values = self.values
        grads: list = [None] * len(values)
        grads[root.idx] = np.full(values[root.idx].shape, float(seed))
        for pos in range(len(self.nodes) - 1, -1, -1):
            kind, out, ins, args = self.nodes[pos]
            g = grads[out]
            if g is None:
                continue
            if check and not np.isfinite(g).all():
                raise TapeError(f"non-finite gradient at node {pos} ({kind})")
            in_vals = [values[i] for i in ins]
            contribs = _VJP[kind](g, values[out], *in_vals, *args)
            grads[out] = None if not self.leaf[out] else g
            for i, c in zip(ins, contribs):
                if c is None:
                    continue
                if check and not np.isfinite(c).all():
                    raise TapeError(f"non-finite gradient produced at node {pos} ({kind})")
                prev = grads[i]
                grads[i] = c if prev is None else prev + c
        return grads


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _apply(kind: str, inputs: tuple, args: tuple = ()):
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            tape = x.tape
            break
    vals = [x.value if isinstance(x, Var) else x for x in inputs]
    out = _FWD[kind](*vals, *args)
    if tape is None:
        return out
    idxs = []
    for x in inputs:
        if isinstance(x, Var):
            if x.tape is not tape:
                raise TapeError("operands recorded on different tapes")
            idxs.append(x.idx)
        else:
            idxs.append(tape._push(np.asarray(x, dtype=np.float64), True))
    return tape.record(kind, tuple(idxs), args, out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- kernels
def _affine_f(x, W, b):
    if W.shape[1] != x.shape[-1] or W.shape[0] != b.shape[-1]:
        raise ValueError(
            f"affine shape mismatch: W {W.shape}, x {x.shape}, b {b.shape}")
    return x @ W.T + b


def _affine_b(g, out, x, W, b):
    gx = g @ W
    if x.ndim == 1:
        gW = np.outer(g, x)
        gb = g
    else:
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.reshape(-1, x.shape[-1])
        gW = g2.T @ x2
        gb = g2.sum(axis=0)
    return gx, gW, gb


def _relu_f(x):
    return np.maximum(x, 0.0)


def _relu_b(g, out, x):
    return (g * (x > 0.0),)


def _prelu_f(x, a):
    return np.maximum(x, 0.0) + a * np.minimum(x, 0.0)


def _prelu_b(g, out, x, a):
    neg = np.minimum(x, 0.0)
    gx = np.where(x > 0.0, g, g * a)
    ga = _unbroadcast(g * neg, np.shape(a))
    return gx, ga


def _abs_pow_f(x, r):
    if r == 2:
        return x * x
    return np.abs(x) ** r


def _abs_pow_b(g, out, x, r):
    if r == 1:
        d = np.sign(x)
    elif r == 2:
        d = 2.0 * x
    else:
        d = r * np.abs(x) ** (r - 1) * np.sign(x)
    return (g * d,)


def _power_f(x, p):
    return x ** p


def _power_b(g, out, x, p):
    return (g * p * x ** (p - 1),)


def _add_f(x, y):
    return x + y


def _add_b(g, out, x, y):
    return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)


def _sub_f(x, y):
    return x - y


def _sub_b(g, out, x, y):
    return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)


def _mul_f(x, y):
    return x * y


def _mul_b(g, out, x, y):
    return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)


def _lincomb_f(*xs_and_coefs):
    *xs, coefs = xs_and_coefs
    out = xs[0] * coefs[0] if coefs[0] != 1.0 else xs[0]
    for x, c in zip(xs[1:], coefs[1:]):
        out = out + (x * c if c != 1.0 else x)
    return out


def _lincomb_b(g, out, *xs_and_coefs):
    *xs, coefs = xs_and_coefs
    return tuple(_unbroadcast(g * c if c != 1.0 else g, x.shape)
                 for x, c in zip(xs, coefs))


def _concat_f(*xs_and_axis):
    *xs, axis = xs_and_axis
    return np.concatenate(xs, axis=axis)


def _concat_b(g, out, *xs_and_axis):
    *xs, axis = xs_and_axis
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def _stack_f(*xs_and_axis):
    *xs, axis = xs_and_axis
    return np.stack(xs, axis=axis)


def _stack_b(g, out, *xs_and_axis):
    *xs, axis = xs_and_axis
    gm = np.moveaxis(g, axis, 0)
    return tuple(gm[k] for k in range(len(xs)))


def _reshape_f(x, shape):
    return x.reshape(shape)


def _reshape_b(g, out, x, shape):
    return (g.reshape(x.shape),)


def _take_f(x, sl):
    return x[sl]


def _take_b(g, out, x, sl):
    gx = np.zeros_like(x)
    gx[sl] = g
    return (gx,)


def _sum_f(x, axis, keepdims):
    return np.sum(x, axis=axis, keepdims=keepdims)


def _sum_b(g, out, x, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _mean_f(x, axis, keepdims):
    return np.mean(x, axis=axis, keepdims=keepdims)


def _mean_b(g, out, x, axis, keepdims):
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / n, x.shape).copy(),)


# Constant arguments are stored on the tape as ``args`` and passed last.
_FWD: dict[str, Callable] = {
    "affine": _affine_f, "relu": _relu_f, "prelu": _prelu_f,
    "abs_pow": _abs_pow_f, "power": _power_f, "add": _add_f, "sub": _sub_f,
    "mul": _mul_f, "lincomb": _lincomb_f, "concat": _concat_f,
    "stack": _stack_f, "reshape": _reshape_f, "take": _take_f, "sum": _sum_f,
    "mean": _mean_f,
}
_VJP: dict[str, Callable] = {
    "affine": _affine_b, "relu": _relu_b, "prelu": _prelu_b,
    "abs_pow": _abs_pow_b, "power": _power_b, "add": _add_b, "sub": _sub_b,
    "mul": _mul_b, "lincomb": _lincomb_b, "concat": _concat_b,
    "stack": _stack_b, "reshape": _reshape_b, "take": _take_b, "sum": _sum_b,
    "mean": _mean_b,
}


# ---------------------------------------------------------------- public ops
def affine(W, x, b):
    """``W x + b``; ``x`` may carry leading batch axes (rows)."""
    return _apply("affine", (x, W, b))


def relu(x):
    return _apply("relu", (x,))


def prelu(x, alpha):
    return _apply("prelu", (x, alpha))


def abs_pow(x, r: int):
    """Elementwise ``|x|**r``; the subgradient at 0 is taken as 0 for r = 1."""
    return _apply("abs_pow", (x,), (r,))


def power(x, p: float):
    return _apply("power", (x,), (p,))


def add(x, y):
    return _apply("add", (x, y))


def sub(x, y):
    return _apply("sub", (x, y))


def mul(x, y):
    return _apply("mul", (x, y))


def scale(x, c: float):
    return _apply("lincomb", (x,), ((float(c),),))


def lincomb(terms: Sequence[tuple]):
    """``sum(c * x for x, c in terms)`` evaluated left to right."""
    xs = tuple(t[0] for t in terms)
    coefs = tuple(float(t[1]) for t in terms)
    return _apply("lincomb", xs, (coefs,))


def concat(xs: Sequence, axis: int = -1):
    return _apply("concat", tuple(xs), (axis,))


def stack(xs: Sequence, axis: int = 0):
    return _apply("stack", tuple(xs), (axis,))


def reshape(x, shape):
    return _apply("reshape", (x,), (tuple(shape),))


def take(x, sl):
    return _apply("take", (x,), (sl,))


def sum(x, axis=None, keepdims: bool = False):  # noqa: A001
    return _apply("sum", (x,), (axis, keepdims))


def mean(x, axis=None, keepdims: bool = False):
    return _apply("mean", (x,), (axis, keepdims))


def finite_difference_gradient(f: Callable[[np.ndarray], float], theta, h: float = 1e-6) -> np.ndarray:
    """Central differences ``(f(theta + h e_k) - f(theta - h e_k)) / 2h``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    theta = np.array(theta, dtype=np.float64)
    grad = np.empty(theta.size)
    flat = theta.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = float(f(theta))
        flat[k] = orig - h
        fm = float(f(theta))
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {k}")
        grad[k] = (fp - fm) / (2.0 * h)
    return grad
