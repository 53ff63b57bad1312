"""A small tape-based reverse-mode differentiation engine over numpy arrays.

Every operation appends a node to the :class:`Tape` that created its inputs, so
the tape is topologically ordered by construction and the backward pass is a
single reverse sweep.  Nodes that do not depend on any trainable leaf carry no
backward closure at all, which keeps inference cheap.

    >>> tape = Tape()
    >>> x = tape.leaf(3.0)
    >>> y = x * x
    >>> tape.backward(y)
    >>> float(x.grad)
    6.0
"""

import numpy as np

from .errors import ContractError, DegenerateError

ARCOSH_FLOOR = 1.0 + 1e-7
ATANH_CLAMP = 1.0 - 1e-12
DIV_MIN = 1e-12


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A value recorded on a tape, with an adjoint filled in by ``backward``."""

    __array_priority__ = 100

    def __init__(self, tape, value, parents=(), backward=None, kind="leaf", requires_grad=False):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.kind = kind
        self.requires_grad = requires_grad
        self._backward = backward
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(kind={self.kind!r}, shape={self.shape})"

    def numpy(self):
        return self.value

    # arithmetic sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def tanh(self):
        return tanh(self)


class Tape:
    """Append-only record of operations, replayed backwards for adjoints."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value, requires_grad=True):
        var = Var(self, np.array(value, dtype=np.float64), requires_grad=requires_grad)
        self.nodes.append(var)
        return var

    def const(self, value):
        return self.leaf(value, requires_grad=False)

    def record(self, kind, value, parents, backward):
        """Append a node; ``backward(g)`` returns one adjoint per parent."""
        requires_grad = any(p.requires_grad for p in parents)
        var = Var(self, value, parents, backward if requires_grad else None, kind, requires_grad)
        self.nodes.append(var)
        return var

    def backward(self, output):
        if output.tape is not self:
            raise ContractError("output was recorded on a different tape")
        if output.value.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
        for node in self.nodes:
            node.grad = None
        output.grad = np.ones_like(output.value)
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            for parent, g in zip(node.parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                g = _unbroadcast(np.asarray(g, dtype=np.float64), parent.value.shape)
                parent.grad = g if parent.grad is None else parent.grad + g


def _tape_of(*args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    raise ContractError("at least one operand must be a Var")


def _lift(tape, x):
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ContractError("operands were recorded on different tapes")
        return x
    return tape.const(x)


def _binary(a, b):
    tape = _tape_of(a, b)
    return tape, _lift(tape, a), _lift(tape, b)


def _unary(kind, x, value, local):
    """Record an elementwise op whose derivative is the array ``local``."""
    return x.tape.record(kind, value, (x,), lambda g: (g * local,))


# elementwise binary ops


def add(a, b):
    tape, a, b = _binary(a, b)
    return tape.record("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    tape, a, b = _binary(a, b)
    return tape.record("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def neg(x):
    return x.tape.record("neg", -x.value, (x,), lambda g: (-g,))


def mul(a, b):
    tape, a, b = _binary(a, b)
    av, bv = a.value, b.value
    return tape.record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b):
    tape, a, b = _binary(a, b)
    if np.any(np.abs(b.value) < DIV_MIN):
        raise DegenerateError("division by a value smaller than 1e-12")
    av, bv = a.value, b.value
    out = av / bv
    return tape.record("div", out, (a, b), lambda g: (g / bv, -g * out / bv))


def maximum(a, b):
    """Elementwise max; ties route the adjoint to ``a``."""
    tape, a, b = _binary(a, b)
    pick_a = a.value >= b.value
    return tape.record(
        "max", np.where(pick_a, a.value, b.value), (a, b),
        lambda g: (g * pick_a, g * ~pick_a),
    )


def minimum(a, b):
    """Elementwise min; ties route the adjoint to ``a``."""
    tape, a, b = _binary(a, b)
    pick_a = a.value <= b.value
    return tape.record(
        "min", np.where(pick_a, a.value, b.value), (a, b),
        lambda g: (g * pick_a, g * ~pick_a),
    )


def clip(x, lo, hi):
    inside = (x.value >= lo) & (x.value <= hi)
    return _unary("clip", x, np.clip(x.value, lo, hi), inside)


# elementwise unary ops


def tanh(x):
    out = np.tanh(x.value)
    return _unary("tanh", x, out, 1.0 - out * out)


def atanh(x):
    """Inverse tanh with its argument clamped to +-(1 - 1e-12)."""
    inside = np.abs(x.value) <= ATANH_CLAMP
    z = np.clip(x.value, -ATANH_CLAMP, ATANH_CLAMP)
    return _unary("atanh", x, np.arctanh(z), inside / (1.0 - z * z))


def clamp_arcosh(x):
    """``arcosh(max(x, 1))`` with a finite adjoint everywhere.

    Where the clamp is active (``x <= 1``) the adjoint is 0.  Elsewhere the
    derivative is evaluated at ``max(x, 1 + 1e-7)`` so it stays bounded.
    """
    active = x.value <= 1.0
    out = np.arccosh(np.maximum(x.value, 1.0))
    z = np.maximum(x.value, ARCOSH_FLOOR)
    local = np.where(active, 0.0, 1.0 / np.sqrt(z * z - 1.0))
    return _unary("clamp_arcosh", x, out, local)


def sqrt(x):
    out = np.sqrt(x.value)
    if np.any(out < DIV_MIN):
        local = np.where(out > 0, 0.5 / np.maximum(out, DIV_MIN), 0.0)
    else:
        local = 0.5 / out
    return _unary("sqrt", x, out, local)


def exp(x):
    out = np.exp(x.value)
    return _unary("exp", x, out, out)


def log(x):
    if np.any(x.value <= 0):
        raise DegenerateError("log of a non-positive value")
    return _unary("log", x, np.log(x.value), 1.0 / x.value)


def softplus(x):
    out = np.logaddexp(0.0, x.value)
    return _unary("softplus", x, out, 0.5 * (1.0 + np.tanh(0.5 * x.value)))


# reductions and shape ops


def sum_(x, axis=None, keepdims=False):
    shape = x.value.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return x.tape.record("sum", x.value.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    n = x.value.size if axis is None else np.prod([x.value.shape[a] for a in np.atleast_1d(axis)])
    return sum_(x, axis, keepdims) * (1.0 / n)


def dot(a, b, axis=-1, keepdims=True):
    return sum_(mul(a, b), axis=axis, keepdims=keepdims)


def norm(x, axis=-1, keepdims=True):
    """Euclidean norm; the adjoint at the zero vector is taken to be 0."""
    out = np.sqrt(np.sum(x.value * x.value, axis=axis, keepdims=True))
    safe = np.where(out > 0, out, 1.0)
    unit = np.where(out > 0, x.value / safe, 0.0)
    value = out if keepdims else np.squeeze(out, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * unit,)

    return x.tape.record("norm", value, (x,), backward)


def getitem(x, index):
    shape = x.value.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return x.tape.record("getitem", x.value[index], (x,), backward)


def reshape(x, shape):
    old = x.value.shape
    return x.tape.record("reshape", x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None):
    inverse = None if axes is None else np.argsort(axes)
    return x.tape.record(
        "transpose", np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inverse),)
    )


def concat(xs, axis=-1):
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    splits = np.cumsum([x.value.shape[axis] for x in xs])[:-1]
    return tape.record(
        "concat", np.concatenate([x.value for x in xs], axis=axis), tuple(xs),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def matmul(a, b):
    tape, a, b = _binary(a, b)
    av, bv = a.value, b.value

    def backward(g):
        a2 = av[None, :] if av.ndim == 1 else av
        b2 = bv[:, None] if bv.ndim == 1 else bv
        if av.ndim == 1:
            g = np.expand_dims(g, -2)
        if bv.ndim == 1:
            g = np.expand_dims(g, -1)
        ga = g @ np.swapaxes(b2, -1, -2)
        if b2.ndim == 2 and a2.ndim > 2:
            # weight-matrix gradient: fold the batch axes into one product
            gb = a2.reshape(-1, a2.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a2, -1, -2) @ g
        if av.ndim == 1:
            ga = ga[..., 0, :]
        if bv.ndim == 1:
            gb = gb[..., 0]
        return ga, gb

    return tape.record("matmul", av @ bv, (a, b), backward)


def softmax(x, axis=-1):
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return x.tape.record("softmax", out, (x,), backward)


def log_softmax(x, axis=-1):
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * np.sum(g, axis=axis, keepdims=True),)

    return x.tape.record("log_softmax", out, (x,), backward)


def take_along(x, index, axis=-1):
    """Gather ``x`` along ``axis`` with an integer index array of matching rank."""
    index = np.asarray(index)
    out = np.take_along_axis(x.value, index, axis=axis)
    shape = x.value.shape

    def backward(g):
        full = np.zeros(shape)
        np.put_along_axis(full, index, g, axis=axis)
        return (full,)

    return x.tape.record("gather", out, (x,), backward)


# parameters, optimisation, checking


class ParamStore:
    """Named float64 parameter arrays with matching gradient buffers."""

    def __init__(self, params=None):
        self.params = {}
        self.grads = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name, value):
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for name in self.grads:
            self.grads[name] = np.zeros_like(self.params[name])

    def bind(self, tape):
        """Create one trainable leaf per parameter on ``tape``."""
        return {name: tape.leaf(value) for name, value in self.params.items()}

    def collect(self, leaves):
        """Accumulate leaf adjoints from a finished backward pass."""
        for name, leaf in leaves.items():
            if leaf.grad is not None:
                self.grads[name] = self.grads[name] + leaf.grad

    def copy(self):
        return ParamStore({k: v.copy() for k, v in self.params.items()})


class Adam:
    """Adam with bias correction, operating in place on a :class:`ParamStore`."""

    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, value in self.store.params.items():
            g = self.store.grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def grad_of(f, point):
    """Value and gradient of a tape-built scalar function ``f(tape, x)``."""
    tape = Tape()
    x = tape.leaf(np.array(point, dtype=np.float64))
    out = f(tape, x)
    tape.backward(out)
    grad = x.grad if x.grad is not None else np.zeros_like(x.value)
    return float(out.value), grad


def finite_difference_check(f, point, h=1e-5, floor=1e-8):
    """Largest relative error between tape gradient and central differences.

    ``f(tape, x)`` must build a scalar on ``tape`` from the leaf ``x``.  The
    relative error of each coordinate is ``|g - fd| / max(|g|, |fd|, floor)``.
    """
    point = np.array(point, dtype=np.float64)
    _, grad = grad_of(f, point)

    def value(p):
        tape = Tape()
        return float(f(tape, tape.const(p)).value)

    numeric = np.zeros_like(point)
    flat = point.reshape(-1)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        numeric.reshape(-1)[i] = (value(up.reshape(point.shape)) - value(down.reshape(point.shape))) / (2 * h)
    scale = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), floor)
    return float(np.max(np.abs(grad - numeric) / scale)) if point.size else 0.0
