# -*- coding: utf-8 -*-
"""
:mod:`ehrcontrast.numerics` is a small reverse-mode automatic
differentiation engine over dense float64 numpy arrays. Models and losses
in ehrcontrast are written in terms of :class:`Tensor` operations;
:class:`GradientTape` records them and :func:`backward` computes
gradients of a scalar loss with respect to watched parameters::

    >>> w = Tensor([3.0], requires_grad=True)
    >>> with GradientTape({'w': w}) as tape:
    ...     loss = (w * w).sum()
    >>> print(backward(tape, loss)['w'])
    [6.]

The engine only implements what sequence encoders need: elementwise
arithmetic with trailing-axis broadcasting, (batched) matrix products,
reductions, slicing, concatenation and a few activation functions.
"""
from __future__ import absolute_import
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from scipy.special import expit, log_expit, softmax as _softmax

from ehrcontrast.exceptions import ShapeError, ContractError


_local = threading.local()


def _tape_stack():
    if not hasattr(_local, 'tapes'):
        _local.tapes = []
    return _local.tapes


class Tensor(object):
    """
    An immutable-by-convention float64 array with an optional gradient
    requirement. Results of operations on tensors which require gradients
    also require gradients; they are recorded by the innermost active
    :class:`GradientTape`.

    Parameters are the only tensors whose :attr:`data` is replaced
    (by an optimizer); operation results are never modified.
    """
    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, values, requires_grad=False, name=None):
        self.data = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        """ Return the value of a single-element tensor as a Python float. """
        return float(self.data.item())

    def numpy(self):
        """ Return a copy of tensor values as a numpy array. """
        return self.data.copy()

    def __repr__(self):
        name = '' if self.name is None else ', name=%r' % self.name
        return "Tensor(shape=%s%s)" % (self.shape, name)

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self):
        return reduce_mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)


def as_tensor(value):
    """ Wrap ``value`` into a constant :class:`Tensor` unless it is one. """
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad, shape):
    # sum the gradient over axes that were broadcast in the forward pass
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _result(data, parents, vjp):
    """
    Create an operation result. ``vjp`` maps the gradient of the result
    to a tuple of gradients, one per parent (None for "no gradient").
    """
    requires_grad = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires_grad)
    if requires_grad:
        tapes = _tape_stack()
        if tapes:
            tapes[-1]._record(out, parents, vjp)
    return out


class GradientTape(object):
    """
    Records tensor operations for reverse-mode differentiation.

    ``params`` is a dict (name -> Tensor) or a list of tensors whose
    gradients :func:`backward` returns. Watched tensors are marked as
    requiring gradients. Tapes are per-thread; they can't be reused
    across threads.
    """
    def __init__(self, params=None):
        self.params = params if params is not None else OrderedDict()
        self._nodes = []
        self._active = False
        for p in self._iter_params():
            p.requires_grad = True

    def _iter_params(self):
        if isinstance(self.params, dict):
            return list(self.params.values())
        return list(self.params)

    def _record(self, out, parents, vjp):
        self._nodes.append((out, parents, vjp))

    def __enter__(self):
        _tape_stack().append(self)
        self._active = True
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        self._active = False
        return False

    def __len__(self):
        return len(self._nodes)


def backward(tape, loss):
    """
    Compute gradients of a scalar ``loss`` with respect to the tensors
    watched by ``tape``. Return a container of the same kind as
    ``tape.params`` (dict with the same keys, or list in the same order);
    parameters the loss doesn't depend on get zero gradients.

    Gradients are accumulated walking the recorded operations in reverse
    creation order, so the result is bitwise repeatable for a fixed graph.
    """
    if not isinstance(loss, Tensor) or loss.ndim != 0:
        raise ContractError(
            "backward needs a scalar loss, got shape %s" % (getattr(loss, 'shape', None),)
        )
    grads = {id(loss): np.ones((), dtype=np.float64)}
    for out, parents, vjp in reversed(tape._nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        parent_grads = vjp(g)
        for parent, pg in zip(parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    def _grad_for(p):
        g = grads.get(id(p))
        if g is None:
            return np.zeros_like(p.data)
        return np.array(g, dtype=np.float64).reshape(p.shape)

    if isinstance(tape.params, dict):
        return OrderedDict((name, _grad_for(p)) for name, p in tape.params.items())
    return [_grad_for(p) for p in tape.params]


# ===== operations =====

def _check_broadcast(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError("%s: can't broadcast shapes %s and %s" % (opname, a.shape, b.shape))


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'add')
    return _result(a.data + b.data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    ))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'sub')
    return _result(a.data - b.data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    ))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'mul')
    return _result(a.data * b.data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    ))


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    """
    Matrix product of the last two axes; leading axes of a 3-d operand
    are treated as a batch.

    >>> print(matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]])).data)
    [[3.]
     [7.]]
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul: shapes %s and %s are not aligned" % (a.shape, b.shape))

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), vjp)


def transpose(a):
    """ Swap the last two axes. """
    a = as_tensor(a)
    return _result(np.swapaxes(a.data, -1, -2), (a,),
                   lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape):
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape: can't reshape %s to %s" % (a.shape, tuple(shape)))
    return _result(data, (a,), lambda g: (g.reshape(a.shape),))


def take(a, index):
    """
    Index a tensor (basic slicing or integer arrays). Repeated indices
    accumulate gradients.
    """
    a = as_tensor(a)

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _result(a.data[index], (a,), vjp)


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def reduce_mean(a):
    a = as_tensor(a)
    n = float(max(a.size, 1))
    return _result(a.data.mean() if a.size else 0.0, (a,),
                   lambda g: (np.full(a.shape, g / n),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes %s" % ([t.shape for t in tensors],))
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(data, tuple(tensors), vjp)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack: incompatible shapes %s" % ([t.shape for t in tensors],))

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(data, tuple(tensors), vjp)


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a):
    """
    Elementwise logistic function ``1 / (1 + exp(-x))``, stable for
    large ``|x|``:

    >>> print(sigmoid(Tensor(0.0)).item())
    0.5
    >>> print(round(sigmoid(Tensor(1.0)).item(), 10))
    0.7310585786
    """
    a = as_tensor(a)
    y = expit(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def log_sigmoid(a):
    """ ``log(sigmoid(x))`` computed as ``-softplus(-x)``. """
    a = as_tensor(a)
    return _result(log_expit(a.data), (a,), lambda g: (g * expit(-a.data),))


def softmax(a, axis=-1):
    a = as_tensor(a)
    y = _softmax(a.data, axis=axis)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), vjp)


def dot(a, b):
    """ Inner product over the last axis. """
    return reduce_sum(mul(a, b), axis=-1)


# ===== verification =====

def finite_diff_check(f, params, eps=1e-5, floor=1e-8):
    """
    Compare analytic gradients of ``f(params)`` (a scalar tensor) with
    central finite differences and return the worst relative error.
    The relative error of a coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.

    ``params`` is a dict or list of tensors; their values are perturbed
    in place and restored.

    >>> theta = Tensor([1.0], requires_grad=True)
    >>> finite_diff_check(lambda p: (p[0] * p[0]).sum(), [theta]) < 1e-9
    True
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError("eps must be in [1e-7, 1e-3], got %r" % eps)
    if not floor > 0:
        raise ContractError("floor must be positive, got %r" % floor)

    with GradientTape(params) as tape:
        loss = f(params)
    analytic = backward(tape, loss)
    base = float(loss.data)
    if float(f(params).data) != base:
        raise ContractError("function is not deterministic")

    if isinstance(params, dict):
        pairs = [(params[name], analytic[name]) for name in params]
    else:
        pairs = list(zip(params, analytic))

    worst = 0.0
    for tensor, grad in pairs:
        values = tensor.data
        for idx in np.ndindex(*values.shape):
            orig = values[idx]
            values[idx] = orig + eps
            f_plus = float(f(params).data)
            values[idx] = orig - eps
            f_minus = float(f(params).data)
            values[idx] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            a = float(grad[idx])
            denom = max(abs(a), abs(numeric), floor)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


# ===== optimization =====

@dataclass
class OptimizerState:
    """
    Adam state: learning rate, moment decay rates, epsilon, step counter
    and per-parameter first/second moments.
    """
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: Dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params, grads, state):
    """
    Apply one bias-corrected Adam update to ``params`` (dict name -> Tensor)
    using ``grads`` (dict name -> array). Parameter values are replaced,
    ``state`` is updated; ``params`` is returned.
    """
    for name, p in params.items():
        if name not in grads:
            raise ContractError("no gradient for parameter %r" % name)
        if np.shape(grads[name]) != p.shape:
            raise ContractError("gradient shape %s doesn't match parameter %r shape %s" % (
                np.shape(grads[name]), name, p.shape))

    state.step += 1
    t = state.step
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.first_moments.get(name)
        v = state.second_moments.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * (g * g)
        state.first_moments[name] = m
        state.second_moments[name] = v
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params


class Adam(object):
    """ Adam optimizer bound to a dict of parameters. """
    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 epsilon=1e-8):
        self.params = params
        self.state = OptimizerState(learning_rate=learning_rate, beta1=beta1,
                                    beta2=beta2, epsilon=epsilon)

    def step(self, grads):
        return optimizer_step(self.params, grads, self.state)


def accumulate(total, grads):
    """ Add gradient dict ``grads`` into ``total`` (modified in place). """
    for name, g in grads.items():
        if name in total:
            total[name] = total[name] + g
        else:
            total[name] = np.array(g, dtype=np.float64)
    return total
