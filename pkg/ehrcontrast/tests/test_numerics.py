# -*- coding: utf-8 -*-
from __future__ import absolute_import
import unittest
from collections import OrderedDict

import numpy as np
import pytest

from ehrcontrast import numerics as nx
from ehrcontrast.exceptions import ContractError, ShapeError
from ehrcontrast.numerics import Adam, GradientTape, Tensor, backward, finite_diff_check


def test_broadcast_gradient_is_summed():
    a = Tensor(np.ones((2, 3)))
    b = Tensor([1.0, 2.0, 3.0])
    with GradientTape({'a': a, 'b': b}) as tape:
        loss = (a * b).sum()
    grads = backward(tape, loss)
    assert np.array_equal(grads['a'], [[1, 2, 3], [1, 2, 3]])
    assert np.array_equal(grads['b'], [2, 2, 2])


def test_unused_parameter_gets_zero_gradient():
    used = Tensor([1.0, 2.0])
    unused = Tensor(np.ones((2, 2)))
    with GradientTape([used, unused]) as tape:
        loss = (used * used).sum()
    grads = backward(tape, loss)
    assert isinstance(grads, list)
    assert np.array_equal(grads[0], [2.0, 4.0])
    assert np.array_equal(grads[1], np.zeros((2, 2)))


def test_repeated_indices_accumulate():
    x = Tensor([1.0, 2.0, 3.0])
    with GradientTape([x]) as tape:
        loss = x[np.array([0, 0, 2])].sum()
    assert np.array_equal(backward(tape, loss)[0], [2.0, 0.0, 1.0])


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0])
    with GradientTape([x]) as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        backward(tape, y)


def test_shape_errors():
    with pytest.raises(ShapeError):
        nx.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        Tensor(np.ones(6)).reshape(4, 2)


def test_numpy_operands_defer_to_tensor():
    x = Tensor([1.0, 2.0])
    assert isinstance(np.float64(2.0) * x, Tensor)
    assert isinstance(np.array([1.0, 1.0]) + x, Tensor)
    assert np.array_equal((np.array([3.0, 3.0]) - x).data, [2.0, 1.0])


def test_log_sigmoid_is_stable():
    assert nx.log_sigmoid(Tensor(-1000.0)).item() == pytest.approx(-1000.0)
    assert nx.log_sigmoid(Tensor(1000.0)).item() == 0.0
    assert np.isfinite(nx.sigmoid(Tensor([-1e4, 1e4])).data).all()


OPS = [
    lambda p: nx.softmax(p['x'] @ p['w'], axis=1).reshape(6)[np.array([0, 4])].sum(),
    lambda p: nx.tanh(nx.concat([p['x'], p['x'] * 2.0], axis=1)).sum(),
    lambda p: nx.log_sigmoid(nx.dot(p['x'], p['x'])).sum(),
    lambda p: nx.stack([p['x'][0], p['x'][1]], axis=1).T.sum(axis=0).mean(),
    lambda p: nx.sigmoid(nx.matmul(p['x'].reshape(1, 2, 2), p['w'])).sum(),
]


def _op_params(seed):
    rng = np.random.default_rng(seed)
    return OrderedDict([
        ('x', Tensor(rng.normal(size=(2, 2)))),
        ('w', Tensor(rng.normal(size=(2, 3)))),
    ])


@pytest.mark.parametrize('op', OPS)
def test_operations_match_finite_differences(op):
    assert finite_diff_check(op, _op_params(3)) < 1e-5


@pytest.mark.parametrize('op', OPS)
def test_operations_on_many_seeds(op):
    for seed in range(20):
        assert finite_diff_check(op, _op_params(seed), floor=1e-4) < 1e-6, seed


def test_finite_diff_check_restores_values():
    x = Tensor([0.3, -0.7])
    before = x.data.copy()
    finite_diff_check(lambda p: nx.tanh(p[0]).sum(), [x])
    assert np.array_equal(x.data, before)


def test_finite_diff_check_eps_range():
    with pytest.raises(ContractError):
        finite_diff_check(lambda p: p[0].sum(), [Tensor([1.0])], eps=0.1)


def test_adam_first_step():
    params = OrderedDict([('p', Tensor([1.0, -1.0]))])
    Adam(params, learning_rate=0.001).step({'p': np.array([0.5, -2.0])})
    assert np.allclose(params['p'].data, [0.999, -0.999], atol=1e-7)


def test_adam_checks_gradients():
    params = OrderedDict([('p', Tensor([1.0]))])
    optimizer = Adam(params)
    with pytest.raises(ContractError):
        optimizer.step({})
    with pytest.raises(ContractError):
        optimizer.step({'p': np.zeros(2)})
    assert optimizer.state.step == 0


def test_accumulate():
    total = nx.accumulate({}, {'a': np.ones(2)})
    nx.accumulate(total, {'a': np.ones(2), 'b': np.zeros(1)})
    assert np.array_equal(total['a'], [2.0, 2.0])
    assert sorted(total) == ['a', 'b']


def test_sigmoid_symmetry():
    x = np.linspace(-30, 30, 121)
    assert np.allclose(nx.sigmoid(Tensor(-x)).data, 1.0 - nx.sigmoid(Tensor(x)).data,
                       atol=1e-15)
    assert np.allclose(nx.log_sigmoid(Tensor(x)).data - nx.log_sigmoid(Tensor(-x)).data, x)


def test_backward_is_linear():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(3, 2)))
    w = Tensor(rng.normal(size=(2, 1)))

    def f(p):
        return nx.tanh(p['x'] @ p['w']).sum()

    def g(p):
        return nx.log_sigmoid(nx.dot(p['x'], p['x'])).sum() + (p['w'] * p['w']).sum()

    params = OrderedDict([('x', x), ('w', w)])
    grads = {}
    for name, fn in (('f', f), ('g', g), ('sum', lambda p: f(p) * 2.5 + g(p) * -0.75)):
        with GradientTape(params) as tape:
            value = fn(params)
        grads[name] = backward(tape, value)
    for key in params:
        assert np.allclose(grads['sum'][key], 2.5 * grads['f'][key] - 0.75 * grads['g'][key],
                           atol=1e-12)


class AdamTest(unittest.TestCase):

    def setUp(self):
        self.params = OrderedDict([('p', Tensor([1.0, -2.0, 0.5]))])

    def test_zero_gradient_leaves_parameters(self):
        Adam(self.params).step({'p': np.zeros(3)})
        self.assertEqual(self.params['p'].data.tolist(), [1.0, -2.0, 0.5])

    def test_step_opposes_the_gradient(self):
        grad = np.array([0.3, -4.0, 0.0])
        before = self.params['p'].data.copy()
        Adam(self.params, learning_rate=0.01).step({'p': grad})
        delta = self.params['p'].data - before
        self.assertTrue(np.all(np.sign(delta) == -np.sign(grad)))

    def test_quadratic_descends(self):
        optimizer = Adam(self.params, learning_rate=0.05)
        losses = []
        for _ in range(100):
            p = self.params['p'].data
            losses.append(float((p * p).sum()))
            optimizer.step({'p': 2.0 * p})
        self.assertLess(losses[-1], losses[0] / 10)
        self.assertEqual(optimizer.state.step, 100)
