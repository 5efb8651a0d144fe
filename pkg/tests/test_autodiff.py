import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lattice import autodiff as ad
from lattice.autodiff import Tape, Tensor

from oracles import central_difference


def grad_of(fn, *arrays):
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*ts)
    tape.backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.value) for t in ts]


def numeric(fn, *arrays):
    arrays = [a.copy() for a in arrays]
    out = []
    for a in arrays:
        out.append(central_difference(lambda: float(fn(*[Tensor(x) for x in arrays]).value), a, 1e-6))
    return out


def assert_grads(fn, *arrays, tol=1e-6):
    for g, n in zip(grad_of(fn, *arrays), numeric(fn, *arrays)):
        np.testing.assert_allclose(g, n, rtol=tol, atol=tol)


R = np.random.default_rng(0)


@pytest.mark.parametrize(
    "fn, shapes",
    [
        (lambda a, b: ad.sum_(ad.add(a, b) * ad.add(a, b)), [(3, 4), (4,)]),
        (lambda a, b: ad.sum_(ad.sub(a, b) * a), [(2, 3), (1, 3)]),
        (lambda a, b: ad.sum_(ad.div(a, ad.add(ad.absolute(b), 1.0))), [(3,), (3,)]),
        (lambda a: ad.sum_(ad.tanh(a) * ad.sigmoid(a)), [(5,)]),
        (lambda a, b: ad.sum_(ad.matmul(a, b) * ad.matmul(a, b)), [(2, 3), (3, 4)]),
        (lambda a, b: ad.sum_(ad.tanh(ad.matmul(a, b))), [(3, 3), (2, 4, 3, 5)]),
        (lambda a, b: ad.sum_(ad.tanh(ad.matmul(a, b))), [(2, 4, 3), (3, 5)]),
        (lambda a, b: ad.sum_(ad.tanh(ad.matmul(a, b))), [(2, 4, 3), (2, 3, 5)]),
        (lambda a: ad.sum_(ad.softmax(a, axis=-1) * np.arange(4.0)), [(3, 4)]),
        (lambda a: ad.sum_(ad.mean(a, axis=0) * np.arange(3.0)), [(4, 3)]),
        (lambda a: ad.sum_(ad.max_pool_rows(a) * ad.max_pool_rows(a)), [(2, 3, 4)]),
        (lambda a, b: ad.sum_(ad.tanh(ad.concat([a, b], axis=-1))), [(2, 3), (2, 2)]),
        (lambda a: ad.sum_(ad.tanh(ad.reshape(a, (6,))) * np.arange(6.0)), [(2, 3)]),
        (lambda a: ad.sum_(ad.tanh(a[:, 1:3])), [(3, 4)]),
        (lambda a: ad.sum_(ad.relu(a) * a), [(6,)]),
    ],
)
def test_op_gradients(fn, shapes):
    arrays = [R.normal(size=s) for s in shapes]
    assert_grads(fn, *arrays)


def test_cross_entropy_gradient_and_value():
    logits = R.normal(size=(4, 3))
    target = np.array([0, 2, 1, 1])
    w = np.array([1.0, 2.0, 0.5, 1.0])
    assert_grads(lambda z: ad.cross_entropy(z, target, w), logits)
    ls = ad.log_softmax_np(logits)
    ref = -(w / w.sum() * ls[np.arange(4), target]).sum()
    assert float(ad.cross_entropy(Tensor(logits), target, w).value) == pytest.approx(ref)


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        y = ad.sum_(x * x + x)
    tape.backward(y)
    assert x.grad.tolist() == [5.0]


def test_tape_is_single_use():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = ad.sum_(x)
    tape.backward(y)
    with pytest.raises(RuntimeError):
        tape.backward(y)


def test_non_scalar_backward_rejected():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ad.ShapeError):
        tape.backward(y)


def test_shape_errors_name_the_op():
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ad.ShapeError, match="cross_entropy"):
        ad.cross_entropy(Tensor(np.ones((2, 3))), np.array([0]))


def test_constants_do_not_join_the_tape():
    with Tape() as tape:
        ad.add(Tensor(np.ones(2)), Tensor(np.ones(2)))
    assert tape.nodes == []


@given(st.floats(-800, 800))
def test_sigmoid_is_stable(v):
    y = float(ad.sigmoid(Tensor(np.array([v]))).value[0])
    assert 0.0 <= y <= 1.0
