"""Gradient correctness and tape mechanics for the autodiff core."""

import numpy as np
import pytest

from taskmask import autodiff as ad
from taskmask import reference as ref

RNG = np.random.default_rng(7)
TOL = 1e-4
STEP = 1e-5


def _check_gradients(build_loss, arrays, points: int = 20, tol: float = TOL):
    """Compare tape gradients with central finite differences at `points`
    random perturbations of the given float64 arrays."""
    for point in range(points):
        values = [a + RNG.normal(0, 0.3, a.shape) for a in arrays]
        tensors = [ad.Tensor(v.copy(), requires_grad=True) for v in values]
        with ad.GradTape() as tape:
            loss = build_loss(*tensors)
        tape.backward(loss)
        for t, v in zip(tensors, values):
            assert t.grad is not None, "missing gradient"
            numeric = ref.central_difference_gradient(
                lambda x, i=tensors.index(t): _reval(build_loss, values, i, x), v, STEP)
            err = ref.relative_error(t.grad, numeric)
            assert err <= tol, f"gradient mismatch {err:.2e} at point {point}"


def _reval(build_loss, values, index, x):
    args = [ad.Tensor(v if i != index else x) for i, v in enumerate(values)]
    return float(build_loss(*args).data)


# --- primitive sweep: every op against finite differences -----------------

def test_matmul_gradients():
    _check_gradients(lambda a, b: ad.tsum(ad.matmul(a, b)),
                     [RNG.normal(0, 1, (3, 4)), RNG.normal(0, 1, (4, 2))])


def test_matmul_transpose_gradients():
    _check_gradients(lambda a, b: ad.tsum(ad.matmul(a, b, transpose_b=True)),
                     [RNG.normal(0, 1, (3, 4)), RNG.normal(0, 1, (5, 4))])
    _check_gradients(lambda a, b: ad.tsum(ad.matmul(a, b, transpose_a=True)),
                     [RNG.normal(0, 1, (4, 3)), RNG.normal(0, 1, (4, 2))])


def test_matmul_vector_gradients():
    _check_gradients(lambda a, b: ad.tsum(ad.matmul(a, b)),
                     [RNG.normal(0, 1, (4,)), RNG.normal(0, 1, (4, 3))])
    _check_gradients(lambda a, b: ad.tsum(ad.matmul(a, b)),
                     [RNG.normal(0, 1, (3, 4)), RNG.normal(0, 1, (4,))])


def test_add_sub_mul_broadcast_gradients():
    _check_gradients(lambda a, b: ad.tsum(ad.add(a, b)),
                     [RNG.normal(0, 1, (3, 4)), RNG.normal(0, 1, (4,))])
    _check_gradients(lambda a, b: ad.tsum(ad.sub(a, b)),
                     [RNG.normal(0, 1, (3, 4)), RNG.normal(0, 1, (3, 1))])
    _check_gradients(lambda a, b: ad.tsum(ad.mul(a, b)),
                     [RNG.normal(0, 1, (3, 4)), RNG.normal(0, 1, (4,))])


def test_maximum_gradients():
    # keep operands separated so finite differences stay off the tie set
    a = RNG.normal(0, 1, (4, 4))
    b = a + np.where(RNG.random((4, 4)) < 0.5, 2.0, -2.0)
    _check_gradients(lambda x, y: ad.tsum(ad.maximum(x, y)), [a, b])


def test_relu_sigmoid_exp_gradients():
    x = RNG.normal(0, 1, (5, 3)) + 0.05  # off the ReLU kink
    _check_gradients(lambda t: ad.tsum(ad.relu(t)), [x])
    _check_gradients(lambda t: ad.tsum(ad.sigmoid(t)), [RNG.normal(0, 1, (5, 3))])
    _check_gradients(lambda t: ad.tsum(ad.exp(t)), [RNG.normal(0, 1, (5, 3))])


def test_l2_normalize_gradients():
    x = RNG.normal(0, 1, (4, 6)) + 1.0
    probe = RNG.normal(0, 1, (4, 6))
    _check_gradients(lambda t: ad.tsum(ad.mul(ad.l2_normalize(t), probe)), [x])


def test_dot_gradients():
    _check_gradients(lambda a, b: ad.dot(a, b),
                     [RNG.normal(0, 1, (6,)), RNG.normal(0, 1, (6,))])


def test_scale_shift_gradients():
    _check_gradients(lambda x, a, b: ad.tsum(ad.scale_shift(x, a, b)),
                     [RNG.normal(0, 1, (3, 4)), RNG.normal(1, 0.2, (4,)), RNG.normal(0, 1, (4,))])


def test_sum_mean_gradients():
    _check_gradients(lambda t: ad.mul(ad.tsum(ad.mul(t, t)), 0.5), [RNG.normal(0, 1, (3, 5))])
    _check_gradients(lambda t: ad.tsum(ad.tmean(ad.mul(t, t), axis=1)), [RNG.normal(0, 1, (3, 5))])
    _check_gradients(lambda t: ad.tmean(ad.mul(t, t)), [RNG.normal(0, 1, (3, 5))])


def test_logsumexp_gradients():
    _check_gradients(lambda t: ad.tsum(ad.logsumexp(t, axis=1)), [RNG.normal(0, 1, (4, 6))])
    _check_gradients(lambda t: ad.tsum(ad.logsumexp(t, axis=1, keepdims=True)),
                     [RNG.normal(0, 1, (4, 6))])


def test_softmax_cross_entropy_gradients():
    labels = RNG.integers(0, 4, size=6)
    _check_gradients(lambda t: ad.softmax_cross_entropy(t, labels),
                     [RNG.normal(0, 1, (6, 4))])


def test_reshape_gradients():
    probe = RNG.normal(0, 1, (2, 6))
    _check_gradients(lambda t: ad.tsum(ad.mul(ad.reshape(t, (2, 6)), probe)),
                     [RNG.normal(0, 1, (3, 4))])


# --- frozen examples -------------------------------------------------------

def test_relu_values():
    assert np.array_equal(ad.relu(ad.Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_l2_normalize_three_four_five():
    out = ad.l2_normalize(ad.Tensor([3.0, 4.0]), axis=0)
    assert np.allclose(out.data, [0.6, 0.8], atol=1e-9)


def test_matmul_identity():
    v = RNG.normal(0, 1, (3,))
    out = ad.matmul(ad.Tensor(np.eye(3)), ad.Tensor(v))
    assert np.allclose(out.data, v)


def test_sum_of_squares_gradient():
    w = ad.Tensor([1.0, 2.0], requires_grad=True)
    with ad.GradTape() as tape:
        loss = ad.tsum(ad.mul(w, w))
    tape.backward(loss)
    assert np.allclose(w.grad, [2.0, 4.0])


def test_sigmoid_gradient_at_zero():
    x = ad.Tensor(0.0, requires_grad=True)
    with ad.GradTape() as tape:
        loss = ad.sigmoid(x)
    tape.backward(loss)
    assert np.allclose(x.grad, 0.25)


# --- tape mechanics ---------------------------------------------------------

def test_backward_twice_errors():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with ad.GradTape() as tape:
        loss = ad.tsum(ad.mul(x, x))
    tape.backward(loss)
    with pytest.raises(RuntimeError, match="re-run"):
        tape.backward(loss)


def test_nested_tapes_rejected():
    with ad.GradTape():
        with pytest.raises(RuntimeError):
            with ad.GradTape():
                pass


def test_backward_requires_scalar():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with ad.GradTape() as tape:
        y = ad.mul(x, x)
    with pytest.raises(ValueError):
        tape.backward(y)


def test_shape_mismatch_diagnostic_names_shapes():
    with pytest.raises(ValueError, match=r"\(3, 4\)"):
        ad.matmul(ad.Tensor(np.zeros((3, 4))), ad.Tensor(np.zeros((3, 4))))
    with pytest.raises(ValueError, match="softmax_cross_entropy"):
        ad.softmax_cross_entropy(ad.Tensor(np.zeros((3, 4))), np.zeros((2,), dtype=int))


def test_backward_linearity():
    # backward of a sum of losses equals the sum of separate backwards
    x0 = RNG.normal(0, 1, (4, 3))
    w = RNG.normal(0, 1, (3, 2))

    def run(scale_first: bool):
        wt = ad.Tensor(w.copy(), requires_grad=True)
        with ad.GradTape() as tape:
            a = ad.tsum(ad.relu(ad.matmul(ad.Tensor(x0), wt)))
            b = ad.tsum(ad.sigmoid(ad.matmul(ad.Tensor(x0), wt)))
            loss = ad.add(a, b)
        tape.backward(loss)
        return wt.grad

    combined = run(True)
    wt = ad.Tensor(w.copy(), requires_grad=True)
    with ad.GradTape() as tape:
        a = ad.tsum(ad.relu(ad.matmul(ad.Tensor(x0), wt)))
    tape.backward(a)
    ga = wt.grad.copy()
    wt.grad = None
    with ad.GradTape() as tape:
        b = ad.tsum(ad.sigmoid(ad.matmul(ad.Tensor(x0), wt)))
    tape.backward(b)
    gb = wt.grad
    assert np.allclose(combined, ga + gb, atol=1e-12)


def test_no_tape_is_plain_eval():
    x = ad.Tensor([1.0, -2.0], requires_grad=True)
    out = ad.relu(x)
    assert out.grad is None and x.grad is None
    assert np.array_equal(out.data, [1.0, 0.0])


def test_reused_tensor_accumulates_gradient():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with ad.GradTape() as tape:
        loss = ad.add(ad.tsum(ad.mul(x, x)), ad.tsum(ad.mul(x, 3.0)))
    tape.backward(loss)
    assert np.allclose(x.grad, [2.0 + 3.0, 4.0 + 3.0])
