"""Tensor/tape behavior: forward values, backward rules, finite-difference agreement."""

import numpy as np
import pytest

from stormsense import autodiff as ad
from stormsense.autodiff import ShapeError, Tape, Tensor, gradient_check


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ad.matmul(a, b).data, b.data)

    def test_dot_product(self):
        out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_zeros(self):
        out = ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.ones((3, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_dimension_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 4\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(Tensor(0.0)).item() == 0.5

    def test_tanh_at_zero(self):
        assert ad.tanh(Tensor(0.0)).item() == 0.0

    def test_mul(self):
        out = ad.mul(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [3.0, 8.0])

    def test_incompatible_shapes(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_bias_broadcast_over_rows(self):
        out = ad.add(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])

    def test_sigmoid_saturates_without_warning(self):
        with np.errstate(over="raise"):
            y = ad.sigmoid(Tensor([-1000.0, 1000.0]))
        np.testing.assert_allclose(y.data, [0.0, 1.0])


class TestReduce:
    def test_sum(self):
        assert Tensor([1.0, 2.0, 3.0]).sum().item() == 6.0

    def test_mean(self):
        assert Tensor([2.0, 4.0]).mean().item() == 3.0

    def test_sum_axis0(self):
        out = Tensor([[1.0, 2.0], [3.0, 4.0]]).sum(axis=0)
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).sum(axis=1)


class TestConcat:
    def test_columns(self):
        out = ad.concat([Tensor([[1.0], [2.0]]), Tensor([[3.0], [4.0]])], axis=1)
        np.testing.assert_array_equal(out.data, [[1.0, 3.0], [2.0, 4.0]])

    def test_with_empty(self):
        x = Tensor([[1.0, 2.0]])
        out = ad.concat([x, Tensor(np.zeros((0, 2)))], axis=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_hidden_state_shape(self):
        out = ad.concat([Tensor(np.zeros((1, 64))), Tensor(np.zeros((1, 64)))], axis=1)
        assert out.shape == (1, 128)

    def test_mismatched_off_axis(self):
        with pytest.raises(ShapeError):
            ad.concat([Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 3)))], axis=0)


class TestBackward:
    def test_linear(self):
        w = Tensor([1.0, 5.0, -2.0], requires_grad=True)
        with Tape() as tape:
            loss = w.sum()
            tape.backward(loss)
        np.testing.assert_array_equal(w.grad, [1.0, 1.0, 1.0])

    def test_quadratic(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.mul(w, w).sum())
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])

    def test_unused_parameter_has_zero_grad(self):
        w = Tensor([1.0], requires_grad=True)
        u = Tensor([3.0, 4.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(w.sum())
        np.testing.assert_array_equal(u.grad, [0.0, 0.0])

    def test_reuse_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.add(x, x).sum())
        np.testing.assert_array_equal(x.grad, [2.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = ad.add(x, x)
            with pytest.raises(ShapeError):
                tape.backward(y)

    def test_second_backward_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            y = x.sum()
            tape.backward(y)
            with pytest.raises(RuntimeError):
                tape.backward(y)

    def test_off_tape_loss_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        y = x.sum()  # no tape active
        with Tape() as tape:
            with pytest.raises(ValueError):
                tape.backward(y)

    def test_grads_accumulate_until_zero_grad(self):
        x = Tensor([1.0], requires_grad=True)
        for expected in (1.0, 2.0):
            with Tape() as tape:
                tape.backward(x.sum())
            np.testing.assert_array_equal(x.grad, [expected])
        x.zero_grad()
        np.testing.assert_array_equal(x.grad, [0.0])


class TestGradientCheck:
    def test_linear_is_exact(self):
        x = Tensor([0.3, -1.2, 4.0], requires_grad=True)
        assert gradient_check(lambda t: t.sum(), x) <= 1e-10

    def test_sigmoid_sum(self):
        x = Tensor([0.1, -0.3], requires_grad=True)
        assert gradient_check(lambda t: ad.sigmoid(t).sum(), x, eps=1e-5) <= 1e-6

    def test_rejects_non_scalar_f(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            gradient_check(lambda t: ad.add(t, t), x)

    def test_rejects_bad_eps(self):
        x = Tensor([1.0], requires_grad=True)
        with pytest.raises(ValueError):
            gradient_check(lambda t: t.sum(), x, eps=0.5)


def _random_scalar_programs(rng):
    """Scalar functions composing each primitive, paired with a random input."""
    n, k = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    mat = Tensor(rng.normal(size=(n, k)), requires_grad=True)
    other = Tensor(rng.normal(size=(n, k)))
    vec = Tensor(rng.normal(size=k))
    right = Tensor(rng.normal(size=(k, n)))
    axis = int(rng.integers(0, 2))
    return mat, [
        lambda t: ad.matmul(t, right).sum(),
        lambda t: ad.add(t, other).mean(),
        lambda t: ad.sub(t, other).sum(),
        lambda t: ad.mul(t, other).sum(),
        lambda t: ad.add(t, vec).sum(),
        lambda t: ad.mul(t, vec).mean(),
        lambda t: ad.sigmoid(t).sum(),
        lambda t: ad.tanh(t).sum(),
        lambda t: ad.relu(t).sum(),
        lambda t: ad.log(ad.clamp(t, 1e-3, 10.0)).sum() if np.all(t.data > 0) else t.sum(),
        lambda t: t.sum(axis=axis).sum(),
        lambda t: t.mean(axis=axis).sum(),
        lambda t: ad.concat([t, other], axis=0).mean(),
        lambda t: ad.reshape(t, (k, n)).sum(),
        lambda t: ad.narrow(t, 0, 0, n).sum() if n > 0 else t.sum(),
        lambda t: ad.mul(t, t).sum(),
    ]


def test_primitives_match_finite_differences():
    """Analytic gradients of all primitives vs central differences, 100 seeded trials."""
    rng = np.random.default_rng(20240901)
    checked = 0
    for _ in range(100):
        x, programs = _random_scalar_programs(rng)
        f = programs[checked % len(programs)]
        assert gradient_check(f, x, eps=1e-5) <= 1e-4
        checked += 1


def test_forward_deterministic():
    rng = np.random.default_rng(7)
    data = rng.normal(size=(4, 5))
    a = ad.sigmoid(Tensor(data)).data
    b = ad.sigmoid(Tensor(data.copy())).data
    assert a.tobytes() == b.tobytes()


def test_relu_matches_definition():
    x = Tensor([-2.0, 0.0, 3.5])
    np.testing.assert_array_equal(ad.relu(x).data, [0.0, 0.0, 3.5])


def test_narrow_slices_rows():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    out = ad.narrow(x, 0, 1, 2)
    np.testing.assert_array_equal(out.data, x.data[1:3])
    with pytest.raises(ShapeError):
        ad.narrow(x, 0, 2, 5)


def test_operator_sugar_matches_functions():
    a = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = (2.0 * a - a * a + 1.0).sum()
        tape.backward(loss)
    # d/da (2a - a^2 + 1) = 2 - 2a
    np.testing.assert_allclose(a.grad, [0.0, -2.0])
