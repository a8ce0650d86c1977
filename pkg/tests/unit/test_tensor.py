import numpy as np
import pytest

from core import tensor as T
from core.layers import glorot_init
from core.tensor import Tensor, backward
from utils.error_handler import ShapeError, TapeError


class TestForwardOps:
    def test_softmax_uniform_logits(self):
        """Test softmax with temperature on uniform logits"""
        out = T.softmax(Tensor([0.0, 0.0, 0.0]), axis=-1, temperature=10)
        np.testing.assert_allclose(out.data, [1 / 3] * 3)

    def test_softmax_sums_to_one(self, rng):
        """Test softmax rows sum to one and stay strictly positive"""
        out = T.softmax(Tensor(rng.uniform(-50, 50, size=(6, 5))), axis=-1, temperature=0.5)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(out.data > 0)

    def test_softmax_translation_invariance(self, rng):
        """Test adding a constant along the softmax axis leaves the output unchanged"""
        x = rng.normal(size=(3, 4))
        a = T.softmax(Tensor(x), axis=-1, temperature=15).data
        b = T.softmax(Tensor(x + 7.5), axis=-1, temperature=15).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_softmax_mask(self):
        """Test masked entries get probability zero"""
        out = T.softmax(Tensor([[1.0, 2.0, 3.0]]), mask=np.array([[1, 0, 1]]))
        assert out.data[0, 1] == 0.0
        np.testing.assert_allclose(out.data.sum(), 1.0)

    def test_softmax_empty_mask_rejected(self):
        """Test a mask that removes a whole row raises"""
        with pytest.raises(ShapeError):
            T.softmax(Tensor([[1.0, 2.0]]), mask=np.array([[0, 0]]))

    def test_minimum(self):
        """Test elementwise min"""
        out = T.minimum(Tensor([0.2, 0.9]), Tensor([0.5, 0.4]))
        np.testing.assert_allclose(out.data, [0.2, 0.4])

    def test_matmul_transpose_shape(self):
        """Test k x n transpose view times n x m gives k x m"""
        b = Tensor(np.ones((2, 3)))
        b_item = Tensor(np.ones((2, 2)))
        assert (b.T @ b_item).shape == (3, 2)

    def test_masked_fill(self):
        """Test masked_fill replaces masked entries"""
        out = T.masked_fill(Tensor([1.0, 2.0, 3.0]), np.array([0, 1, 0]), 1e9)
        np.testing.assert_allclose(out.data, [1.0, 1e9, 3.0])

    def test_shape_mismatch_names_op(self):
        """Test broadcast errors carry the op name and shapes"""
        with pytest.raises(ShapeError) as exc:
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))
        assert exc.value.op == 'add'
        assert exc.value.shapes == ((2, 3), (4,))

    def test_matmul_mismatch(self):
        """Test matmul inner dimension mismatch"""
        with pytest.raises(ShapeError) as exc:
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
        assert exc.value.op == 'matmul'

    def test_attention_weights_sum_to_one(self, rng):
        """Test scaled dot-product attention weights are row-stochastic"""
        q, k, v = (Tensor(rng.normal(size=(2, 5, 4))) for _ in range(3))
        out, weights = T.scaled_dot_product_attention(q, k, v)
        assert out.shape == (2, 5, 4)
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_determinism(self, rng):
        """Test the same op sequence reproduces bit-identical outputs"""
        x = rng.uniform(-3, 3, size=(4, 4))

        def run():
            t = Tensor(x)
            return (T.softmax(t @ t.T, axis=0, temperature=3).tanh() * t).sum(axis=1).data

        assert np.array_equal(run(), run())


class TestBackward:
    def test_sigmoid_gradient_at_zero(self):
        """Test d/dx sum(sigmoid(x)) = 0.25 at x = 0"""
        x = Tensor(np.zeros(4), requires_grad=True)
        backward(x.sigmoid().sum())
        np.testing.assert_allclose(x.grad, 0.25)

    def test_non_scalar_loss_rejected(self):
        """Test backward on a non-scalar loss raises"""
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(TapeError):
            backward(x * 2)

    def test_second_backward_rejected(self):
        """Test replaying the same graph twice raises"""
        x = Tensor(np.ones(3), requires_grad=True)
        loss = (x * x).sum()
        backward(loss)
        with pytest.raises(TapeError):
            backward(loss)

    def test_gradients_accumulate_on_leaves(self):
        """Test two graphs accumulate into the same leaf gradient"""
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        backward((x * 3).sum())
        backward((x * x).sum())
        np.testing.assert_allclose(x.grad, [3 + 2, 3 + 4])

    def test_min_tie_goes_to_lowest_index(self):
        """Test min along an axis routes the gradient to the first minimal entry"""
        x = Tensor(np.array([[1.0, 0.5, 0.5]]), requires_grad=True)
        backward(x.min(axis=-1).sum())
        np.testing.assert_allclose(x.grad, [[0.0, 1.0, 0.0]])

    def test_minimum_tie_goes_to_first_argument(self):
        """Test elementwise min routes ties to the first argument"""
        a = Tensor(np.array([0.3]), requires_grad=True)
        b = Tensor(np.array([0.3]), requires_grad=True)
        backward(T.minimum(a, b).sum())
        assert a.grad[0] == 1.0 and b.grad[0] == 0.0

    def test_masked_fill_blocks_gradient(self):
        """Test no gradient flows through filled entries"""
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        backward(T.masked_fill(x, np.array([0, 1]), 5.0).sum())
        np.testing.assert_allclose(x.grad, [1.0, 0.0])

    def test_gradient_map_returned(self):
        """Test backward returns the leaf gradient map"""
        x = Tensor(np.ones(2), requires_grad=True)
        grads = backward((x * 2).sum())
        np.testing.assert_allclose(grads[x], [2.0, 2.0])


class TestGradientCheck:
    @pytest.fixture
    def inputs(self, rng):
        return lambda *shape: rng.uniform(-3, 3, size=shape)

    @pytest.mark.parametrize('op', [T.add, T.subtract, T.multiply, T.minimum])
    def test_binary_ops(self, gradcheck, inputs, op):
        """Test elementwise binary op gradients with broadcasting"""
        assert gradcheck(op, inputs(3, 4), inputs(1, 4)) < 1e-4

    def test_divide(self, gradcheck, inputs, rng):
        """Test divide gradient away from zero"""
        assert gradcheck(T.divide, inputs(3, 4), rng.uniform(1, 3, size=(3, 4))) < 1e-4

    def test_matmul(self, gradcheck, inputs):
        """Test batched matmul gradient"""
        assert gradcheck(T.matmul, inputs(2, 3, 4), inputs(4, 5)) < 1e-4

    @pytest.mark.parametrize('fn', [
        lambda x: x.tanh(),
        lambda x: x.sigmoid(),
        lambda x: x.exp(),
        lambda x: x.clamp_min(0.1),
        lambda x: -x,
        lambda x: x.sum(axis=1),
        lambda x: x.mean(axis=0, keepdims=True),
        lambda x: x.min(axis=1),
        lambda x: x.reshape(4, 3),
        lambda x: x.transpose(1, 0),
        lambda x: T.broadcast_to(x, (2, 3, 4)),
        lambda x: T.take(x, [0, 2, 2], axis=1),
        lambda x: T.masked_fill(x, np.eye(3, 4), 2.0),
    ])
    def test_unary_ops(self, gradcheck, inputs, fn):
        """Test unary, reduction and shape op gradients"""
        assert gradcheck(fn, inputs(3, 4)) < 1e-4

    def test_log(self, gradcheck, rng):
        """Test log gradient on positive inputs"""
        assert gradcheck(T.log, rng.uniform(0.5, 3, size=(3, 4))) < 1e-4

    def test_concat(self, gradcheck, inputs):
        """Test concatenation gradient"""
        assert gradcheck(lambda a, b: T.concat([a, b], axis=1), inputs(2, 3), inputs(2, 2)) < 1e-4

    def test_softmax_with_temperature(self, gradcheck, inputs):
        """Test softmax(x / 15) gradient on random 3 x 4 logits"""
        assert gradcheck(lambda x: T.softmax(x, axis=-1, temperature=15), inputs(3, 4)) < 1e-4

    def test_masked_softmax(self, gradcheck, inputs):
        """Test masked softmax gradient"""
        mask = np.array([[1, 0, 1, 1], [0, 1, 1, 0], [1, 1, 1, 1]])
        assert gradcheck(lambda x: T.softmax(x, axis=-1, temperature=2, mask=mask), inputs(3, 4)) < 1e-4

    def test_attention(self, gradcheck, inputs):
        """Test attention composed from primitives"""
        assert gradcheck(lambda q, k, v: T.scaled_dot_product_attention(q, k, v)[0],
                         inputs(2, 3, 4), inputs(2, 3, 4), inputs(2, 3, 4)) < 1e-4


class TestGlorotInit:
    def test_bound(self, rng):
        """Test entries lie within sqrt(6 / (fan_in + fan_out))"""
        w = glorot_init((100, 100), rng)
        assert np.max(np.abs(w.data)) <= np.sqrt(6 / 200)
        assert np.max(np.abs(w.data)) > 0.9 * np.sqrt(6 / 200)

    def test_single_entry_bound(self, rng):
        """Test the (1, 1) bound is sqrt(3)"""
        draws = np.array([glorot_init((1, 1), rng).data[0, 0] for _ in range(200)])
        assert np.max(np.abs(draws)) <= np.sqrt(3)

    def test_requires_grad(self, rng):
        """Test initialized tensors are trainable"""
        assert glorot_init((3, 2), rng).requires_grad

    @pytest.mark.slow
    def test_mean_is_centered(self, rng):
        """Test the mean over 1e6 draws is near zero"""
        w = glorot_init((1000, 1000), rng)
        assert abs(w.data.mean()) < 1e-3
