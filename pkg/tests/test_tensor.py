"""Reverse-mode differentiation, shape checks and the gradient checker."""

import numpy as np
import pytest

from core import tensor as T
from core.exceptions import ContractError, DimensionError, NumericError, VocabIndexError
from core.tensor import Tape, Tensor, grad_check, no_grad


def _param(shape, seed=0, low=-1.0, high=1.0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


class TestBackward:

    def test_add_mul_grads(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        b = Tensor(np.array([3.0, -1.0]), requires_grad=True)
        (a * b + a).sum().backward()
        np.testing.assert_allclose(a.grad, [4.0, 0.0])
        np.testing.assert_allclose(b.grad, [1.0, 2.0])

    def test_fan_out_accumulates(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        y = x * x + x * 2.0
        y.backward()
        assert x.grad == pytest.approx(8.0)

    def test_grads_accumulate_until_zero_grad(self):
        x = Tensor(np.array([1.0, 1.0]), requires_grad=True)
        (x * 2.0).sum().backward()
        (x * 2.0).sum().backward()
        np.testing.assert_allclose(x.grad, [4.0, 4.0])
        x.zero_grad()
        assert x.grad is None

    def test_broadcast_gradient_is_summed(self):
        W = _param((3, 2))
        b = _param((2,), seed=1)
        (W + b).sum().backward()
        np.testing.assert_allclose(b.grad, [3.0, 3.0])

    def test_backward_needs_scalar_root(self):
        x = _param((3,))
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_untracked_root_rejected(self):
        with pytest.raises(ContractError):
            Tensor(np.array(1.0)).backward()

    def test_tape_visits_each_node_once(self):
        x = _param((2,))
        h = T.tanh(x)
        y = (h * h + h).sum()
        tape = Tape.from_root(y)
        ids = [id(t) for t in tape.entries]
        assert len(ids) == len(set(ids))
        assert tape.entries[-1] is y
        assert ids.index(id(x)) < ids.index(id(h))

    def test_no_grad_records_nothing(self):
        x = _param((2,))
        with no_grad():
            y = (x * 3.0).sum()
        assert not y.tracked
        assert x.tracked


class TestShapes:

    def test_matmul_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(_param((2, 3)), _param((2,)))

    def test_add_mismatch(self):
        with pytest.raises(DimensionError):
            _param((3,)) + _param((4,))

    def test_concat_mismatch(self):
        with pytest.raises(DimensionError):
            T.concat([_param((2, 3)), _param((2, 4))], axis=0)

    def test_reshape_mismatch(self):
        with pytest.raises(DimensionError):
            _param((6,)).reshape((4,))

    def test_embedding_out_of_range(self):
        with pytest.raises(VocabIndexError):
            T.embedding_lookup(_param((5, 2)), [1, 5])

    def test_scatter_out_of_range(self):
        with pytest.raises(VocabIndexError):
            T.scatter_add(_param((2,)), [0, 7], 5)

    def test_unknown_op_kind(self):
        with pytest.raises(ContractError):
            T.elementwise_and_linear("relu", _param((2,)))


class TestSoftmax:

    def test_sums_to_one_and_stable(self):
        p = T.softmax(Tensor(np.array([1000.0, 1001.0, 999.0])))
        assert p.data.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.isfinite(p.data))

    def test_mask_zeroes_excluded(self):
        p = T.softmax(Tensor(np.array([1.0, 2.0, 3.0])), mask=np.array([True, False, True]))
        assert p.data[1] == 0.0
        assert p.data.sum() == pytest.approx(1.0)

    def test_all_masked_rejected(self):
        with pytest.raises(ContractError):
            T.softmax(Tensor(np.zeros(3)), mask=np.zeros(3, dtype=bool))

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            T.softmax(Tensor(np.array([0.0, np.nan])))

    def test_fuzzed_simplex(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            p = T.softmax(Tensor(rng.normal(scale=10.0, size=rng.integers(1, 20)))).data
            assert np.all(p >= 0)
            assert abs(p.sum() - 1.0) < 1e-8


class TestGradCheck:

    def test_composite_function(self):
        W = _param((3, 4))
        x = _param((4,), seed=1)
        b = _param((3,), seed=2)

        def f():
            h = T.tanh(W @ x + b)
            p = T.softmax(h)
            return -T.log(p[1]) + T.sigmoid(h).sum()

        assert grad_check(f, [W, x, b]) < 1e-6

    def test_lookup_scatter_and_logaddexp(self):
        E = _param((5, 3))
        a = _param((3,), seed=4)

        def f():
            rows = T.embedding_lookup(E, [1, 3, 1])
            scattered = T.scatter_add(rows @ a, [0, 2, 2], 4)
            return T.logaddexp(scattered, a.sum()).sum()

        assert grad_check(f, [E, a]) < 1e-6

    def test_stack_transpose_getitem(self):
        x = _param((2, 3))

        def f():
            s = T.stack([x[0], x[1] * 2.0])
            return (s.T @ Tensor(np.array([1.0, -1.0]))).exp().sum()

        assert grad_check(f, [x]) < 1e-6

    @pytest.mark.filterwarnings("error")
    def test_scalar_index_backward_keeps_shapes(self):
        x = _param((3,), low=0.1, high=1.0)
        picked = x[1]
        assert picked.shape == ()
        assert Tensor(2.0).shape == ()
        loss = -T.log(T.clamp_min(picked, 1e-12))
        loss.backward()
        expected = np.zeros(3)
        expected[1] = -1.0 / x.data[1]
        np.testing.assert_allclose(x.grad, expected)

    def test_detects_a_wrong_rule(self):
        x = _param((3,))

        def f():
            out = T.tanh(x)
            if out.node is not None:
                out.node.backward_rule = lambda g: (g * 2.0,)
            return out.sum()

        assert grad_check(f, [x]) > 1e-2

    def test_coordinate_subsample(self):
        W = _param((10, 10))
        assert grad_check(lambda: T.tanh(W).sum(), [W], coordinates=7, seed=1) < 1e-6

    def test_bad_step_rejected(self):
        with pytest.raises(ContractError):
            grad_check(lambda: _param((1,)).sum(), [], h=0.0)
