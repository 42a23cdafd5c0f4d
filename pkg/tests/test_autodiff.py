"""Finite-difference oracles and contract checks for the autodiff engine."""
import numpy as np
import pytest

from ratext import autodiff as ad
from ratext.autodiff import Tensor, backward
from ratext.errors import ContractViolation, NumericFault


def fd_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x."""
    g = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f()
        flat[i] = keep - h
        dn = f()
        flat[i] = keep
        gf[i] = (up - dn) / (2 * h)
    return g


def check_op(build, *arrays, h=1e-6, tol=1e-7):
    """Compare backward() grads of scalar build(*tensors) against FD."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    backward(loss)
    for t, a in zip(tensors, arrays):
        analytic = t.grad.copy()
        num = fd_grad(lambda: build(*[Tensor(x) for x in arrays]).item(), a, h=h)
        err = np.max(np.abs(analytic - num) / np.maximum(1.0, np.abs(num)))
        assert err < tol, f"gradient mismatch {err:.3e} for {build.__name__}"


RNG = np.random.default_rng(7)


class TestPrimitiveGradients:
    def test_add_broadcast(self):
        a = RNG.standard_normal((3, 4))
        b = RNG.standard_normal((1, 4))
        check_op(lambda x, y: ad.tsum(ad.mul(ad.add(x, y), ad.add(x, y))), a, b)

    def test_mul_broadcast_column(self):
        a = RNG.standard_normal((3, 4))
        b = RNG.standard_normal((3, 1))
        check_op(lambda x, y: ad.tsum(ad.mul(x, y)), a, b)

    def test_matmul(self):
        a = RNG.standard_normal((3, 4))
        b = RNG.standard_normal((4, 2))
        check_op(lambda x, y: ad.tsum(ad.tanh(ad.matmul(x, y))), a, b)

    def test_concat_axis0_and_1(self):
        a = RNG.standard_normal((2, 3))
        b = RNG.standard_normal((2, 3))
        check_op(lambda x, y: ad.tsum(ad.mul(ad.concat([x, y], axis=0),
                                             ad.concat([y, x], axis=0))), a, b)
        check_op(lambda x, y: ad.tsum(ad.exp(ad.concat([x, y], axis=1))), a, b)

    def test_slice(self):
        a = RNG.standard_normal((3, 6))
        check_op(lambda x: ad.tsum(ad.mul(ad.tslice(x, (slice(None), slice(0, 3))),
                                          ad.tslice(x, (slice(None), slice(3, 6))))), a)

    def test_gather_cols(self):
        a = RNG.standard_normal((4, 5))
        idx = np.array([1, 0, 4, 2])
        check_op(lambda x: ad.tsum(ad.mul(ad.gather_cols(x, idx),
                                          ad.gather_cols(x, idx))), a)

    def test_unary_chain(self):
        a = RNG.standard_normal((3, 3))
        check_op(lambda x: ad.tsum(ad.sigmoid(ad.tanh(ad.softplus(x)))), a)

    def test_exp_log(self):
        a = RNG.uniform(0.5, 2.0, size=(3, 3))
        check_op(lambda x: ad.tsum(ad.log(ad.exp(x))), a)

    def test_softmax_rows(self):
        a = RNG.standard_normal((3, 4))
        w = RNG.standard_normal((3, 4))
        check_op(lambda x: ad.tsum(ad.mul(ad.softmax(x, axis=-1), Tensor(w))), a)

    def test_sum_axis_keepdims(self):
        a = RNG.standard_normal((3, 4))
        check_op(lambda x: ad.tsum(ad.mul(ad.tsum(x, axis=1, keepdims=True), x)), a)

    def test_mean(self):
        a = RNG.standard_normal((4, 3))
        check_op(lambda x: ad.tsum(ad.mul(ad.tmean(x, axis=0, keepdims=True), x)), a)

    def test_clamp_interior(self):
        a = RNG.uniform(-0.4, 0.4, size=(3, 3))
        check_op(lambda x: ad.tsum(ad.mul(ad.clamp(x, -0.5, 0.5), x)), a)

    def test_reshape(self):
        a = RNG.standard_normal((2, 6))
        check_op(lambda x: ad.tsum(ad.mul(ad.reshape(x, (3, 4)),
                                          ad.reshape(x, (3, 4)))), a)

    def test_log_prob(self):
        a = RNG.uniform(0.1, 0.9, size=(4,))
        check_op(lambda x: ad.tsum(ad.log_prob(x)), a)

    def test_embedding(self):
        table = RNG.standard_normal((6, 3))
        ids = np.array([1, 4, 1, 0])
        w = RNG.standard_normal((4, 3))
        check_op(lambda t: ad.tsum(ad.mul(ad.embedding(t, ids), Tensor(w))), table)


class TestEngineSemantics:
    def test_reused_node_accumulates(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = ad.mul(x, x)
        backward(ad.tsum(y))
        assert np.allclose(x.grad, [6.0])

    def test_diamond_graph(self):
        # b feeds the loss both directly and through c; grads must not race.
        b = Tensor(np.array([2.0]), requires_grad=True)
        c = ad.mul(b, Tensor(np.array([5.0])))
        loss = ad.tsum(ad.add(b, c))
        backward(loss)
        assert np.allclose(b.grad, [6.0])

    def test_deep_shared_chain(self):
        x = Tensor(np.array([1.5]), requires_grad=True)
        h = x
        for _ in range(6):
            h = ad.add(h, x)  # h_k = (k+1) x
        backward(ad.tsum(h))
        assert np.allclose(x.grad, [7.0])

    def test_no_accumulation_across_calls(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        loss = ad.tsum(ad.mul(x, x))
        backward(loss)
        first = x.grad.copy()
        backward(loss)
        assert np.allclose(x.grad, first)

    def test_detach_blocks_gradient(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = ad.mul(x, x).detach()
        z = ad.mul(y, Tensor(np.array([3.0])))
        assert not z.requires_grad
        loss = ad.tsum(ad.add(ad.mul(x, Tensor(np.array([1.0]))), z))
        backward(loss)
        assert np.allclose(x.grad, [1.0])

    def test_scalar_loss_required(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ContractViolation):
            backward(ad.add(x, x))

    def test_matmul_requires_2d(self):
        with pytest.raises(ContractViolation):
            ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))

    def test_embedding_id_out_of_range(self):
        table = Tensor(np.ones((4, 2)), requires_grad=True)
        with pytest.raises(ContractViolation):
            ad.embedding(table, np.array([4]))

    def test_pad_row_gradient_stays_local(self):
        table = Tensor(RNG.standard_normal((5, 2)), requires_grad=True)
        out = ad.embedding(table, np.array([2, 2, 3]))
        backward(ad.tsum(out))
        assert np.allclose(table.grad[2], [2.0, 2.0])
        assert np.allclose(table.grad[3], [1.0, 1.0])
        assert np.allclose(table.grad[[0, 1, 4]], 0.0)

    def test_clamp_boundary_gradient_inclusive(self):
        x = Tensor(np.array([-1.0, -0.5, 0.0, 0.5, 1.0]), requires_grad=True)
        backward(ad.tsum(ad.clamp(x, -0.5, 0.5)))
        assert np.allclose(x.grad, [0.0, 1.0, 1.0, 1.0, 0.0])

    def test_collect_grads_fills_unused_with_zeros(self):
        used = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones(3), requires_grad=True)
        unused.grad = None
        backward(ad.tsum(used))
        grads = ad.collect_grads({"used": used, "unused": unused})
        assert np.allclose(grads["used"], 1.0)
        assert np.allclose(grads["unused"], 0.0)

    def test_collect_grads_flags_nonfinite(self):
        p = Tensor(np.ones(2), requires_grad=True)
        p.grad = np.array([1.0, np.nan])
        with pytest.raises(NumericFault, match="bad"):
            ad.collect_grads({"bad": p})


class TestNumericalStability:
    def test_sigmoid_extreme_inputs(self):
        x = Tensor(np.array([-800.0, 800.0]), requires_grad=True)
        y = ad.sigmoid(x)
        assert np.all(np.isfinite(y.data))
        assert y.data[0] >= 0.0 and y.data[1] <= 1.0
        backward(ad.tsum(y))
        assert np.all(np.isfinite(x.grad))

    def test_softplus_extreme_inputs(self):
        x = Tensor(np.array([-800.0, 800.0]))
        y = ad.softplus(x)
        assert np.all(np.isfinite(y.data))
        assert y.data[1] == pytest.approx(800.0)

    def test_softmax_extreme_logits(self):
        x = Tensor(np.array([[1000.0, 0.0, -1000.0]]))
        y = ad.softmax(x)
        assert np.all(np.isfinite(y.data))
        assert y.data[0].sum() == pytest.approx(1.0)

    def test_log_prob_clips_at_zero_and_one(self):
        p = Tensor(np.array([0.0, 1.0]))
        out = ad.log_prob(p)
        assert out.data[0] == pytest.approx(np.log(1e-7))
        assert out.data[1] == pytest.approx(np.log(1.0 - 1e-7))


class TestOperatorSugar:
    def test_arithmetic_operators(self):
        a = Tensor(np.array([2.0]), requires_grad=True)
        b = Tensor(np.array([3.0]), requires_grad=True)
        loss = (a * b + a - b).sum()
        backward(loss)
        assert np.allclose(a.grad, [4.0])
        assert np.allclose(b.grad, [1.0])

    def test_matmul_operator(self):
        a = Tensor(np.eye(2), requires_grad=True)
        b = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = a @ b
        assert np.allclose(out.data, b.data)

    def test_item_requires_scalar(self):
        with pytest.raises(ContractViolation):
            Tensor(np.ones(2)).item()
