import numpy as np
import pytest

from latentik import autodiff as ad
from latentik.autodiff import AdamW, Parameter, Tensor, backward
from latentik.errors import ContractError, DimensionError, DomainError


def finite_difference(f, x, eps=1e-4):
    """Central finite differences of a scalar function at x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def check_gradient(build, x0, rtol=1e-4):
    """Compare autodiff gradient of scalar build(Tensor) against finite differences."""
    t = Tensor(x0.copy(), requires_grad=True)
    loss = build(t)
    got = backward(loss)[t]

    def f(x):
        return build(Tensor(x)).item()

    want = finite_difference(f, x0.copy())
    scale = np.maximum(np.abs(want), 1.0)
    assert np.abs(got - want).max() / scale.max() <= rtol, (got, want)


class TestPrimitiveGradients:
    """Every primitive against the central finite-difference oracle."""

    def setup_method(self):
        self.rng = np.random.default_rng(42)

    def test_add(self):
        b = self.rng.standard_normal((3, 4))
        check_gradient(lambda t: ad.mean(ad.add(t, Tensor(b))), self.rng.standard_normal((3, 4)))

    def test_add_suffix_broadcast(self):
        x = self.rng.standard_normal(4)
        base = Tensor(self.rng.standard_normal((3, 4)))
        check_gradient(lambda t: ad.mean(ad.square(ad.add(base, t))), x)

    def test_sub(self):
        b = self.rng.standard_normal((3, 4))
        check_gradient(
            lambda t: ad.mean(ad.square(ad.sub(t, Tensor(b)))), self.rng.standard_normal((3, 4))
        )

    def test_mul(self):
        b = self.rng.standard_normal((2, 5))
        check_gradient(lambda t: ad.mean(ad.mul(t, Tensor(b))), self.rng.standard_normal((2, 5)))

    def test_scale(self):
        check_gradient(lambda t: ad.sum_(ad.scale(t, -2.5)), self.rng.standard_normal(6))

    def test_matmul(self):
        b = self.rng.standard_normal((4, 3))
        check_gradient(
            lambda t: ad.mean(ad.square(ad.matmul(t, Tensor(b)))),
            self.rng.standard_normal((2, 4)),
        )

    def test_matmul_batched(self):
        b = self.rng.standard_normal((2, 4, 3))
        check_gradient(
            lambda t: ad.mean(ad.square(ad.matmul(t, Tensor(b)))),
            self.rng.standard_normal((2, 5, 4)),
        )

    def test_matmul_const_left(self):
        a = self.rng.standard_normal((5, 4))
        check_gradient(
            lambda t: ad.mean(ad.square(ad.matmul(Tensor(a), t))),
            self.rng.standard_normal((3, 4, 2)),
        )

    def test_concat(self):
        b = self.rng.standard_normal((3, 2))
        check_gradient(
            lambda t: ad.mean(ad.square(ad.concat([t, Tensor(b)], axis=1))),
            self.rng.standard_normal((3, 3)),
        )

    def test_getitem(self):
        check_gradient(
            lambda t: ad.mean(ad.square(ad.getitem(t, (slice(None), slice(1, 3))))),
            self.rng.standard_normal((4, 5)),
        )

    def test_index_select_with_repeats(self):
        check_gradient(
            lambda t: ad.mean(ad.square(ad.index_select(t, 1, [0, 0, 2]))),
            self.rng.standard_normal((2, 4, 3)),
        )

    def test_reshape(self):
        check_gradient(
            lambda t: ad.mean(ad.square(ad.reshape(t, (6,)))), self.rng.standard_normal((2, 3))
        )

    def test_swapaxes(self):
        b = self.rng.standard_normal((4, 2))
        check_gradient(
            lambda t: ad.mean(ad.square(ad.matmul(ad.swapaxes(t, 0, 1), Tensor(b)))),
            self.rng.standard_normal((4, 3)),
        )

    def test_tile(self):
        b = self.rng.standard_normal((3, 4))
        check_gradient(
            lambda t: ad.mean(ad.mul(ad.tile(t, 3, 0), Tensor(b))),
            self.rng.standard_normal((1, 4)),
        )

    def test_mean_axis(self):
        check_gradient(
            lambda t: ad.sum_(ad.square(ad.mean(t, axis=1))), self.rng.standard_normal((3, 5))
        )

    def test_sum(self):
        check_gradient(
            lambda t: ad.mean(ad.square(ad.sum_(t, axis=0, keepdims=True))),
            self.rng.standard_normal((3, 4)),
        )

    def test_square_backward_value(self):
        t = Tensor(np.array([3.0]), requires_grad=True)
        grads = backward(ad.sum_(ad.square(t)))
        assert np.allclose(grads[t], [6.0])

    def test_sqrt(self):
        check_gradient(lambda t: ad.mean(ad.sqrt(t)), self.rng.uniform(0.5, 2.0, (3, 3)))

    def test_exp(self):
        check_gradient(lambda t: ad.mean(ad.exp(t)), self.rng.standard_normal((2, 3)))

    def test_log(self):
        check_gradient(lambda t: ad.mean(ad.log(t)), self.rng.uniform(0.5, 3.0, (4,)))

    def test_tanh(self):
        check_gradient(lambda t: ad.mean(ad.tanh(t)), self.rng.standard_normal((3, 4)))

    def test_relu(self):
        x = self.rng.standard_normal((4, 4))
        x[np.abs(x) < 0.05] += 0.1  # stay clear of the kink
        check_gradient(lambda t: ad.mean(ad.relu(t)), x)

    def test_elu(self):
        x = self.rng.standard_normal((4, 4))
        x[np.abs(x) < 0.05] += 0.1
        check_gradient(lambda t: ad.mean(ad.square(ad.elu(t))), x)

    def test_softmax(self):
        check_gradient(
            lambda t: ad.mean(ad.square(ad.softmax(t, axis=-1))),
            self.rng.standard_normal((3, 5)),
        )

    def test_layer_norm(self):
        check_gradient(
            lambda t: ad.mean(ad.square(ad.layer_norm(t))), self.rng.standard_normal((3, 6))
        )

    def test_vec_normalize(self):
        check_gradient(
            lambda t: ad.mean(ad.square(ad.vec_normalize(t))),
            self.rng.standard_normal((3, 4)) + 0.5,
        )

    def test_cross(self):
        b = self.rng.standard_normal((4, 3))
        check_gradient(
            lambda t: ad.mean(ad.square(ad.cross(t, Tensor(b)))),
            self.rng.standard_normal((4, 3)),
        )
        check_gradient(
            lambda t: ad.mean(ad.square(ad.cross(Tensor(b), t))),
            self.rng.standard_normal((4, 3)),
        )

    def test_mse(self):
        b = self.rng.standard_normal((3, 4))
        check_gradient(lambda t: ad.mse(t, Tensor(b)), self.rng.standard_normal((3, 4)))


class TestSoftmaxIdentities:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        s = ad.softmax(Tensor(rng.standard_normal((5, 7))))
        assert np.allclose(s.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_gradient_of_row_sums_is_zero(self):
        rng = np.random.default_rng(2)
        t = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
        loss = ad.sum_(ad.softmax(t))
        grads = backward(loss)
        assert np.abs(grads[t]).max() <= 1e-12


class TestBackwardContract:
    def test_non_scalar_raises(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            backward(ad.square(t))

    def test_unreachable_gets_no_entry(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = Tensor(np.ones(3), requires_grad=True)
        loss = ad.mean(ad.square(y))
        grads = backward(loss)
        assert x not in grads
        assert np.allclose(grads[y], 2.0 / 3.0)

    def test_composite_hand_oracle(self):
        # f(x) = mean((2x)^2) over R^3 -> grad = 8x/3
        x0 = np.array([0.5, -1.0, 2.0])
        t = Tensor(x0, requires_grad=True)
        loss = ad.mean(ad.square(ad.scale(t, 2.0)))
        grads = backward(loss)
        assert np.allclose(grads[t], 8.0 * x0 / 3.0)

    def test_fanout_accumulates(self):
        t = Tensor(np.array([2.0]), requires_grad=True)
        loss = ad.sum_(ad.add(ad.square(t), ad.square(t)))
        grads = backward(loss)
        assert np.allclose(grads[t], [8.0])

    def test_stop_treats_node_as_leaf(self):
        t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        mid = ad.scale(t, 3.0)
        loss = ad.mean(ad.square(mid))
        grads = backward(loss, stop=(mid,))
        assert mid in grads
        assert t not in grads

    def test_determinism(self):
        rng = np.random.default_rng(3)
        x0 = rng.standard_normal((4, 4))
        outs = []
        for _ in range(2):
            t = Tensor(x0.copy(), requires_grad=True)
            loss = ad.mse(ad.tanh(ad.matmul(t, Tensor(x0))), Tensor(np.zeros((4, 4))))
            outs.append((loss.item(), backward(loss)[t].copy()))
        assert outs[0][0] == outs[1][0]
        assert np.array_equal(outs[0][1], outs[1][1])


class TestFreezing:
    def test_frozen_parameter_absent_from_gradients(self):
        rng = np.random.default_rng(4)
        w = Parameter(rng.standard_normal((3, 2)))
        z = Tensor(rng.standard_normal((1, 3)), requires_grad=True)
        w.freeze()
        loss = ad.mse(ad.matmul(z, w), Tensor(np.zeros((1, 2))))
        grads = backward(loss)
        assert w not in grads
        assert z in grads

    def test_gradient_flows_through_frozen_ops(self):
        w = Parameter(np.array([[2.0]]))
        w.freeze()
        z = Tensor(np.array([[3.0]]), requires_grad=True)
        loss = ad.mse(ad.matmul(z, w), Tensor(np.array([[0.0]])))
        grads = backward(loss)
        # loss = (2z)^2, dloss/dz = 8z = 24
        assert np.allclose(grads[z], [[24.0]])


class TestDomainErrors:
    def test_sqrt_domain(self):
        with pytest.raises(DomainError):
            ad.sqrt(Tensor(np.array([-1.0])))

    def test_log_domain(self):
        with pytest.raises(DomainError):
            ad.log(Tensor(np.array([0.0])))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))
        with pytest.raises(DimensionError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
        with pytest.raises(DimensionError):
            ad.mse(Tensor(np.ones(3)), Tensor(np.ones(4)))


class TestAdamW:
    def test_zero_gradient_no_decay_keeps_params(self):
        p = Parameter(np.array([1.0, -2.0]))
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        opt.step({p: np.zeros(2)})
        assert np.allclose(p.data, [1.0, -2.0])

    def test_first_step_is_minus_lr(self):
        p = Parameter(np.array([0.0]))
        opt = AdamW([p], lr=0.1, betas=(0.9, 0.999), weight_decay=0.0)
        opt.step({p: np.array([1.0])})
        assert p.data[0] == pytest.approx(-0.1, rel=1e-6)

    def test_frozen_parameter_untouched(self):
        p = Parameter(np.array([1.0]))
        opt = AdamW([p], lr=0.1)
        p.freeze()
        opt.step({p: np.array([1.0])})
        assert np.allclose(p.data, [1.0])

    def test_converges_on_convex_quadratic(self):
        # minimize (x - 3)^2 + (y + 1)^2
        target = np.array([3.0, -1.0])
        p = Parameter(np.zeros(2))
        opt = AdamW([p], lr=0.05, weight_decay=0.0)
        for _ in range(500):
            t = Tensor(p.data, requires_grad=True)
            loss = ad.sum_(ad.square(ad.sub(t, Tensor(target))))
            opt.step({p: backward(loss)[t]})
        assert np.abs(p.data - target).max() <= 1e-3
