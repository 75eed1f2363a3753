import numpy as np
import pytest

from diffood.autodiff import Adam, Tensor, backward, matmul, silu, zero_grads


def loop_matmul(a, b):
    """Triple-loop reference product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[3.0], [4.0]]

    def test_hand_product(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        got = matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, loop_matmul(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_associative_with_identity(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(-1, 1, (4, 4))
        b = rng.uniform(-1, 1, (4, 4))
        c = rng.uniform(-1, 1, (4, 4))
        left = matmul(matmul(Tensor(a), Tensor(b)), Tensor(c)).data
        right = matmul(Tensor(a), matmul(Tensor(b), Tensor(c))).data
        np.testing.assert_allclose(left, right, atol=1e-12)
        eye = Tensor(np.eye(4))
        np.testing.assert_allclose(matmul(Tensor(a), eye).data, a, atol=1e-12)


class TestBackward:
    def test_sum_gradient(self):
        theta = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(theta.sum())
        assert theta.grad.tolist() == [1.0, 1.0, 1.0]

    def test_square_gradient(self):
        theta = Tensor([3.0], requires_grad=True)
        backward(theta.square().sum())
        assert theta.grad.tolist() == [6.0]

    def test_non_scalar_loss_rejected(self):
        theta = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError):
            backward(theta.square())

    def test_reused_node_accumulates(self):
        theta = Tensor([2.0], requires_grad=True)
        loss = (theta * theta).sum()  # d/dx x*x with both factors the same node
        backward(loss)
        assert theta.grad.tolist() == [4.0]


def mlp_forward(params, x):
    h = Tensor(x)
    for i in range(0, len(params) - 2, 2):
        h = silu(matmul(h, params[i]) + params[i + 1])
    return matmul(h, params[-2]) + params[-1]


def make_mlp(rng, dims):
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        params.append(Tensor(rng.standard_normal((fan_in, fan_out)) * 0.5,
                             requires_grad=True))
        params.append(Tensor(rng.standard_normal(fan_out) * 0.1,
                             requires_grad=True))
    return params


def finite_diff_check(seed, dims, h=1e-5, rel_tol=1e-4):
    rng = np.random.default_rng(seed)
    params = make_mlp(rng, dims)
    x = rng.standard_normal((4, dims[0]))
    target = rng.standard_normal((4, dims[-1]))

    def loss_value():
        return float((mlp_forward(params, x) - Tensor(target)).square().mean().data)

    zero_grads(params)
    backward((mlp_forward(params, x) - Tensor(target)).square().mean())
    for p in params:
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_value()
            flat[j] = orig - h
            down = loss_value()
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            denom = max(abs(numeric), abs(grad[j]), 1e-8)
            assert abs(grad[j] - numeric) / denom <= rel_tol, \
                f"param grad {grad[j]} vs numeric {numeric}"


@pytest.mark.parametrize("seed,dims", [
    (0, [3, 8, 2]),
    (1, [2, 16, 16, 1]),
    (2, [5, 8, 8, 8, 3]),
])
def test_gradients_match_finite_differences(seed, dims):
    finite_diff_check(seed, dims)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        p.grad = np.zeros(2)
        opt = Adam([p], lr=0.1)
        opt.step()
        assert p.data.tolist() == [1.0, -2.0]

    def test_single_step_hand_value(self):
        # t=1, g=1: m_hat = v_hat = 1, so the step is -lr/(1 + eps)
        p = Tensor([0.0], requires_grad=True)
        p.grad = np.ones(1)
        opt = Adam([p], lr=0.1)
        opt.step()
        expected = -0.1 / (1.0 + 1e-8)
        assert abs(p.data[0] - expected) < 1e-15
        assert abs(p.data[0] - (-0.1)) < 1e-8

    def test_two_steps_match_scalar_reference(self):
        def scalar_adam(theta, grads, lr=0.05, b1=0.9, b2=0.999, eps=1e-8):
            m = v = 0.0
            for t, g in enumerate(grads, start=1):
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                theta -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
            return theta

        p = Tensor([0.7], requires_grad=True)
        opt = Adam([p], lr=0.05)
        for g in (0.3, -1.2):
            p.grad = np.array([g])
            opt.step()
        assert p.data[0] == pytest.approx(scalar_adam(0.7, [0.3, -1.2]), abs=1e-15)

    def test_step_counter_increases(self):
        p = Tensor([0.0], requires_grad=True)
        opt = Adam([p])
        for expected in (1, 2, 3):
            p.grad = np.ones(1)
            opt.step()
            assert opt.step_count == expected
