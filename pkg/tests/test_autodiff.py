import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from edgeflow import autodiff as ad
from edgeflow.autodiff import NEG_INF, Tensor, grad_check, masked_log_softmax
from edgeflow.errors import ContractError, DegenerateDistributionError, NumericError, ShapeError
from edgeflow.nn import MLP, GRUCell, glorot_uniform


def softmax_oracle(logits, mask):
    """Exponentiate-normalize over unmasked entries, written independently."""
    out = np.full(logits.shape, NEG_INF)
    for r in range(logits.shape[0]):
        keep = [k for k in range(logits.shape[1]) if not mask[r, k]]
        vals = np.array([logits[r, k] for k in keep])
        w = np.exp(vals - vals.max())
        for k, p in zip(keep, w / w.sum()):
            out[r, k] = np.log(p)
    return out


def test_matmul_known_product():
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = Tensor([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(ad.matmul(a, b).data, [[1.0, 2.0], [4.0, 5.0]])


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_add_shape_error():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_mse_of_identical_is_zero():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    assert ad.mse(x, x).item() == 0.0
    with pytest.raises(ShapeError):
        ad.mse(x, Tensor(np.ones(4)))


def test_gather_rows_permutes():
    a = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(ad.gather_rows(Tensor(a), [2, 0, 1]).data, a[[2, 0, 1]])


def test_concat_and_stack_shapes():
    x, y = Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 1)))
    assert ad.concat([x, y], axis=1).shape == (2, 4)
    assert ad.stack([x, x], axis=0).shape == (2, 2, 3)
    with pytest.raises(ShapeError):
        ad.concat([x, Tensor(np.ones((3, 3)))], axis=1)


def test_backward_sum_of_squares():
    w = Tensor(np.array([1.0, -2.0, 3.5]), requires_grad=True)
    ad.sum_(ad.mul(w, w)).backward()
    np.testing.assert_array_equal(w.grad, 2 * w.data)


def test_unused_parameter_gets_zero_gradient():
    w = Tensor(np.ones(3), requires_grad=True)
    u = Tensor(np.ones(2), requires_grad=True)
    assert grad_check(lambda: ad.sum_(ad.square(w)), [w, u]) < 1e-8
    assert u.grad is None  # untouched by backward; grad_check treats it as zero


def test_backward_contracts():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        ad.square(w).backward()  # non-scalar
    with pytest.raises(ContractError):
        Tensor(1.0).backward()  # untracked
    loss = ad.sum_(ad.square(w))
    loss.backward()
    with pytest.raises(ContractError):
        loss.backward()


def test_shared_subexpression_accumulates():
    w = Tensor(np.array([2.0]), requires_grad=True)
    y = ad.mul(w, w)
    ad.sum_(ad.add(y, y)).backward()
    np.testing.assert_allclose(w.grad, [8.0])


def test_masked_log_softmax_single_unmasked():
    out = masked_log_softmax(Tensor([[3.0, -1.0, 2.0]]), np.array([[1, 0, 1]]))
    assert out.data[0, 1] == 0.0
    assert out.data[0, 0] <= -1e30 and out.data[0, 2] <= -1e30


@pytest.mark.parametrize("k", [1, 2, 5])
def test_masked_log_softmax_uniform(k):
    mask = np.zeros((1, 6))
    mask[0, k:] = 1
    out = masked_log_softmax(Tensor(np.full((1, 6), 0.7)), mask)
    np.testing.assert_allclose(out.data[0, :k], np.log(1.0 / k), rtol=0, atol=1e-15)


def test_masked_log_softmax_degenerate_row():
    with pytest.raises(DegenerateDistributionError):
        masked_log_softmax(Tensor(np.zeros((2, 3))), np.array([[0, 1, 0], [1, 1, 1]]))


@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_masked_log_softmax_vs_oracle(rows, cols, seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(scale=5.0, size=(rows, cols))
    mask = rng.random((rows, cols)) < 0.4
    mask[np.arange(rows), rng.integers(0, cols, rows)] = False
    out = masked_log_softmax(Tensor(logits), mask).data
    ref = softmax_oracle(logits, mask)
    assert np.max(np.abs(out[~mask] - ref[~mask])) < 1e-12
    assert np.all(out[mask] <= -1e30)
    sums = np.where(mask, 0.0, np.exp(out)).sum(axis=1)
    assert np.max(np.abs(sums - 1.0)) <= 1e-12


@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-10, 10)))
def test_forward_ops_deterministic(x):
    def run():
        t = Tensor(x)
        return ad.sum_(ad.tanh(ad.matmul(t, Tensor(x.T))) * ad.sigmoid(ad.relu(ad.matmul(t, Tensor(x.T))))).data
    assert run().tobytes() == run().tobytes()


def test_grad_check_quadratic():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 4))
    q = Tensor(a @ a.T)
    w = Tensor(rng.normal(size=(4, 1)), requires_grad=True)
    err = grad_check(lambda: ad.sum_(ad.mul(w, ad.matmul(q, w))), [w])
    assert err < 1e-8


def test_grad_check_tanh_mlp_mse():
    rng = np.random.default_rng(2)
    net = MLP([3, 5, 2], rng)
    x, y = Tensor(rng.normal(size=(6, 3))), Tensor(rng.normal(size=(6, 2)))
    assert grad_check(lambda: ad.mse(net(x), y), net.parameters()) < 1e-4


def test_grad_check_masked_log_softmax_nll():
    rng = np.random.default_rng(3)
    w = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    x = Tensor(rng.normal(size=(5, 4)))
    mask = rng.random((5, 6)) < 0.5
    mask[:, 0] = False
    targets = np.array([np.flatnonzero(~row)[-1] for row in mask])
    loss = lambda: ad.mul(ad.mean(ad.pick(masked_log_softmax(ad.matmul(x, w), mask), targets)), -1.0)
    assert grad_check(loss, [w]) < 1e-4


def test_grad_check_every_op():
    rng = np.random.default_rng(4)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
    c = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

    def loss():
        h = ad.sigmoid(a * b) - ad.relu(a) + ad.exp(ad.mul(a, 0.1))
        h = ad.concat([h, ad.tanh(a)], axis=1)
        h = ad.reshape(h, (3, 2, 4))
        h = ad.stack([h[:, 0, :], h[:, 1, :]], axis=0)
        g = ad.gather_rows(h[0], [2, 2, 0])
        return ad.mean(ad.square(ad.matmul(g, c))) + ad.sum_(ad.sum_(h, axis=2))
    assert grad_check(loss, [a, b, c]) < 1e-4


def test_gru_cell_grad_check():
    rng = np.random.default_rng(5)
    cell = GRUCell(3, 4, rng)
    x = Tensor(rng.normal(size=(2, 3)))
    h = Tensor(rng.normal(size=(2, 4)))
    assert grad_check(lambda: ad.mean(ad.square(cell(x, h))), cell.parameters()) < 1e-4


def test_grad_check_contracts():
    w = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ContractError):
        grad_check(lambda: ad.sum_(w), [w], eps=1e-9)
    with pytest.raises(NumericError):
        grad_check(lambda: ad.sum_(ad.mul(w, np.inf)), [w])


def test_check_finite_names_first_offender():
    with pytest.raises(NumericError, match="bad"):
        ad.check_finite([("good", Tensor(1.0)), ("bad", Tensor(np.nan)), ("worse", Tensor(np.inf))])


def test_glorot_bounds():
    w = glorot_uniform(np.random.default_rng(0), 30, 20)
    assert np.abs(w).max() <= np.sqrt(6 / 50)
