import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eir import tensor as T
from eir.errors import ContractError, ShapeError
from eir.gradcheck import check_gradients
from eir.optim import Adam, AdamState, adam_step
from eir.tensor import Tape, Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), a).data, a.data)


def test_matmul_hand_oracle():
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[5.0], [6.0]])
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_scalar_case():
    assert (Tensor([[2.0]]) @ Tensor([[3.0]])).data.tolist() == [[6.0]]


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_rank_limit():
    with pytest.raises(ShapeError):
        Tensor(np.ones((1, 1, 1, 1, 1)))


# ---------------------------------------------------------------- softmax


@pytest.mark.parametrize(
    "x, expected",
    [
        ([0.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3]),
        ([1.0, 1.0], [0.5, 0.5]),
        ([math.log(2), 0.0], [2 / 3, 1 / 3]),
    ],
)
def test_softmax_examples(x, expected):
    np.testing.assert_allclose(T.softmax(Tensor(x)).data, expected, atol=1e-12)


def test_softmax_bad_axis():
    with pytest.raises(IndexError):
        T.softmax(Tensor(np.ones((2, 2))), axis=2)


def test_softmax_extreme_logits_stay_finite():
    out = T.softmax(Tensor([1e300, 0.0, -1e300])).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, [1, 0, 0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
              elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    p = T.softmax(Tensor(x), axis=-1).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-20, 20)),
       st.floats(-100, 100))
def test_softmax_shift_invariance(x, c):
    np.testing.assert_allclose(T.softmax(Tensor(x)).data, T.softmax(Tensor(x + c)).data, atol=1e-10)


# ---------------------------------------------------------------- layer norm


def test_layer_norm_constant_row():
    out = T.layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_unit_variance_row():
    out = T.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-9)


def test_layer_norm_affine():
    out = T.layer_norm(Tensor([[1.0, -1.0]]), Tensor([2.0, 2.0]), Tensor([1.0, 1.0]), eps=1e-12)
    np.testing.assert_allclose(out.data, [[3.0, -1.0]], atol=1e-9)


def test_layer_norm_gamma_width_mismatch():
    with pytest.raises(ShapeError):
        T.layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(3)))


# ---------------------------------------------------------------- elementwise


def test_elementwise_examples():
    assert T.elementwise(Tensor([1.0, 5.0]), Tensor([3.0, 2.0]), "max").data.tolist() == [3, 5]
    x = Tensor([0.5, -2.0])
    assert T.elementwise(x, Tensor([0.0, 0.0]), "add").data.tolist() == x.data.tolist()
    assert T.elementwise(Tensor([2.0, 3.0]), Tensor([4.0, 5.0]), "mul").data.tolist() == [8, 15]


def test_elementwise_unknown_kind():
    with pytest.raises(ValueError):
        T.elementwise(Tensor([1.0]), Tensor([1.0]), "pow")


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        T.elementwise(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))), "add")


def test_max_tie_routes_gradient_to_first_operand():
    a, b = leaf([1.0, 2.0]), leaf([1.0, 3.0])
    with Tape() as tape:
        loss = T.sum_all(T.maximum(a, b))
    T.backward(loss, tape)
    assert a.grad.tolist() == [1.0, 0.0]
    assert b.grad.tolist() == [0.0, 1.0]


# ---------------------------------------------------------------- cross entropy


def test_cross_entropy_perfect_prediction():
    y = np.eye(3)
    assert T.cross_entropy(Tensor(y), y).item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_hand_value():
    loss = T.cross_entropy(Tensor([[0.75, 0.25]]), np.array([[1.0, 0.0]]))
    assert loss.item() == pytest.approx(0.2876820724517809, abs=1e-12)


@pytest.mark.parametrize("k", [2, 4, 7])
def test_cross_entropy_uniform_is_log_k(k):
    y = np.eye(k)[[0, k - 1]]
    assert T.cross_entropy(Tensor(np.full((2, k), 1 / k)), y).item() == pytest.approx(math.log(k))


def test_cross_entropy_zero_probability_is_floored():
    loss = T.cross_entropy(Tensor([[0.0, 1.0]]), np.array([[1.0, 0.0]]))
    assert np.isfinite(loss.item())
    assert loss.item() == pytest.approx(-math.log(T.CE_FLOOR))


def test_cross_entropy_rejects_non_distribution_labels():
    with pytest.raises(ContractError):
        T.cross_entropy(Tensor([[0.5, 0.5]]), np.array([[0.7, 0.7]]))


# ---------------------------------------------------------------- backward


def test_product_rule():
    x, y = leaf(2.0), leaf(3.0)
    with Tape() as tape:
        z = T.mul(x, y)
    T.backward(z, tape)
    assert x.grad == pytest.approx(3.0)
    assert y.grad == pytest.approx(2.0)


def test_softmax_cross_entropy_gradient_is_p_minus_y():
    rng = np.random.default_rng(4)
    logits = leaf(rng.normal(size=(3, 5)))
    y = np.eye(5)[[1, 4, 0]]
    with Tape() as tape:
        p = T.softmax(logits)
        loss = T.cross_entropy(p, y)
    T.backward(loss, tape)
    # mean over rows scales the classic p - y by 1/n
    np.testing.assert_allclose(logits.grad, (p.data - y) / 3, atol=1e-12)


def test_two_layer_matmul_chain_matches_finite_differences():
    rng = np.random.default_rng(5)
    x = leaf(rng.normal(size=(4, 3)))
    w1, w2 = leaf(rng.normal(size=(3, 6))), leaf(rng.normal(size=(6, 2)))
    probe = Tensor(rng.normal(size=(4, 2)))
    results = check_gradients(
        lambda: T.sum_all(T.mul(T.gelu(x @ w1) @ w2, probe)), {"x": x, "w1": w1, "w2": w2}
    )
    assert max(r.rel_error for r in results) < 1e-4


def test_backward_needs_scalar():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        y = T.scale(x, 2.0)
    with pytest.raises(ContractError):
        T.backward(y, tape)


def test_gradients_accumulate_over_reuse():
    x = leaf(3.0)
    with Tape() as tape:
        y = T.add(T.mul(x, x), x)
    T.backward(y, tape)
    assert x.grad == pytest.approx(7.0)


def test_no_tape_means_no_recording():
    x = leaf([1.0])
    y = T.scale(x, 2.0)
    assert not T.is_recording()
    with Tape() as tape:
        T.scale(x, 2.0)
    assert len(tape) == 1
    assert y.data.tolist() == [2.0]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**16))
def test_broadcast_gradient_sums_back(rows, cols, seed):
    rng = np.random.default_rng(seed)
    b = leaf(rng.normal(size=cols))
    probe = rng.normal(size=(rows, cols))
    with Tape() as tape:
        loss = T.sum_all(T.mul(T.broadcast_to(b, (rows, cols)), Tensor(probe)))
    T.backward(loss, tape)
    np.testing.assert_allclose(b.grad, probe.sum(axis=0), atol=1e-12)


# ---------------------------------------------------------------- adam


def test_adam_zero_gradient_leaves_param():
    p = leaf([1.0, -2.0])
    p.grad = np.zeros(2)
    state = AdamState.for_param(p, lr=0.1)
    adam_step(p, state)
    assert p.data.tolist() == [1.0, -2.0]
    assert state.step == 1


@pytest.mark.parametrize("g", [5.0, -0.01, 1e-3])
def test_adam_first_step_is_lr_times_sign(g):
    p = leaf([0.5])
    p.grad = np.array([g])
    adam_step(p, AdamState.for_param(p, lr=0.01))
    # bias correction makes m_hat = g and v_hat = g^2
    expected = -0.01 * g / (abs(g) + 1e-8)
    assert p.data[0] - 0.5 == pytest.approx(expected, rel=1e-9)


def test_adam_reduces_quadratic_distance():
    p = leaf([4.0])
    opt = Adam([p], lr=0.1)
    start = abs(p.data[0] - 1.0)
    for _ in range(2):
        opt.zero_grad()
        p.grad = 2 * (p.data - 1.0)
        opt.step()
    assert abs(p.data[0] - 1.0) < start


def test_adam_without_gradient_is_a_contract_error():
    p = leaf([1.0])
    with pytest.raises(ContractError):
        adam_step(p, AdamState.for_param(p))
