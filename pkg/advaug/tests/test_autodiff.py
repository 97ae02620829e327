import threading

import numpy as np
import pytest

from advaug import autodiff as ad
from advaug.autodiff import Tape, Tensor, finite_difference_check, no_grad
from advaug.errors import DomainError, NonFiniteError, ShapeError, StaleTapeError
from advaug.networks import DenseNet


def _weights(seed, shape):
    return np.random.default_rng(seed + 1000).uniform(0.5, 1.5, size=shape)


def _away_from_zero(rng, shape, low=0.2, high=2.0):
    return rng.uniform(low, high, size=shape) * rng.choice([-1.0, 1.0], size=shape)


# name -> (input maker, function of one tensor)
UNARY = {
    "add": (
        lambda rng: rng.normal(size=4),
        lambda x, w: ((x + Tensor(w)) * x).sum(),
    ),
    "sub": (
        lambda rng: rng.normal(size=4),
        lambda x, w: ((Tensor(w) - x) * x).sum(),
    ),
    "mul": (lambda rng: rng.normal(size=4), lambda x, w: (x * x * Tensor(w)).sum()),
    "div": (
        lambda rng: rng.uniform(0.5, 2.0, size=4),
        lambda x, w: (Tensor(w) / x + x / 3.0).sum(),
    ),
    "max": (
        lambda rng: rng.normal(size=4),
        lambda x, w: (ad.maximum(x, Tensor(w) - 1.0) * Tensor(w)).sum(),
    ),
    "min": (
        lambda rng: rng.normal(size=4),
        lambda x, w: (ad.minimum(x, Tensor(w) - 1.0) * Tensor(w)).sum(),
    ),
    "relu": (
        lambda rng: _away_from_zero(rng, 5),
        lambda x, w: (ad.relu(x) * Tensor(w)).sum(),
    ),
    "sigmoid": (
        lambda rng: rng.uniform(-3, 3, size=5),
        lambda x, w: (ad.sigmoid(x) * Tensor(w)).sum(),
    ),
    "softplus": (
        lambda rng: rng.uniform(-3, 3, size=5),
        lambda x, w: (ad.softplus(x) * Tensor(w)).sum(),
    ),
    "exp": (
        lambda rng: rng.uniform(-2, 2, size=5),
        lambda x, w: (ad.exp(x) * Tensor(w)).sum(),
    ),
    "log": (
        lambda rng: rng.uniform(0.5, 3, size=5),
        lambda x, w: (ad.log(x) * Tensor(w)).sum(),
    ),
    "sqrt": (
        lambda rng: rng.uniform(0.5, 3, size=5),
        lambda x, w: (ad.sqrt(x) * Tensor(w)).sum(),
    ),
    "tanh": (
        lambda rng: rng.uniform(-2, 2, size=5),
        lambda x, w: (ad.tanh(x) * Tensor(w)).sum(),
    ),
    "abs": (
        lambda rng: _away_from_zero(rng, 5),
        lambda x, w: (ad.absolute(x) * Tensor(w)).sum(),
    ),
    "lgamma": (
        lambda rng: rng.uniform(0.5, 4, size=5),
        lambda x, w: (ad.lgamma(x) * Tensor(w)).sum(),
    ),
    "digamma": (
        lambda rng: rng.uniform(0.5, 4, size=5),
        lambda x, w: (ad.digamma(x) * Tensor(w)).sum(),
    ),
    "matmul": (
        lambda rng: rng.normal(size=(3, 4)),
        lambda x, w: ad.square(x @ Tensor(w.reshape(4, 2) - 1.0)).sum(),
    ),
    "transpose": (
        lambda rng: rng.normal(size=(2, 3)),
        lambda x, w: (ad.transpose(x) * Tensor(w.reshape(3, 2))).sum(),
    ),
    "reshape": (
        lambda rng: rng.normal(size=(2, 3)),
        lambda x, w: ad.square(ad.reshape(x, (6,)) * Tensor(w)).sum(),
    ),
    "getitem": (
        lambda rng: rng.normal(size=(3, 2)),
        lambda x, w: ad.square(x[:, 1] * Tensor(w)).sum(),
    ),
    "expand": (
        lambda rng: rng.normal(size=(1, 3)),
        lambda x, w: ad.square(ad.expand(x, (2, 3)) * Tensor(w.reshape(2, 3))).sum(),
    ),
    "sum-axis": (
        lambda rng: rng.normal(size=(3, 2)),
        lambda x, w: ad.square(x.sum(axis=0) * Tensor(w)).sum(),
    ),
    "mean": (
        lambda rng: rng.normal(size=(3, 2)),
        lambda x, w: ad.square(x.mean(axis=1) - Tensor(w)).sum(),
    ),
    "l2_norm": (
        lambda rng: rng.normal(size=(3, 2)),
        lambda x, w: (ad.l2_norm(x, axis=1) * Tensor(w)).sum(),
    ),
}

WEIGHT_SHAPES = {
    "add": 4,
    "sub": 4,
    "mul": 4,
    "div": 4,
    "max": 4,
    "min": 4,
    "matmul": 8,
    "transpose": 6,
    "reshape": 6,
    "getitem": 3,
    "expand": 6,
    "sum-axis": 2,
    "mean": 3,
    "l2_norm": 3,
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("seed", range(10))
def test_primitive_gradients_match_central_differences(name, seed):
    make_input, fn = UNARY[name]
    rng = np.random.default_rng(seed)
    x = Tensor(make_input(rng))
    w = _weights(seed, WEIGHT_SHAPES.get(name, 5))
    if name in ("max", "min"):
        # keep clear of the kink
        x = Tensor(np.where(np.abs(x.data - (w - 1.0)) < 0.05, x.data + 0.2, x.data))

    assert finite_difference_check(lambda t: fn(t, w), x) < 1e-4


def test_elementwise_examples():
    assert list((Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])).data) == [4.0, 6.0]
    assert list((Tensor([2.0, 3.0]) * 0.0).data) == [0.0, 0.0]

    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([5.0, 7.0])
    with Tape() as tape:
        loss = (a * b).sum()
    (grad,) = tape.gradient(loss, [a])
    assert list(grad.data) == [5.0, 7.0]


def test_elementwise_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2,\) vs \(3,\)"):
        Tensor([1.0, 2.0]) + Tensor([1.0, 2.0, 3.0])


def test_matmul_examples():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((Tensor(np.eye(2)) @ Tensor(m)).data, m)
    assert (Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]
    with pytest.raises(ShapeError, match="inner extents"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_activation_examples():
    assert ad.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5

    x = Tensor([0.0], requires_grad=True)
    with Tape() as tape:
        y = ad.softplus(x).sum()
    (grad,) = tape.gradient(y, [x])
    assert grad.data[0] == pytest.approx(0.5)


def test_log_of_non_positive_names_the_index():
    with pytest.raises(DomainError, match="index 1"):
        ad.log(Tensor([1.0, 0.0, 2.0]))


def test_reduction_examples():
    assert Tensor([1.0, 2.0, 3.0]).mean().item() == 2.0
    assert ad.l2_norm(Tensor([3.0, 4.0])).item() == 5.0

    x = Tensor([1.0, 5.0, 9.0, 2.0], requires_grad=True)
    with Tape() as tape:
        m = x.mean()
    (grad,) = tape.gradient(m, [x])
    np.testing.assert_allclose(grad.data, np.full(4, 0.25))

    with pytest.raises(ShapeError, match="empty"):
        Tensor(np.zeros(0)).sum()


def test_backward_sum_of_squares():
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    tape.backward(loss)
    assert x.grad.data.tolist() == [2.0, -4.0]
    assert x.grad_count == 1


def test_unused_leaf_gets_exact_zero_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([3.0, 4.0, 5.0], requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    _, grad = tape.gradient(loss, [x, unused])
    assert grad.data.tolist() == [0.0, 0.0, 0.0]


def test_second_backward_is_rejected_unless_persistent():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    tape.gradient(loss, [x])
    with pytest.raises(StaleTapeError, match="already consumed"):
        tape.gradient(loss, [x])

    with Tape(persistent=True) as tape:
        loss = (x * x).sum()
    first = tape.gradient(loss, [x])[0].data
    second = tape.gradient(loss, [x])[0].data
    np.testing.assert_array_equal(first, second)


def test_backward_rejects_non_scalar_and_foreign_roots():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * 3.0
    with pytest.raises(ShapeError, match="scalar root"):
        tape.gradient(y, [x])

    with Tape() as other:
        z = (x * 2.0).sum()
    with pytest.raises(StaleTapeError, match="not recorded"):
        tape.gradient(z, [x])
    assert len(other) == 2


def test_two_layer_network_gradients_match_central_differences():
    rng = np.random.default_rng(3)
    net = DenseNet.from_extents([3, 4, 1], ["tanh", "identity"], rng)
    w1 = net.layers[0].weight.data

    def loss(weight):
        hidden = ad.tanh(Tensor(rng_x) @ weight)
        return ad.square(hidden @ net.layers[1].weight).sum()

    rng_x = rng.normal(size=(5, 3))
    assert finite_difference_check(loss, Tensor(w1)) < 1e-4


def test_finite_difference_examples():
    rng = np.random.default_rng(0)
    assert finite_difference_check(lambda t: t.sum(), Tensor(rng.normal(size=5))) < 1e-9
    x = Tensor(rng.uniform(-3, 3, size=5))
    assert finite_difference_check(lambda t: ad.sigmoid(t).sum(), x) < 1e-4


def test_gradient_of_sum_is_sum_of_gradients():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=6), requires_grad=True)

    def f(t):
        return ad.square(ad.tanh(t)).sum()

    def g(t):
        return (ad.sigmoid(t) * t).sum()

    grads = []
    for fn in (f, g, lambda t: f(t) + g(t)):
        with Tape() as tape:
            value = fn(x)
        grads.append(tape.gradient(value, [x])[0].data)
    np.testing.assert_allclose(grads[0] + grads[1], grads[2], atol=1e-12, rtol=0)


def test_second_order_gradient_through_create_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = (x * x * x).sum()
        (g,) = tape.gradient(y, [x], create_graph=True)
        z = g.sum()
    (gg,) = tape.gradient(z, [x])
    np.testing.assert_allclose(g.data, [3.0, 12.0])
    np.testing.assert_allclose(gg.data, [6.0, 12.0])


def test_gradient_of_a_gradient_norm_matches_central_differences():
    rng = np.random.default_rng(11)
    w = Tensor(rng.normal(size=(2, 3)))
    v = Tensor(rng.normal(size=(3, 1)))

    def penalty_and_grad(point):
        leaf = Tensor(point, requires_grad=True)
        with Tape() as tape:
            out = (ad.tanh(ad.reshape(leaf, (1, 2)) @ w) @ v).sum()
            (grad,) = tape.gradient(out, [leaf], create_graph=True)
            penalty = ad.square(ad.l2_norm(grad) - 1.0)
        (d_penalty,) = tape.gradient(penalty, [leaf])
        return penalty.item(), d_penalty.data

    x = rng.normal(size=2)
    _, analytic = penalty_and_grad(x)
    h = 1e-5
    numeric = np.empty(2)
    for i in range(2):
        step = np.zeros(2)
        step[i] = h
        plus, _ = penalty_and_grad(x + step)
        minus, _ = penalty_and_grad(x - step)
        numeric[i] = (plus - minus) / (2 * h)

    error = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    assert error.max() < 1e-3



def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        with no_grad():
            y = (x * x).sum()
    assert len(tape) == 0
    assert y.item() == 5.0


def test_ops_without_a_tape_are_plain_evaluation():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = (x * x).sum()
    assert y.item() == 5.0
    assert y._tape is None


def test_worker_threads_do_not_record_on_the_callers_tape():
    x = Tensor([1.0, 2.0], requires_grad=True)
    results = []

    def worker():
        results.append((x * x).sum())

    with Tape() as tape:
        thread = threading.Thread(target=worker)
        thread.start()
        thread.join()
    assert len(tape) == 0
    assert results[0].item() == 5.0


def test_non_finite_values_are_rejected():
    with pytest.raises(NonFiniteError, match="flat index 1"):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        ad.exp(Tensor([1000.0]))


def test_replaying_a_computation_is_bitwise_identical():
    rng = np.random.default_rng(8)
    data = rng.normal(size=(4, 3))
    grads = []
    for _ in range(2):
        x = Tensor(data, requires_grad=True)
        with Tape() as tape:
            loss = ad.l2_norm(ad.sigmoid(x) @ Tensor(np.ones((3, 2))))
        grads.append(tape.gradient(loss, [x])[0].data.tobytes())
    assert grads[0] == grads[1]
