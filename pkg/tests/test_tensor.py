import numpy as np
import pytest

from cqgen.nn import Rng, gradient_check
from cqgen.nn import tensor as T
from cqgen.nn.tensor import NonFiniteError, ShapeError, Tensor


def rand(rng, shape):
    return Tensor(rng.uniform(-1.0, 1.0, shape), requires_grad=True)


def test_softmax_symmetry_and_rows_sum():
    out = T.softmax(Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3] * 3)
    rng = Rng(3)
    x = T.softmax(Tensor(rng.uniform(-5, 5, (8, 11))), axis=1)
    assert np.allclose(x.data.sum(axis=1), 1.0, atol=1e-12)


def test_sigmoid_zero():
    assert T.sigmoid(Tensor([0.0])).data[0] == 0.5


def test_bce_hand_value():
    loss = T.bce_with_logits(Tensor([0.0, 0.0]), [1.0, 0.0])
    assert abs(float(loss.data) - np.log(2)) < 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_nonfinite_forward_raises():
    with pytest.raises(NonFiniteError):
        T.div(Tensor([1.0]), Tensor([0.0]))


def test_dropout_semantics():
    rng = Rng(0)
    x = Tensor(np.ones((4, 5)))
    assert T.dropout(x, 0.0, rng=rng, train=True) is x
    assert T.dropout(x, 0.5, train=False) is x
    y = T.dropout(x, 0.5, rng=Rng(1), train=True)
    kept = y.data[y.data != 0]
    assert np.allclose(kept, 2.0)  # scaled by 1/(1-rate)
    y2 = T.dropout(x, 0.5, rng=Rng(1), train=True)
    assert np.array_equal(y.data, y2.data)  # seeded reproducibility


def test_embedding_lookup_and_grad():
    table = Tensor(np.arange(12, dtype=float).reshape(4, 3), requires_grad=True)
    out = T.embedding_lookup(table, np.array([1, 1, 3]))
    assert np.array_equal(out.data, table.data[[1, 1, 3]])
    T.sum_(out).backward()
    assert np.array_equal(table.grad, np.array([[0, 0, 0], [2, 2, 2], [0, 0, 0], [1, 1, 1]]))


def test_cross_entropy_matches_log_softmax():
    logits = Tensor(np.array([[1.0, 2.0, 3.0]]))
    target = [2]
    ce = T.cross_entropy(logits, target)
    manual = -np.log(np.exp(3.0) / np.exp([1.0, 2.0, 3.0]).sum())
    assert abs(float(ce.data[0]) - manual) < 1e-12


OPS = {}


def op_case(name):
    def deco(fn):
        OPS[name] = fn
        return fn
    return deco


@op_case("add")
def _add(rng):
    a, b = rand(rng, (3, 4)), rand(rng, (4,))  # broadcast
    return lambda: T.sum_(T.mul(T.add(a, b), T.add(a, b))), [a, b]


@op_case("sub_mul_div")
def _smd(rng):
    a, b = rand(rng, (2, 5)), rand(rng, (2, 5))
    b.data += 2.0  # keep divisor away from zero
    return lambda: T.sum_(T.div(T.mul(T.sub(a, b), a), b)), [a, b]


@op_case("matmul")
def _mm(rng):
    a, b = rand(rng, (3, 4)), rand(rng, (4, 2))
    return lambda: T.sum_(T.matmul(a, b)), [a, b]


@op_case("matmul_batched")
def _mmb(rng):
    a, b = rand(rng, (2, 3, 4)), rand(rng, (4, 2))
    return lambda: T.sum_(T.tanh(T.matmul(a, b))), [a, b]


@op_case("tanh")
def _tanh(rng):
    a = rand(rng, (4, 3))
    return lambda: T.sum_(T.tanh(a)), [a]


@op_case("sigmoid")
def _sig(rng):
    a = rand(rng, (4, 3))
    return lambda: T.sum_(T.sigmoid(a)), [a]


@op_case("softmax")
def _sm(rng):
    a = rand(rng, (3, 5))
    w = Tensor(rng.uniform(-1, 1, (3, 5)))
    return lambda: T.sum_(T.mul(T.softmax(a, axis=1), w)), [a]


@op_case("log_softmax")
def _lsm(rng):
    a = rand(rng, (3, 5))
    w = Tensor(rng.uniform(-1, 1, (3, 5)))
    return lambda: T.sum_(T.mul(T.log_softmax(a, axis=1), w)), [a]


@op_case("concat_slice")
def _cs(rng):
    a, b = rand(rng, (2, 3)), rand(rng, (2, 2))
    return lambda: T.sum_(T.tanh(T.concat([a, b], axis=1)[:, 1:4])), [a, b]


@op_case("reshape_transpose")
def _rt(rng):
    a = rand(rng, (2, 6))
    return lambda: T.sum_(T.tanh(T.transpose(T.reshape(a, (3, 4)), (1, 0)))), [a]


@op_case("embedding")
def _emb(rng):
    table = rand(rng, (5, 3))
    ids = np.array([0, 2, 2, 4])
    return lambda: T.sum_(T.tanh(T.embedding_lookup(table, ids))), [table]


@op_case("conv1d_valid")
def _conv(rng):
    x, f = rand(rng, (2, 6, 3)), rand(rng, (3, 3, 4))
    return lambda: T.sum_(T.tanh(T.conv1d_valid(x, f))), [x, f]


@op_case("max_over_time")
def _mot(rng):
    x = rand(rng, (2, 5, 3))
    counts = np.array([5, 3])
    return lambda: T.sum_(T.max_over_time(x, counts)), [x]


@op_case("cross_entropy")
def _ce(rng):
    logits = rand(rng, (4, 6))
    targets = np.array([1, 0, 5, 2])
    return lambda: T.mean(T.cross_entropy(logits, targets)), [logits]


@op_case("bce_with_logits")
def _bce(rng):
    logits = rand(rng, (3, 4))
    t = (rng.random((3, 4)) > 0.5).astype(float)
    return lambda: T.bce_with_logits(logits, t), [logits]


@op_case("positive_only_bce")
def _pbce(rng):
    logits = rand(rng, (3, 4))
    t = (rng.random((3, 4)) > 0.5).astype(float)
    return lambda: T.positive_only_bce(logits, t), [logits]


@op_case("mean_sum_axes")
def _ms(rng):
    a = rand(rng, (3, 4))
    return lambda: T.mean(T.sum_(T.mul(a, a), axis=1)), [a]


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradcheck(name):
    rng = Rng(hash(name) % 2**31)
    f, inputs = OPS[name](rng)
    assert gradient_check(f, inputs, eps=1e-5) < 1e-4


def test_gradcheck_known_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    err = gradient_check(lambda: T.sum_(T.mul(x, x)), [x], eps=1e-5)
    assert err < 1e-8
    x.zero_grad()
    T.sum_(T.mul(x, x)).backward()
    assert np.allclose(x.grad, [2.0, 4.0])


def test_gradcheck_linear_exact():
    x = Tensor(np.array([0.3, -0.7, 1.1]), requires_grad=True)
    err = gradient_check(lambda: T.sum_(T.mul(x, 3.0)), [x], eps=1e-5)
    assert err < 1e-10


def test_backward_requires_scalar():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        T.add(x, 1.0).backward()


def test_no_grad_blocks_tape():
    from cqgen.nn import no_grad

    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = T.mul(x, 2.0)
    assert not y.requires_grad and y._parents == ()
