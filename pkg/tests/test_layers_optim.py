import numpy as np

from cqgen.nn import Adam, GruStack, ParamStore, Rng, clip_grad_norm, gradient_check
from cqgen.nn import tensor as T
from cqgen.nn.checkpoint import (apply_pretrained_embeddings, load_checkpoint,
                                 load_text_embeddings, save_checkpoint)
from cqgen.nn.layers import GruLayer, Parameter
from cqgen.nn.tensor import Tensor


def test_gru_zero_params_halves_state():
    store = ParamStore()
    layer = GruLayer.create(store, "g", 4, 3, Rng(0))
    for p in store.values():
        p.data = np.zeros_like(p.data)
    h = Tensor(np.array([[0.3, -0.2, 0.9]]))
    x = Tensor(np.array([[1.0, 2.0, -1.0, 0.5]]))
    out = layer.step(x, h)
    assert np.allclose(out.data, 0.5 * h.data)


def test_gru_zero_everything_is_zero():
    store = ParamStore()
    layer = GruLayer.create(store, "g", 2, 3, Rng(0))
    for p in store.values():
        p.data = np.zeros_like(p.data)
    out = layer.step(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))))
    assert np.allclose(out.data, 0.0)


def test_gru_bounded_output():
    store = ParamStore()
    stack = GruStack.create(store, "g", 4, 6, 2, Rng(1))
    rng = Rng(2)
    states = stack.init_state(3)
    for _ in range(10):
        out, states = stack.step(Tensor(rng.uniform(-1, 1, (3, 4))), states)
    assert np.all(np.isfinite(out.data))
    assert np.all(np.abs(out.data) <= 1.0)


def test_gru_gradcheck():
    store = ParamStore()
    layer = GruLayer.create(store, "g", 3, 4, Rng(5))
    x = Tensor(Rng(6).uniform(-1, 1, (2, 3)), requires_grad=True)
    h = Tensor(Rng(7).uniform(-1, 1, (2, 4)), requires_grad=True)
    params = [p.tensor for p in store.values()]

    def f():
        return T.sum_(T.mul(layer.step(x, h), layer.step(x, h)))

    err = gradient_check(f, [x, h] + params, eps=1e-5)
    assert err < 1e-4


def test_adam_zero_gradient_no_move():
    p = Parameter("w", np.array([1.0, 2.0]))
    opt = Adam([p], lr=0.1)
    p.tensor.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.0, 2.0])


def test_adam_constant_gradient_limit():
    # with constant gradient g, bias-corrected Adam step size approaches lr*sign(g)
    p = Parameter("w", np.array([0.0]))
    opt = Adam([p], lr=0.01)
    prev = p.data.copy()
    for _ in range(300):
        prev = p.data.copy()
        p.tensor.grad = np.array([2.5])
        opt.step()
    assert abs((prev - p.data)[0] - 0.01) < 1e-4


def test_adam_determinism():
    def run():
        rng = Rng(3)
        p = Parameter("w", rng.uniform(-1, 1, (4,)))
        opt = Adam([p], lr=0.05)
        for _ in range(20):
            x = Tensor(p.data)
            p.tensor.grad = 2 * p.data  # grad of sum(w^2)
            opt.step()
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_adam_zeroes_grads_after_step():
    p = Parameter("w", np.array([1.0]))
    opt = Adam([p], lr=0.1)
    p.tensor.grad = np.array([1.0])
    opt.step()
    assert p.grad is None


def test_clip_grad_norm():
    p1 = Parameter("a", np.zeros(3))
    p2 = Parameter("b", np.zeros(4))
    p1.tensor.grad = np.full(3, 3.0)
    p2.tensor.grad = np.full(4, 4.0)
    norm = clip_grad_norm([p1, p2], 1.0)
    assert norm > 1.0
    total = np.sqrt((p1.grad ** 2).sum() + (p2.grad ** 2).sum())
    assert abs(total - 1.0) < 1e-12


def test_checkpoint_roundtrip(tmp_path):
    state = {"a": np.arange(6, dtype=float).reshape(2, 3), "b": np.array([1.5])}
    save_checkpoint(tmp_path / "c.npz", state, {"kind": "test"})
    loaded, meta = load_checkpoint(tmp_path / "c.npz")
    assert meta["kind"] == "test"
    for k in state:
        assert np.array_equal(loaded[k], state[k])


def test_text_embedding_import(tmp_path):
    p = tmp_path / "emb.txt"
    p.write_text("chair 1.0 2.0\nlamp 0.5 -0.5\n")
    table = load_text_embeddings(p, dim=2)
    emb = np.zeros((3, 2))
    hits = apply_pretrained_embeddings(emb, ["<pad>", "chair", "unknown"], table)
    assert hits == 1
    assert np.array_equal(emb[1], [1.0, 2.0])


def test_frozen_parameter_not_updated():
    p = Parameter("w", np.array([1.0]))
    p.freeze()
    opt = Adam([p], lr=0.1)
    assert opt.params == []
    x = T.mul(p.tensor, 3.0)
    assert not x.requires_grad
