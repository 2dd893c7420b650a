import numpy as np
import pytest

from csda import autodiff as ad
from csda import csdt
from csda.autodiff import Tensor


def t(x):
    return Tensor(x, requires_grad=True)


def test_trace_example():
    assert ad.trace(Tensor([[1, 2], [3, 4]])).item() == 5


def test_hadamard_example():
    out = ad.hadamard(Tensor([[1, -1], [2, 0]]), Tensor([[3, 3], [3, 3]]))
    np.testing.assert_array_equal(out.data, [[3, -3], [6, 0]])


def test_sigmoid_at_zero():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_product_rule():
    x, y = t(2.0), t(3.0)
    grads = ad.backward(x * y)
    assert grads[x] == 3.0 and grads[y] == 2.0


def test_sigmoid_derivative():
    x = t(0.0)
    ad.backward(ad.sigmoid(x))
    assert x.grad == 0.25


def test_trace_outer_gradient():
    u = t([3.0, 4.0])
    ad.backward(ad.trace(ad.outer(u, u)))
    np.testing.assert_allclose(u.grad, [6.0, 8.0])


def test_reused_leaf_accumulates():
    x = t([1.0, -2.0, 0.5])
    loss = ad.total(x * x + x * 3.0)
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data + 3.0)


def test_untracked_leaf_gets_no_gradient():
    x, c = t([1.0, 2.0]), Tensor([5.0, 6.0])
    grads = ad.backward(ad.total(ad.hadamard(x, c)))
    assert c not in grads and c.grad is None
    np.testing.assert_array_equal(x.grad, [5.0, 6.0])


def test_backward_requires_scalar():
    with pytest.raises(ad.ShapeError):
        ad.backward(t([1.0, 2.0]) * 2.0)


def test_backward_visits_reverse_creation_order():
    seen = []
    x = t(1.5)
    a = ad.scale(x, 2.0)
    b = ad.shift(a, 1.0)
    c = ad.log(b)
    for node in (a, b, c):
        fn = node._backward
        node._backward = lambda g, fn=fn, node=node: (seen.append(node._id), fn(g))[1]
    ad.backward(c)
    assert seen == sorted(seen, reverse=True) == [c._id, b._id, a._id]


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ad.ShapeError, match=r"add.*\(2,\).*\(3,\)"):
        ad.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ad.ShapeError, match="hadamard"):
        Tensor(np.ones((2, 2))) * Tensor(np.ones(2))
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_log_of_nonpositive_raises():
    with pytest.raises(ad.DomainError):
        ad.log(Tensor([1.0, 0.0]))
    with pytest.raises(ad.DomainError):
        ad.log(Tensor([-1.0]))


def test_sigmoid_stays_open_interval():
    s = ad.sigmoid(Tensor([-800.0, 0.0, 800.0])).data
    assert np.all(s > 0) and np.all(s < 1)


def test_leaky_relu_values():
    x = Tensor([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(ad.leaky_relu(x, 0.1).data, [-0.2, 0.0, 3.0])
    np.testing.assert_array_equal(ad.leaky_relu(x, 0.0).data, ad.relu(x).data)


def test_rank_limit():
    with pytest.raises(ad.ShapeError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))


def test_forward_bit_identical_repeats():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 8, 8, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)

    def run():
        h = ad.conv2d(Tensor(x), Tensor(w), Tensor(b))
        return ad.mean(ad.sigmoid(ad.maxpool2x(ad.relu(h)))).item()

    assert run() == run()


def test_finite_difference_check_quadratic():
    x = np.random.default_rng(0).uniform(-1, 1, 8)
    err = ad.finite_difference_check(lambda v: ad.total(v * v), x, h=1e-5)
    assert err < 1e-6


def test_finite_difference_check_rejects_nonfinite():
    with pytest.raises(ad.DomainError):
        ad.finite_difference_check(lambda v: ad.total(v) * float("inf"), np.ones(2))


# Every registered op against central differences on 20 random inputs.

def _const(rng, shape):
    return Tensor(rng.standard_normal(shape))


OPS = {
    "add": (lambda v, c: ad.total(ad.hadamard(ad.add(v, c["a"]), c["b"])), (3, 4)),
    "sub": (lambda v, c: ad.total(ad.hadamard(ad.sub(c["a"], v), c["b"])), (3, 4)),
    "scale": (lambda v, c: ad.total(ad.hadamard(ad.scale(v, -2.5), c["a"])), (5,)),
    "shift": (lambda v, c: ad.total(ad.hadamard(ad.shift(v, 0.7), c["a"])), (5,)),
    "hadamard": (lambda v, c: ad.total(ad.hadamard(v, v)), (2, 3)),
    "matmul": (lambda v, c: ad.total(ad.hadamard(ad.matmul(v, c["m"]), c["p"])), (3, 4)),
    "outer": (lambda v, c: ad.total(ad.hadamard(ad.outer(v, ad.scale(v, 2.0)), c["q"])), (4,)),
    "transpose": (lambda v, c: ad.total(ad.hadamard(ad.transpose(v), c["r"])), (3, 4)),
    "trace": (lambda v, c: ad.trace(ad.matmul(v, v)), (3, 3)),
    "mean": (lambda v, c: ad.total(ad.hadamard(ad.mean(v, axis=0), c["s"])) + ad.mean(v), (6, 4)),
    "log": (lambda v, c: ad.total(ad.log(ad.shift(ad.hadamard(v, v), 0.5))), (5,)),
    "sigmoid": (lambda v, c: ad.total(ad.hadamard(ad.sigmoid(v), c["a"])), (5,)),
    "relu": (lambda v, c: ad.total(ad.hadamard(ad.relu(v), c["a"])), (5,)),
    "leaky_relu": (lambda v, c: ad.total(ad.hadamard(ad.leaky_relu(v, 0.1), c["a"])), (5,)),
    "power": (lambda v, c: ad.total(ad.power(ad.shift(ad.hadamard(v, v), 0.1), 2.5)), (5,)),
    "reshape": (lambda v, c: ad.total(ad.hadamard(ad.reshape(v, (4, 3)), c["t"])), (3, 4)),
    "take_rows": (lambda v, c: ad.total(ad.hadamard(ad.take_rows(v, [2, 0, 2, 5]), c["u"])), (6, 4)),
    "concat": (lambda v, c: ad.total(ad.hadamard(ad.concat([v, ad.scale(v, 3.0)], axis=0), c["w"])), (3, 4)),
    "conv2d": (lambda v, c: ad.total(ad.hadamard(ad.conv2d(v, c["k"], c["kb"]), c["ko"])), (2, 4, 4, 2)),
    "conv2d_weight": (lambda v, c: ad.total(ad.hadamard(ad.conv2d(c["img"], v, c["kb"]), c["ko"])), (3, 3, 2, 3)),
    "upconv2x": (lambda v, c: ad.total(ad.hadamard(ad.upconv2x(v, c["uk"], c["ub"]), c["uo"])), (1, 2, 3, 2)),
    "upconv2x_weight": (lambda v, c: ad.total(ad.hadamard(ad.upconv2x(c["uimg"], v, c["ub"]), c["uo"])), (2, 2, 2, 3)),
    "maxpool2x": (lambda v, c: ad.total(ad.hadamard(ad.maxpool2x(v), c["mo"])), (1, 4, 4, 2)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    fn, shape = OPS[name]
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        c = {
            "m": _const(rng, (4, 2)),
            "p": _const(rng, (3, 2)),
            "q": _const(rng, (4, 4)),
            "r": _const(rng, (4, 3)),
            "s": _const(rng, (4,)),
            "t": _const(rng, (4, 3)),
            "u": _const(rng, (4, 4)),
            "w": _const(rng, (6, 4)),
            "k": _const(rng, (3, 3, 2, 3)),
            "kb": _const(rng, (3,)),
            "ko": _const(rng, (2, 4, 4, 3)),
            "img": _const(rng, (2, 4, 4, 2)),
            "uk": _const(rng, (2, 2, 2, 3)),
            "ub": _const(rng, (3,)),
            "uo": _const(rng, (1, 4, 6, 3)),
            "uimg": _const(rng, (1, 2, 3, 2)),
            "mo": _const(rng, (1, 2, 2, 2)),
        }
        if name in ("scale", "shift", "sigmoid", "relu", "leaky_relu"):
            c["a"] = _const(rng, shape)
        elif name in ("add", "sub"):
            c["a"], c["b"] = _const(rng, shape), _const(rng, shape)
        x = rng.standard_normal(shape)
        worst = max(worst, ad.finite_difference_check(lambda v: fn(v, c), x, h=1e-6))
    assert worst < 1e-4


def test_csdt_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(7,), (3, 4), (2, 3, 4), (2, 2, 3, 5)]:
        arr = rng.standard_normal(shape)
        path = tmp_path / "x.csdt"
        csdt.save(path, arr)
        back = csdt.load(path)
        assert back.shape == shape
        np.testing.assert_array_equal(back, arr.astype(np.float32).astype(np.float64))
        # saving the loaded values again is byte-identical
        assert csdt.encode(back) == path.read_bytes()


def test_csdt_header_layout():
    raw = csdt.encode(np.array([[1.0, 2.0, 3.0]]))
    assert raw[:4] == b"CSDT" and raw[4] == 1
    assert int.from_bytes(raw[5:9], "little") == 2
    assert int.from_bytes(raw[9:13], "little") == 1
    assert int.from_bytes(raw[13:17], "little") == 3
    np.testing.assert_array_equal(np.frombuffer(raw[17:], "<f4"), [1, 2, 3])


def test_csdt_rejects_bad_magic_and_truncation():
    raw = csdt.encode(np.ones(4))
    with pytest.raises(csdt.FormatError):
        csdt.decode(b"XXXX" + raw[4:])
    with pytest.raises(csdt.FormatError):
        csdt.decode(raw[:-2])
