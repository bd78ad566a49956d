import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from searnn import autodiff as ad
from searnn.autodiff import Parameter, Tape, Tensor
from searnn.exceptions import ContractError, DimensionError, NonFiniteError
from searnn.params import ParameterStore, load_checkpoint, save_checkpoint

from conftest import numeric_grad, rel_error


def test_matmul_examples():
    I = np.eye(2)
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(I, m).value, m)
    np.testing.assert_array_equal(ad.matmul(m, [[5.0], [6.0]]).value, [[17.0], [39.0]])
    np.testing.assert_array_equal(ad.matmul(np.zeros((3, 2)), m).value, np.zeros((3, 2)))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax([0.0, 0.0]).value, [0.5, 0.5], rtol=0, atol=1e-15)
    mpmath.mp.dps = 40
    exps = [mpmath.e ** k for k in (1, 2, 3)]
    expected = [float(e / sum(exps)) for e in exps]
    np.testing.assert_allclose(ad.softmax([1.0, 2.0, 3.0]).value, expected, rtol=1e-14)
    np.testing.assert_allclose(expected, [0.09003, 0.24473, 0.66524], atol=5e-6)
    big = ad.softmax([1000.0, 0.0]).value
    assert np.all(np.isfinite(big))
    assert big[0] == 1.0 and big[1] < 1e-300


def test_softmax_empty():
    with pytest.raises(DimensionError):
        ad.softmax(np.zeros(0))
    with pytest.raises(DimensionError):
        ad.log_softmax(np.zeros(0))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e6, 1e6)))
def test_softmax_normalized(x):
    y = ad.softmax(x).value
    assert np.all(y >= 0)
    assert abs(y.sum() - 1.0) <= 1e-12


def test_backward_quadratic():
    x = Parameter(np.array([1.0, -2.0, 0.5]))
    with Tape() as tape:
        y = ad.sum_(x * x)
    tape.backward(y)
    np.testing.assert_array_equal(x.grad, 2 * x.value)


def test_backward_log_softmax_jacobian():
    s = Parameter(np.array([0.3, -1.2, 2.0, 0.1]))
    j = 2
    onehot = np.eye(4)[j]
    with Tape() as tape:
        y = ad.sum_(ad.log_softmax(s) * onehot)
    tape.backward(y)
    analytic = onehot - ad.softmax(s.value).value
    np.testing.assert_allclose(s.grad, analytic, atol=1e-15)
    fd = numeric_grad(lambda: float(ad.log_softmax(s.value).value[j]), s.value)
    assert rel_error(s.grad, fd) < 1e-8


def test_unused_parameter_has_zero_grad():
    x = Parameter(np.array([1.0, 2.0]))
    unused = Parameter(np.array([3.0]))
    with Tape() as tape:
        y = ad.sum_(x)
    tape.backward(y)
    assert np.all(unused.grad == 0.0)


def test_non_scalar_root():
    x = Parameter(np.ones(3))
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        tape.backward(y)


def test_non_finite_root_rejected():
    x = Parameter(np.array([1.0]))
    with Tape() as tape:
        y = ad.sum_(x * np.inf)
    with pytest.raises(NonFiniteError):
        tape.backward(y)


def test_parameter_rejects_nan():
    with pytest.raises(NonFiniteError):
        Parameter(np.array([np.nan]))


def test_no_recording_outside_tape():
    x = Parameter(np.ones(2))
    with Tape() as tape:
        pass
    ad.sum_(x * x)
    assert len(tape) == 0


# ------------------------------------------------------------- primitive FD

def _check_primitive(build, *shapes, rng, tol=1e-6):
    params = [Parameter(rng.uniform(-2, 2, size=s)) for s in shapes]
    weights = None

    def forward(values=None):
        out = build(*(params if values is None else values))
        return out

    out = forward()
    weights = rng.normal(size=out.shape)
    with Tape() as tape:
        root = ad.sum_(forward() * weights)
    tape.backward(root)
    for p in params:
        fd = numeric_grad(lambda: float((build(*[Tensor(q.value) for q in params]).value * weights).sum()), p.value)
        assert rel_error(p.grad, fd) <= tol, p.name


PRIMITIVES = {
    "matmul": (lambda a, b: ad.matmul(a, b), [(3, 4), (4, 2)]),
    "batched_matmul": (lambda a, b: ad.matmul(a, b), [(2, 3, 4), (4, 2)]),
    "add_broadcast": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 1)]),
    "mul_broadcast": (lambda a, b: a * b, [(2, 3, 4), (1, 3, 1)]),
    "scale": (lambda a: ad.scale(a, -1.7), [(5,)]),
    "sigmoid": (lambda a: ad.sigmoid(a), [(3, 4)]),
    "tanh": (lambda a: ad.tanh(a), [(3, 4)]),
    "softmax": (lambda a: ad.softmax(a), [(3, 5)]),
    "log_softmax": (lambda a: ad.log_softmax(a), [(3, 5)]),
    "masked_log_softmax": (lambda a: ad.log_softmax(a, mask=np.array([1, 0, 1, 1, 0], bool)), [(3, 5)]),
    "embedding": (lambda t: ad.embedding(t, np.array([[0, 2], [2, 2], [1, 0]])), [(4, 3)]),
    "concat": (lambda a, b: ad.concat([a, b], axis=-1), [(2, 3), (2, 2)]),
    "reshape": (lambda a: ad.reshape(a, (3, 4)), [(2, 6)]),
    "sum_axis": (lambda a: ad.sum_(a, axis=1, keepdims=True), [(3, 4)]),
    "max": (lambda a: ad.max_(a, axis=-1), [(3, 6)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name, rng):
    build, shapes = PRIMITIVES[name]
    for _ in range(3):
        _check_primitive(build, *shapes, rng=rng)


def test_masked_entries_get_zero_gradient():
    s = Parameter(np.array([[0.2, 1.0, -0.5, 3.0]]))
    mask = np.array([[True, False, True, False]])
    with Tape() as tape:
        y = ad.sum_(ad.log_softmax(s, mask=mask) * np.array([1.0, 5.0, 0.3, 2.0]))
    tape.backward(y)
    assert s.grad[0, 1] == 0.0 and s.grad[0, 3] == 0.0
    assert ad.softmax(s.value, mask=mask).value[0, 1] == 0.0


def test_backward_deterministic(rng):
    W = Parameter(rng.normal(size=(4, 4)))
    x = rng.normal(size=(3, 4))

    def run():
        W.zero_grad()
        with Tape() as tape:
            h = ad.tanh(ad.matmul(x, W))
            y = ad.sum_(ad.log_softmax(ad.matmul(h, W)) * 0.3)
        tape.backward(y)
        return W.grad.copy()

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()


def test_checkpoint_round_trip(tmp_path, rng):
    store = ParameterStore({"a": rng.normal(size=(2, 3)), "b.bias": rng.normal(size=4),
                            "scalar": np.array(1.5)})
    path = tmp_path / "ckpt.bin"
    save_checkpoint(store, path)
    raw = path.read_bytes()
    assert raw[:4] == b"SRNN" and raw[4] == 1
    state = load_checkpoint(path)
    assert list(state) == ["a", "b.bias", "scalar"]
    for name, p in store.items():
        assert state[name].tobytes() == p.value.tobytes()
        assert state[name].shape == p.value.shape


def test_checkpoint_rejects_garbage(tmp_path):
    from searnn.exceptions import ParseError
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE\x01")
    with pytest.raises(ParseError):
        load_checkpoint(bad)
    trunc = tmp_path / "trunc.bin"
    store = ParameterStore({"a": np.ones((3, 3))})
    save_checkpoint(store, trunc)
    trunc.write_bytes(trunc.read_bytes()[:-5])
    with pytest.raises(ParseError):
        load_checkpoint(trunc)


def test_store_checksum_tracks_values():
    store = ParameterStore({"w": np.ones(3)})
    before = store.checksum()
    store["w"].value = store["w"].value + 1e-12
    assert store.checksum() != before
