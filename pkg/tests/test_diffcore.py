import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neural_oscillator import diffcore as dc


def grad_of(build, *arrays):
    tape = dc.Tape()
    vs = tape.params(arrays)
    return tape.backward(build(*vs))


def fd_of(build, *arrays, h=1e-6):
    sizes = [a.size for a in arrays]
    shapes = [a.shape for a in arrays]
    theta = np.concatenate([a.ravel() for a in arrays])

    def f(th):
        parts, pos = [], 0
        for n, s in zip(sizes, shapes):
            parts.append(th[pos:pos + n].reshape(s))
            pos += n
        return float(build(*parts))

    return dc.finite_difference_gradient(f, theta, h)


def test_affine_examples():
    assert np.allclose(dc.affine(np.eye(2), np.array([1.0, 2.0]), np.zeros(2)), [1, 2])
    assert np.allclose(dc.affine(np.zeros((2, 2)), np.array([7.0, -3.0]), np.array([1.0, 2.0])), [1, 2])
    assert np.allclose(dc.affine(np.array([[1.0, 2], [3, 4]]), np.ones(2), np.array([1.0, 0])), [4, 7])


def test_affine_shape_mismatch():
    with pytest.raises(ValueError):
        dc.affine(np.eye(3), np.ones(2), np.zeros(3))


def test_square_gradient():
    assert grad_of(lambda w: dc.mul(w, w), np.array(3.0))[0] == 6.0


def test_constant_gradient_zero():
    tape = dc.Tape()
    w = tape.param(np.array([1.0, 2.0]))
    c = tape.constant(np.array(5.0))
    root = dc.sum(c)
    assert np.array_equal(tape.backward(root), np.zeros(2))
    assert w.shape == (2,)


def test_backward_rejects_vector_root():
    tape = dc.Tape()
    w = tape.param(np.ones(3))
    with pytest.raises(dc.TapeError):
        tape.backward(dc.relu(w))


def test_backward_rejects_foreign_root():
    t1, t2 = dc.Tape(), dc.Tape()
    t1.param(np.ones(1))
    w2 = t2.param(np.ones(1))
    with pytest.raises(dc.TapeError):
        t1.backward(dc.sum(w2))


def test_unrecorded_path_matches_recorded():
    rng = np.random.default_rng(0)
    W, x, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=3)
    plain = dc.relu(dc.affine(W, x, b))
    tape = dc.Tape()
    Wv = tape.param(W)
    rec = dc.relu(dc.affine(Wv, x, b))
    assert np.array_equal(plain, rec.value)


def test_replay_reproduces_values():
    tape = dc.Tape()
    a = tape.param(np.array([1.0, -2.0, 3.0]))
    y = dc.sum(dc.abs_pow(dc.lincomb([(a, 2.0), (a, -0.5)]), 3))
    vals = tape.replay()
    assert vals[y.idx] == pytest.approx(float(y.value), rel=0, abs=0)


def test_fd_bilinear_exact():
    g = dc.finite_difference_gradient(lambda th: th[0] * th[1], np.array([2.0, 3.0]))
    assert np.allclose(g, [3.0, 2.0], atol=1e-8)


def test_fd_constant_and_sine():
    assert np.array_equal(dc.finite_difference_gradient(lambda th: 4.0, np.zeros(3)), np.zeros(3))
    g = dc.finite_difference_gradient(lambda th: np.sin(th[0]), np.array([0.0]))
    assert abs(g[0] - 1.0) < 1e-10


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        dc.finite_difference_gradient(lambda th: 0.0, np.zeros(1), h=0.0)


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    shapes = [(6, 3), (6,), (5, 6), (5,), (1, 5), (1,), (1,)]
    arrays = [rng.normal(size=s) * 0.7 for s in shapes]
    x = rng.normal(size=(8, 3))

    def build(W1, b1, W2, b2, W3, b3, a):
        h = dc.relu(dc.affine(W1, x, b1))
        h = dc.prelu(dc.affine(W2, h, b2), a)
        return dc.mean(dc.power(dc.affine(W3, h, b3), 2.0))

    g = grad_of(build, *arrays)
    f = fd_of(build, *arrays)
    rel = np.abs(g - f) / np.maximum(np.maximum(np.abs(g), np.abs(f)), 1e-8)
    assert rel.max() < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_structural_ops_gradients(n, m, r, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, m))
    b = rng.normal(size=(n, m))
    w = rng.normal(size=(2 * m,))

    def build(a, b):
        c = dc.concat([a, b], axis=1)
        s = dc.stack([a, b], axis=0)
        t = dc.take(dc.reshape(s, (2 * n, m)), slice(0, n))
        u = dc.mul(c, w)
        v = dc.sub(dc.add(t, a), dc.scale(b, 0.5))
        return dc.add(dc.sum(dc.abs_pow(u, r + 1)), dc.sum(dc.mean(v, axis=0, keepdims=True)))

    g = grad_of(build, a, b)
    f = fd_of(build, a, b)
    assert np.allclose(g, f, rtol=1e-5, atol=1e-6)


def test_broadcast_gradient_unbroadcasts():
    g = grad_of(lambda x, y: dc.sum(dc.mul(x, y)), np.ones((3, 2)), np.array([2.0, 5.0]))
    assert np.allclose(g[6:], [3.0, 3.0])


def test_abs_pow_subgradient_at_zero():
    g = grad_of(lambda x: dc.sum(dc.abs_pow(x, 1)), np.array([0.0, -2.0, 3.0]))
    assert np.array_equal(g, [0.0, -1.0, 1.0])


def test_non_finite_gradient_names_node():
    tape = dc.Tape()
    x = tape.param(np.array([0.0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        y = dc.sum(dc.power(x, 0.5))
        with pytest.raises(dc.TapeError, match="non-finite"):
            tape.backward(y)
