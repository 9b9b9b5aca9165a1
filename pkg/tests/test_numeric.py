import math

import mpmath
import numpy as np
import pytest

from spmkit import numeric as nm
from spmkit.errors import DomainError, ShapeError


def test_affine_identity_input():
    x = nm.Var(np.eye(2))
    w = nm.Var(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = nm.Var(np.zeros(2))
    out = nm.affine(x, w, b)
    np.testing.assert_array_equal(out.value, [[1.0, 2.0], [3.0, 4.0]])


def test_affine_identity_weight_with_bias():
    out = nm.affine(np.array([[1.0, 1.0]]), np.eye(2), np.array([5.0, 5.0]))
    np.testing.assert_array_equal(out.value, [[6.0, 6.0]])


def test_affine_matches_triple_loop():
    rng = nm.make_rng(0)
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    b = rng.normal(size=2)
    out = nm.affine(x, w, b).value
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            acc = b[j]
            for k in range(4):
                acc += x[i, k] * w[k, j]
            expected[i, j] = acc
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_affine_shape_error():
    with pytest.raises(ShapeError):
        nm.affine(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros(3))


def test_softmax_symmetry():
    np.testing.assert_allclose(nm.softmax(np.zeros(3)), np.full(3, 1.0 / 3.0), atol=1e-15)


def test_softmax_overflow_stability():
    out = nm.softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(1.0)
    assert out[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_against_high_precision():
    v = [1.0, 2.0, 3.0]
    with mpmath.workdps(60):
        exps = [mpmath.e ** x for x in v]
        total = sum(exps)
        expected = [float(e / total) for e in exps]
    np.testing.assert_allclose(nm.softmax(np.array(v)), expected, rtol=1e-14)


def test_softmax_sum_and_shift_invariance():
    rng = nm.make_rng(7)
    for _ in range(50):
        v = rng.normal(size=rng.integers(1, 9))
        out = nm.softmax(v)
        assert abs(out.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(out, nm.softmax(v + 3.7), atol=1e-12)


def test_softmax_empty_is_domain_error():
    with pytest.raises(DomainError):
        nm.softmax(np.array([]))


def test_kl_identity_and_closed_form():
    p = np.array([0.3, 0.7])
    assert nm.kl_div(p, p) == pytest.approx(0.0, abs=1e-15)
    assert nm.kl_div(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(math.log(2.0), rel=1e-12)


def test_kl_matches_high_precision_sum():
    rng = nm.make_rng(3)
    p = rng.random(5)
    p /= p.sum()
    q = rng.random(5)
    q /= q.sum()
    with mpmath.workdps(60):
        expected = float(sum(mpmath.mpf(pi) * mpmath.log(mpmath.mpf(pi) / mpmath.mpf(qi))
                             for pi, qi in zip(p, q)))
    assert nm.kl_div(p, q) == pytest.approx(expected, rel=1e-12)


def test_kl_nonnegative_and_zero_iff_equal():
    rng = nm.make_rng(11)
    for _ in range(200):
        c = rng.integers(2, 6)
        p = rng.random(c)
        p /= p.sum()
        q = rng.random(c)
        q /= q.sum()
        assert nm.kl_div(p, q) >= 0.0
    assert nm.kl_div(p, p) == pytest.approx(0.0, abs=1e-15)


def test_kl_rejects_bad_inputs():
    with pytest.raises(DomainError):
        nm.kl_div(np.array([0.5, 0.5]), np.array([0.9, 0.2]))
    with pytest.raises(DomainError):
        nm.kl_div(np.array([-0.1, 1.1]), np.array([0.5, 0.5]))


def test_rng_streams_are_bitwise_identical():
    a = nm.make_rng(42).normal(size=100)
    b = nm.make_rng(42).normal(size=100)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, nm.make_rng(43).normal(size=100))


def test_sgd_step_example():
    out = nm.sgd_step(np.array([1.0]), np.array([1.0]), 0.1)
    assert out[0] == pytest.approx(0.9)


def test_adam_first_step_is_signed_lr():
    theta = np.array([0.0])
    g = np.array([1.0])
    new, state = nm.adam_step(theta, g, nm.AdamState.like(theta), lr=1e-3)
    assert new[0] == pytest.approx(-1e-3, rel=1e-6)
    assert state.t == 1


def test_sgd_converges_on_quadratic():
    theta = np.array([1.0])
    for _ in range(100):
        theta = nm.sgd_step(theta, 2.0 * theta, 0.1)
    # theta_k = 0.8^k
    assert abs(theta[0]) < 1e-4
    assert theta[0] == pytest.approx(0.8 ** 100, rel=1e-9)


def test_grad_check_quadratic():
    theta = nm.Var(np.array([1.0, -2.0, 0.5]))

    def loss():
        return nm.scale(nm.sum_all(nm.mul(theta, theta)), 0.5)

    assert nm.grad_check(loss, [theta], h=1e-5) <= 1e-8


def _rand_var(rng, shape):
    return nm.Var(rng.normal(size=shape))


@pytest.mark.parametrize("seed", range(5))
def test_grad_check_every_primitive(seed):
    rng = nm.make_rng(seed)
    r, c, k = rng.integers(2, 8, size=3)
    a = _rand_var(rng, (r, c))
    b = _rand_var(rng, (r, c))
    w = _rand_var(rng, (c, k))
    bias = _rand_var(rng, (k,))
    vec = _rand_var(rng, (c,))
    other = _rand_var(rng, (r + 1, c))
    keep = rng.random((r, c)) > 0.3
    keep[:, 0] = True
    rows = np.arange(r)
    cols = rng.integers(0, k, size=r)

    cases = {
        "add": (lambda: nm.sum_all(nm.mul(nm.add(a, b), nm.add(a, b))), [a, b]),
        "sub": (lambda: nm.sum_all(nm.mul(nm.sub(a, b), nm.sub(a, b))), [a, b]),
        "mul": (lambda: nm.sum_all(nm.mul(a, b)), [a, b]),
        "matmul": (lambda: nm.sum_all(nm.mul(nm.matmul(a, w), nm.matmul(a, w))), [a, w]),
        "matmul_t": (lambda: nm.sum_all(nm.mul(nm.matmul_t(a, other), nm.matmul_t(a, other))), [a, other]),
        "affine": (lambda: nm.sum_all(nm.mul(nm.affine(a, w, bias), nm.affine(a, w, bias))), [a, w, bias]),
        "relu": (lambda: nm.sum_all(nm.mul(nm.relu(a), nm.relu(a))), [a]),
        "mean_all": (lambda: nm.mean_all(nm.mul(a, a)), [a]),
        "log_floor": (lambda: nm.sum_all(nm.log_floor(nm.add(nm.mul(a, a), 0.1))), [a]),
        "dot_last": (lambda: nm.sum_all(nm.mul(nm.dot_last(a, vec), nm.dot_last(a, vec))), [a, vec]),
        "gather_2d": (lambda: nm.sum_all(nm.mul(nm.gather_2d(nm.matmul(a, w), rows, cols),
                                                nm.gather_2d(nm.matmul(a, w), rows, cols))), [a, w]),
        "masked_softmax": (lambda: nm.sum_all(nm.mul(nm.masked_softmax(a, keep),
                                                     nm.masked_softmax(a, keep))), [a]),
        "reshape": (lambda: nm.sum_all(nm.mul(nm.reshape(a, (c, r)), nm.reshape(a, (c, r)))), [a]),
        "broadcast_add": (lambda: nm.sum_all(nm.mul(nm.add(a, vec), nm.add(a, vec))), [a, vec]),
    }
    for name, (loss, params) in cases.items():
        err = nm.grad_check(loss, params, h=1e-5)
        assert err <= 1e-4, f"{name}: {err}"


def test_masked_softmax_values_and_zero_weight():
    logits = nm.Var(np.array([[1.0, 2.0, 3.0]]))
    keep = np.array([[True, False, True]])
    out = nm.masked_softmax(logits, keep).value[0]
    assert out[1] == 0.0
    direct = nm.softmax(np.array([1.0, 3.0]))
    np.testing.assert_allclose(out[[0, 2]], direct, atol=1e-15)


def test_masked_softmax_empty_row_rejected():
    with pytest.raises(DomainError):
        nm.masked_softmax(nm.Var(np.zeros((1, 2))), np.array([[False, False]]))
