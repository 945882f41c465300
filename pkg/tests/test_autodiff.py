import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmplug import autodiff as ad
from dmplug.errors import ContractError, DomainError
from dmplug.operators import delta_kernel

from conftest import check_grad, fd_grad, rel_err, tape_grad

rng = np.random.default_rng(7)


def test_square_gradient_at_three():
    x = ad.Tensor(3.0, requires_grad=True)
    with ad.Tape() as tape:
        y = ad.mul(x, x)
    assert tape.backward(y)[x] == pytest.approx(6.0)


def test_conv_with_delta_kernel_is_identity():
    x = rng.standard_normal((7, 9))
    out = ad.conv2d_same(x, delta_kernel(3)).data
    assert np.array_equal(out, x)


def test_matmul_gradient_matches_finite_differences():
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    w = rng.standard_normal((3, 2))
    err, _ = check_grad(lambda t: ad.sum(ad.mul(ad.matmul(t, b), w)), a)
    assert err < 1e-6
    err, _ = check_grad(lambda t: ad.sum(ad.mul(ad.matmul(a, t), w)), b)
    assert err < 1e-6


def test_unreachable_leaf_gets_zero_gradient():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    w = ad.Tensor(np.ones(2), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.sum(ad.mul(x, x))
    gx, gw = tape.backward(loss, [x, w])
    assert np.array_equal(gw, np.zeros(2))
    assert np.allclose(gx, 2.0)


def test_backward_rejects_non_scalar():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape:
        y = ad.mul(x, x)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_two_tapes_give_bitwise_identical_gradients():
    x0 = rng.standard_normal((4, 4))
    k = rng.random((3, 3))

    def build(t):
        return ad.mse(ad.tanh(ad.conv2d_same(t, k)), np.zeros((4, 4)))

    assert np.array_equal(tape_grad(build, x0), tape_grad(build, x0))


# per-primitive finite-difference checks on random small shapes
POS = lambda s: rng.random(s) + 0.5  # noqa: E731

UNARY = {
    "exp": (ad.exp, rng.standard_normal),
    "log": (ad.log, POS),
    "sqrt": (ad.sqrt, POS),
    "tanh": (ad.tanh, rng.standard_normal),
    "silu": (ad.silu, rng.standard_normal),
    "neg": (ad.neg, rng.standard_normal),
    "scale": (lambda t: ad.scale(t, -2.5), rng.standard_normal),
    "power_int": (lambda t: ad.power(t, 3), rng.standard_normal),
    "power_real": (lambda t: ad.power(t, 2.2), POS),
    "mean": (lambda t: ad.mean(t, axis=0), rng.standard_normal),
    "sum_keep": (lambda t: ad.sum(t, axis=1, keepdims=True), rng.standard_normal),
    "reshape": (lambda t: ad.reshape(t, (-1,)), rng.standard_normal),
    "transpose": (ad.transpose, rng.standard_normal),
    "slice": (lambda t: t[1:, ::2], rng.standard_normal),
    "take": (lambda t: ad.take(t, np.array([0, 2, 2]), axis=0), rng.standard_normal),
    "softmax_rows": (lambda t: ad.softmax(t, axis=1), rng.standard_normal),
    "softmax_flat": (ad.softmax_flat, rng.standard_normal),
    "avg_pool": (lambda t: ad.avg_pool2d(t, 2), rng.standard_normal),
    "broadcast": (lambda t: ad.broadcast_to(ad.sum(t, axis=0), (2, 4)), rng.standard_normal),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name):
    fn, gen = UNARY[name]
    x = gen((4, 4))
    w = rng.standard_normal(np.shape(fn(ad.Tensor(x)).data))
    err, _ = check_grad(lambda t: ad.sum(ad.mul(fn(t), w)), x)
    assert err < 1e-5, name


BINARY = {
    "add": ad.add, "sub": ad.sub, "mul": ad.mul, "div": ad.div,
    "mse": ad.mse,
    "concat": lambda a, b: ad.concat([a, b], axis=0),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitive_gradients(name):
    fn = BINARY[name]
    a = rng.standard_normal((3, 4))
    b = rng.random((3, 4)) + 0.5
    w = rng.standard_normal(np.shape(fn(a, b).data))
    for which in (0, 1):
        if which == 0:
            err, _ = check_grad(lambda t: ad.sum(ad.mul(fn(t, b), w)), a)
        else:
            err, _ = check_grad(lambda t: ad.sum(ad.mul(fn(a, t), w)), b)
        assert err < 1e-5, (name, which)


def test_broadcast_add_gradient_reduces_to_operand_shape():
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal(4)
    g = tape_grad(lambda t: ad.sum(ad.add(a, t)), b)
    assert g.shape == (4,) and np.allclose(g, 3.0)


@pytest.mark.parametrize("circular", [False, True])
def test_conv_gradients_in_image_and_kernel(circular):
    x = rng.standard_normal((6, 6))
    k = rng.random((3, 3))
    w = rng.standard_normal((6, 6))
    err, _ = check_grad(lambda t: ad.sum(ad.mul(ad.conv2d_same(t, k, circular), w)), x)
    assert err < 1e-5
    err, _ = check_grad(lambda t: ad.sum(ad.mul(ad.conv2d_same(x, t, circular), w)), k)
    assert err < 1e-5


def test_circular_conv_matches_fft():
    x = rng.standard_normal((8, 8))
    k = rng.random((3, 3))
    pad = np.zeros((8, 8))
    # place kernel so that its centre sits at the origin
    for i in range(3):
        for j in range(3):
            pad[(i - 1) % 8, (j - 1) % 8] = k[i, j]
    ref = np.real(np.fft.ifft2(np.fft.fft2(x) * np.fft.fft2(pad)))
    assert np.allclose(ad.conv2d_same(x, k, circular=True).data, ref, atol=1e-12)


def test_bilinear_warp_gradients_at_fractional_offsets():
    x = rng.standard_normal((6, 6))
    flow = 0.3 + 0.4 * rng.random((2, 6, 6))
    w = rng.standard_normal((6, 6))
    err, _ = check_grad(lambda t: ad.sum(ad.mul(ad.bilinear_warp(t, flow), w)), x)
    assert err < 1e-5
    err, _ = check_grad(lambda t: ad.sum(ad.mul(ad.bilinear_warp(x, t), w)), flow)
    assert err < 1e-5


def test_domain_errors():
    with pytest.raises(DomainError):
        ad.log(ad.Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        ad.power(ad.Tensor([-1.0]), 2.2)
    with pytest.raises(DomainError):
        ad.div(ad.Tensor([1.0]), ad.Tensor([0.0]))
    with pytest.raises(DomainError):
        ad.sqrt(ad.Tensor([-1.0]))


def test_shape_mismatch_is_contract_error():
    with pytest.raises(ContractError):
        ad.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ContractError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ContractError):
        ad.conv2d_same(np.ones((4, 4)), np.ones((2, 2)))


def test_chain_rule_through_random_affine_maps():
    A = rng.standard_normal((5, 4))
    B = rng.standard_normal((3, 5))
    c = rng.standard_normal(3)
    x = rng.standard_normal(4)
    g = tape_grad(lambda t: ad.sum(ad.mul(ad.matmul(ad.matmul(t, A.T), B.T), c)), x)
    assert np.allclose(g, A.T @ B.T @ c, atol=1e-12)


def test_forward_is_deterministic():
    x = rng.standard_normal((8, 8))
    k = rng.random((3, 3))
    a = ad.silu(ad.conv2d_same(x, k)).data
    b = ad.silu(ad.conv2d_same(x, k)).data
    assert np.array_equal(a, b)


def test_no_recording_outside_a_tape():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    y = ad.mul(x, x)
    assert y._tape is None


def test_tapes_are_thread_local():
    results = {}

    def work(key, scale):
        x = ad.Tensor(np.full(3, float(scale)), requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.sum(ad.mul(x, x))
        results[key] = tape.backward(loss, [x])[0]

    threads = [threading.Thread(target=work, args=(i, i + 1)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for i in range(4):
        assert np.allclose(results[i], 2.0 * (i + 1))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_tanh_matmul_gradient_random_shapes(n, m, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((n, m))
    b = r.standard_normal((m, 3))

    def f(v):
        return float(np.sum(np.tanh(v @ b)))

    g = tape_grad(lambda t: ad.sum(ad.tanh(ad.matmul(t, b))), a)
    assert rel_err(g, fd_grad(f, a)) < 1e-5
