import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factormi import autodiff as ad
from factormi.errors import ContractError, DimensionError, TapeError
from factormi.gradcheck import check_gradients, numeric_grad


def T(x, grad=False):
    return ad.Tensor(x, requires_grad=grad)


# ---------------------------------------------------------------- forward examples


def test_conv2d_zero_input_gives_bias():
    w = np.random.default_rng(0).normal(size=(3, 2, 2, 2))
    out = ad.conv2d(T(np.zeros((2, 5, 6))), T(w), T([1.0, -2.0, 0.5]))
    assert out.shape == (3, 4, 5)
    for o, b in enumerate([1.0, -2.0, 0.5]):
        assert np.all(out.data[o] == b)


def test_conv2d_default_trial_shape():
    out = ad.conv2d(T(np.zeros((1, 22, 1001))), T(np.zeros((40, 1, 1, 52))), T(np.zeros(40)), (1, 1))
    assert out.shape == (40, 22, 950)


def test_conv2d_scalar_case():
    out = ad.conv2d(T([[[2.0]]]), T([[[[3.0]]]]), T([1.0]))
    assert out.data.tolist() == [[[7.0]]]


def test_conv2d_matches_direct_sum():
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(2, 7, 8)), rng.normal(size=(3, 2, 3, 2)), rng.normal(size=3)
    out = ad.conv2d(T(x), T(w), T(b), (2, 3)).data
    ho, wo = (7 - 3) // 2 + 1, (8 - 2) // 3 + 1
    ref = np.zeros((3, ho, wo))
    for o in range(3):
        for i in range(ho):
            for j in range(wo):
                ref[o, i, j] = b[o] + np.sum(x[:, 2 * i:2 * i + 3, 3 * j:3 * j + 2] * w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv2d_errors_name_axis():
    with pytest.raises(DimensionError, match="channel"):
        ad.conv2d(T(np.zeros((2, 4, 4))), T(np.zeros((1, 3, 2, 2))))
    with pytest.raises(DimensionError, match="height"):
        ad.conv2d(T(np.zeros((1, 2, 4))), T(np.zeros((1, 1, 3, 1))))
    with pytest.raises(DimensionError, match="width"):
        ad.conv2d(T(np.zeros((1, 4, 2))), T(np.zeros((1, 1, 1, 3))))


def test_avgpool_examples():
    c = ad.avgpool2d(T(np.full((2, 3, 9), 4.25)), (2, 3), (1, 2))
    assert np.all(c.data == 4.25)
    assert ad.avgpool2d(T(np.zeros((40, 1, 950))), (1, 68), (1, 14)).shape == (40, 1, 64)
    r = ad.avgpool2d(T([[[1.0, 2.0, 3.0, 4.0]]]), (1, 2), (1, 2))
    assert r.data.tolist() == [[[1.5, 3.5]]]
    with pytest.raises(DimensionError):
        ad.avgpool2d(T(np.zeros((1, 1, 3))), (1, 4))


def test_linear_examples():
    x = np.arange(5.0)
    assert np.array_equal(ad.linear(T(x), T(np.eye(5)), T(np.zeros(5))).data, x)
    assert ad.linear(T(np.zeros(5120)), T(np.zeros((2560, 5120))), T(np.zeros(2560))).shape == (2560,)
    out = ad.linear(T([1.0, 2.0]), T([[1.0, 1.0], [1.0, -1.0]]), T([0.0, 0.0]))
    assert out.data.tolist() == [3.0, -1.0]
    with pytest.raises(DimensionError):
        ad.linear(T(np.zeros(3)), T(np.zeros((2, 4))))


def test_elu_values():
    out = ad.elu(T([0.0, 1.0, -1.0])).data
    assert out[0] == 0.0 and out[1] == 1.0
    # series oracle for e^-1 - 1
    series = sum((-1.0) ** n / math.factorial(n) for n in range(25)) - 1.0
    assert out[2] == pytest.approx(series, abs=1e-15)
    assert out[2] == pytest.approx(-0.63212, abs=1e-5)


# ---------------------------------------------------------------- backward examples


def test_grad_of_sum_is_ones():
    x = T(np.random.default_rng(0).normal(size=(3, 4)), grad=True)
    with ad.Tape() as tape:
        loss = ad.sum(x)
    ad.backward(loss, tape)
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_grad_of_sum_elu():
    x = T([-1.0, 2.0], grad=True)
    with ad.Tape() as tape:
        loss = ad.sum(ad.elu(x))
    ad.backward(loss, tape)
    np.testing.assert_allclose(x.grad, [math.exp(-1.0), 1.0], rtol=1e-15)
    num = numeric_grad(lambda v: ad.sum(ad.elu(T(v))).item(), np.array([-1.0, 2.0]))
    np.testing.assert_allclose(x.grad, num, rtol=1e-8)


def test_gradients_sum_over_reuse():
    x = T([1.5, -2.0], grad=True)
    with ad.Tape() as tape:
        loss = ad.sum(ad.add(ad.mul(x, x), x))
    ad.backward(loss, tape)
    np.testing.assert_allclose(x.grad, 2 * np.array([1.5, -2.0]) + 1)


def test_backward_contract_errors():
    x = T(np.ones(3), grad=True)
    with ad.Tape() as tape:
        y = ad.elu(x)
    with pytest.raises(ContractError):
        ad.backward(y, tape)
    with pytest.raises(TapeError):
        ad.backward(ad.sum(T(np.ones(3))), tape)
    with ad.Tape():
        z = ad.sum(ad.elu(x))
    with pytest.raises(TapeError):
        ad.backward(z, tape)
    with ad.Tape():
        with pytest.raises(TapeError):
            ad.elu(y)  # y lives on the first tape


def test_composite_matches_finite_differences():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 1, 3, 12))
    w1, b1 = rng.normal(size=(4, 1, 1, 3)), rng.normal(size=4)
    w2, b2 = rng.normal(size=(4, 4, 3, 1)) * 0.5, rng.normal(size=4)
    wl, bl = rng.normal(size=(3, 4 * 4)), rng.normal(size=3)

    def f(x, w1, b1, w2, b2, wl, bl):
        h = ad.elu(ad.conv2d(x, w1, b1))
        h = ad.elu(ad.conv2d(h, w2, b2))
        h = ad.flatten(ad.avgpool2d(h, (1, 4), (1, 2)), 1)
        return ad.cross_entropy(ad.linear(h, wl, bl), [0, 2])

    assert check_gradients(f, [x, w1, b1, w2, b2, wl, bl]) <= 1e-6


# ---------------------------------------------------------------- properties


def _random_case(seed):
    rng = np.random.default_rng(seed)
    n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    h, w = rng.integers(2, 9), rng.integers(2, 9)
    kh, kw = rng.integers(1, h + 1), rng.integers(1, w + 1)
    sh, sw = rng.integers(1, 4), rng.integers(1, 4)
    return rng, (n, c, o, h, w, kh, kw, sh, sw)


@pytest.mark.parametrize("seed", range(10))
def test_conv2d_gradient_random(seed):
    rng, (n, c, o, h, w, kh, kw, sh, sw) = _random_case(seed)
    x, wt, b = rng.normal(size=(n, c, h, w)), rng.normal(size=(o, c, kh, kw)), rng.normal(size=o)
    R = rng.normal(size=(n, o, (h - kh) // sh + 1, (w - kw) // sw + 1))
    err = check_gradients(lambda x, wt, b: ad.sum(ad.mul(ad.conv2d(x, wt, b, (sh, sw)), R)), [x, wt, b])
    assert err <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_avgpool_gradient_random(seed):
    rng, (n, c, _, h, w, kh, kw, sh, sw) = _random_case(seed)
    x = rng.normal(size=(n, c, h, w))
    R = rng.normal(size=(n, c, (h - kh) // sh + 1, (w - kw) // sw + 1))
    assert check_gradients(lambda x: ad.sum(ad.mul(ad.avgpool2d(x, (kh, kw), (sh, sw)), R)), [x]) <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_linear_elu_ce_gradients_random(seed):
    rng = np.random.default_rng(100 + seed)
    b, n_in, n_out = rng.integers(1, 6), rng.integers(1, 9), rng.integers(2, 9)
    x, w, bias = rng.normal(size=(b, n_in)), rng.normal(size=(n_out, n_in)), rng.normal(size=n_out)
    y = rng.integers(0, n_out, size=b)
    R = rng.normal(size=(b, n_out))
    assert check_gradients(lambda x, w, bias: ad.sum(ad.mul(ad.linear(x, w, bias), R)), [x, w, bias]) <= 1e-6
    assert check_gradients(lambda x: ad.sum(ad.mul(ad.elu(x), R[:, :1])), [x[:, :1] + 0.01]) <= 1e-6
    assert check_gradients(lambda z: ad.cross_entropy(z, y), [R]) <= 1e-6
    assert check_gradients(lambda z: ad.mean(ad.softplus(z)), [R]) <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_einsum_gradient_random(seed):
    rng = np.random.default_rng(200 + seed)
    a, b = rng.normal(size=(3, 4, 2)), rng.normal(size=(4, 5))
    R = rng.normal(size=(3, 2, 5))
    assert check_gradients(lambda a, b: ad.sum(ad.mul(ad.einsum("ofh,fk->ohk", a, b), R)), [a, b]) <= 1e-6
    assert check_gradients(lambda a, v: ad.sum(ad.mul(ad.einsum("ofh,f->o", a, v), R[:, 0, 0])),
                           [a, b[:, 0]]) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 12), kh=st.integers(1, 12), kw=st.integers(1, 12),
       sh=st.integers(1, 5), sw=st.integers(1, 5))
def test_shape_algebra(h, w, kh, kw, sh, sw):
    x = T(np.zeros((2, h, w)))
    if kh > h or kw > w:
        with pytest.raises(DimensionError):
            ad.conv2d(x, T(np.zeros((1, 2, kh, kw))), stride=(sh, sw))
        return
    expect = ((h - kh) // sh + 1, (w - kw) // sw + 1)
    assert ad.conv2d(x, T(np.zeros((3, 2, kh, kw))), stride=(sh, sw)).shape == (3, *expect)
    assert ad.avgpool2d(x, (kh, kw), (sh, sw)).shape == (2, *expect)


@pytest.mark.parametrize("c", [-3.0, 0.5, 7.0])
def test_backward_is_linear_in_upstream(c):
    rng = np.random.default_rng(5)
    x, w, b = rng.normal(size=(2, 2, 5, 6)), rng.normal(size=(3, 2, 2, 3)), rng.normal(size=3)
    R = rng.normal(size=(2, 3, 4, 4))

    def grads(scale):
        ts = [T(a, grad=True) for a in (x, w, b)]
        with ad.Tape() as tape:
            out = ad.conv2d(*ts)
            loss = ad.sum(ad.mul(out, R * scale))
        ad.backward(loss, tape)
        return [t.grad for t in ts]

    for g1, gc in zip(grads(1.0), grads(c)):
        np.testing.assert_allclose(gc, c * g1, rtol=1e-12, atol=1e-12)


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(9)
        x, w = T(rng.normal(size=(2, 1, 4, 20))), T(rng.normal(size=(5, 1, 2, 4)), grad=True)
        with ad.Tape() as tape:
            loss = ad.sum(ad.avgpool2d(ad.elu(ad.conv2d(x, w)), (1, 3), (1, 2)))
        ad.backward(loss, tape)
        return loss.data.tobytes(), w.grad.tobytes()

    assert run() == run()


def test_tape_visits_each_node_once():
    x = T(np.ones(4), grad=True)
    calls = []
    with ad.Tape() as tape:
        y = ad.elu(x)
        node = tape.nodes[y.node_id]
        orig = node.backward_fn
        node.backward_fn = lambda g: (calls.append(1), orig(g))[1]
        loss = ad.sum(ad.add(y, y))
    ad.backward(loss, tape)
    assert len(calls) == 1
    np.testing.assert_allclose(x.grad, 2.0)
