"""Tests for the autodiff core.

Every operation is checked two ways: forward against a deliberately dumb
reference implementation written here (nested loops, no vectorization), and
backward against central finite differences in float64.
"""

import numpy as np
import pytest

from dszip.nn import ops
from dszip.nn.optim import Adam
from dszip.nn.tensor import Tensor


# ---------------------------------------------------------------------------
# reference implementations (slow, obviously correct)
# ---------------------------------------------------------------------------

def ref_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for kk in range(k):
                acc += a[i, kk] * b[kk, j]
            out[i, j] = acc
    return out


def ref_bmm(a, w):
    # a: (B, d), w: (B, d, e) -> (B, e), one independent matmul per row
    bsz, d = a.shape
    out = np.zeros((bsz, w.shape[2]), dtype=a.dtype)
    for b in range(bsz):
        for j in range(w.shape[2]):
            acc = 0.0
            for kk in range(d):
                acc += a[b, kk] * w[b, kk, j]
            out[b, j] = acc
    return out


def ref_conv1d(x, kern, bias):
    # x: (B, T, C_in), kern: (k, C_in, C_out), zero padding, same length out
    bsz, t, cin = x.shape
    k, _, cout = kern.shape
    pad = k // 2
    out = np.zeros((bsz, t, cout), dtype=x.dtype)
    for b in range(bsz):
        for i in range(t):
            for o in range(cout):
                acc = bias[o]
                for j in range(k):
                    src = i + j - pad
                    if 0 <= src < t:
                        for c in range(cin):
                            acc += x[b, src, c] * kern[j, c, o]
                out[b, i, o] = acc
    return out


def ref_layer_norm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def numeric_grad(fn, arrays, idx, h=1e-4):
    """Central finite differences of a scalar-valued fn wrt arrays[idx]."""
    a = arrays[idx]
    g = np.zeros_like(a)
    flat = a.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn(*arrays)
        flat[i] = keep - h
        dn = fn(*arrays)
        flat[i] = keep
        gflat[i] = (up - dn) / (2 * h)
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


def check_grads(build, arrays, n_inputs=None):
    """Compare autodiff grads of a scalar graph against finite differences.

    build(*tensors) must return a scalar Tensor. arrays are float64.
    """
    n_inputs = len(arrays) if n_inputs is None else n_inputs
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    loss.backward()

    def scalar_fn(*arrs):
        ts = [Tensor(a) for a in arrs]
        return float(build(*ts).data)

    for i in range(n_inputs):
        num = numeric_grad(scalar_fn, [a.copy() for a in arrays], i)
        assert tensors[i].grad is not None, f"input {i} got no gradient"
        err = rel_err(tensors[i].grad, num)
        assert err < 1e-4, f"input {i}: rel err {err:.2e}"


# ---------------------------------------------------------------------------
# forward checks
# ---------------------------------------------------------------------------

class TestForward:
    def setup_method(self):
        self.rng = np.random.default_rng(42)

    def test_matmul_matches_triple_loop(self):
        a = self.rng.standard_normal((5, 7))
        b = self.rng.standard_normal((7, 3))
        got = ops.matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, ref_matmul(a, b), rtol=1e-12)

    def test_bmm_matches_per_slice_loop(self):
        a = self.rng.standard_normal((4, 6))
        w = self.rng.standard_normal((4, 6, 5))
        got = ops.bmm(Tensor(a), Tensor(w)).data
        np.testing.assert_allclose(got, ref_bmm(a, w), rtol=1e-12)

    def test_bmm_rows_are_independent(self):
        # changing one weight slice only changes that row of the output
        a = self.rng.standard_normal((4, 6))
        w = self.rng.standard_normal((4, 6, 5))
        base = ops.bmm(Tensor(a), Tensor(w)).data
        w2 = w.copy()
        w2[2] += 1.0
        out = ops.bmm(Tensor(a), Tensor(w2)).data
        assert np.array_equal(out[0], base[0])
        assert np.array_equal(out[1], base[1])
        assert np.array_equal(out[3], base[3])
        assert not np.array_equal(out[2], base[2])

    def test_conv1d_matches_nested_loop(self):
        for k in (1, 3, 5):
            x = self.rng.standard_normal((2, 9, 4))
            kern = self.rng.standard_normal((k, 4, 6))
            bias = self.rng.standard_normal(6)
            got = ops.conv1d(Tensor(x), Tensor(kern), Tensor(bias)).data
            np.testing.assert_allclose(got, ref_conv1d(x, kern, bias),
                                       rtol=1e-12, atol=1e-12)

    def test_conv1d_preserves_length(self):
        x = self.rng.standard_normal((3, 11, 4))
        kern = self.rng.standard_normal((3, 4, 4))
        bias = np.zeros(4)
        out = ops.conv1d(Tensor(x), Tensor(kern), Tensor(bias)).data
        assert out.shape == (3, 11, 4)

    def test_layer_norm_constant_row_gives_bias(self):
        x = np.full((2, 8), 3.7)
        gain = np.full(8, 2.0)
        bias = np.arange(8, dtype=float)
        out = ops.layer_norm(Tensor(x), Tensor(gain), Tensor(bias)).data
        np.testing.assert_allclose(out, np.tile(bias, (2, 1)), atol=1e-12)

    def test_layer_norm_two_point_closed_form(self):
        # mean 2, var 1: normalized values are +-1/sqrt(1+eps)
        x = np.array([[1.0, 3.0]])
        out = ops.layer_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
        v = 0.9999950000374997
        np.testing.assert_allclose(out, [[-v, v]], rtol=1e-12)

    def test_layer_norm_matches_reference(self):
        x = self.rng.standard_normal((4, 16))
        gain = self.rng.standard_normal(16)
        bias = self.rng.standard_normal(16)
        got = ops.layer_norm(Tensor(x), Tensor(gain), Tensor(bias)).data
        np.testing.assert_allclose(got, ref_layer_norm(x, gain, bias), rtol=1e-10)

    def test_gelu_frozen_values(self):
        x = np.array([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0])
        expect = np.array([
            -0.04540230591282446, -0.15880800939252304, -0.15428599017516514,
            0.0, 0.34571400982483486, 0.841191990607477,
            1.9545976940871754, 2.9963626079181394,
        ])
        got = ops.gelu(Tensor(x)).data
        np.testing.assert_allclose(got, expect, rtol=1e-12)

    def test_sigmoid_symmetry(self):
        x = self.rng.standard_normal(64) * 4
        s = ops.sigmoid(Tensor(x)).data
        np.testing.assert_allclose(s + ops.sigmoid(Tensor(-x)).data, 1.0, rtol=1e-12)
        assert np.all((s > 0) & (s < 1))

    def test_softmax_rows_sum_to_one_and_positive(self):
        logits = self.rng.standard_normal((6, 256)) * 10
        p = ops.softmax(logits)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)
        assert np.all(p > 0)

    def test_softmax_shift_invariance(self):
        logits = self.rng.standard_normal((3, 16))
        p1 = ops.softmax(logits)
        p2 = ops.softmax(logits + 1234.5)
        np.testing.assert_allclose(p1, p2, rtol=1e-9)

    def test_softmax_huge_spread_stays_positive(self):
        # float32 logits with a spread that would underflow a naive float32 exp
        logits = np.zeros((1, 256), dtype=np.float32)
        logits[0, 0] = 200.0
        p = ops.softmax(logits)
        assert np.all(p > 0)
        np.testing.assert_allclose(p.sum(), 1.0, rtol=1e-9)

    def test_cross_entropy_uniform_logits_is_log_alphabet(self):
        logits = Tensor(np.zeros((4, 256)))
        targets = np.array([0, 17, 255, 128])
        loss, _ = ops.softmax_xent(logits, targets)
        np.testing.assert_allclose(float(loss.data), 5.545177444479562, rtol=1e-12)

    def test_cross_entropy_perfect_prediction_near_zero(self):
        logits = np.full((2, 256), -50.0)
        logits[0, 7] = 50.0
        logits[1, 9] = 50.0
        loss, _ = ops.softmax_xent(Tensor(logits), np.array([7, 9]))
        assert float(loss.data) < 1e-8

    def test_embed_gathers_rows(self):
        table = self.rng.standard_normal((256, 4))
        idx = np.array([[3, 5], [250, 0]], dtype=np.uint8)
        out = ops.embed(Tensor(table), idx).data
        assert out.shape == (2, 2, 4)
        np.testing.assert_array_equal(out[0, 0], table[3])
        np.testing.assert_array_equal(out[1, 0], table[250])

    def test_roll_cache_shifts_and_appends(self):
        m = self.rng.standard_normal((2, 12))
        g = self.rng.standard_normal((2, 4))
        out = ops.roll_cache(m, Tensor(g)).data
        np.testing.assert_array_equal(out[:, :8], m[:, 4:])
        np.testing.assert_array_equal(out[:, 8:], g)

    def test_nan_forward_raises(self):
        x = np.array([[1.0, np.nan]])
        with pytest.raises(FloatingPointError):
            ops.check_finite(x, step=3)


# ---------------------------------------------------------------------------
# gradient checks (float64, h=1e-4)
# ---------------------------------------------------------------------------

class TestGradients:
    def setup_method(self):
        self.rng = np.random.default_rng(7)

    def test_matmul(self):
        a = self.rng.standard_normal((3, 4))
        b = self.rng.standard_normal((4, 2))
        check_grads(lambda x, y: ops.sum_all(ops.mul(ops.matmul(x, y),
                                                     ops.matmul(x, y))), [a, b])

    def test_bmm(self):
        a = self.rng.standard_normal((3, 4))
        w = self.rng.standard_normal((3, 4, 4))
        check_grads(lambda x, y: ops.sum_all(ops.gelu(ops.bmm(x, y))), [a, w])

    def test_conv1d(self):
        x = self.rng.standard_normal((2, 6, 3))
        k = self.rng.standard_normal((3, 3, 4))
        b = self.rng.standard_normal(4)
        check_grads(lambda a, kk, bb: ops.sum_all(ops.gelu(ops.conv1d(a, kk, bb))),
                    [x, k, b])

    def test_layer_norm(self):
        x = self.rng.standard_normal((3, 8))
        g = self.rng.standard_normal(8) + 1.0
        b = self.rng.standard_normal(8)
        check_grads(lambda a, gg, bb: ops.sum_all(
            ops.mul(ops.layer_norm(a, gg, bb), ops.layer_norm(a, gg, bb))),
            [x, g, b])

    def test_gelu(self):
        x = self.rng.standard_normal((4, 5)) * 2
        check_grads(lambda a: ops.sum_all(ops.mul(ops.gelu(a), ops.gelu(a))), [x])

    def test_sigmoid(self):
        x = self.rng.standard_normal((4, 5)) * 3
        check_grads(lambda a: ops.sum_all(ops.mul(ops.sigmoid(a), a)), [x])

    def test_add_mul_scale(self):
        a = self.rng.standard_normal((3, 4))
        b = self.rng.standard_normal((3, 4))
        s = np.array(1.3)
        check_grads(lambda x, y, z: ops.sum_all(
            ops.mul(ops.add(x, ops.scale(y, z)), x)), [a, b, s])

    def test_mix(self):
        al = self.rng.random((3, 4))
        a = self.rng.standard_normal((3, 4))
        b = self.rng.standard_normal((3, 4))
        check_grads(lambda x, y, z: ops.sum_all(ops.mul(ops.mix(x, y, z),
                                                        ops.mix(x, y, z))),
                    [al, a, b])

    def test_softmax_xent(self):
        logits = self.rng.standard_normal((4, 8))
        targets = np.array([1, 0, 7, 3])

        def build(l):
            loss, _ = ops.softmax_xent(l, targets)
            return loss

        check_grads(build, [logits])

    def test_slice_last(self):
        x = self.rng.standard_normal((3, 10))
        check_grads(lambda a: ops.sum_all(ops.mul(ops.slice_last(a, 4),
                                                  ops.slice_last(a, 4))), [x])

    def test_embed(self):
        table = self.rng.standard_normal((8, 3))
        idx = np.array([[1, 1, 4], [7, 0, 1]])
        # repeated index 1 checks that scatter accumulates
        check_grads(lambda t: ops.sum_all(ops.mul(ops.embed(t, idx),
                                                  ops.embed(t, idx))), [table])

    def test_roll_cache_routes_grad_to_new_block(self):
        m = self.rng.standard_normal((2, 8))
        g = self.rng.standard_normal((2, 4))

        def build(gg):
            return ops.sum_all(ops.mul(ops.roll_cache(m, gg), ops.roll_cache(m, gg)))

        check_grads(build, [g])

    def test_flatten_grad(self):
        x = self.rng.standard_normal((2, 3, 4))
        check_grads(lambda a: ops.sum_all(ops.mul(ops.flatten2(a), ops.flatten2(a))),
                    [x])

    def test_fanout_accumulates(self):
        # a tensor consumed twice must receive the sum of both paths
        x = Tensor(np.array([[2.0, -1.0]]), requires_grad=True)
        y = ops.add(x, x)
        ops.sum_all(y).backward()
        np.testing.assert_allclose(x.grad, [[2.0, 2.0]])


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class TestAdam:
    def test_first_step_matches_hand_calc(self):
        # with g constant: m_hat = g, v_hat = g^2, update = lr*g/(|g|+eps)
        p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
        p.grad = np.array([0.3, -0.7, 0.001])
        opt = Adam([p], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)
        opt.step()
        expect = np.array([1.0, -2.0, 0.5]) - 1e-3 * np.array([0.3, -0.7, 0.001]) / (
            np.abs(np.array([0.3, -0.7, 0.001])) + 1e-8)
        np.testing.assert_allclose(p.data, expect, rtol=1e-10)

    def test_two_steps_match_reference_loop(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal(5)
        g1 = rng.standard_normal(5)
        g2 = rng.standard_normal(5)

        # scalar reference, one element at a time
        def ref(w0, grads, lr=1e-2, b1=0.9, b2=0.999, eps=1e-8):
            m = v = 0.0
            w = w0
            for t, g in enumerate(grads, start=1):
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                mh = m / (1 - b1 ** t)
                vh = v / (1 - b2 ** t)
                w = w - lr * mh / (np.sqrt(vh) + eps)
            return w

        expect = np.array([ref(w[i], [g1[i], g2[i]]) for i in range(5)])

        p = Tensor(w.copy(), requires_grad=True)
        opt = Adam([p], lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8)
        p.grad = g1.copy()
        opt.step()
        opt.zero_grad()
        assert np.all(p.grad == 0)
        p.grad = g2.copy()
        opt.step()
        np.testing.assert_allclose(p.data, expect, rtol=1e-12)

    def test_skips_params_without_grad(self):
        p = Tensor(np.ones(3), requires_grad=True)
        opt = Adam([p], lr=1.0)
        opt.step()
        np.testing.assert_array_equal(p.data, np.ones(3))
