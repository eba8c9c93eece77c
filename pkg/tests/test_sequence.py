import math

import numpy as np
import pytest

from canner import autograd as ag
from canner.numerics import Parameter, check_gradients
from canner.sequence import (
    BiGruParams,
    GlobalAttnParams,
    GruDirectionParams,
    bigru_forward,
    bigru_graph,
    concat_repr,
    global_attention_graph,
    global_self_attention,
    gru_cell,
)


def zero_direction(d_in, d_dir):
    return GruDirectionParams(
        w_in=Parameter("w_in", np.zeros((3 * d_dir, d_in))),
        w_hid=Parameter("w_hid", np.zeros((3 * d_dir, d_dir))),
        bias=Parameter("bias", np.zeros(3 * d_dir)),
    )


def random_direction(d_in, d_dir, seed, prefix="g"):
    rng = np.random.default_rng(seed)
    return GruDirectionParams.build(prefix, d_in, d_dir, rng)


class TestGruCell:
    def test_zero_params_halve_state(self):
        p = np.array([0.4, -1.2])
        out = gru_cell(np.array([5.0, 5.0, 5.0]), p, zero_direction(3, 2))
        np.testing.assert_allclose(out, 0.5 * p, atol=1e-15)

    def test_zero_params_zero_state(self):
        out = gru_cell(np.array([1.0, 2.0]), np.zeros(2), zero_direction(2, 2))
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_random_matches_scalar_recomputation(self):
        d_in = d = 2
        params = random_direction(d_in, d, seed=3)
        r = np.random.default_rng(7)
        x = r.normal(size=d_in)
        h_prev = r.normal(size=d)
        W, U, b = params.w_in.value, params.w_hid.value, params.bias.value

        def sig(t):
            return 1.0 / (1.0 + math.exp(-t))

        z = [sig(sum(W[i][e] * x[e] for e in range(d_in))
                 + sum(U[i][j] * h_prev[j] for j in range(d)) + b[i])
             for i in range(d)]
        rr = [sig(sum(W[d + i][e] * x[e] for e in range(d_in))
                  + sum(U[d + i][j] * h_prev[j] for j in range(d)) + b[d + i])
              for i in range(d)]
        c = [math.tanh(sum(W[2 * d + i][e] * x[e] for e in range(d_in))
                       + sum(U[2 * d + i][j] * (rr[j] * h_prev[j]) for j in range(d))
                       + b[2 * d + i])
             for i in range(d)]
        expected = [(1 - z[i]) * h_prev[i] + z[i] * c[i] for i in range(d)]
        np.testing.assert_allclose(gru_cell(x, h_prev, params), expected, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gru_cell(np.zeros(3), np.zeros(3), zero_direction(2, 3))


class TestBiGru:
    def test_single_position(self):
        params = BiGruParams(random_direction(3, 2, 1), random_direction(3, 2, 2))
        x = np.random.default_rng(0).normal(size=(1, 3))
        out = bigru_forward(x, params)
        assert out.shape == (1, 4)
        np.testing.assert_allclose(out[0, :2], gru_cell(x[0], np.zeros(2), params.fwd))
        np.testing.assert_allclose(out[0, 2:], gru_cell(x[0], np.zeros(2), params.bwd))

    def test_output_shape(self):
        params = BiGruParams.build(3, 4, np.random.default_rng(5))
        out = bigru_forward(np.random.default_rng(1).normal(size=(7, 3)), params)
        assert out.shape == (7, 4)

    def test_reversal_swaps_direction_roles(self):
        fwd = random_direction(3, 2, 11)
        bwd = random_direction(3, 2, 12)
        x = np.random.default_rng(2).normal(size=(5, 3))
        straight = bigru_forward(x, BiGruParams(fwd, bwd))
        mirrored = bigru_forward(x[::-1].copy(), BiGruParams(bwd, fwd))
        for j in range(5):
            np.testing.assert_allclose(
                mirrored[4 - j], np.concatenate([straight[j, 2:], straight[j, :2]]),
                atol=1e-12,
            )

    def test_outputs_bounded(self):
        params = BiGruParams.build(3, 4, np.random.default_rng(9))
        moderate = bigru_forward(np.random.default_rng(3).normal(size=(30, 3)), params)
        assert (np.abs(moderate) < 1.0).all()
        # tanh saturates to exactly +-1.0 in float64 under extreme inputs
        extreme = bigru_forward(np.random.default_rng(3).normal(size=(30, 3)) * 50, params)
        assert (np.abs(extreme) <= 1.0).all()

    def test_graph_matches_plain(self):
        params = BiGruParams.build(3, 4, np.random.default_rng(4))
        x = np.random.default_rng(6).normal(size=(6, 3))
        plain = bigru_forward(x, params)
        node = bigru_graph(ag.Tensor(x), params)
        np.testing.assert_allclose(node.data, plain, atol=1e-12)

    def test_gradients(self):
        params = BiGruParams.build(2, 4, np.random.default_rng(10))
        x = np.random.default_rng(11).normal(size=(4, 2))

        def loss():
            return ag.sum_(ag.tanh(bigru_graph(ag.Tensor(x), params)))

        report = check_gradients(loss, params.parameters(), tol=1e-4)
        assert report.ok, report.summary()


class TestGlobalAttention:
    def test_single_position(self):
        params = GlobalAttnParams.build(4, np.random.default_rng(0))
        h = np.random.default_rng(1).normal(size=(1, 4))
        out, weights = global_self_attention(h, params)
        np.testing.assert_array_equal(weights, [[1.0]])
        np.testing.assert_allclose(out, h, atol=1e-15)

    def test_identical_rows_uniform(self):
        params = GlobalAttnParams.build(4, np.random.default_rng(0))
        row = np.random.default_rng(2).normal(size=4)
        h = np.tile(row, (5, 1))
        out, weights = global_self_attention(h, params)
        np.testing.assert_allclose(weights, np.full((5, 5), 0.2), atol=1e-12)
        np.testing.assert_allclose(out, h, atol=1e-12)

    def test_random_matches_scalar_recomputation(self):
        tau, d_h = 3, 4
        r = np.random.default_rng(5)
        h = r.normal(size=(tau, d_h))
        params = GlobalAttnParams.build(d_h, np.random.default_rng(6))
        v, w1, w2 = params.v.value, params.w1.value, params.w2.value

        expected_w = np.zeros((tau, tau))
        for j in range(tau):
            scores = []
            for s in range(tau):
                pre = [
                    sum(w1[a][b] * h[j][b] for b in range(d_h))
                    + sum(w2[a][b] * h[s][b] for b in range(d_h))
                    for a in range(d_h)
                ]
                scores.append(sum(v[a] * math.tanh(pre[a]) for a in range(d_h)))
            mx = max(scores)
            exps = [math.exp(x - mx) for x in scores]
            expected_w[j] = np.array(exps) / sum(exps)
        expected_out = expected_w @ h

        out, weights = global_self_attention(h, params)
        np.testing.assert_allclose(weights, expected_w, atol=1e-12)
        np.testing.assert_allclose(out, expected_out, atol=1e-12)

    def test_rows_sum_to_one_nonnegative(self):
        params = GlobalAttnParams.build(4, np.random.default_rng(7))
        h = np.random.default_rng(8).normal(size=(9, 4)) * 3
        _, weights = global_self_attention(h, params)
        np.testing.assert_allclose(weights.sum(axis=1), np.ones(9), atol=1e-9)
        assert (weights >= 0).all()

    def test_permutation_equivariance(self):
        params = GlobalAttnParams.build(4, np.random.default_rng(9))
        h = np.random.default_rng(10).normal(size=(6, 4))
        perm = np.array([3, 0, 5, 1, 4, 2])
        _, w = global_self_attention(h, params)
        _, w_perm = global_self_attention(h[perm], params)
        np.testing.assert_allclose(w_perm, w[np.ix_(perm, perm)], atol=1e-12)

    def test_graph_matches_plain(self):
        params = GlobalAttnParams.build(4, np.random.default_rng(11))
        h = np.random.default_rng(12).normal(size=(5, 4))
        out, weights = global_self_attention(h, params)
        out_node, w_node = global_attention_graph(ag.Tensor(h), params)
        np.testing.assert_allclose(out_node.data, out, atol=1e-12)
        np.testing.assert_allclose(w_node.data, weights, atol=1e-12)

    def test_gradients(self):
        params = GlobalAttnParams.build(4, np.random.default_rng(13))
        h = np.random.default_rng(14).normal(size=(3, 4))

        def loss():
            out, weights = global_attention_graph(ag.Tensor(h), params)
            return ag.sum_(ag.tanh(out)) + ag.sum_(weights * weights)

        report = check_gradients(loss, params.parameters(), tol=1e-4)
        assert report.ok, report.summary()


class TestConcatRepr:
    def test_duplicated_halves(self):
        h = np.random.default_rng(0).normal(size=(3, 4))
        out = concat_repr(h, h)
        np.testing.assert_array_equal(out[:, :4], out[:, 4:])

    def test_shape(self):
        out = concat_repr(np.zeros((5, 4)), np.ones((5, 4)))
        assert out.shape == (5, 8)

    def test_round_trip(self):
        a = np.random.default_rng(1).normal(size=(4, 3))
        b = np.random.default_rng(2).normal(size=(4, 3))
        out = concat_repr(a, b)
        np.testing.assert_array_equal(out[:, :3], a)
        np.testing.assert_array_equal(out[:, 3:], b)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            concat_repr(np.zeros((3, 4)), np.zeros((4, 4)))
