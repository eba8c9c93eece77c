import math

import numpy as np
import pytest

from canner import autograd as ag
from canner.config import ConfigError
from canner.corpus import DataFormatError, Sentence, Vocab, bmes_from_words
from canner.encoder import (
    EncoderParams,
    Window,
    build_input_repr,
    conv_attention_forward,
    conv_attention_graph,
    conv_sum_pool,
    input_repr_graph,
    local_attention,
    make_window,
    seg_one_hot,
)
from canner.numerics import check_gradients


def params_for(vocab, d_ch=6, k=3, d_h=4, seed=0, attend=True):
    rng = np.random.default_rng(seed)
    return EncoderParams.build(len(vocab), d_ch, 4, k, d_h, rng, conv=True, attend=attend)


class TestInputRepr:
    def test_shape(self):
        vocab = Vocab("abcdef")
        params = params_for(vocab, d_ch=8)
        s = Sentence("abcdef", "SSSSSS")
        assert build_input_repr(s, vocab, params).shape == (6, 12)

    def test_unknown_char_uses_unk_row(self):
        vocab = Vocab("ab")
        params = params_for(vocab)
        known = build_input_repr(Sentence("a", "S"), vocab, params)
        unk = build_input_repr(Sentence("z", "S"), vocab, params)
        np.testing.assert_array_equal(unk[0, :6], params.char_table.value[0])
        assert not np.array_equal(known[0, :6], unk[0, :6])

    def test_city_bridge_seg_marks(self):
        chars = "南京市长江大桥"
        seg = bmes_from_words(["南京市", "长江大桥"], text=chars)
        assert seg == "BMEBMME"
        vocab = Vocab(sorted(set(chars)))
        repr_m = build_input_repr(Sentence(chars, seg), vocab, params_for(vocab))
        np.testing.assert_array_equal(repr_m[:, 6:], seg_one_hot("BMEBMME"))
        # one-hot over B/M/E/S in that order
        np.testing.assert_array_equal(repr_m[0, 6:], [1, 0, 0, 0])
        np.testing.assert_array_equal(repr_m[2, 6:], [0, 0, 1, 0])

    def test_empty_sentence_rejected(self):
        vocab = Vocab("a")
        with pytest.raises(DataFormatError):
            build_input_repr(Sentence(""), vocab, params_for(vocab))

    def test_missing_seg_rejected(self):
        vocab = Vocab("a")
        with pytest.raises(DataFormatError):
            build_input_repr(Sentence("a"), vocab, params_for(vocab))


class TestMakeWindow:
    def test_left_boundary_pads(self):
        repr_m = np.arange(12.0).reshape(6, 2)
        w = make_window(repr_m, 0, 5, np.eye(5))
        np.testing.assert_array_equal(w.pad_mask, [True, True, False, False, False])
        np.testing.assert_array_equal(w.tokens[0, :2], [0, 0])
        np.testing.assert_array_equal(w.tokens[2, :2], repr_m[0])

    def test_interior_no_pads_center_offset(self):
        repr_m = np.arange(12.0).reshape(6, 2)
        w = make_window(repr_m, 3, 5, np.eye(5))
        assert not w.pad_mask.any()
        np.testing.assert_array_equal(w.tokens[2, :2], repr_m[3])

    def test_identity_pos_rows(self):
        repr_m = np.zeros((4, 3))
        w = make_window(repr_m, 1, 3, np.eye(3))
        for m in range(3):
            np.testing.assert_array_equal(w.tokens[m, 3:], np.eye(3)[m])

    def test_even_k_rejected(self):
        with pytest.raises(ConfigError):
            make_window(np.zeros((4, 3)), 1, 4, np.eye(4))

    def test_pad_slots_still_carry_position_rows(self):
        repr_m = np.ones((2, 3))
        w = make_window(repr_m, 0, 5, np.eye(5))
        np.testing.assert_array_equal(w.tokens[0], [0, 0, 0, 1, 0, 0, 0, 0])


class TestLocalAttention:
    def test_identical_tokens_uniform(self):
        vocab = Vocab("a")
        params = params_for(vocab, k=3)
        token = np.arange(1.0, params.d_e + 1)
        w = Window(1, np.tile(token, (3, 1)), np.zeros(3, dtype=bool))
        hidden, weights = local_attention(w, params)
        np.testing.assert_allclose(weights, [1 / 3] * 3, atol=1e-15)
        np.testing.assert_allclose(hidden, np.tile(token / 3, (3, 1)), atol=1e-15)

    def test_k1_passthrough(self):
        vocab = Vocab("a")
        params = params_for(vocab, k=1)
        token = np.arange(1.0, params.d_e + 1)
        hidden, weights = local_attention(
            Window(0, token[None, :], np.zeros(1, dtype=bool)), params
        )
        np.testing.assert_array_equal(weights, [1.0])
        np.testing.assert_array_equal(hidden[0], token)

    def test_random_window_matches_scalar_recomputation(self):
        from canner.numerics import Parameter

        d_e, d_h, k = 4, 2, 3  # token width chosen directly for the hand case
        r = np.random.default_rng(8)
        tokens = r.normal(size=(k, d_e))
        v = r.normal(size=d_h)
        w1 = r.normal(size=(d_h, d_e))
        w2 = r.normal(size=(d_h, d_e))
        params = EncoderParams(
            d_ch=d_e - k - 4, d_seg=4, k=k, d_h=d_h,
            char_table=Parameter("chars", np.zeros((3, 1))),
            attn_v=Parameter("v", v),
            attn_w1=Parameter("w1", w1),
            attn_w2=Parameter("w2", w2),
        )

        center = tokens[1]
        scores = []
        for m in range(k):
            pre = [
                sum(w1[h][e] * center[e] for e in range(d_e))
                + sum(w2[h][e] * tokens[m][e] for e in range(d_e))
                for h in range(d_h)
            ]
            scores.append(sum(v[h] * math.tanh(pre[h]) for h in range(d_h)))
        exp = [math.exp(s - max(scores)) for s in scores]
        expected_w = np.array(exp) / sum(exp)
        expected_h = expected_w[:, None] * tokens

        hidden, weights = local_attention(
            Window(1, tokens, np.zeros(k, dtype=bool)), params
        )
        np.testing.assert_allclose(weights, expected_w, atol=1e-12)
        np.testing.assert_allclose(hidden, expected_h, atol=1e-12)

    def test_mask_pads_zeroes_pad_weight(self):
        vocab = Vocab("ab")
        params = params_for(vocab, k=3)
        s = Sentence("ab", "SS")
        repr_m = build_input_repr(s, vocab, params)
        w = make_window(repr_m, 0, 3, params.pos_table.value)
        _, weights = local_attention(w, params, mask_pads=True)
        assert weights[0] == 0.0
        assert abs(weights.sum() - 1.0) < 1e-12


class TestConvSumPool:
    def test_zero_kernel(self):
        np.testing.assert_array_equal(
            conv_sum_pool(np.ones((3, 2)), np.zeros((3, 4, 2)), np.zeros((3, 4))),
            np.zeros(4),
        )

    def test_single_term(self):
        out = conv_sum_pool(
            np.array([[3.0]]), np.array([[[2.0]]]), np.array([[1.0]])
        )
        np.testing.assert_array_equal(out, [7.0])

    def test_random_matches_triple_loop(self):
        r = np.random.default_rng(4)
        k, d_h, d_e = 3, 2, 2
        hidden = r.normal(size=(k, d_e))
        w = r.normal(size=(k, d_h, d_e))
        b = r.normal(size=(k, d_h))
        expected = np.zeros(d_h)
        for f in range(d_h):
            for m in range(k):
                acc = b[m][f]
                for e in range(d_e):
                    acc += w[m][f][e] * hidden[m][e]
                expected[f] += acc
        np.testing.assert_allclose(conv_sum_pool(hidden, w, b), expected, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            conv_sum_pool(np.zeros((3, 2)), np.zeros((3, 4, 5)), np.zeros((3, 4)))


def sentence_and_params(chars="abcab", seed=1, k=3, attend=True):
    vocab = Vocab(sorted(set(chars)))
    params = params_for(vocab, d_ch=5, k=k, d_h=4, seed=seed, attend=attend)
    s = Sentence(chars, "S" * len(chars))
    return s, vocab, params


class TestConvAttentionForward:
    def test_single_char_sentence(self):
        s, vocab, params = sentence_and_params("a")
        repr_m = build_input_repr(s, vocab, params)
        feats, trace = conv_attention_forward(repr_m, params)
        assert feats.shape == (1, 4)
        assert trace.shape == (1, 3)
        assert abs(trace[0].sum() - 1.0) < 1e-9

    def test_output_shape(self):
        s, vocab, params = sentence_and_params("abcab")
        repr_m = build_input_repr(s, vocab, params)
        feats, trace = conv_attention_forward(repr_m, params)
        assert feats.shape == (5, 4)
        assert trace.shape == (5, 3)

    def test_trace_rows_sum_to_one(self):
        s, vocab, params = sentence_and_params("abcabcba")
        repr_m = build_input_repr(s, vocab, params)
        _, trace = conv_attention_forward(repr_m, params)
        np.testing.assert_allclose(trace.sum(axis=1), np.ones(8), atol=1e-9)

    def test_graph_matches_plain(self):
        for attend in (True, False):
            s, vocab, params = sentence_and_params("abcabcb", attend=attend)
            repr_m = build_input_repr(s, vocab, params)
            feats, trace = conv_attention_forward(repr_m, params, attend=attend)
            node, trace_node = conv_attention_graph(
                ag.Tensor(repr_m), params, attend=attend
            )
            np.testing.assert_allclose(node.data, feats, atol=1e-12)
            if attend:
                np.testing.assert_allclose(trace_node.data, trace, atol=1e-12)
            else:
                assert trace_node is None

    def test_locality_bit_identical(self):
        s, vocab, params = sentence_and_params("abcabcb", k=3)
        repr_m = build_input_repr(s, vocab, params)
        feats, _ = conv_attention_forward(repr_m, params)
        perturbed = repr_m.copy()
        perturbed[5] += 10.0  # outside the +-1 window of position 1
        feats2, _ = conv_attention_forward(perturbed, params)
        np.testing.assert_array_equal(feats[1], feats2[1])
        assert not np.array_equal(feats[5], feats2[5])

    def test_locality_bit_identical_graph(self):
        s, vocab, params = sentence_and_params("abcabcb", k=3)
        repr_m = build_input_repr(s, vocab, params)
        f1, _ = conv_attention_graph(ag.Tensor(repr_m), params)
        perturbed = repr_m.copy()
        perturbed[5] += 10.0
        f2, _ = conv_attention_graph(ag.Tensor(perturbed), params)
        np.testing.assert_array_equal(f1.data[1], f2.data[1])

    def test_gradients(self):
        s, vocab, params = sentence_and_params("abca")
        ids = vocab.encode(s.chars)

        def loss():
            x = input_repr_graph(s, vocab, params)
            feats, trace = conv_attention_graph(x, params)
            return ag.sum_(ag.tanh(feats)) + ag.sum_(trace * trace)

        report = check_gradients(loss, params.parameters(), tol=1e-4)
        assert report.ok, report.summary()
        assert ids is not None

    def test_gradients_masked_pads(self):
        s, vocab, params = sentence_and_params("abc")

        def loss():
            x = input_repr_graph(s, vocab, params)
            feats, _ = conv_attention_graph(x, params, mask_pads=True)
            return ag.sum_(ag.tanh(feats))

        report = check_gradients(loss, params.parameters(), tol=1e-4)
        assert report.ok, report.summary()
