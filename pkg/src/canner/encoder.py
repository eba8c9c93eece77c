"""Input representations and the convolutional local-attention encoder.

Per character: embedding lookup plus a BMES one-hot, giving rows
``x = [x_ch; x_seg]``. Around each position a window of k tokens is built,
each token extended with a trainable per-window position row (identity at
init), attended against the center token, and reduced by a width-k
convolution with sum pooling into a d_h feature vector.

The plain functions here operate on numpy arrays and are the readable,
independently testable form of each step; ``conv_attention_graph`` is the
vectorized differentiable pipeline the model trains through. The test suite
pins the two to each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .config import ConfigError
from .corpus import SEG_MARKS, Sentence, Vocab, DataFormatError
from .numerics import Parameter, softmax, xavier_uniform


@dataclass
class EncoderParams:
    """Trainable tensors of the encoder; attention/conv parts are optional."""

    d_ch: int
    d_seg: int
    k: int
    d_h: int
    char_table: Parameter
    pos_table: Parameter | None = None
    attn_v: Parameter | None = None
    attn_w1: Parameter | None = None
    attn_w2: Parameter | None = None
    conv_w: Parameter | None = None
    conv_b: Parameter | None = None

    @property
    def d_e(self) -> int:
        # char embedding + position block (width k) + BMES one-hot
        return self.d_ch + self.k + self.d_seg

    def parameters(self) -> list[Parameter]:
        return [
            p
            for p in (
                self.char_table, self.pos_table, self.attn_v, self.attn_w1,
                self.attn_w2, self.conv_w, self.conv_b,
            )
            if p is not None
        ]

    @classmethod
    def build(cls, vocab_size: int, d_ch: int, d_seg: int, k: int, d_h: int,
              rng: np.random.Generator, conv: bool = True, attend: bool = True):
        if k % 2 == 0:
            raise ConfigError(f"window size k must be odd, got {k}")
        d_e = d_ch + k + d_seg
        char_table = Parameter(
            "encoder.char_table",
            xavier_uniform(rng, (vocab_size, d_ch), vocab_size, d_ch),
        )
        params = cls(d_ch=d_ch, d_seg=d_seg, k=k, d_h=d_h, char_table=char_table)
        if conv:
            params.pos_table = Parameter("encoder.pos_table", np.eye(k))
            params.conv_w = Parameter(
                "encoder.conv_w",
                xavier_uniform(rng, (k, d_h, d_e), k * d_e, d_h),
            )
            params.conv_b = Parameter("encoder.conv_b", np.zeros((k, d_h)))
        if attend:
            if not conv:
                raise ConfigError("local attention requires the convolution layer")
            params.attn_v = Parameter(
                "encoder.attn_v", xavier_uniform(rng, (d_h,), d_h, 1)
            )
            params.attn_w1 = Parameter(
                "encoder.attn_w1", xavier_uniform(rng, (d_h, d_e), d_e, d_h)
            )
            params.attn_w2 = Parameter(
                "encoder.attn_w2", xavier_uniform(rng, (d_h, d_e), d_e, d_h)
            )
        return params


@dataclass
class Window:
    """k tokens centered at one position; pad_mask flags out-of-sentence slots."""

    center: int
    tokens: np.ndarray  # (k, d_e)
    pad_mask: np.ndarray  # (k,) bool


def seg_one_hot(seg: str) -> np.ndarray:
    out = np.zeros((len(seg), len(SEG_MARKS)))
    for i, mark in enumerate(seg):
        out[i, SEG_MARKS.index(mark)] = 1.0
    return out


def build_input_repr(sentence: Sentence, vocab: Vocab, params: EncoderParams) -> np.ndarray:
    """tau x (d_ch + d_seg) matrix of [char embedding; BMES one-hot] rows."""
    if len(sentence) == 0:
        raise DataFormatError("cannot encode an empty sentence")
    if sentence.seg is None:
        raise DataFormatError(
            "sentence has no segmentation marks; derive them first "
            "(e.g. Sentence.with_all_single_seg)"
        )
    ids = vocab.encode(sentence.chars)
    return np.concatenate(
        [params.char_table.value[ids], seg_one_hot(sentence.seg)], axis=1
    )


def make_window(repr_matrix: np.ndarray, j: int, k: int, pos_table: np.ndarray) -> Window:
    """Window of k tokens centered at j, zero-padded at sentence boundaries.

    Token m is [repr row (j+m-(k-1)/2) or zeros; pos_table row m]; the
    position row is applied to padded slots as well.
    """
    if k % 2 == 0:
        raise ConfigError(f"window size k must be odd, got {k}")
    tau = repr_matrix.shape[0]
    if not 0 <= j < tau:
        raise IndexError(f"window center {j} outside sentence of length {tau}")
    half = (k - 1) // 2
    tokens = np.zeros((k, repr_matrix.shape[1] + k))
    pad_mask = np.zeros(k, dtype=bool)
    for m in range(k):
        src = j + m - half
        if 0 <= src < tau:
            tokens[m, : repr_matrix.shape[1]] = repr_matrix[src]
        else:
            pad_mask[m] = True
        tokens[m, repr_matrix.shape[1]:] = pos_table[m]
    return Window(center=j, tokens=tokens, pad_mask=pad_mask)


def local_attention(window: Window, params: EncoderParams,
                    mask_pads: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Attention-reweighted window tokens and the weights themselves.

    Scores are s(x_center, x_m) = v . tanh(W1 x_center + W2 x_m), softmaxed
    over all k slots (pads included unless masked); hidden_m = weight_m * x_m.
    """
    v = params.attn_v.value
    w1 = params.attn_w1.value
    w2 = params.attn_w2.value
    center = window.tokens[(params.k - 1) // 2]
    scores = np.empty(params.k)
    left = w1 @ center
    for m in range(params.k):
        scores[m] = v @ np.tanh(left + w2 @ window.tokens[m])
    if mask_pads:
        scores[window.pad_mask] = -np.inf
    weights = softmax(scores)
    return weights[:, None] * window.tokens, weights


def conv_sum_pool(hidden: np.ndarray, conv_w: np.ndarray, conv_b: np.ndarray) -> np.ndarray:
    """Per-kernel contraction of the window, summed over window slots.

    out[f] = sum_m (sum_e conv_w[m,f,e] * hidden[m,e] + conv_b[m,f])
    """
    k, d_h, d_e = conv_w.shape
    if hidden.shape != (k, d_e) or conv_b.shape != (k, d_h):
        raise ValueError(
            f"conv shape mismatch: hidden {hidden.shape}, conv_w {conv_w.shape}, "
            f"conv_b {conv_b.shape}"
        )
    return np.einsum("mfe,me->f", conv_w, hidden) + conv_b.sum(axis=0)


def conv_attention_forward(repr_matrix: np.ndarray, params: EncoderParams,
                           mask_pads: bool = False,
                           attend: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
    """Window -> local attention -> convolution at every position.

    Returns (tau x d_h features, tau x k attention weights or None when
    attention is disabled).
    """
    tau = repr_matrix.shape[0]
    feats = np.empty((tau, params.d_h))
    trace = np.empty((tau, params.k)) if attend else None
    for j in range(tau):
        window = make_window(repr_matrix, j, params.k, params.pos_table.value)
        if attend:
            hidden, weights = local_attention(window, params, mask_pads=mask_pads)
            trace[j] = weights
        else:
            hidden = window.tokens
        feats[j] = conv_sum_pool(hidden, params.conv_w.value, params.conv_b.value)
    return feats, trace


# ---------------------------------------------------------------------------
# differentiable pipeline


def input_repr_graph(sentence: Sentence, vocab: Vocab, params: EncoderParams) -> ag.Tensor:
    if len(sentence) == 0:
        raise DataFormatError("cannot encode an empty sentence")
    if sentence.seg is None:
        raise DataFormatError("sentence has no segmentation marks")
    ids = vocab.encode(sentence.chars)
    rows = ag.take_rows(params.char_table.node(), ids)
    return ag.concat([rows, ag.Tensor(seg_one_hot(sentence.seg))], axis=1)


def conv_attention_graph(repr_node: ag.Tensor, params: EncoderParams,
                         mask_pads: bool = False,
                         attend: bool = True) -> tuple[ag.Tensor, ag.Tensor | None]:
    """Vectorized differentiable version of conv_attention_forward."""
    tau, d_cs = repr_node.data.shape
    k, d_h, d_e = params.k, params.d_h, params.d_e
    half = (k - 1) // 2
    padded = ag.concat(
        [ag.Tensor(np.zeros((half, d_cs))), repr_node, ag.Tensor(np.zeros((half, d_cs)))],
        axis=0,
    )
    idx = np.arange(tau)[:, None] + np.arange(k)[None, :]
    content = ag.take_rows(padded, idx)  # (tau, k, d_cs)
    pos = ag.tile0(params.pos_table.node(), tau)  # (tau, k, k)
    windows = ag.concat([content, pos], axis=2)  # (tau, k, d_e)
    trace = None
    if attend:
        center = windows[:, half, :]  # (tau, d_e)
        left = ag.matmul(center, ag.transpose(params.attn_w1.node()))  # (tau, d_h)
        right = ag.reshape(
            ag.matmul(ag.reshape(windows, (tau * k, d_e)),
                      ag.transpose(params.attn_w2.node())),
            (tau, k, d_h),
        )
        pre = ag.tanh(ag.reshape(left, (tau, 1, d_h)) + right)
        scores = ag.reshape(
            ag.matmul(ag.reshape(pre, (tau * k, d_h)), params.attn_v.node()), (tau, k)
        )
        if mask_pads:
            mask = np.zeros((tau, k))
            positions = idx - half
            mask[(positions < 0) | (positions >= tau)] = -np.inf
            scores = scores + ag.Tensor(mask)
        trace = ag.softmax_last(scores)  # (tau, k)
        hidden = ag.reshape(trace, (tau, k, 1)) * windows
    else:
        hidden = windows
    kernel = ag.reshape(ag.permute(params.conv_w.node(), (0, 2, 1)), (k * d_e, d_h))
    feats = ag.matmul(ag.reshape(hidden, (tau, k * d_e)), kernel)
    feats = feats + ag.sum_(params.conv_b.node(), axis=0)
    return feats, trace
