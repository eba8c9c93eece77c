"""Bidirectional GRU over encoder features and sentence-level self-attention.

Each direction owns stacked gate matrices in [update; reset; candidate]
order. The cell follows the standard gate algebra:

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    c = tanh(W_h x + U_h (r*h) + b_h)
    h' = (1 - z)*h + z*c

Global self-attention scores every pair of recurrent states with the same
additive form as the local attention (separate parameters) and aggregates
the states row-wise; the CRF consumes [h_rnn; h_attn].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .numerics import Parameter, softmax, xavier_uniform


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GruDirectionParams:
    w_in: Parameter  # (3*d_dir, d_in), gate blocks [z; r; h]
    w_hid: Parameter  # (3*d_dir, d_dir)
    bias: Parameter  # (3*d_dir,)

    @property
    def d_dir(self) -> int:
        return self.w_hid.value.shape[1]

    @classmethod
    def build(cls, prefix: str, d_in: int, d_dir: int, rng: np.random.Generator):
        return cls(
            w_in=Parameter(f"{prefix}.w_in", xavier_uniform(rng, (3 * d_dir, d_in), d_in, d_dir)),
            w_hid=Parameter(f"{prefix}.w_hid", xavier_uniform(rng, (3 * d_dir, d_dir), d_dir, d_dir)),
            bias=Parameter(f"{prefix}.bias", np.zeros(3 * d_dir)),
        )

    def parameters(self):
        return [self.w_in, self.w_hid, self.bias]


@dataclass
class BiGruParams:
    fwd: GruDirectionParams
    bwd: GruDirectionParams

    @classmethod
    def build(cls, d_in: int, d_h: int, rng: np.random.Generator):
        d_dir = d_h // 2
        return cls(
            fwd=GruDirectionParams.build("gru.fwd", d_in, d_dir, rng),
            bwd=GruDirectionParams.build("gru.bwd", d_in, d_dir, rng),
        )

    def parameters(self):
        return self.fwd.parameters() + self.bwd.parameters()


@dataclass
class GlobalAttnParams:
    v: Parameter  # (d_h,)
    w1: Parameter  # (d_h, d_h)
    w2: Parameter  # (d_h, d_h)

    @classmethod
    def build(cls, d_h: int, rng: np.random.Generator):
        return cls(
            v=Parameter("gattn.v", xavier_uniform(rng, (d_h,), d_h, 1)),
            w1=Parameter("gattn.w1", xavier_uniform(rng, (d_h, d_h), d_h, d_h)),
            w2=Parameter("gattn.w2", xavier_uniform(rng, (d_h, d_h), d_h, d_h)),
        )

    def parameters(self):
        return [self.v, self.w1, self.w2]


def gru_cell(x: np.ndarray, h_prev: np.ndarray, params: GruDirectionParams) -> np.ndarray:
    """One GRU step (plain numpy)."""
    d = params.d_dir
    if x.shape != (params.w_in.value.shape[1],) or h_prev.shape != (d,):
        raise ValueError(
            f"gru_cell shape mismatch: x {x.shape}, h_prev {h_prev.shape}, "
            f"w_in {params.w_in.value.shape}"
        )
    pre = params.w_in.value @ x + params.w_hid.value @ h_prev + params.bias.value
    z = _sigmoid(pre[:d])
    r = _sigmoid(pre[d:2 * d])
    cand_pre = (
        params.w_in.value[2 * d:] @ x
        + params.w_hid.value[2 * d:] @ (r * h_prev)
        + params.bias.value[2 * d:]
    )
    c = np.tanh(cand_pre)
    return (1.0 - z) * h_prev + z * c


def bigru_forward(features: np.ndarray, params: BiGruParams) -> np.ndarray:
    """Run both directions from zero states; rows are [fwd_t; bwd_t]."""
    tau = features.shape[0]
    d = params.fwd.d_dir
    out = np.empty((tau, 2 * d))
    h = np.zeros(d)
    for t in range(tau):
        h = gru_cell(features[t], h, params.fwd)
        out[t, :d] = h
    h = np.zeros(d)
    for t in range(tau - 1, -1, -1):
        h = gru_cell(features[t], h, params.bwd)
        out[t, d:] = h
    return out


def global_self_attention(states: np.ndarray,
                          params: GlobalAttnParams) -> tuple[np.ndarray, np.ndarray]:
    """Additive self-attention over all positions (self-link included).

    Returns (tau x d_h aggregated states, tau x tau weights); weight row j
    holds the distribution of query j over every context position.
    """
    tau = states.shape[0]
    weights = np.empty((tau, tau))
    left = states @ params.w1.value.T
    right = states @ params.w2.value.T
    for j in range(tau):
        scores = np.tanh(left[j] + right) @ params.v.value
        weights[j] = softmax(scores)
    return weights @ states, weights


def concat_repr(h_rnn: np.ndarray, h_attn: np.ndarray) -> np.ndarray:
    """Row-wise [h_rnn; h_attn]."""
    if h_rnn.shape != h_attn.shape:
        raise ValueError(f"shape mismatch: {h_rnn.shape} vs {h_attn.shape}")
    return np.concatenate([h_rnn, h_attn], axis=1)


# ---------------------------------------------------------------------------
# differentiable pipeline


def _gru_direction_graph(x_node: ag.Tensor, params: GruDirectionParams,
                         reverse: bool) -> list[ag.Tensor]:
    tau = x_node.data.shape[0]
    d = params.d_dir
    xw = ag.matmul(x_node, ag.transpose(params.w_in.node())) + params.bias.node()
    u_t = ag.transpose(params.w_hid.node())  # (d, 3d)
    u_zr = u_t[:, : 2 * d]
    u_c = u_t[:, 2 * d:]
    h = ag.Tensor(np.zeros(d))
    out: list[ag.Tensor | None] = [None] * tau
    order = range(tau - 1, -1, -1) if reverse else range(tau)
    for t in order:
        pre = xw[t]
        zr = ag.sigmoid(pre[: 2 * d] + ag.matmul(h, u_zr))
        z = zr[:d]
        r = zr[d:]
        c = ag.tanh(pre[2 * d:] + ag.matmul(r * h, u_c))
        h = (1.0 - z) * h + z * c
        out[t] = h
    return out


def bigru_graph(x_node: ag.Tensor, params: BiGruParams) -> ag.Tensor:
    fwd = _gru_direction_graph(x_node, params.fwd, reverse=False)
    bwd = _gru_direction_graph(x_node, params.bwd, reverse=True)
    return ag.concat([ag.stack(fwd), ag.stack(bwd)], axis=1)


def global_attention_graph(states: ag.Tensor,
                           params: GlobalAttnParams) -> tuple[ag.Tensor, ag.Tensor]:
    tau, d_h = states.data.shape
    left = ag.matmul(states, ag.transpose(params.w1.node()))
    right = ag.matmul(states, ag.transpose(params.w2.node()))
    pre = ag.tanh(ag.reshape(left, (tau, 1, d_h)) + ag.reshape(right, (1, tau, d_h)))
    scores = ag.reshape(
        ag.matmul(ag.reshape(pre, (tau * tau, d_h)), params.v.node()), (tau, tau)
    )
    weights = ag.softmax_last(scores)
    return ag.matmul(weights, states), weights
