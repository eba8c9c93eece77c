"""Linear-chain CRF: emission scoring, forward algorithm, Viterbi, oracles.

Transitions live in a (|Y|+2)^2 matrix with virtual START and STOP states in
the last two rows/columns. Cells that would enter START or leave STOP are
set to -inf at construction and are never read or updated by any
computation; every public score is finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .numerics import Parameter, logsumexp, xavier_uniform


@dataclass
class CrfParams:
    """Emission weights over the sequence representation plus transitions."""

    labels: list[str]
    emit_w: Parameter  # (|Y|, d_repr)
    trans: Parameter  # (|Y|+2, |Y|+2); [START, y], [y', y], [y, STOP] used

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def start(self) -> int:
        return len(self.labels)

    @property
    def stop(self) -> int:
        return len(self.labels) + 1

    def parameters(self):
        return [self.emit_w, self.trans]

    @classmethod
    def build(cls, labels, d_repr: int, rng: np.random.Generator):
        labels = list(labels)
        n = len(labels)
        trans = np.zeros((n + 2, n + 2))
        trans[:, n] = -np.inf  # into START
        trans[n + 1, :] = -np.inf  # out of STOP
        return cls(
            labels=labels,
            emit_w=Parameter("crf.emit_w", xavier_uniform(rng, (n, d_repr), d_repr, n)),
            trans=Parameter("crf.trans", trans),
        )

    def tag_ids(self, tags) -> np.ndarray:
        ids = np.empty(len(tags), dtype=np.intp)
        lookup = {t: i for i, t in enumerate(self.labels)}
        for i, t in enumerate(tags):
            if t not in lookup:
                raise ValueError(f"label {t!r} not in label set {self.labels}")
            ids[i] = lookup[t]
        return ids


def emissions(repr_matrix: np.ndarray, params: CrfParams) -> np.ndarray:
    """tau x |Y| scores; row i is emit_w @ repr row i."""
    if repr_matrix.ndim != 2 or repr_matrix.shape[1] != params.emit_w.value.shape[1]:
        raise ValueError(
            f"emission shape mismatch: repr {repr_matrix.shape}, "
            f"emit_w {params.emit_w.value.shape}"
        )
    return repr_matrix @ params.emit_w.value.T


def sequence_score(e: np.ndarray, params: CrfParams, tag_ids) -> float:
    """Unnormalized score of one path, boundary transitions included."""
    tag_ids = np.asarray(tag_ids, dtype=np.intp)
    tau = e.shape[0]
    if tag_ids.shape != (tau,):
        raise ValueError(f"{tag_ids.shape[0]} tags for {tau} positions")
    if tag_ids.size and (tag_ids.min() < 0 or tag_ids.max() >= params.n_labels):
        raise ValueError(f"tag id outside label set of size {params.n_labels}")
    t = params.trans.value
    total = float(e[np.arange(tau), tag_ids].sum())
    total += t[params.start, tag_ids[0]]
    for i in range(1, tau):
        total += t[tag_ids[i - 1], tag_ids[i]]
    total += t[tag_ids[-1], params.stop]
    return float(total)


def log_partition(e: np.ndarray, params: CrfParams) -> float:
    """Forward algorithm in log space over all label sequences."""
    n = params.n_labels
    t = params.trans.value
    alpha = e[0] + t[params.start, :n]
    for i in range(1, e.shape[0]):
        alpha = np.array([logsumexp(alpha + t[:n, y]) for y in range(n)]) + e[i]
    return logsumexp(alpha + t[:n, params.stop])


def neg_log_likelihood(e: np.ndarray, params: CrfParams, tag_ids) -> float:
    """log_partition minus the gold path score; >= 0 up to rounding."""
    return log_partition(e, params) - sequence_score(e, params, tag_ids)


def viterbi_decode(e: np.ndarray, params: CrfParams,
                   mask: np.ndarray | None = None) -> tuple[list[int], float]:
    """Highest-scoring path; ties resolve to the lowest label index at each
    backtrack step. The returned score equals sequence_score of the path.

    ``mask`` is an optional additive (|Y|+2)^2 matrix (0 allowed, -inf
    forbidden) for constrained decoding.
    """
    n = params.n_labels
    t = params.trans.value if mask is None else params.trans.value + mask
    tau = e.shape[0]
    best = e[0] + t[params.start, :n]
    back = np.empty((tau, n), dtype=np.intp)
    for i in range(1, tau):
        cand = best[:, None] + t[:n, :n]  # [prev, cur]
        back[i] = np.argmax(cand, axis=0)
        best = cand[back[i], np.arange(n)] + e[i]
    final = best + t[:n, params.stop]
    last = int(np.argmax(final))
    path = [last]
    for i in range(tau - 1, 0, -1):
        path.append(int(back[i, path[-1]]))
    path.reverse()
    return path, float(final[last])


def bioes_transition_mask(labels) -> np.ndarray:
    """Additive mask forbidding transitions that break the BIOES scheme."""
    n = len(labels)
    mask = np.zeros((n + 2, n + 2))

    def split(tag):
        return ("O", None) if tag == "O" else (tag[0], tag[2:])

    def allowed(prev, cur):
        pp, pt = split(prev)
        cp, ct = split(cur)
        if pp in ("O", "E", "S"):
            return cp in ("O", "B", "S")
        return cp in ("I", "E") and ct == pt  # continuing an open run

    for i, prev in enumerate(labels):
        for j, cur in enumerate(labels):
            if not allowed(prev, cur):
                mask[i, j] = -np.inf
    for j, cur in enumerate(labels):
        if split(cur)[0] in ("I", "E"):
            mask[n, j] = -np.inf  # START must open a run
    for i, prev in enumerate(labels):
        if split(prev)[0] in ("B", "I"):
            mask[i, n + 1] = -np.inf  # open run may not end the sentence
    return mask


def brute_force_partition(e: np.ndarray, params: CrfParams) -> float:
    """Oracle: log of the explicit sum over every |Y|^tau label sequence."""
    n = params.n_labels
    tau = e.shape[0]
    if n ** tau > 10 ** 6:
        raise ValueError(f"{n}^{tau} sequences is too large for enumeration")
    scores = [
        sequence_score(e, params, np.array(seq, dtype=np.intp))
        for seq in np.ndindex(*([n] * tau))
    ]
    return logsumexp(np.array(scores))


def brute_force_best(e: np.ndarray, params: CrfParams) -> tuple[list[int], float]:
    """Oracle: exhaustive argmax (first maximum in lexicographic order)."""
    n = params.n_labels
    tau = e.shape[0]
    if n ** tau > 10 ** 6:
        raise ValueError(f"{n}^{tau} sequences is too large for enumeration")
    best_seq = None
    best_score = -np.inf
    for seq in np.ndindex(*([n] * tau)):
        s = sequence_score(e, params, np.array(seq, dtype=np.intp))
        if s > best_score:
            best_score = s
            best_seq = list(seq)
    return best_seq, best_score


# ---------------------------------------------------------------------------
# differentiable pipeline


def emissions_graph(repr_node: ag.Tensor, params: CrfParams) -> ag.Tensor:
    return ag.matmul(repr_node, ag.transpose(params.emit_w.node()))


def nll_graph(e_node: ag.Tensor, params: CrfParams, tag_ids) -> ag.Tensor:
    """Differentiable negative log-likelihood of the gold path."""
    tag_ids = np.asarray(tag_ids, dtype=np.intp)
    n = params.n_labels
    tau = e_node.data.shape[0]
    t_node = params.trans.node()
    t_core = t_node[:n, :n]
    alpha = e_node[0] + t_node[params.start, :n]
    for i in range(1, tau):
        alpha = ag.logsumexp(ag.reshape(alpha, (n, 1)) + t_core, axis=0) + e_node[i]
    log_z = ag.logsumexp(alpha + t_node[:n, params.stop], axis=0)

    emit_part = ag.sum_(ag.take_pairs(e_node, np.arange(tau), tag_ids))
    rows = np.concatenate([[params.start], tag_ids])
    cols = np.concatenate([tag_ids, [params.stop]])
    trans_part = ag.sum_(ag.take_pairs(t_node, rows, cols))
    return log_z - (emit_part + trans_part)
