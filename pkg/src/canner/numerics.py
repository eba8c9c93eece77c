"""Deterministic numeric kernels, trainable parameters, and AdaDelta.

Everything is float64. The kernels here are the plain (non-graph) versions
used by decoding, evaluation, and tests; the differentiable counterparts
live in :mod:`canner.autograd`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag


class NumericsError(Exception):
    """Raised for non-finite gradients and failed numeric preconditions."""


def softmax(v) -> np.ndarray:
    """Normalized exponentials of a non-empty vector, max-shifted for stability.

    Output elements lie in (0, 1] and sum to 1 within 1e-12.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"softmax expects a non-empty vector, got shape {v.shape}")
    e = np.exp(v - v.max())
    return e / e.sum()


def logsumexp(v) -> float:
    """log(sum(exp(v))) of a non-empty vector, max-shifted for stability."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"logsumexp expects a non-empty vector, got shape {v.shape}")
    m = v.max()
    if not np.isfinite(m):
        # all -inf collapses to -inf; +inf propagates
        return float(m)
    return float(np.log(np.exp(v - m).sum()) + m)


def affine(x, W, b) -> np.ndarray:
    """W @ x + b with an explicit shape check."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0] or b.shape != (W.shape[0],):
        raise ValueError(
            f"affine shape mismatch: W is {W.shape}, x is {x.shape}, b is {b.shape}"
        )
    return W @ x + b


class Parameter:
    """A named trainable tensor with its gradient and AdaDelta accumulators."""

    __slots__ = ("name", "value", "grad", "accum_sq_grad", "accum_sq_update", "frozen")

    def __init__(self, name: str, value, frozen: bool = False):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.accum_sq_grad = np.zeros_like(self.value)
        self.accum_sq_update = np.zeros_like(self.value)
        self.frozen = frozen

    def node(self) -> ag.Tensor:
        """Fresh graph leaf over this parameter's current value."""
        return ag.Tensor(self.value, param=self)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def adadelta_step(p: Parameter, lr: float = 0.005, rho: float = 0.95, eps: float = 1e-6) -> None:
    """Apply one lr-scaled AdaDelta update to ``p`` in place and zero its grad.

    accum_g  <- rho*accum_g + (1-rho)*g^2
    delta    <- -lr * sqrt(accum_dx + eps) / sqrt(accum_g + eps) * g
    value    <- value + delta
    accum_dx <- rho*accum_dx + (1-rho)*delta^2
    """
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not 0 < rho < 1:
        raise ValueError(f"rho must be in (0, 1), got {rho}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    g = p.grad
    if not np.isfinite(g).all():
        raise NumericsError(f"non-finite gradient in parameter {p.name!r}")
    p.accum_sq_grad *= rho
    p.accum_sq_grad += (1.0 - rho) * g * g
    delta = -lr * np.sqrt(p.accum_sq_update + eps) / np.sqrt(p.accum_sq_grad + eps) * g
    p.value += delta
    p.accum_sq_update *= rho
    p.accum_sq_update += (1.0 - rho) * delta * delta
    p.zero_grad()


@dataclass
class GradCheckEntry:
    name: str
    rel_error: float
    max_abs_diff: float
    grad_scale: float
    ok: bool


@dataclass
class GradCheckReport:
    tol: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    @property
    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if not e.ok]

    @property
    def worst(self) -> GradCheckEntry:
        return max(self.entries, key=lambda e: e.rel_error)

    def summary(self) -> str:
        lines = [
            f"{e.name}: rel_error={e.rel_error:.3e} ({'ok' if e.ok else 'FAIL'})"
            for e in self.entries
        ]
        lines.append(f"worst: {self.worst.name} rel_error={self.worst.rel_error:.3e} tol={self.tol:.1e}")
        return "\n".join(lines)


def check_gradients(loss_fn, params, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` to central finite differences.

    ``loss_fn`` takes no arguments, reads the current parameter values, and
    returns a scalar graph node. The relative error per parameter tensor is
    max|analytic - numeric| over the max gradient magnitude of that tensor
    (floored at 1e-8 so all-zero gradients compare exactly). Failures are
    recorded in the report, never raised.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    ag.backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}
    for p in params:
        p.zero_grad()

    report = GradCheckReport(tol=tol)
    with ag.no_grad():
        for p in params:
            a = analytic[p.name]
            n = np.zeros_like(a)
            flat = p.value.reshape(-1)
            nflat = n.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                if not np.isfinite(orig):
                    continue  # structurally excluded cell; both sides zero
                flat[i] = orig + h
                f_plus = float(loss_fn().data)
                flat[i] = orig - h
                f_minus = float(loss_fn().data)
                flat[i] = orig
                nflat[i] = (f_plus - f_minus) / (2.0 * h)
            diff = float(np.max(np.abs(a - n))) if a.size else 0.0
            scale = max(float(np.max(np.abs(a))) if a.size else 0.0,
                        float(np.max(np.abs(n))) if n.size else 0.0,
                        1e-8)
            rel = diff / scale
            report.entries.append(
                GradCheckEntry(p.name, rel, diff, scale, rel < tol)
            )
    return report
