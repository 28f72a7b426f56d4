"""Adam updates and spectral weight normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import ContractError, Tensor, mul


@dataclass
class AdamState:
    """First/second moment buffers and step counter for one parameter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_param(cls, p):
        return cls(m=np.zeros_like(p.data), v=np.zeros_like(p.data))


def adam_step(p, s, lr, beta1=0.5, beta2=0.9, eps=1e-8):
    """Standard Adam update with bias correction, in place on p.data."""
    if s.m.shape != p.data.shape or s.v.shape != p.data.shape:
        raise ContractError("Adam state dims do not match the parameter")
    if lr < 0:
        raise ContractError("learning rate must be nonnegative")
    g = p.grad
    s.t += 1
    s.m = beta1 * s.m + (1.0 - beta1) * g
    s.v = beta2 * s.v + (1.0 - beta2) * (g * g)
    mhat = s.m / (1.0 - beta1 ** s.t)
    vhat = s.v / (1.0 - beta2 ** s.t)
    p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype, copy=False)


@dataclass
class SpectralState:
    """Left singular-vector estimate for power iteration, kept unit-norm."""

    u: np.ndarray

    @classmethod
    def for_matrix_rows(cls, rows, rng):
        u = rng.normal(size=rows)
        return cls(u=u / np.linalg.norm(u))

    @classmethod
    def for_matrix(cls, w, rng, warmup=5, starts=3):
        """Best of several warmed random starts.

        A lone random start can be nearly orthogonal to the leading singular
        direction and stall at a lower singular value; keeping the start
        with the largest estimate makes that failure mode vanishingly rare.
        """
        w = w.data if isinstance(w, Tensor) else np.asarray(w)
        rows = _as_matrix(w).shape[0]
        best = None
        best_sigma = -1.0
        for _ in range(max(starts, 1)):
            state = cls.for_matrix_rows(rows, rng)
            sigma = spectral_sigma(w, state, power_iters=max(warmup, 1),
                                   update=True)
            if sigma > best_sigma:
                best, best_sigma = state, sigma
        return best


def _as_matrix(w):
    """Reshape a weight to (C_out, fan_in) for power iteration."""
    if w.ndim == 2:
        return w
    if w.ndim == 4:
        k, k2, cin, cout = w.shape
        return w.transpose(3, 0, 1, 2).reshape(cout, k * k2 * cin)
    raise ContractError(f"cannot reduce rank-{w.ndim} weight to a matrix")


def spectral_sigma(w, s, power_iters=1, update=True):
    """Power-iteration estimate of the largest singular value.

    Refines s.u in place when update is set; a zero matrix is floored at
    1e-12 so callers never divide by zero.
    """
    if power_iters < 1:
        raise ContractError("power_iters must be >= 1")
    m = _as_matrix(w.data if isinstance(w, Tensor) else np.asarray(w))
    u = s.u
    sigma = 0.0
    for _ in range(power_iters):
        v = m.T @ u
        v /= max(np.linalg.norm(v), 1e-12)
        mu = m @ v
        sigma = float(np.linalg.norm(mu))
        u = mu / max(sigma, 1e-12)
    if update:
        s.u = u
    return max(sigma, 1e-12)


def spectral_normalize(w, s, power_iters=1, update=True):
    """Return w / sigma_hat with sigma_hat treated as a constant in backprop."""
    sigma = spectral_sigma(w, s, power_iters=power_iters, update=update)
    return mul(w, 1.0 / sigma)


def spectral_normalize_rows(w):
    """Normalize each row by its own largest singular value, which for a
    single-row layer is exactly the row norm (no iteration needed). Keeps a
    bank of independent per-cell regressors independent after normalization.
    The norms are constants in backprop, matching spectral_normalize."""
    data = w.data if isinstance(w, Tensor) else np.asarray(w)
    norms = np.maximum(np.linalg.norm(data, axis=1, keepdims=True), 1e-12)
    return mul(w, 1.0 / norms)


class AdamGroup:
    """Adam bookkeeping for a named parameter set (one network)."""

    def __init__(self, params, beta1=0.5, beta2=0.9, eps=1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.states = {p.name: AdamState.for_param(p) for p in self.params}

    def step(self, lr):
        for p in self.params:
            adam_step(p, self.states[p.name], lr,
                      beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
