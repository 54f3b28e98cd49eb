"""Brute-force exact quantities for tiny GRBMs by enumerating every hidden configuration.

Given h, the visible units are Gaussian, so the visible integral has a closed
form and only the 2^M hidden states need to be summed.  Used as ground truth in
tests and as the "true gradient" trainer for the toy experiment.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .core import GradientEstimate, GrbmParams, free_energy, hidden_conditional
from .errors import CapabilityError, ContractViolation, NumericFailure

MAX_HIDDEN = 20
MAX_HIDDEN_JOINT_MI = 12


def hidden_configurations(M: int) -> np.ndarray:
    """All 2^M binary vectors, row r holding the bits of r (unit 0 = least significant)."""
    r = np.arange(2 ** M, dtype=np.int64)
    return ((r[:, None] >> np.arange(M)) & 1).astype(np.float64)


class ExactModel:
    """A GRBM together with per-configuration log weights of the hidden marginal.

    ``log_weights[r]`` is log of the integral over v of exp(-E(v, h_r)).
    """

    def __init__(self, params: GrbmParams, max_hidden: int = MAX_HIDDEN):
        if params.M > max_hidden:
            raise CapabilityError(f"exact enumeration needs M <= {max_hidden}, got M={params.M}")
        self.params = params
        self.H = hidden_configurations(params.M)
        var = params.var
        self.means = params.b + self.H @ params.W  # mean of p(v | h_r)
        self.log_weights = (
            self.H @ params.a
            + (((self.means ** 2) - params.b ** 2) / (2.0 * var)).sum(axis=1)
            + 0.5 * np.log(2.0 * np.pi * var).sum()
        )
        self.log_Z = float(logsumexp(self.log_weights))
        if not np.isfinite(self.log_Z):
            raise NumericFailure("partition function is not finite")
        self.hidden_probs = np.exp(self.log_weights - self.log_Z)

    def log_marginal(self, v) -> np.ndarray:
        """log p(v) for visible vector(s)."""
        return -free_energy(self.params, v) - self.log_Z

    def moments(self):
        """Model expectations E[h], E[v], E[h v^T]."""
        p = self.hidden_probs
        Eh = p @ self.H
        Ev = p @ self.means
        Ehv = (self.H * p[:, None]).T @ self.means
        return Eh, Ev, Ehv

    def sample(self, n: int, rng) -> np.ndarray:
        """Exact i.i.d. draws from the model's visible marginal."""
        rng = np.random.default_rng(rng)
        idx = rng.choice(len(self.hidden_probs), size=n, p=self.hidden_probs)
        return self.means[idx] + self.params.sigma * rng.standard_normal((n, self.params.N))


def _model(model) -> ExactModel:
    return model if isinstance(model, ExactModel) else ExactModel(model)


def _dataset(model: ExactModel, data) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[None, :]
    if data.ndim != 2 or data.shape[1] != model.params.N or len(data) == 0:
        raise ContractViolation(f"dataset must be a non-empty (n, {model.params.N}) array")
    return data


def log_partition(model) -> float:
    return _model(model).log_Z


def exact_log_likelihood(model, data) -> float:
    """Mean log p(v) over the rows of ``data``."""
    model = _model(model)
    return float(np.mean(model.log_marginal(_dataset(model, data))))


def exact_gradient(model, data) -> GradientEstimate:
    """Gradient of :func:`exact_log_likelihood` with respect to W, a and b."""
    model = _model(model)
    data = _dataset(model, data)
    params = model.params
    ph = hidden_conditional(params, data)
    Eh, Ev, Ehv = model.moments()
    var = params.var
    dW = (ph.T @ data / len(data) - Ehv) / var
    da = ph.mean(axis=0) - Eh
    db = (data.mean(axis=0) - Ev) / var
    grad = GradientEstimate(dW, da, db)
    if not grad.is_finite():
        raise NumericFailure("exact gradient is not finite")
    return grad


def exact_joint_mutual_information(model, data) -> float:
    """I(H; D) in nats with D the empirical (uniform) distribution over the rows of ``data``.

    Uses conditional independence of hidden units given a data vector for
    S(H | D) and the full 2^M mixture for S(H).
    """
    params = model.params if isinstance(model, ExactModel) else model
    if params.M > MAX_HIDDEN_JOINT_MI:
        raise CapabilityError(f"joint mutual information needs M <= {MAX_HIDDEN_JOINT_MI}, got M={params.M}")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != params.N or len(data) == 0:
        raise ContractViolation(f"dataset must be a non-empty (n, {params.N}) array")
    x = (data / params.var) @ params.W.T + params.a
    # log p(h_i = 1 | d) and log p(h_i = 0 | d), overflow-safe
    log_on = -np.logaddexp(0.0, -x)
    log_off = -np.logaddexp(0.0, x)
    H = hidden_configurations(params.M)
    log_joint = log_on @ H.T + log_off @ (1.0 - H).T  # (n, 2^M): log p(h | d)
    log_marg = logsumexp(log_joint, axis=0) - np.log(len(data))
    S_H = float(-(np.exp(log_marg) * log_marg).sum())
    p_on = np.exp(log_on)
    p_off = np.exp(log_off)
    S_H_given_D = float(np.mean((-(p_on * log_on) - (p_off * log_off)).sum(axis=1)))
    return S_H - S_H_given_D
