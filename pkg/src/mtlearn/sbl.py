"""Sparse Bayesian learning by greedy type-II maximum likelihood.

Model: ``b = Phi w + eta`` with ``eta ~ N(0, s2 I)`` and independent priors
``w_k ~ N(0, 1/alpha_k)``. Hyperparameters are optimised one coordinate at a
time using the sparsity/quality factors of the fast marginal-likelihood
method. Two hyperpriors are supported:

``flat``
    improper uniform prior on ``log alpha_k``.
``laplace``
    exponential prior with rate ``lam / 2`` on the prior variances
    ``1/alpha_k`` and a Jeffreys prior on ``lam``; marginally a Laplace
    prior on ``w``.

Pruned coordinates carry ``alpha_k = inf`` and a posterior mean of exactly 0.
All greedy quantities are computed from ``Phi^T Phi`` and ``Phi^T b``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

LOG2PI = math.log(2.0 * math.pi)


class ConditioningError(np.linalg.LinAlgError):
    pass


class DegenerateModelError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SblConfig:
    hyperprior: str = "laplace"
    max_iterations: int = 1000
    convergence_tol: float = 1e-8
    noise_fraction: float = 0.01
    noise_reestimate: bool = False
    noise_init: str = "energy"

    def __post_init__(self):
        if self.hyperprior not in ("flat", "laplace"):
            raise ValueError("hyperprior must be 'flat' or 'laplace'")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if not 0 < self.noise_fraction <= 1:
            raise ValueError("noise_fraction must lie in (0, 1]")
        if self.noise_init not in ("mean_square", "energy"):
            raise ValueError("noise_init must be 'mean_square' or 'energy'")

    def initial_noise(self, b) -> float:
        """Fixed noise variance: ``beta * ||b||^2 / n`` (mean_square) or ``beta * ||b||^2``."""
        b = np.asarray(b, float)
        bb = float(b @ b)
        return self.noise_fraction * bb / (b.size if self.noise_init == "mean_square" else 1)


@dataclass(frozen=True, eq=False)
class SblPosterior:
    mean: np.ndarray
    covariance: np.ndarray
    precisions: np.ndarray
    noise_var: float
    lam: float = 0.0
    noise_var_hat: Optional[float] = None
    objective: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    empty: bool = False

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.precisions))

    @property
    def trace_cov(self) -> float:
        return float(np.trace(self.covariance))

    def to_dict(self) -> dict:
        act = self.active
        return {
            "active": act.tolist(),
            "mean": self.mean.tolist(),
            "cov_diag": np.diag(self.covariance).tolist(),
            "precisions": [float(a) if np.isfinite(a) else None for a in self.precisions],
            "lambda": self.lam,
            "noise_var": self.noise_var,
            "noise_var_hat": self.noise_var_hat,
            "iterations": self.iterations,
            "converged": self.converged,
            "empty": self.empty,
            "objective": list(self.objective),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _active_solve(alpha_a, G_aa, h_a, s2):
    """Cholesky of ``diag(alpha) + G/s2``; returns (Sigma, mu, logdet Sigma^-1)."""
    prec = np.diag(alpha_a) + G_aa / s2
    try:
        cf = linalg.cho_factor(prec, lower=True)
    except linalg.LinAlgError:
        raise ConditioningError("posterior precision is not positive definite") from None
    diag = np.diag(cf[0])
    if diag.min() <= 0 or (diag.max() / diag.min()) ** 2 > 1.0 / np.finfo(float).eps:
        raise ConditioningError("posterior precision is ill-conditioned beyond 1/eps")
    Sigma = linalg.cho_solve(cf, np.eye(len(alpha_a)))
    Sigma = 0.5 * (Sigma + Sigma.T)
    mu = linalg.cho_solve(cf, h_a) / s2
    return Sigma, mu, 2.0 * np.log(diag).sum()


def posterior_moments(precisions, noise_var, Phi, b):
    """Posterior mean and covariance, zero outside the active (finite-precision) set."""
    Phi = np.asarray(Phi, float)
    b = np.asarray(b, float)
    alpha = np.asarray(precisions, float)
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")
    if np.any(alpha <= 0):
        raise ValueError("precisions must be positive")
    K = Phi.shape[1]
    act = np.flatnonzero(np.isfinite(alpha))
    mu = np.zeros(K)
    Sigma = np.zeros((K, K))
    if act.size:
        Pa = Phi[:, act]
        S, m, _ = _active_solve(alpha[act], Pa.T @ Pa, Pa.T @ b, noise_var)
        mu[act] = m
        Sigma[np.ix_(act, act)] = S
    return mu, Sigma


def _hyperprior_terms(variances: np.ndarray, lam: float) -> float:
    # sum_k log Gamma(var_k | 1, lam/2) + log p(lam) with p(lam) = 1/lam
    n = variances.size
    return n * math.log(lam / 2.0) - 0.5 * lam * float(variances.sum()) - math.log(lam)


def _marginal_from_gram(alpha_a, G_aa, h_a, bb, n, s2):
    if alpha_a.size == 0:
        return -0.5 * (n * LOG2PI + n * math.log(s2) + bb / s2)
    _, mu, logdet_prec = _active_solve(alpha_a, G_aa, h_a, s2)
    logdet_C = n * math.log(s2) + logdet_prec - float(np.log(alpha_a).sum())
    quad = (bb - float(h_a @ mu)) / s2
    return -0.5 * (n * LOG2PI + logdet_C + quad)


def marginal_log_likelihood(precisions, noise_var, Phi, b, lam: Optional[float] = None) -> float:
    """Log evidence ``log N(b; 0, s2 I + Phi diag(1/alpha) Phi^T)``.

    With ``lam`` given, the Laplace hyperprior log-density of the prior
    variances and the Jeffreys term for ``lam`` are added.
    """
    Phi = np.asarray(Phi, float)
    b = np.asarray(b, float)
    alpha = np.asarray(precisions, float)
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")
    act = np.flatnonzero(np.isfinite(alpha))
    Pa = Phi[:, act]
    val = _marginal_from_gram(alpha[act], Pa.T @ Pa, Pa.T @ b, float(b @ b), b.size, noise_var)
    if lam is not None:
        var = np.where(np.isfinite(alpha), 1.0 / alpha, 0.0)
        val += _hyperprior_terms(var, lam)
    return val


def reestimate_noise(Phi, posterior: SblPosterior, b) -> float:
    """``||b - Phi mu||^2 / (n - sum_active (1 - alpha_k Sigma_kk))``."""
    Phi = np.asarray(Phi, float)
    b = np.asarray(b, float)
    act = posterior.active
    resid = b - Phi @ posterior.mean
    used = float(np.sum(1.0 - posterior.precisions[act] * np.diag(posterior.covariance)[act]))
    den = b.size - used
    if not den > 0:
        raise DegenerateModelError(f"noise re-estimate denominator {den:.3g} is not positive")
    return float(resid @ resid) / den


def _optimal_variance(s, q, lam):
    """Maximiser over v >= 0 of ``0.5(-log(1+vs) + q^2 v/(1+vs)) - lam v / 2``."""
    q2 = q * q
    if lam > 0:
        u = 2.0 * q2 / (s + np.sqrt(s * s + 4.0 * lam * q2))
    else:
        u = q2 / s
    return np.maximum((u - 1.0) / s, 0.0)


def _contribution(v, s, q, lam):
    return 0.5 * (-np.log1p(v * s) + q * q * v / (1.0 + v * s)) - 0.5 * lam * v


class _State:
    def __init__(self, G, h, bb, n, s2):
        self.G, self.h, self.bb, self.n, self.s2 = G, h, bb, n, s2
        self.K = G.shape[0]
        self.var = np.zeros(self.K)  # prior variances, 0 = pruned

    def refresh(self):
        act = np.flatnonzero(self.var > 0)
        self.act = act
        G, h, s2 = self.G, self.h, self.s2
        if act.size:
            self.Sigma, self.mu, _ = _active_solve(1.0 / self.var[act], G[np.ix_(act, act)], h[act], s2)
            GA = G[:, act]
            self.S = np.diag(G) / s2 - np.einsum("ij,jk,ik->i", GA, self.Sigma, GA) / s2**2
            self.Q = h / s2 - GA @ (self.Sigma @ h[act]) / s2**2
        else:
            self.Sigma = np.zeros((0, 0))
            self.mu = np.zeros(0)
            self.S = np.diag(G) / s2
            self.Q = h / s2
        # leave-one-out factors
        den = 1.0 - self.var * self.S
        self.s = self.S / den
        self.q = self.Q / den

    def evidence(self):
        act = np.flatnonzero(self.var > 0)
        return _marginal_from_gram(1.0 / self.var[act], self.G[np.ix_(act, act)], self.h[act],
                                   self.bb, self.n, self.s2)


MAX_NOISE_UPDATES = 100
NOISE_RTOL = 1e-3


def _update_noise(st: "_State") -> bool:
    """Replace ``s2`` by its re-estimate; False when the change is below NOISE_RTOL."""
    st.refresh()
    used = float(np.sum(1.0 - np.diag(st.Sigma) / st.var[st.act]))
    mu = st.mu
    resid = st.bb - 2.0 * float(st.h[st.act] @ mu) + float(mu @ st.G[np.ix_(st.act, st.act)] @ mu)
    den = st.n - used
    if not (den > 0 and resid > 0):
        return False
    new = max(resid / den, 1e-12 * st.bb / st.n)
    if abs(new - st.s2) <= NOISE_RTOL * st.s2:
        return False
    st.s2 = new
    return True


def fit(system, config: SblConfig = SblConfig()) -> SblPosterior:
    """Greedy type-II ML fit of ``Phi w = b``.

    ``system`` is a ReducedSystem or any object with ``Phi`` and ``b``.
    """
    Phi = np.asarray(system.Phi, float)
    b = np.asarray(system.b, float)
    n, K = Phi.shape
    if K < 1:
        raise ValueError("design matrix needs at least one column")
    G = Phi.T @ Phi
    G = 0.5 * (G + G.T)
    h = Phi.T @ b
    bb = float(b @ b)
    laplace = config.hyperprior == "laplace" and K >= 2

    def empty_result():
        s2 = config.initial_noise(b) if bb > 0 else 1.0
        return SblPosterior(
            mean=np.zeros(K), covariance=np.zeros((K, K)), precisions=np.full(K, np.inf),
            noise_var=s2, lam=0.0, noise_var_hat=bb / n, objective=[], iterations=0,
            converged=True, empty=True,
        )

    if bb == 0.0:
        return empty_result()
    st = _State(G, h, bb, n, config.initial_noise(b))
    usable = np.diag(G) > 0
    lam = 0.0

    def objective():
        val = st.evidence()
        if laplace and lam > 0:
            val += _hyperprior_terms(st.var, lam)
        return val

    trace = []
    converged = False
    noise_updates = 0
    it = 0
    for it in range(1, config.max_iterations + 1):
        st.refresh()
        s, q = st.s, st.q
        with np.errstate(divide="ignore", invalid="ignore"):
            new_var = np.where(usable, _optimal_variance(s, q, lam), 0.0)
            gain = _contribution(new_var, s, q, lam) - _contribution(st.var, s, q, lam)
        gain = np.where(usable & np.isfinite(gain), gain, -np.inf)
        k = int(np.argmax(gain))
        best = gain[k]
        if trace:
            # relative to the gain over the empty model, which is invariant
            # under a joint rescaling of Phi and b
            gained = trace[-1] - _marginal_from_gram(np.zeros(0), None, None, bb, n, st.s2)
            tol = config.convergence_tol * max(1.0, abs(gained))
            stalled = not best > tol
        elif not best > 0:
            # the empty model is optimal at this noise level; with re-estimation
            # the empty-model estimate ||b||^2 / n may still admit a basis
            if config.noise_reestimate and noise_updates < MAX_NOISE_UPDATES and _update_noise(st):
                noise_updates += 1
                continue
            return empty_result()
        else:
            stalled = False
        if not stalled and new_var[k] == 0.0 and st.var[k] > 0 and np.count_nonzero(st.var) == 1:
            # deleting the last basis would leave the trivial model
            stalled = True
        if stalled:
            if not config.noise_reestimate or not _update_noise(st):
                converged = True
                break
            noise_updates += 1
            if noise_updates >= MAX_NOISE_UPDATES:
                converged = True
                break
            trace.append(objective())
            continue
        st.var[k] = new_var[k]
        if laplace:
            total = st.var.sum()
            # closed-form maximiser of the hyperprior terms over lam
            lam = 2.0 * (K - 1) / total if total > 0 else 0.0
        trace.append(objective())
    st.refresh()
    act = st.act
    mu = np.zeros(K)
    Sigma = np.zeros((K, K))
    mu[act] = st.mu
    Sigma[np.ix_(act, act)] = st.Sigma
    alpha = np.full(K, np.inf)
    alpha[act] = 1.0 / st.var[act]
    post = SblPosterior(
        mean=mu, covariance=Sigma, precisions=alpha, noise_var=st.s2, lam=lam,
        objective=trace, iterations=it, converged=converged, empty=act.size == 0,
    )
    try:
        s2_hat = reestimate_noise(Phi, post, b)
    except DegenerateModelError:
        s2_hat = float("nan")
    return dataclasses.replace(post, noise_var_hat=s2_hat)
